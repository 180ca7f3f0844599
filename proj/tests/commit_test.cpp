// Copyright 2026 The VeriTensor Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "veritensor/commit.hpp"
#include "veritensor/kernels.hpp"

#include <random>

#include "gtest/gtest.h"

namespace veritensor {
namespace {

const FieldElement kTwo{2};

FieldElement naive_zmul(const QTensor& m, FieldElement z) {
  FieldElement acc{0};
  for (size_t i = 0; i < m.rows; ++i)
    for (size_t j = 0; j < m.cols; ++j) acc += field_pow(z, i * m.cols + j) * embed_signed(m.at(i, j));
  return acc;
}

QTensor random_tensor(std::mt19937_64& rng, size_t r, size_t c, int64_t bound) {
  QTensor t(r, c);
  for (auto& v : t.data) v = static_cast<int64_t>(rng() % (2 * bound + 1)) - bound;
  return t;
}

TEST(Sha256Test, KnownVectors) {
  EXPECT_EQ(Sha256{}.update("abc").finish().hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(Sha256{}.finish().hex(), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  auto d = Sha256{}.update("abc").finish();
  EXPECT_EQ(Digest::from_hex(d.hex()), d);
}

TEST(HashSegmentTest, GoldenAndSensitivity) {
  std::vector<int64_t> v{1, -1, 5};
  EXPECT_EQ(hash_segment("X", v).hex(), "e4bf994354ab056968ee5095dfa453afa2a05b5eadbba202115e1d16f19c07bc");
  auto w = v;
  w[2] = 6;
  EXPECT_NE(hash_segment("X", v), hash_segment("X", w));
  EXPECT_NE(hash_segment("X", v), hash_segment("Y", v));
}

TEST(ZMulTest, Examples) {
  auto m = QTensor::from_rows({{1, 2}, {3, 4}});
  EXPECT_EQ(zmul(m, kTwo).value, 49u);
  EXPECT_EQ(zmul(QTensor(3, 3), FieldElement{12345}).value, 0u);
  EXPECT_EQ(zmul(QTensor::from_rows({{-1}}), kTwo).value, kGoldilocks - 1);
  auto w = QTensor::from_rows({{5, 6}, {7, 8}});
  auto row = zmul_row(w, kTwo);
  EXPECT_EQ(row[0].value, 17u);
  EXPECT_EQ(row[1].value, 23u);
  auto col = zmul_col(QTensor::from_rows({{1, 0}, {0, 1}}), kTwo, 2);
  EXPECT_EQ(col[0].value, 1u);
  EXPECT_EQ(col[1].value, 4u);
  EXPECT_EQ(inner_product(col, row).value, 109u);
  EXPECT_EQ(zmul(w, kTwo).value, 109u);
}

TEST(ZMulTest, MatchesNaivePowerSum) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    auto m = random_tensor(rng, 1 + rng() % 6, 1 + rng() % 6, int64_t{1} << 40);
    FieldElement z{rng() % kGoldilocks};
    EXPECT_EQ(zmul(m, z), naive_zmul(m, z));
    EXPECT_EQ(zmul(m, z, 7), field_mul(field_pow(z, 7), naive_zmul(m, z)));
  }
}

TEST(ZMulTest, LayoutViews) {
  std::mt19937_64 rng(22);
  auto m = random_tensor(rng, 4, 6, 1000);
  FieldElement z{rng() % kGoldilocks};
  // Column slice [2, 5) of a row-major 4 x 6 tensor.
  auto slice = m.col_slice(2, 3);
  FieldElement expect{0};
  for (size_t i = 0; i < 4; ++i)
    for (size_t j = 2; j < 5; ++j) expect += field_pow(z, i * 6 + j) * embed_signed(m.at(i, j));
  EXPECT_EQ(zmul(slice.data, 4, 3, z, Layout::row_major(6, 2)), expect);
  // Transposed view sees the same exponents as the stored tensor.
  auto t = m.transposed();
  EXPECT_EQ(zmul(t.data, 6, 4, z, Layout::transposed(6)), zmul(m, z));
}

TEST(GemmIdentityTest, HoldsForHonestAndFailsForTampered) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const size_t a = 1 + rng() % 5, k = 1 + rng() % 5, b = 1 + rng() % 5;
    auto x = random_tensor(rng, a, k, 1 << 20);
    auto w = random_tensor(rng, k, b, 1 << 20);
    auto y = gemm(x, w);
    FieldElement z{1 + rng() % (kGoldilocks - 1)};
    EXPECT_TRUE(gemm_identity_check(x, w, y, z));
    auto bad = y;
    bad.data[rng() % bad.size()] += 1;
    EXPECT_FALSE(gemm_identity_check(x, w, bad, z));
  }
}

Digest leaf(uint8_t i) { return Sha256{}.update(std::span<const uint8_t>(&i, 1)).finish(); }

TEST(MerkleTest, GoldenRoots) {
  EXPECT_EQ(MerkleTree({leaf(0)}).root().hex(),
            "e877eccc53a62542198998fec47d44c61e888f6b3e95d9b3e331528459a5f012");
  EXPECT_EQ(MerkleTree({leaf(0), leaf(1), leaf(2)}).root().hex(),
            "d14569f0af748c0067dbf5e0d19f235a4a7a9f1e661543a6784dc9f7c7579818");
}

TEST(MerkleTest, OpenVerifyAllSizes) {
  for (size_t n = 1; n <= 33; ++n) {
    std::vector<Digest> leaves;
    for (size_t i = 0; i < n; ++i) leaves.push_back(leaf(static_cast<uint8_t>(i)));
    MerkleTree t(leaves);
    EXPECT_EQ(t.depth(), merkle_depth(n));
    for (size_t i = 0; i < n; ++i) {
      auto path = t.open(i);
      EXPECT_TRUE(merkle_verify(t.root(), n, i, leaves[i], path));
      EXPECT_FALSE(merkle_verify(t.root(), n, i, leaf(200), path));
      if (n > 1) {
        EXPECT_FALSE(merkle_verify(t.root(), n, (i + 1) % n, leaves[i], path));
      }
      if (!path.empty()) {
        auto bad = path;
        bad[0].bytes[0] ^= 1;
        EXPECT_FALSE(merkle_verify(t.root(), n, i, leaves[i], bad));
      }
    }
  }
}

TEST(HashSegmentTest, SingleValueChangeAlwaysChangesDigest) {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 1000; ++trial) {
    auto v = random_tensor(rng, 1, 1 + rng() % 16, int64_t{1} << 30).data;
    auto w = v;
    w[rng() % w.size()] += 1;
    EXPECT_NE(hash_segment("W", v), hash_segment("W", w));
  }
}

TEST(ZMulTest, SegmentAdditivity) {
  std::mt19937_64 rng(25);
  for (int trial = 0; trial < 300; ++trial) {
    const size_t r = 1 + rng() % 5, c = 1 + rng() % 9;
    auto m = random_tensor(rng, r, c, int64_t{1} << 24);
    FieldElement z{rng() % kGoldilocks};
    const size_t split = rng() % (c + 1);
    const auto layout = Layout::row_major(c);
    FieldElement acc{0};
    for (size_t i = 0; i < r; ++i) {
      auto row = m.row(i);
      acc += zmul_run(row.subspan(0, split), i, 0, layout, z);
      acc += zmul_run(row.subspan(split), i, split, layout, z);
    }
    EXPECT_EQ(acc, zmul(m, z));
  }
}

TEST(GemmIdentityTest, SingleEntryTampersNeverAccepted) {
  std::mt19937_64 rng(26);
  size_t accepted = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const size_t a = 1 + rng() % 4, k = 1 + rng() % 4, b = 1 + rng() % 4;
    auto x = random_tensor(rng, a, k, 1 << 16);
    auto w = random_tensor(rng, k, b, 1 << 16);
    auto y = gemm(x, w);
    FieldElement z{1 + rng() % (kGoldilocks - 1)};
    const int64_t delta = 1 + static_cast<int64_t>(rng() % 100);
    switch (trial % 3) {
      case 0: x.data[rng() % x.size()] += delta; break;
      case 1: w.data[rng() % w.size()] += delta; break;
      default: y.data[rng() % y.size()] += delta; break;
    }
    accepted += gemm_identity_check(x, w, y, z);
  }
  EXPECT_EQ(accepted, 0u);
}

TEST(MerkleTest, OutOfRangeIndexAndEmptyTree) {
  MerkleTree t({leaf(0), leaf(1), leaf(2)});
  try {
    t.open(3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIndexOutOfRange);
  }
  EXPECT_THROW(MerkleTree(std::vector<Digest>{}), Error);
  EXPECT_FALSE(merkle_verify(t.root(), 3, 3, leaf(0), t.open(0)));
}

}  // namespace
}  // namespace veritensor
