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

#include "veritensor/fixed_point.hpp"

#include <numeric>
#include <random>

#include "gtest/gtest.h"

namespace veritensor {
namespace {

TEST(Log2eTest, Examples) {
  // round(log2(e) * 2^q) from a 50-digit mpmath evaluation.
  EXPECT_EQ(log2e_q(16), 94548);
  EXPECT_EQ(log2e_q(1), 3);
  EXPECT_EQ(log2e_q(0), 1);
}

TEST(QuantConfigTest, Validation) {
  EXPECT_NO_THROW(QuantConfig{}.validate());
  EXPECT_THROW((QuantConfig{16, 17, -(int64_t{1} << 40)}.validate()), Error);
  EXPECT_THROW((QuantConfig{25, 8, -(int64_t{1} << 40)}.validate()), Error);
  EXPECT_THROW((QuantConfig{16, 8, -(int64_t{1} << 20)}.validate()), Error);
}

TEST(Exp2TableTest, GoldenEntries) {
  QuantConfig cfg;
  const auto& neg = build_exp2_frac_table(cfg, Exp2Direction::kNeg);
  const auto& pos = build_exp2_frac_table(cfg, Exp2Direction::kPos);
  ASSERT_EQ(neg.size(), 256u);
  EXPECT_EQ(neg[0], 65536);
  EXPECT_EQ(neg[128], 46341);
  EXPECT_EQ(pos[0], 65536);
  EXPECT_EQ(pos[128], 92682);
  EXPECT_EQ(neg[255], 32857);
  EXPECT_EQ(pos[255], 130718);
  // Whole-table checksums from the same high-precision oracle.
  EXPECT_EQ(std::accumulate(neg.entries.begin(), neg.entries.end(), int64_t{0}), 12118596);
  EXPECT_EQ(std::accumulate(pos.entries.begin(), pos.entries.end(), int64_t{0}), 24171656);
  EXPECT_EQ(&neg, &build_exp2_frac_table(cfg, Exp2Direction::kNeg));
}

TEST(Exp2TableTest, MonotoneAndReciprocal) {
  for (int q : {8, 12, 16, 20, 24}) {
    for (int l : {1, 4, 8}) {
      if (l > q) continue;
      QuantConfig cfg{q, l, -(int64_t{1} << 40)};
      const auto& neg = build_exp2_frac_table(cfg, Exp2Direction::kNeg);
      const auto& pos = build_exp2_frac_table(cfg, Exp2Direction::kPos);
      for (size_t i = 1; i < neg.size(); ++i) {
        EXPECT_LE(neg[i], neg[i - 1]);
        EXPECT_GE(pos[i], pos[i - 1]);
      }
      const i128 one = i128{1} << (2 * q);
      const i128 slack = i128{1} << (q + 1);
      for (size_t i = 0; i < neg.size(); ++i) {
        const i128 prod = i128{neg[i]} * pos[i];
        EXPECT_GE(prod, one - slack);
        EXPECT_LE(prod, one + slack);
      }
    }
  }
}

TEST(IsqrtTest, Examples) {
  EXPECT_EQ(isqrt(0), 0u);
  EXPECT_EQ(isqrt(16), 4u);
  EXPECT_EQ(isqrt(15), 3u);
  try {
    isqrt(-1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNegativeInput);
  }
}

TEST(IsqrtTest, FloorPropertyRandom) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int64_t> d(0, int64_t{1} << 40);
  for (int i = 0; i < 100000; ++i) {
    const int64_t n = d(rng);
    const i128 r = isqrt(n);
    EXPECT_LE(r * r, n);
    EXPECT_GT((r + 1) * (r + 1), n);
  }
  // Large and perfect-square edges.
  for (int64_t r : {int64_t{3037000499}, int64_t{1} << 31, (int64_t{1} << 31) - 1}) {
    EXPECT_EQ(isqrt(i128{r} * r), static_cast<uint64_t>(r));
    EXPECT_EQ(isqrt(i128{r} * r - 1), static_cast<uint64_t>(r - 1));
  }
}

TEST(DivRemTest, Examples) {
  EXPECT_EQ(div_rem(7, 3), (DivRem{2, 1}));
  EXPECT_EQ(div_rem(0, 5), (DivRem{0, 0}));
  EXPECT_EQ(div_rem(65536 * 3, 6), (DivRem{32768, 0}));
  try {
    div_rem(1, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDivisionByZero);
  }
  try {
    div_rem(-1, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNegativeDividend);
  }
}

TEST(DivRemTest, Reconstruction) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 100000; ++i) {
    const i128 a = static_cast<int64_t>(rng() >> 2);
    const i128 b = 1 + static_cast<int64_t>(rng() % 1000003);
    auto [q, r] = div_rem(a, b);
    EXPECT_EQ(q * b + r, a);
    EXPECT_GE(r, 0);
    EXPECT_LT(r, b);
    auto fr = floor_div_rem(-a, b);
    EXPECT_EQ(fr.quotient * b + fr.remainder, -a);
    EXPECT_GE(fr.remainder, 0);
    EXPECT_LT(fr.remainder, b);
  }
}

}  // namespace
}  // namespace veritensor
