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

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "veritensor/errors.hpp"
#include "veritensor/field.hpp"
#include "veritensor/hash.hpp"
#include "veritensor/tensor.hpp"

namespace veritensor {

/// ZMul(M) = sum_{i,j} z^(i b + j) M[i][j] for an a x b tensor.
inline FieldElement zmul(const QTensor& m, FieldElement z) {
  return zmul(m.data, m.rows, m.cols, z, Layout::row_major(m.cols));
}

/// Offset-aware variant: exponents start at start_exponent.
inline FieldElement zmul(const QTensor& m, FieldElement z, uint64_t start_exponent) {
  return zmul(m.data, m.rows, m.cols, z, Layout::row_major(m.cols, start_exponent));
}

/// ZMulCol(X)_k = sum_i z^(i b_out) X[i][k]; note the output width b_out.
inline std::vector<FieldElement> zmul_col(const QTensor& x, FieldElement z, uint64_t b_out) {
  VT_ENFORCE(b_out >= 1, ErrorCode::kShapeMismatch, "zmul_col needs b_out >= 1");
  std::vector<FieldElement> out(x.cols);
  const FieldElement step = field_pow(z, b_out);
  FieldElement pw{1};
  for (size_t i = 0; i < x.rows; ++i) {
    for (size_t k = 0; k < x.cols; ++k) out[k] += pw * embed_signed(x.at(i, k));
    pw *= step;
  }
  return out;
}

/// ZMulRow(W)_k = sum_j z^j W[k][j] (Horner evaluation of row k).
inline std::vector<FieldElement> zmul_row(const QTensor& w, FieldElement z) {
  std::vector<FieldElement> out(w.rows);
  for (size_t k = 0; k < w.rows; ++k) {
    FieldElement acc{0};
    for (size_t j = w.cols; j-- > 0;) acc = acc * z + embed_signed(w.at(k, j));
    out[k] = acc;
  }
  return out;
}

inline FieldElement inner_product(std::span<const FieldElement> a, std::span<const FieldElement> b) {
  VT_ENFORCE(a.size() == b.size(), ErrorCode::kShapeMismatch, "inner product lengths");
  FieldElement acc{0};
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

/// <ZMulCol(X), ZMulRow(W)> == ZMul(Y).
inline bool gemm_identity_check(const QTensor& x, const QTensor& w, const QTensor& y, FieldElement z) {
  VT_ENFORCE(x.cols == w.rows && y.rows == x.rows && y.cols == w.cols, ErrorCode::kShapeMismatch,
             "gemm_identity_check shapes");
  return inner_product(zmul_col(x, z, w.cols), zmul_row(w, z)) == zmul(y, z);
}

// ---------------------------------------------------------------- Merkle

inline constexpr std::string_view kMerkleNodeTag = "VT-MERKLE-NODE";

inline Digest merkle_parent(const Digest& left, const Digest& right) {
  return Sha256{}.update(kMerkleNodeTag).update(left).update(right).finish();
}

/// Odd level ends are paired with the all-zero sentinel.
inline const Digest& merkle_sentinel() {
  static const Digest d{};
  return d;
}

using AuthPath = std::vector<Digest>;

class MerkleTree {
 public:
  MerkleTree() = default;

  explicit MerkleTree(std::vector<Digest> leaves) {
    VT_ENFORCE(!leaves.empty(), ErrorCode::kIndexOutOfRange, "merkle tree needs at least one leaf");
    levels_.push_back(std::move(leaves));
    do {
      const auto& cur = levels_.back();
      std::vector<Digest> next;
      next.reserve((cur.size() + 1) / 2);
      for (size_t i = 0; i < cur.size(); i += 2)
        next.push_back(merkle_parent(cur[i], i + 1 < cur.size() ? cur[i + 1] : merkle_sentinel()));
      levels_.push_back(std::move(next));
    } while (levels_.back().size() > 1);
  }

  size_t leaf_count() const { return levels_.empty() ? 0 : levels_.front().size(); }
  const Digest& root() const { return levels_.back().front(); }
  const Digest& leaf(size_t i) const { return levels_.front().at(i); }
  const std::vector<Digest>& leaves() const { return levels_.front(); }
  size_t depth() const { return levels_.size() - 1; }

  AuthPath open(size_t i) const {
    VT_ENFORCE(i < leaf_count(), ErrorCode::kIndexOutOfRange,
               "merkle_open index " + std::to_string(i) + " >= " + std::to_string(leaf_count()));
    AuthPath path;
    for (size_t lvl = 0; lvl + 1 < levels_.size(); ++lvl) {
      const auto& cur = levels_[lvl];
      const size_t sib = i ^ 1;
      path.push_back(sib < cur.size() ? cur[sib] : merkle_sentinel());
      i >>= 1;
    }
    return path;
  }

 private:
  std::vector<std::vector<Digest>> levels_;
};

inline size_t merkle_depth(size_t leaf_count) {
  size_t d = 0;
  do {
    leaf_count = (leaf_count + 1) / 2;
    ++d;
  } while (leaf_count > 1);
  return d;
}

inline MerkleTree merkle_build(std::vector<Digest> leaves) { return MerkleTree(std::move(leaves)); }
inline AuthPath merkle_open(const MerkleTree& t, size_t i) { return t.open(i); }

inline bool merkle_verify(const Digest& root, size_t i, const Digest& leaf, const AuthPath& path) {
  Digest cur = leaf;
  for (const auto& sib : path) {
    cur = (i & 1) ? merkle_parent(sib, cur) : merkle_parent(cur, sib);
    i >>= 1;
  }
  return i == 0 && cur == root;
}

/// Also pins the path length to the tree depth implied by leaf_count.
inline bool merkle_verify(const Digest& root, size_t leaf_count, size_t i, const Digest& leaf,
                          const AuthPath& path) {
  return i < leaf_count && path.size() == merkle_depth(leaf_count) && merkle_verify(root, i, leaf, path);
}

}  // namespace veritensor
