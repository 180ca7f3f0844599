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
#include <vector>

#include "veritensor/hash.hpp"
#include "veritensor/tensor.hpp"

// Leaf digests of committed parameters. The segmentation of each tensor
// follows how its prover opens it, so every opened segment is one leaf.

namespace veritensor {

inline constexpr std::string_view kWeightTag = "VT-W";
inline constexpr std::string_view kVocabTag = "VT-E";
inline constexpr std::string_view kRopeTag = "VT-ROPE";

/// Column segments of a GeMM weight W (n x b): leaf j * ceil(n/s) + kappa
/// covers W[kappa s .. kappa s + s)[j].
inline std::vector<Digest> gemm_weight_leaves(const QTensor& w, size_t s) {
  const size_t nk = (w.rows + s - 1) / s;
  std::vector<Digest> out;
  out.reserve(nk * w.cols);
  std::vector<int64_t> col;
  for (size_t j = 0; j < w.cols; ++j) {
    for (size_t kb = 0; kb < nk; ++kb) {
      col.clear();
      for (size_t k = kb * s; k < std::min(w.rows, kb * s + s); ++k) col.push_back(w.at(k, j));
      out.push_back(hash_segment(kWeightTag, col));
    }
  }
  return out;
}

/// Stacked per-head GeMM weights: `blocks` row blocks, each its own W.
inline std::vector<Digest> stacked_weight_leaves(const QTensor& w, size_t blocks, size_t s) {
  const size_t n = w.rows / blocks;
  std::vector<Digest> out;
  for (size_t h = 0; h < blocks; ++h) {
    QTensor sub(n, w.cols);
    for (size_t k = 0; k < n; ++k)
      for (size_t j = 0; j < w.cols; ++j) sub.at(k, j) = w.at(h * n + k, j);
    auto part = gemm_weight_leaves(sub, s);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

/// 1 x s segments of a weight vector.
inline std::vector<Digest> vector_leaves(std::span<const int64_t> v, size_t s) {
  std::vector<Digest> out;
  for (size_t c = 0; c < v.size(); c += s) out.push_back(hash_segment(kWeightTag, v.subspan(c, std::min(s, v.size() - c))));
  return out;
}

/// Row digest of a vocabulary row assembled from its 1 x s segments.
inline Digest vocab_row_digest(std::span<const int64_t> row, size_t s) {
  std::vector<Digest> segs;
  for (size_t c = 0; c < row.size(); c += s) segs.push_back(hash_segment(kVocabTag, row.subspan(c, std::min(s, row.size() - c))));
  return hash_row(segs);
}

inline std::vector<Digest> vocab_leaves(const QTensor& vocab, size_t s) {
  std::vector<Digest> out;
  for (size_t r = 0; r < vocab.rows; ++r) out.push_back(vocab_row_digest(vocab.row(r), s));
  return out;
}

inline std::vector<Digest> rope_leaves(const QTensor& table) {
  std::vector<Digest> out;
  for (size_t r = 0; r < table.rows; ++r) out.push_back(hash_segment(kRopeTag, table.row(r)));
  return out;
}

}  // namespace veritensor
