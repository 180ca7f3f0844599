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

#include <string>
#include <utility>
#include <vector>

#include "veritensor/evaluator.hpp"
#include "veritensor/proof.hpp"

namespace veritensor {

/// A single component configuration for structural inspection.
struct ShapeQuery {
  std::string component;  // embedding, rmsnorm, rope, softmax, sigmoid, silu, add, mul, gemm, expert_selector
  size_t rows = 24;
  size_t dim = 0;       // row width (gemm: output columns b)
  size_t segment = 0;
  size_t head_dim = 0;
  size_t heads = 0;
  size_t inner = 0;     // gemm n
  size_t groups = 0;    // expert groups
};

using LevelCounts = std::vector<std::pair<Level, size_t>>;

/// Node counts per level of a component proof, computed without proving.
inline LevelCounts dag_shape(const ShapeQuery& q) {
  auto need = [&](bool ok, const std::string& what) {
    VT_ENFORCE(ok, ErrorCode::kBadConfig, q.component + ": " + what);
  };
  need(q.rows >= 1, "rows must be >= 1");
  const std::string& c = q.component;
  if (c == "embedding" || c == "rmsnorm" || c == "sigmoid" || c == "silu" || c == "add" || c == "mul") {
    need(q.dim >= 1 && q.segment >= 1, "needs --dim and --segment");
    return {{Level::kSegment, q.rows * ceil_div(q.dim, q.segment)}, {Level::kRow, q.rows}, {Level::kComponent, 1}};
  }
  if (c == "rope") {
    need(q.heads >= 1 && q.head_dim >= 2 && q.head_dim % 2 == 0, "needs --heads and an even --head-dim");
    return {{Level::kHead, q.rows * q.heads}, {Level::kRow, q.rows}, {Level::kComponent, 1}};
  }
  if (c == "softmax") {
    need(q.heads >= 1 && q.head_dim >= 1 && q.segment >= 1, "needs --heads, --head-dim and --segment");
    return {{Level::kSegment, q.rows * q.heads * ceil_div(q.head_dim, q.segment)},
            {Level::kHead, q.rows * q.heads},
            {Level::kRow, q.rows},
            {Level::kComponent, 1}};
  }
  if (c == "expert_selector") {
    need(q.groups >= 1 && q.dim >= q.groups && q.dim % q.groups == 0, "needs --dim divisible by --groups");
    return {{Level::kGroup, q.rows * q.groups},
            {Level::kGroupRow, q.rows},
            {Level::kSortedGroup, q.rows * q.groups},
            {Level::kSortedGroupRow, q.rows},
            {Level::kComponent, 1}};
  }
  if (c == "gemm") {
    need(q.inner >= 1 && q.dim >= 1 && q.segment >= 1, "needs --n, --b and --segment");
    const size_t blocks = ceil_div(q.inner, q.segment);
    return {{Level::kSegment, blocks * (q.rows + q.dim)},
            {Level::kXProof, blocks},
            {Level::kWProof, blocks},
            {Level::kXWProof, blocks},
            {Level::kComponent, 1}};
  }
  throw Error(ErrorCode::kBadConfig, "unknown component " + c);
}

inline size_t shape_count(const LevelCounts& counts, Level l) {
  for (const auto& [lv, n] : counts)
    if (lv == l) return n;
  return 0;
}

}  // namespace veritensor
