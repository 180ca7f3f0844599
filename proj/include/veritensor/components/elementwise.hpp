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

#include "veritensor/evaluator.hpp"
#include "veritensor/leaves.hpp"

namespace veritensor {

// Element-wise add and rescaled multiply. B is a committed row vector
// (weight), a full activation, or one activation scalar per row (column
// broadcast, opened once in the row node).

/// b is 1 x cols for kWeight, rows x cols for kActivation, rows x 1 for kColumn.
inline ProofNode build_elementwise(const ComponentSpec& sp, const QTensor& x, const QTensor& b, const QTensor& y,
                                   const std::vector<int64_t>& rem, const MerkleTree* tree) {
  VT_ENFORCE(x.rows == sp.rows && x.cols == sp.cols && y.rows == sp.rows && y.cols == sp.cols,
             ErrorCode::kShapeMismatch, sp.label + ": elementwise shapes");
  const bool mul = sp.kind == Kind::kMul;
  VT_ENFORCE(!mul || rem.size() == x.size(), ErrorCode::kShapeMismatch, sp.label + ": remainder count");
  switch (sp.b_mode) {
    case BMode::kWeight:
      VT_ENFORCE(b.rows == 1 && b.cols == sp.cols && tree, ErrorCode::kShapeMismatch, sp.label + ": weight operand");
      break;
    case BMode::kActivation:
      VT_ENFORCE(b.rows == sp.rows && b.cols == sp.cols, ErrorCode::kShapeMismatch, sp.label + ": activation operand");
      break;
    case BMode::kColumn:
      VT_ENFORCE(b.rows == sp.rows && b.cols == 1, ErrorCode::kShapeMismatch, sp.label + ": column operand");
      break;
    case BMode::kNone:
      throw Error(ErrorCode::kBadConfig, sp.label + ": elementwise needs a B operand");
  }
  ProofNode comp{Level::kComponent, sp.kind, sp.label, {}, {}};
  for (size_t i = 0; i < sp.rows; ++i) {
    ProofNode row{Level::kRow, sp.kind, {}, {}, {}};
    if (sp.b_mode == BMode::kColumn) row.claim.openings.push_back({b.at(i, 0)});
    for (size_t c = 0; c < sp.cols; c += sp.segment) {
      const size_t len = std::min(sp.segment, sp.cols - c);
      auto vec = [&](std::span<const int64_t> v) { return std::vector<int64_t>(v.begin(), v.end()); };
      ProofNode seg{Level::kSegment, sp.kind, {}, {}, {}};
      auto& o = seg.claim.openings;
      o.push_back(vec(x.row(i).subspan(c, len)));
      if (sp.b_mode == BMode::kWeight) o.push_back(vec(b.row(0).subspan(c, len)));
      if (sp.b_mode == BMode::kActivation) o.push_back(vec(b.row(i).subspan(c, len)));
      o.push_back(vec(y.row(i).subspan(c, len)));
      if (mul) o.push_back(vec(std::span<const int64_t>(rem).subspan(i * sp.cols + c, len)));
      if (sp.b_mode == BMode::kWeight) seg.claim.paths.push_back(tree->open(sp.weight_leaf + c / sp.segment));
      row.children.push_back(std::move(seg));
    }
    comp.children.push_back(std::move(row));
  }
  return comp;
}

inline void eval_elementwise(ProofNode& comp, const ComponentSpec& sp, const Evaluator& ev, const std::string& path) {
  const bool mul = sp.kind == Kind::kMul;
  const bool column = sp.b_mode == BMode::kColumn;
  const int q = ev.cfg().q;
  const size_t ns = ceil_div(sp.cols, sp.segment);
  const size_t n_open = 2 + (column ? 0 : 1) + (mul ? 1 : 0);
  require_children(comp, sp.rows, Level::kRow, path);
  for (size_t i = 0; i < sp.rows; ++i) {
    ProofNode& row = comp.children[i];
    const std::string rp = child_path(path, "row", i);
    require_children(row, ns, Level::kSegment, rp);
    int64_t g = 0;
    if (column) g = opening(row, 0, 1, rp)[0];
    for (size_t c = 0; c < ns; ++c) {
      ProofNode& seg = row.children[c];
      const std::string sg = child_path(rp, "seg", c);
      if (!ev.sampled(sg)) continue;
      const size_t c0 = c * sp.segment, len = std::min(sp.segment, sp.cols - c0);
      if (seg.claim.openings.size() != n_open) throw VerifyFailure(sg, "opening layout");
      size_t k = 0;
      auto x = opening(seg, k++, len, sg);
      std::span<const int64_t> b;
      if (!column) b = opening(seg, k++, len, sg);
      auto y = opening(seg, k++, len, sg);
      std::span<const int64_t> rem;
      if (mul) rem = opening(seg, k++, len, sg);
      for (size_t j = 0; j < len; ++j) {
        const int64_t bj = column ? g : b[j];
        if (mul)
          ev.require((i128{y[j]} << q) + rem[j] == i128{x[j]} * bj && rem[j] >= 0 && rem[j] < (int64_t{1} << q), sg,
                     "elementwise product");
        else
          ev.require(i128{y[j]} == i128{x[j]} + bj, sg, "elementwise add");
      }
      Claim cl;
      cl.zmul_in = zmul_run(x, i, c0, sp.in, ev.z());
      cl.zmul_out = zmul_run(y, i, c0, sp.out, ev.z());
      if (sp.b_mode == BMode::kWeight) {
        const Digest d = hash_segment(kWeightTag, b);
        cl.digests.push_back(d);
        ev.require_leaf(sp.weight_leaf + c, d, seg.claim.paths, 0, sg, "weight digest");
      } else if (sp.b_mode == BMode::kActivation) {
        cl.aux["zmul_b"] = zmul_run(b, i, c0, sp.b, ev.z());
      }
      cl.shape = {i, i + 1, c0, len};
      ev.settle(seg, cl, sg);
    }
    Claim rc = fold_children(row.children);
    if (column) rc.aux["zmul_b"] = field_pow(ev.z(), sp.b.exponent(i, 0)) * embed_signed(g);
    ev.settle(row, rc, rp);
  }
  ev.settle(comp, fold_children(comp.children), path);
}

}  // namespace veritensor
