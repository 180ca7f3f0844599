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

/// Row i: openings [[Q, R, rms]]; segment c: [x, w, y, r] with a weight path.
inline ProofNode build_rmsnorm(const ComponentSpec& sp, const QTensor& x, std::span<const int64_t> w,
                               const std::vector<RmsResult>& rows, const MerkleTree& tree) {
  VT_ENFORCE(x.rows == sp.rows && x.cols == sp.cols && w.size() == sp.cols && rows.size() == sp.rows,
             ErrorCode::kShapeMismatch, sp.label + ": rmsnorm shapes");
  ProofNode comp{Level::kComponent, Kind::kRmsNorm, sp.label, {}, {}};
  const size_t s = sp.segment;
  for (size_t i = 0; i < sp.rows; ++i) {
    ProofNode row{Level::kRow, Kind::kRmsNorm, {}, {}, {}};
    const auto& r = rows[i];
    row.claim.openings.push_back({r.aux.quotient, r.aux.remainder, r.aux.rms});
    for (size_t c = 0; c < sp.cols; c += s) {
      const size_t len = std::min(s, sp.cols - c);
      auto cut = [&](auto&& v) { return std::vector<int64_t>(v.begin() + static_cast<std::ptrdiff_t>(c), v.begin() + static_cast<std::ptrdiff_t>(c + len)); };
      ProofNode seg{Level::kSegment, Kind::kRmsNorm, {}, {}, {}};
      seg.claim.openings = {cut(x.row(i)), cut(w), cut(r.y), cut(r.aux.y_rem)};
      seg.claim.paths.push_back(tree.open(sp.weight_leaf + c / s));
      row.children.push_back(std::move(seg));
    }
    comp.children.push_back(std::move(row));
  }
  return comp;
}

inline void eval_rmsnorm(ProofNode& comp, const ComponentSpec& sp, const Evaluator& ev, const std::string& path) {
  const size_t s = sp.segment, ns = ceil_div(sp.cols, s);
  const int q = ev.cfg().q;
  require_children(comp, sp.rows, Level::kRow, path);
  for (size_t i = 0; i < sp.rows; ++i) {
    ProofNode& row = comp.children[i];
    const std::string rp = child_path(path, "row", i);
    require_children(row, ns, Level::kSegment, rp);
    auto qrr = opening(row, 0, 3, rp);
    const int64_t rms = qrr[2];
    ev.require(rms >= 1, rp, "rmsnorm rms positive");
    const i128 den = i128{rms} << q;
    for (size_t c = 0; c < ns; ++c) {
      ProofNode& seg = row.children[c];
      const std::string sg = child_path(rp, "seg", c);
      if (!ev.sampled(sg)) continue;
      const size_t c0 = c * s, len = std::min(s, sp.cols - c0);
      auto x = opening(seg, 0, len, sg), w = opening(seg, 1, len, sg), y = opening(seg, 2, len, sg),
           r = opening(seg, 3, len, sg);
      i128 sq = 0;
      for (size_t j = 0; j < len; ++j) {
        sq += i128{x[j]} * x[j];
        ev.require(i128{y[j]} * den + r[j] == (i128{x[j]} * w[j]) << q && r[j] >= 0 && r[j] < den, sg,
                   "rmsnorm division");
      }
      Claim cl;
      cl.zmul_in = zmul_run(x, i, c0, sp.in, ev.z());
      cl.zmul_out = zmul_run(y, i, c0, sp.out, ev.z());
      cl.aux["sum_sq"] = aux_int(sq);
      const Digest d = hash_segment(kWeightTag, w);
      cl.digests.push_back(d);
      ev.require_leaf(sp.weight_leaf + c, d, seg.claim.paths, 0, sg, "weight digest");
      cl.shape = {i, i + 1, c0, len};
      ev.settle(seg, cl, sg);
    }
    Claim rc = fold_children(row.children);
    const i128 sum = lift_signed(rc.get("sum_sq"));
    const i128 n = static_cast<i128>(sp.cols), qv = qrr[0], rv = qrr[1];
    ev.require(sum == qv * n + rv && rv >= 0 && rv < n, rp, "rmsnorm mean square");
    ev.require(qv >= 0 && i128{rms} * rms <= qv + 1 && (i128{rms} + 1) * (rms + 1) > qv + 1, rp, "rmsnorm square root");
    ev.settle(row, rc, rp);
  }
  ev.settle(comp, fold_children(comp.children), path);
}

}  // namespace veritensor
