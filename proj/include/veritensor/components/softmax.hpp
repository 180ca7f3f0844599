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

namespace veritensor {

// Softmax over each (row, head) block of width head_width. With a causal
// mask, lane j of row i is masked when j > pos(i) and enters the kernel as
// neg_inf; its opened x stays the real score so ZMul linking still holds.

inline constexpr size_t kSoftmaxLaneFields = 9;  // x p p_rem y y_rem k f idx w

inline bool softmax_masked(const ComponentSpec& sp, size_t row, size_t lane) {
  return sp.causal && lane > sp.positions.at(row);
}

/// Effective kernel input of a row block after masking.
inline std::vector<int64_t> softmax_effective(const ComponentSpec& sp, const QuantConfig& cfg, size_t row,
                                              std::span<const int64_t> x) {
  std::vector<int64_t> e(x.begin(), x.end());
  for (size_t j = 0; j < e.size(); ++j)
    if (softmax_masked(sp, row, j)) e[j] = cfg.neg_inf_q;
  return e;
}

/// Head (i, h): openings [[x_max, S]]; segment: the nine lane witnesses.
inline ProofNode build_softmax(const ComponentSpec& sp, const QTensor& x, const std::vector<SoftmaxResult>& blocks) {
  const size_t hw = sp.head_width();
  VT_ENFORCE(x.rows == sp.rows && x.cols == sp.cols && blocks.size() == sp.rows * sp.heads, ErrorCode::kShapeMismatch,
             sp.label + ": softmax shapes");
  ProofNode comp{Level::kComponent, Kind::kSoftmax, sp.label, {}, {}};
  for (size_t i = 0; i < sp.rows; ++i) {
    ProofNode row{Level::kRow, Kind::kSoftmax, {}, {}, {}};
    for (size_t h = 0; h < sp.heads; ++h) {
      const SoftmaxResult& r = blocks[i * sp.heads + h];
      ProofNode head{Level::kHead, Kind::kSoftmax, {}, {}, {}};
      head.claim.openings.push_back({r.aux.x_max, r.aux.sum_w});
      for (size_t c = 0; c < hw; c += sp.segment) {
        const size_t len = std::min(sp.segment, hw - c);
        auto cut = [&](auto&& v) {
          return std::vector<int64_t>(v.begin() + static_cast<std::ptrdiff_t>(c),
                                      v.begin() + static_cast<std::ptrdiff_t>(c + len));
        };
        ProofNode seg{Level::kSegment, Kind::kSoftmax, {}, {}, {}};
        seg.claim.openings = {cut(x.row(i).subspan(h * hw, hw)), cut(r.p), cut(r.aux.p_rem), cut(r.aux.y),
                              cut(r.aux.y_rem), cut(r.aux.k), cut(r.aux.f), cut(r.aux.idx), cut(r.aux.w)};
        head.children.push_back(std::move(seg));
      }
      row.children.push_back(std::move(head));
    }
    comp.children.push_back(std::move(row));
  }
  return comp;
}

inline void eval_softmax(ProofNode& comp, const ComponentSpec& sp, const Evaluator& ev, const std::string& path) {
  const auto& cfg = ev.cfg();
  const Exp2Table& table = build_exp2_frac_table(cfg, Exp2Direction::kNeg);
  const int q = cfg.q;
  const int64_t one = int64_t{1} << q, bucket = int64_t{1} << (q - cfg.l);
  const int64_t l2e = log2e_q(q);
  const size_t hw = sp.head_width(), ns = ceil_div(hw, sp.segment);
  require_children(comp, sp.rows, Level::kRow, path);
  for (size_t i = 0; i < sp.rows; ++i) {
    ProofNode& row = comp.children[i];
    const std::string rp = child_path(path, "row", i);
    require_children(row, sp.heads, Level::kHead, rp);
    for (size_t h = 0; h < sp.heads; ++h) {
      ProofNode& head = row.children[h];
      const std::string hp = child_path(rp, "head", h);
      require_children(head, ns, Level::kSegment, hp);
      auto hs = opening(head, 0, 2, hp);
      const int64_t x_max = hs[0], big_s = hs[1];
      ev.require(x_max > cfg.neg_inf_q && big_s > 0, hp, "softmax live row");
      for (size_t c = 0; c < ns; ++c) {
        ProofNode& seg = head.children[c];
        const std::string sg = child_path(hp, "seg", c);
        if (!ev.sampled(sg)) continue;
        const size_t c0 = c * sp.segment, len = std::min(sp.segment, hw - c0);
        std::array<std::span<const int64_t>, kSoftmaxLaneFields> f;
        for (size_t k = 0; k < kSoftmaxLaneFields; ++k) f[k] = opening(seg, k, len, sg);
        const auto &x = f[0], &p = f[1], &p_rem = f[2], &y = f[3], &y_rem = f[4], &kk = f[5], &fr = f[6],
                   &idx = f[7], &w = f[8];
        i128 sum_w = 0;
        int64_t hits = 0;
        for (size_t j = 0; j < len; ++j) {
          const int64_t xe = softmax_masked(sp, i, c0 + j) ? cfg.neg_inf_q : x[j];
          const i128 delta = i128{xe} - x_max;
          ev.require(delta <= 0, sg, "softmax step 1 max");
          hits += delta == 0;
          ev.require((i128{y[j]} << q) + y_rem[j] == delta * l2e && y_rem[j] >= 0 && y_rem[j] < one, sg,
                     "softmax step 2 exponent");
          ev.require(-i128{y[j]} == (i128{kk[j]} << q) + fr[j] && kk[j] >= 0 && fr[j] >= 0 && fr[j] < one, sg,
                     "softmax step 3 split");
          const bool idx_ok = idx[j] >= 0 && static_cast<size_t>(idx[j]) < table.entries.size() &&
                              i128{idx[j]} * bucket <= fr[j] && fr[j] < (i128{idx[j]} + 1) * bucket;
          ev.require(idx_ok, sg, "softmax step 4 lookup");
          if (idx_ok) ev.require(w[j] == shr_sat(table[static_cast<size_t>(idx[j])], kk[j]), sg, "softmax step 4 shift");
          ev.require(i128{p[j]} * big_s + p_rem[j] == i128{w[j]} << q && p_rem[j] >= 0 && p_rem[j] < big_s, sg,
                     "softmax step 5 normalization");
          sum_w += w[j];
        }
        Claim cl;
        cl.zmul_in = zmul_run(x, i, h * hw + c0, sp.in, ev.z());
        cl.zmul_out = zmul_run(p, i, h * hw + c0, sp.out, ev.z());
        cl.aux["sum_w"] = aux_int(sum_w);
        cl.aux["max_hits"] = aux_int(hits);
        cl.shape = {i, i + 1, h * hw + c0, len};
        ev.settle(seg, cl, sg);
      }
      Claim hc = fold_children(head.children);
      ev.require(lift_signed(hc.get("sum_w")) == big_s, hp, "softmax sum");
      ev.require(lift_signed(hc.get("max_hits")) >= 1, hp, "softmax max witness");
      hc.aux.erase("max_hits");
      ev.settle(head, hc, hp);
    }
    ev.settle(row, fold_children(row.children), rp);
  }
  ev.settle(comp, fold_children(comp.children), path);
}

}  // namespace veritensor
