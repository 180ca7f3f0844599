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

// Sigmoid segments open [x, s, s_rem, y, y_rem, k, f, idx, u]; SiLU adds
// [out, out_rem] and exposes out instead of s.

inline ProofNode build_sigmoid_silu(const ComponentSpec& sp, const QTensor& x, const std::vector<SiluResult>& lanes) {
  VT_ENFORCE(x.rows == sp.rows && x.cols == sp.cols && lanes.size() == x.size(), ErrorCode::kShapeMismatch,
             sp.label + ": sigmoid shapes");
  const bool silu = sp.kind == Kind::kSilu;
  ProofNode comp{Level::kComponent, sp.kind, sp.label, {}, {}};
  for (size_t i = 0; i < sp.rows; ++i) {
    ProofNode row{Level::kRow, sp.kind, {}, {}, {}};
    for (size_t c = 0; c < sp.cols; c += sp.segment) {
      const size_t len = std::min(sp.segment, sp.cols - c);
      ProofNode seg{Level::kSegment, sp.kind, {}, {}, {}};
      auto& o = seg.claim.openings;
      o.assign(silu ? 11 : 9, {});
      for (size_t j = c; j < c + len; ++j) {
        const SiluResult& r = lanes[i * sp.cols + j];
        const SigmoidAux& a = r.sig.aux;
        const int64_t vals[] = {x.at(i, j), r.sig.s, a.s_rem, a.y, a.y_rem, a.k, a.f, a.idx, a.u, r.y, r.rem};
        for (size_t k = 0; k < o.size(); ++k) o[k].push_back(vals[k]);
      }
      row.children.push_back(std::move(seg));
    }
    comp.children.push_back(std::move(row));
  }
  return comp;
}

inline void eval_sigmoid_silu(ProofNode& comp, const ComponentSpec& sp, const Evaluator& ev, const std::string& path) {
  const auto& cfg = ev.cfg();
  const Exp2Table& table = build_exp2_frac_table(cfg, Exp2Direction::kPos);
  const bool silu = sp.kind == Kind::kSilu;
  const int q = cfg.q;
  const int64_t one = int64_t{1} << q, bucket = int64_t{1} << (q - cfg.l);
  const int64_t l2e = log2e_q(q);
  const size_t ns = ceil_div(sp.cols, sp.segment);
  require_children(comp, sp.rows, Level::kRow, path);
  for (size_t i = 0; i < sp.rows; ++i) {
    ProofNode& row = comp.children[i];
    const std::string rp = child_path(path, "row", i);
    require_children(row, ns, Level::kSegment, rp);
    for (size_t c = 0; c < ns; ++c) {
      ProofNode& seg = row.children[c];
      const std::string sg = child_path(rp, "seg", c);
      if (!ev.sampled(sg)) continue;
      const size_t c0 = c * sp.segment, len = std::min(sp.segment, sp.cols - c0);
      std::array<std::span<const int64_t>, 11> f;
      for (size_t k = 0; k < (silu ? 11u : 9u); ++k) f[k] = opening(seg, k, len, sg);
      if (seg.claim.openings.size() != (silu ? 11u : 9u)) throw VerifyFailure(sg, "opening layout");
      const auto &x = f[0], &s = f[1], &s_rem = f[2], &y = f[3], &y_rem = f[4], &kk = f[5], &fr = f[6], &idx = f[7],
                 &u = f[8];
      for (size_t j = 0; j < len; ++j) {
        ev.require((i128{y[j]} << q) + y_rem[j] == -i128{x[j]} * l2e && y_rem[j] >= 0 && y_rem[j] < one, sg,
                   "sigmoid exponent");
        ev.require(i128{y[j]} == (i128{kk[j]} << q) + fr[j] && fr[j] >= 0 && fr[j] < one, sg, "sigmoid shift split");
        const bool idx_ok = idx[j] >= 0 && static_cast<size_t>(idx[j]) < table.entries.size() &&
                            i128{idx[j]} * bucket <= fr[j] && fr[j] < (i128{idx[j]} + 1) * bucket;
        ev.require(idx_ok, sg, "sigmoid lookup");
        if (idx_ok)
          ev.require(u[j] == sigmoid_u(table[static_cast<size_t>(idx[j])], kk[j], q), sg, "sigmoid shift split");
        const i128 den = (i128{1} << q) + u[j];
        ev.require(i128{s[j]} * den + s_rem[j] == i128{1} << (2 * q) && s_rem[j] >= 0 && s_rem[j] < den, sg,
                   "sigmoid division");
        if (silu)
          ev.require((i128{f[9][j]} << q) + f[10][j] == i128{x[j]} * s[j] && f[10][j] >= 0 && f[10][j] < one, sg,
                     "silu product");
      }
      Claim cl;
      cl.zmul_in = zmul_run(x, i, c0, sp.in, ev.z());
      cl.zmul_out = zmul_run(silu ? f[9] : s, i, c0, sp.out, ev.z());
      cl.shape = {i, i + 1, c0, len};
      ev.settle(seg, cl, sg);
    }
    ev.settle(row, fold_children(row.children), rp);
  }
  ev.settle(comp, fold_children(comp.children), path);
}

}  // namespace veritensor
