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

// GeMM: X (a x n) splits into 1 x s row segments grouped per column block
// (XProof), W into s x 1 column segments per block (WProof). Each block pair
// contributes <ZMulCol, ZMulRow> restricted to the block; the component
// checks the sum against ZMul(Y_raw) and the rescale to Y.

namespace veritensor {

inline ProofNode build_gemm(const ComponentSpec& sp, const QTensor& x, const QTensor& w, const QTensor& y_raw,
                            const Rescaled& y, const MerkleTree* tree) {
  VT_ENFORCE(x.rows == sp.rows && x.cols == sp.inner && w.rows == sp.inner && w.cols == sp.cols,
             ErrorCode::kShapeMismatch, sp.label + ": gemm operand shapes");
  VT_ENFORCE(sp.b_mode != BMode::kWeight || tree != nullptr, ErrorCode::kBadConfig, sp.label + ": weight tree missing");
  const size_t s = sp.segment, nk = ceil_div(sp.inner, s);
  ProofNode comp{Level::kComponent, Kind::kGemm, sp.label, {}, {}};
  for (size_t kb = 0; kb < nk; ++kb) {
    const size_t k0 = kb * s, len = std::min(s, sp.inner - k0);
    ProofNode xp{Level::kXProof, Kind::kGemm, {}, {}, {}};
    for (size_t i = 0; i < sp.rows; ++i) {
      ProofNode seg{Level::kSegment, Kind::kGemm, {}, {}, {}};
      seg.claim.openings.emplace_back(x.row(i).begin() + static_cast<std::ptrdiff_t>(k0),
                                      x.row(i).begin() + static_cast<std::ptrdiff_t>(k0 + len));
      xp.children.push_back(std::move(seg));
    }
    ProofNode wp{Level::kWProof, Kind::kGemm, {}, {}, {}};
    for (size_t j = 0; j < sp.cols; ++j) {
      ProofNode seg{Level::kSegment, Kind::kGemm, {}, {}, {}};
      std::vector<int64_t> col(len);
      for (size_t k = 0; k < len; ++k) col[k] = w.at(k0 + k, j);
      seg.claim.openings.push_back(std::move(col));
      if (sp.b_mode == BMode::kWeight) seg.claim.paths.push_back(tree->open(sp.weight_leaf + j * nk + kb));
      wp.children.push_back(std::move(seg));
    }
    ProofNode xw{Level::kXWProof, Kind::kGemm, {}, {}, {}};
    xw.children.push_back(std::move(xp));
    xw.children.push_back(std::move(wp));
    comp.children.push_back(std::move(xw));
  }
  for (size_t i = 0; i < sp.rows; ++i) {
    auto r = y_raw.row(i), q = y.y.row(i);
    comp.claim.openings.emplace_back(r.begin(), r.end());
    comp.claim.openings.emplace_back(q.begin(), q.end());
    comp.claim.openings.emplace_back(y.rem.begin() + static_cast<std::ptrdiff_t>(i * sp.cols),
                                     y.rem.begin() + static_cast<std::ptrdiff_t>((i + 1) * sp.cols));
  }
  return comp;
}

inline void eval_gemm(ProofNode& comp, const ComponentSpec& sp, const Evaluator& ev, const std::string& path) {
  const size_t s = sp.segment, nk = ceil_div(sp.inner, s);
  const FieldElement z = ev.z();
  require_children(comp, nk, Level::kXWProof, path);
  const FieldElement zb = field_pow(z, sp.cols);
  for (size_t kb = 0; kb < nk; ++kb) {
    const size_t k0 = kb * s, len = std::min(s, sp.inner - k0);
    const std::string xw_path = child_path(path, "xw", kb);
    ProofNode& xw = comp.children[kb];
    if (xw.children.size() != 2 || xw.children[0].level != Level::kXProof || xw.children[1].level != Level::kWProof)
      throw VerifyFailure(xw_path, "xwproof children");

    ProofNode& xp = xw.children[0];
    const std::string xp_path = xw_path + "/x";
    require_children(xp, sp.rows, Level::kSegment, xp_path);
    FieldElement zi{1};
    for (size_t i = 0; i < sp.rows; ++i, zi *= zb) {
      ProofNode& seg = xp.children[i];
      const std::string sp_path = child_path(xp_path, "seg", i);
      if (!ev.sampled(sp_path)) continue;
      auto v = opening(seg, 0, len, sp_path);
      Claim c;
      c.zmul_in = zmul_run(v, i, k0, sp.in, z);
      c.vec.resize(len);
      for (size_t k = 0; k < len; ++k) c.vec[k] = zi * embed_signed(v[k]);
      c.shape = {i, i + 1, k0, len};
      ev.settle(seg, c, sp_path);
    }
    Claim xc = fold_children(xp.children);
    ev.settle(xp, xc, xp_path);

    ProofNode& wp = xw.children[1];
    const std::string wp_path = xw_path + "/w";
    require_children(wp, sp.cols, Level::kSegment, wp_path);
    FieldElement zj{1};
    for (size_t j = 0; j < sp.cols; ++j, zj *= z) {
      ProofNode& seg = wp.children[j];
      const std::string sp_path = child_path(wp_path, "seg", j);
      if (!ev.sampled(sp_path)) continue;
      auto v = opening(seg, 0, len, sp_path);
      Claim c;
      c.vec.resize(len);
      for (size_t k = 0; k < len; ++k) c.vec[k] = zj * embed_signed(v[k]);
      c.shape = {k0, k0 + len, j, 1};
      if (sp.b_mode == BMode::kWeight) {
        const Digest d = hash_segment(kWeightTag, v);
        c.digests.push_back(d);
        ev.require_leaf(sp.weight_leaf + j * nk + kb, d, seg.claim.paths, 0, sp_path, "weight digest");
      } else {
        c.aux["zmul_b"] = zmul_col_run(v, k0, j, sp.b, z);
      }
      ev.settle(seg, c, sp_path);
    }
    Claim wc = fold_children(wp.children);
    ev.settle(wp, wc, wp_path);

    Claim c;
    c.zmul_in = xc.zmul_in;
    if (sp.b_mode != BMode::kWeight) c.aux["zmul_b"] = wc.get("zmul_b");
    if (xc.vec.size() != len || wc.vec.size() != len) throw VerifyFailure(xw_path, "vector block length");
    c.aux["ip"] = inner_product(xc.vec, wc.vec);
    c.shape = xc.shape;
    ev.settle(xw, c, xw_path);
  }
  Claim c = fold_children(comp.children);
  const int q = ev.cfg().q;
  FieldElement zraw{0};
  c.zmul_out = FieldElement{0};
  for (size_t i = 0; i < sp.rows; ++i) {
    auto raw = opening(comp, 3 * i, sp.cols, path);
    auto y = opening(comp, 3 * i + 1, sp.cols, path);
    auto rem = opening(comp, 3 * i + 2, sp.cols, path);
    for (size_t j = 0; j < sp.cols; ++j)
      ev.require((i128{y[j]} << q) + rem[j] == raw[j] && rem[j] >= 0 && rem[j] < (int64_t{1} << q), path,
                 "rescale remainder");
    zraw += zmul_run(raw, i, 0, Layout::row_major(sp.cols), ev.z());
    c.zmul_out += zmul_run(y, i, 0, sp.out, ev.z());
  }
  ev.require(zraw == c.get("ip"), path, "gemm identity");
  c.shape = {0, sp.rows, 0, sp.cols};
  ev.settle(comp, c, path);
}

}  // namespace veritensor
