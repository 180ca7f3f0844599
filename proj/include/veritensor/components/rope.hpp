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

/// Row i: openings [table row pos(i)] plus its path; head h: [x, y, rem].
inline ProofNode build_rope(const ComponentSpec& sp, const QTensor& x, const QTensor& table, const QTensor& y,
                            const QTensor& rem, const MerkleTree& tree) {
  VT_ENFORCE(x.rows == sp.rows && x.cols == sp.cols && sp.positions.size() == sp.rows, ErrorCode::kShapeMismatch,
             sp.label + ": rope shapes");
  const size_t hd = sp.head_width();
  ProofNode comp{Level::kComponent, Kind::kRope, sp.label, {}, {}};
  for (size_t i = 0; i < sp.rows; ++i) {
    ProofNode row{Level::kRow, Kind::kRope, {}, {}, {}};
    auto t = table.row(sp.positions[i]);
    row.claim.openings.emplace_back(t.begin(), t.end());
    row.claim.paths.push_back(tree.open(sp.weight_leaf + sp.positions[i]));
    for (size_t h = 0; h < sp.heads; ++h) {
      ProofNode head{Level::kHead, Kind::kRope, {}, {}, {}};
      for (const QTensor* m : {&x, &y, &rem}) {
        auto r = m->row(i).subspan(h * hd, hd);
        head.claim.openings.emplace_back(r.begin(), r.end());
      }
      row.children.push_back(std::move(head));
    }
    comp.children.push_back(std::move(row));
  }
  return comp;
}

inline void eval_rope(ProofNode& comp, const ComponentSpec& sp, const Evaluator& ev, const std::string& path) {
  const size_t hd = sp.head_width();
  const int q = rope_table_bits(ev.cfg().q);
  const i128 den = i128{1} << q;
  require_children(comp, sp.rows, Level::kRow, path);
  for (size_t i = 0; i < sp.rows; ++i) {
    ProofNode& row = comp.children[i];
    const std::string rp = child_path(path, "row", i);
    require_children(row, sp.heads, Level::kHead, rp);
    auto tab = opening(row, 0, hd, rp);
    for (size_t h = 0; h < sp.heads; ++h) {
      ProofNode& head = row.children[h];
      const std::string hp = child_path(rp, "head", h);
      if (!ev.sampled(hp)) continue;
      auto x = opening(head, 0, hd, hp), y = opening(head, 1, hd, hp), r = opening(head, 2, hd, hp);
      for (size_t k = 0; k + 1 < hd; k += 2) {
        const i128 c = tab[k], s = tab[k + 1];
        const i128 even = i128{x[k]} * c - i128{x[k + 1]} * s;
        const i128 odd = i128{x[k + 1]} * c + i128{x[k]} * s;
        ev.require((i128{y[k]} << q) + r[k] == even && (i128{y[k + 1]} << q) + r[k + 1] == odd && r[k] >= 0 &&
                       r[k] < den && r[k + 1] >= 0 && r[k + 1] < den,
                   hp, "rope rotation");
      }
      Claim cl;
      cl.zmul_in = zmul_run(x, i, h * hd, sp.in, ev.z());
      cl.zmul_out = zmul_run(y, i, h * hd, sp.out, ev.z());
      cl.shape = {i, i + 1, h * hd, hd};
      ev.settle(head, cl, hp);
    }
    Claim rc = fold_children(row.children);
    const Digest d = hash_segment(kRopeTag, tab);
    rc.digests.push_back(d);
    ev.require_leaf(sp.weight_leaf + sp.positions[i], d, row.claim.paths, 0, rp, "rope table digest");
    ev.settle(row, rc, rp);
  }
  ev.settle(comp, fold_children(comp.children), path);
}

}  // namespace veritensor
