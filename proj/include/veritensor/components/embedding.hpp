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

/// Row i: openings [[token]] and the vocabulary path; segments: [x].
/// spec.inner is the vocabulary size.
inline ProofNode build_embedding(const ComponentSpec& sp, std::span<const uint32_t> tokens, const QTensor& x,
                                 const MerkleTree& tree) {
  VT_ENFORCE(tokens.size() == sp.rows && x.rows == sp.rows && x.cols == sp.cols, ErrorCode::kShapeMismatch,
             sp.label + ": embedding shapes");
  ProofNode comp{Level::kComponent, Kind::kEmbedding, sp.label, {}, {}};
  for (size_t i = 0; i < sp.rows; ++i) {
    VT_ENFORCE(tokens[i] < sp.inner, ErrorCode::kTokenOutOfRange, sp.label + ": token id out of range");
    ProofNode row{Level::kRow, Kind::kEmbedding, {}, {}, {}};
    row.claim.openings.push_back({static_cast<int64_t>(tokens[i])});
    row.claim.paths.push_back(tree.open(sp.weight_leaf + tokens[i]));
    for (size_t c = 0; c < sp.cols; c += sp.segment) {
      const size_t len = std::min(sp.segment, sp.cols - c);
      ProofNode seg{Level::kSegment, Kind::kEmbedding, {}, {}, {}};
      auto r = x.row(i).subspan(c, len);
      seg.claim.openings.emplace_back(r.begin(), r.end());
      row.children.push_back(std::move(seg));
    }
    comp.children.push_back(std::move(row));
  }
  return comp;
}

inline void eval_embedding(ProofNode& comp, const ComponentSpec& sp, const Evaluator& ev, const std::string& path) {
  const size_t s = sp.segment, ns = ceil_div(sp.cols, s);
  require_children(comp, sp.rows, Level::kRow, path);
  for (size_t i = 0; i < sp.rows; ++i) {
    ProofNode& row = comp.children[i];
    const std::string rp = child_path(path, "row", i);
    require_children(row, ns, Level::kSegment, rp);
    const int64_t token = opening(row, 0, 1, rp)[0];
    if (token < 0 || static_cast<uint64_t>(token) >= sp.inner) throw VerifyFailure(rp, "token range");
    std::vector<Digest> segs;
    for (size_t c = 0; c < ns; ++c) {
      ProofNode& seg = row.children[c];
      const std::string sg = child_path(rp, "seg", c);
      if (ev.sampled(sg)) {
        const size_t c0 = c * s, len = std::min(s, sp.cols - c0);
        auto x = opening(seg, 0, len, sg);
        Claim cl;
        cl.zmul_out = zmul_run(x, i, c0, sp.out, ev.z());
        cl.digests.push_back(hash_segment(kVocabTag, x));
        cl.shape = {i, i + 1, c0, len};
        ev.settle(seg, cl, sg);
      }
      if (seg.claim.digests.size() != 1) throw VerifyFailure(sg, "segment digest");
      segs.push_back(seg.claim.digests[0]);
    }
    Claim rc = fold_children(row.children);
    const Digest d = hash_row(segs);
    rc.digests.push_back(d);
    rc.aux["token"] = FieldElement{static_cast<uint64_t>(token)};
    ev.require_leaf(sp.weight_leaf + static_cast<uint64_t>(token), d, row.claim.paths, 0, rp, "vocab digest");
    ev.settle(row, rc, rp);
  }
  Claim c = fold_children(comp.children);
  c.aux.clear();
  ev.settle(comp, c, path);
}

}  // namespace veritensor
