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

#include <algorithm>
#include <functional>

#include "veritensor/evaluator.hpp"

// Sorting claims: a sorted list is accepted when its characteristic
// polynomial at t matches the input's and it is monotone. Ties are made
// strict by packing the index into the key: v N + (N - 1 - idx) sorts
// descending by value, then ascending by index.

namespace veritensor {

inline int64_t pack_key(int64_t v, size_t idx, size_t n) {
  return checked_i64(i128{v} * static_cast<i128>(n) + static_cast<i128>(n - 1 - idx), "packed sort key");
}

inline size_t unpack_index(int64_t key, size_t n) {
  const auto r = floor_div_rem(key, static_cast<i128>(n)).remainder;
  return n - 1 - static_cast<size_t>(r);
}

inline FieldElement char_poly_i64(std::span<const int64_t> v, FieldElement t) {
  FieldElement acc{1};
  for (int64_t x : v) acc *= t - embed_signed(x);
  return acc;
}

inline std::vector<int64_t> packed_keys(std::span<const int64_t> v) {
  std::vector<int64_t> k(v.size());
  for (size_t i = 0; i < v.size(); ++i) k[i] = pack_key(v[i], i, v.size());
  return k;
}

inline std::vector<int64_t> sorted_desc(std::vector<int64_t> v) {
  std::sort(v.begin(), v.end(), std::greater<>());
  return v;
}

inline bool monotone(std::span<const int64_t> v, SortOrder order, bool strict) {
  for (size_t i = 1; i < v.size(); ++i) {
    const bool ok = order == SortOrder::kAsc ? (strict ? v[i - 1] < v[i] : v[i - 1] <= v[i])
                                             : (strict ? v[i - 1] > v[i] : v[i - 1] >= v[i]);
    if (!ok) return false;
  }
  return true;
}

/// Adds cp_in / cp_sorted to the claim and checks the permutation and order.
inline void check_sorted(std::span<const int64_t> input, std::span<const int64_t> sorted, SortOrder order, bool strict,
                         const Evaluator& ev, const std::string& path, Claim& cl) {
  const FieldElement a = char_poly_i64(input, ev.t()), b = char_poly_i64(sorted, ev.t());
  cl.aux["cp_in"] = a;
  cl.aux["cp_sorted"] = b;
  ev.require(input.size() == sorted.size() && a == b, path, "permutation");
  ev.require(monotone(sorted, order, strict), path, "order");
}

// ---------------------------------------------------------------- generic top-k

/// A standalone sorting claim: openings [input, sorted], aux k.
inline ProofNode build_topk(std::span<const int64_t> input, std::span<const int64_t> sorted, size_t k) {
  ProofNode n{Level::kRow, Kind::kTopK, "topk", {}, {}};
  n.claim.openings = {std::vector<int64_t>(input.begin(), input.end()), std::vector<int64_t>(sorted.begin(), sorted.end())};
  n.claim.aux["k"] = FieldElement{k};
  return n;
}

inline void eval_topk(ProofNode& n, size_t k, SortOrder order, const Evaluator& ev, const std::string& path) {
  require_node(n, Level::kRow, Kind::kTopK, path);
  if (n.claim.openings.size() != 2 || k > n.claim.openings[0].size()) throw VerifyFailure(path, "opening layout");
  Claim cl;
  check_sorted(n.claim.openings[0], n.claim.openings[1], order, false, ev, path, cl);
  cl.aux["k"] = FieldElement{k};
  cl.zmul_in = zmul_run(n.claim.openings[0], 0, 0, Layout::row_major(n.claim.openings[0].size()), ev.z());
  cl.zmul_out = zmul_run(std::span<const int64_t>(n.claim.openings[1]).first(k), 0, 0, Layout::row_major(k), ev.z());
  cl.shape = {0, 1, 0, n.claim.openings[0].size()};
  ev.settle(n, cl, path);
}

// ---------------------------------------------------------------- argmax sampling

/// Row i: openings [logits row, sorted packed keys]; output column is the argmax.
inline ProofNode build_argmax(const ComponentSpec& sp, const QTensor& logits) {
  VT_ENFORCE(logits.rows == sp.rows && logits.cols == sp.cols, ErrorCode::kShapeMismatch, sp.label + ": argmax shape");
  ProofNode comp{Level::kComponent, Kind::kTopK, sp.label, {}, {}};
  for (size_t i = 0; i < sp.rows; ++i) {
    ProofNode row{Level::kRow, Kind::kTopK, {}, {}, {}};
    auto r = logits.row(i);
    row.claim.openings = {std::vector<int64_t>(r.begin(), r.end()), sorted_desc(packed_keys(r))};
    comp.children.push_back(std::move(row));
  }
  return comp;
}

inline void eval_argmax(ProofNode& comp, const ComponentSpec& sp, const Evaluator& ev, const std::string& path) {
  require_children(comp, sp.rows, Level::kRow, path);
  for (size_t i = 0; i < sp.rows; ++i) {
    ProofNode& row = comp.children[i];
    const std::string rp = child_path(path, "row", i);
    auto v = opening(row, 0, sp.cols, rp), sorted = opening(row, 1, sp.cols, rp);
    Claim cl;
    check_sorted(packed_keys(v), sorted, SortOrder::kDesc, true, ev, rp, cl);
    const size_t arg = unpack_index(sorted[0], sp.cols);
    cl.aux["argmax"] = FieldElement{arg};
    cl.zmul_in = zmul_run(v, i, 0, sp.in, ev.z());
    cl.zmul_out = field_pow(ev.z(), sp.out.exponent(i, 0)) * FieldElement{arg};
    cl.shape = {i, i + 1, 0, sp.cols};
    ev.settle(row, cl, rp);
  }
  Claim c = fold_children(comp.children);
  c.aux.clear();
  ev.settle(comp, c, path);
}

// ---------------------------------------------------------------- expert selector

/// Two rounds of top-k. Children: T GroupRow nodes (per-group sorts, then a
/// ranking of group scores) followed by T SortedGroupRow nodes (the masked
/// second-round sort in n_groups chunks). The output is the routing mask:
/// 2^q where an expert is selected, else 0.
inline ProofNode build_expert_selector(const ComponentSpec& sp, const QTensor& scores, const QuantConfig& cfg) {
  const Grouping& g = sp.grouping;
  g.validate(sp.cols);
  VT_ENFORCE(scores.rows == sp.rows && scores.cols == sp.cols, ErrorCode::kShapeMismatch, sp.label + ": selector shape");
  const size_t gs = sp.cols / g.n_groups;
  ProofNode comp{Level::kComponent, Kind::kExpertSelector, sp.label, {}, {}};
  std::vector<ProofNode> sorted_rows;
  for (size_t i = 0; i < sp.rows; ++i) {
    auto s = scores.row(i);
    ProofNode grow{Level::kGroupRow, Kind::kExpertSelector, {}, {}, {}};
    std::vector<int64_t> gscores;
    for (size_t grp = 0; grp < g.n_groups; ++grp) {
      auto part = s.subspan(grp * gs, gs);
      std::vector<int64_t> vals(part.begin(), part.end());
      auto srt = vals;
      std::stable_sort(srt.begin(), srt.end(), std::greater<>());
      i128 sum = 0;
      for (size_t k = 0; k < g.per_group_top; ++k) sum += srt[k];
      gscores.push_back(checked_i64(sum, "group score"));
      ProofNode gn{Level::kGroup, Kind::kExpertSelector, {}, {}, {}};
      gn.claim.openings = {std::move(vals), std::move(srt)};
      grow.children.push_back(std::move(gn));
    }
    const auto gkeys = sorted_desc(packed_keys(gscores));
    grow.claim.openings.push_back(gkeys);
    std::vector<bool> keep(g.n_groups, false);
    for (size_t k = 0; k < g.groups_selected; ++k) keep[unpack_index(gkeys[k], g.n_groups)] = true;
    std::vector<int64_t> masked(sp.cols);
    for (size_t e = 0; e < sp.cols; ++e) masked[e] = keep[e / gs] ? s[e] : cfg.neg_inf_q;
    const auto mkeys = sorted_desc(packed_keys(masked));
    ProofNode srow{Level::kSortedGroupRow, Kind::kExpertSelector, {}, {}, {}};
    for (size_t c = 0; c < g.n_groups; ++c) {
      ProofNode sn{Level::kSortedGroup, Kind::kExpertSelector, {}, {}, {}};
      sn.claim.openings.emplace_back(mkeys.begin() + static_cast<std::ptrdiff_t>(c * gs),
                                     mkeys.begin() + static_cast<std::ptrdiff_t>((c + 1) * gs));
      srow.children.push_back(std::move(sn));
    }
    comp.children.push_back(std::move(grow));
    sorted_rows.push_back(std::move(srow));
  }
  for (auto& r : sorted_rows) comp.children.push_back(std::move(r));
  return comp;
}

/// Selected experts of row i, decoded from the first keys of a sorted masked list.
inline std::vector<size_t> selected_from_keys(std::span<const int64_t> sorted_keys, size_t n, size_t k) {
  std::vector<size_t> out;
  for (size_t j = 0; j < k; ++j) out.push_back(unpack_index(sorted_keys[j], n));
  return out;
}

inline void eval_expert_selector(ProofNode& comp, const ComponentSpec& sp, const Evaluator& ev,
                                 const std::string& path) {
  const Grouping& g = sp.grouping;
  g.validate(sp.cols);
  const size_t gs = sp.cols / g.n_groups, T = sp.rows, E = sp.cols;
  const int64_t one = int64_t{1} << ev.cfg().q;
  if (comp.children.size() != 2 * T) throw VerifyFailure(path, "child count");
  Claim total;
  total.shape = {0, T, 0, E};
  for (size_t i = 0; i < T; ++i) {
    ProofNode& grow = comp.children[i];
    const std::string gp = child_path(path, "groupRow", i);
    require_node(grow, Level::kGroupRow, Kind::kExpertSelector, gp);
    require_children(grow, g.n_groups, Level::kGroup, gp);
    std::vector<int64_t> scores, gscores;
    FieldElement zin{0};
    for (size_t grp = 0; grp < g.n_groups; ++grp) {
      ProofNode& gn = grow.children[grp];
      const std::string np = child_path(gp, "group", grp);
      auto vals = opening(gn, 0, gs, np), srt = opening(gn, 1, gs, np);
      scores.insert(scores.end(), vals.begin(), vals.end());
      if (ev.sampled(np)) {
        Claim cl;
        check_sorted(vals, srt, SortOrder::kDesc, false, ev, np, cl);
        i128 sum = 0;
        for (size_t k = 0; k < g.per_group_top; ++k) sum += srt[k];
        cl.aux["score"] = aux_int(sum);
        cl.zmul_in = zmul_run(vals, i, grp * gs, sp.in, ev.z());
        cl.shape = {i, i + 1, grp * gs, gs};
        ev.settle(gn, cl, np);
      }
      gscores.push_back(static_cast<int64_t>(lift_signed(gn.claim.get("score"))));
      zin += gn.claim.zmul_in;
    }
    auto gkeys = opening(grow, 0, g.n_groups, gp);
    Claim gc;
    check_sorted(packed_keys(gscores), gkeys, SortOrder::kDesc, true, ev, gp, gc);
    std::vector<bool> keep(g.n_groups, false);
    uint64_t mask_bits = 0;
    for (size_t k = 0; k < g.groups_selected; ++k) {
      const size_t grp = unpack_index(gkeys[k], g.n_groups);
      if (grp >= g.n_groups) throw VerifyFailure(gp, "group index");
      keep[grp] = true;
      mask_bits |= uint64_t{1} << grp;
    }
    gc.aux["groups"] = FieldElement{mask_bits};
    gc.zmul_in = zin;
    gc.shape = {i, i + 1, 0, E};
    ev.settle(grow, gc, gp);
    total.zmul_in += zin;

    ProofNode& srow = comp.children[T + i];
    const std::string sp_path = child_path(path, "sortedGroupRow", i);
    require_node(srow, Level::kSortedGroupRow, Kind::kExpertSelector, sp_path);
    require_children(srow, g.n_groups, Level::kSortedGroup, sp_path);
    std::vector<int64_t> mkeys;
    FieldElement cp{1};
    for (size_t c = 0; c < g.n_groups; ++c) {
      ProofNode& sn = srow.children[c];
      const std::string np = child_path(sp_path, "sortedGroup", c);
      auto keys = opening(sn, 0, gs, np);
      if (ev.sampled(np)) {
        Claim cl;
        ev.require(monotone(keys, SortOrder::kDesc, true), np, "order");
        cl.aux["cp"] = char_poly_i64(keys, ev.t());
        cl.aux["first"] = embed_signed(keys.front());
        cl.aux["last"] = embed_signed(keys.back());
        cl.shape = {i, i + 1, c * gs, gs};
        ev.settle(sn, cl, np);
      }
      if (c > 0) ev.require(mkeys.back() > keys.front(), sp_path, "order");
      mkeys.insert(mkeys.end(), keys.begin(), keys.end());
      cp *= sn.claim.get("cp");
    }
    Claim sc;
    sc.aux["cp_sorted"] = cp;
    for (size_t e : selected_from_keys(mkeys, E, g.experts_selected)) {
      if (e >= E) throw VerifyFailure(sp_path, "expert index");
      sc.zmul_out += field_pow(ev.z(), sp.out.exponent(i, e)) * FieldElement{static_cast<uint64_t>(one)};
    }
    sc.shape = {i, i + 1, 0, E};
    ev.settle(srow, sc, sp_path);
    total.zmul_out += sc.zmul_out;

    std::vector<int64_t> masked(E);
    for (size_t e = 0; e < E; ++e) masked[e] = keep[e / gs] ? scores[e] : ev.cfg().neg_inf_q;
    ev.require(char_poly_i64(packed_keys(masked), ev.t()) == cp, sp_path, "permutation");
  }
  ev.settle(comp, total, path);
}

/// Routing mask rows implied by an honest selection.
inline QTensor expert_mask(const QTensor& scores, const Grouping& g, const QuantConfig& cfg,
                           std::vector<std::vector<size_t>>* selected = nullptr) {
  QTensor m(scores.rows, scores.cols);
  for (size_t i = 0; i < scores.rows; ++i) {
    auto sel = expert_select(scores.row(i), g, cfg.neg_inf_q);
    for (size_t e : sel.experts) m.at(i, e) = int64_t{1} << cfg.q;
    if (selected) selected->push_back(sel.experts);
  }
  return m;
}

}  // namespace veritensor
