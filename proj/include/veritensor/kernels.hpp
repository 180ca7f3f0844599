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
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "veritensor/errors.hpp"
#include "veritensor/fixed_point.hpp"
#include "veritensor/tensor.hpp"

namespace veritensor {

// ---------------------------------------------------------------- GeMM

/// Exact integer product; output scale is the sum of the input scales.
inline QTensor gemm(const QTensor& x, const QTensor& w) {
  VT_ENFORCE(x.cols == w.rows, ErrorCode::kShapeMismatch,
             "gemm inner dims " + std::to_string(x.cols) + " vs " + std::to_string(w.rows));
  QTensor y(x.rows, w.cols);
  for (size_t i = 0; i < x.rows; ++i) {
    for (size_t j = 0; j < w.cols; ++j) {
      i128 acc = 0;
      for (size_t k = 0; k < x.cols; ++k) acc += i128{x.at(i, k)} * w.at(k, j);
      y.at(i, j) = checked_i64(acc, "gemm");
    }
  }
  return y;
}

struct Rescaled {
  QTensor y;
  std::vector<int64_t> rem;  // y * 2^s + rem = raw, 0 <= rem < 2^s
};

/// Arithmetic shift by shift_bits (floor toward -inf) with remainders.
inline Rescaled rescale(const QTensor& raw, int shift_bits) {
  VT_ENFORCE(shift_bits >= 0 && shift_bits < 62, ErrorCode::kOutOfRange, "rescale shift");
  Rescaled out{QTensor(raw.rows, raw.cols), std::vector<int64_t>(raw.size())};
  const int64_t mask = (int64_t{1} << shift_bits) - 1;
  for (size_t i = 0; i < raw.size(); ++i) {
    out.y.data[i] = raw.data[i] >> shift_bits;
    out.rem[i] = raw.data[i] & mask;
  }
  return out;
}

// ---------------------------------------------------------------- RMSNorm

struct RmsAux {
  int64_t sum_sq = 0;
  int64_t quotient = 0;   // Q
  int64_t remainder = 0;  // R
  int64_t rms = 0;
  std::vector<int64_t> y_rem;  // per-element division remainders
};

struct RmsResult {
  std::vector<int64_t> y;
  RmsAux aux;
};

/// sum x^2 = Q n + R; rms^2 <= Q + 1 < (rms + 1)^2 (epsilon = 1);
/// y_i (rms 2^q) + r_i = x_i w_i 2^q with 0 <= r_i < rms 2^q.
inline RmsResult rmsnorm(std::span<const int64_t> x, std::span<const int64_t> w, int q) {
  VT_ENFORCE(!x.empty(), ErrorCode::kShapeMismatch, "rmsnorm on empty row");
  VT_ENFORCE(x.size() == w.size(), ErrorCode::kShapeMismatch, "rmsnorm weight length");
  const auto n = static_cast<int64_t>(x.size());
  i128 sum = 0;
  for (int64_t v : x) sum += i128{v} * v;
  RmsResult r;
  r.aux.sum_sq = checked_i64(sum, "rmsnorm sum_sq");
  auto [qq, rr] = div_rem(sum, n);
  r.aux.quotient = static_cast<int64_t>(qq);
  r.aux.remainder = static_cast<int64_t>(rr);
  r.aux.rms = static_cast<int64_t>(isqrt(qq + 1));
  const i128 den = i128{r.aux.rms} << q;
  r.y.resize(x.size());
  r.aux.y_rem.resize(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const i128 num = (i128{x[i]} * w[i]) << q;
    auto [yq, yr] = floor_div_rem(num, den);
    r.y[i] = checked_i64(yq, "rmsnorm output");
    r.aux.y_rem[i] = static_cast<int64_t>(yr);
  }
  return r;
}

// ---------------------------------------------------------------- RoPE

inline constexpr long double kRopeBase = 10000.0L;

/// Extra fraction bits of the cos/sin table beyond the activation scale, so
/// table rounding stays below half an output LSB for inputs up to |8|.
inline constexpr int kRopeExtraBits = 4;

/// Fraction bits of the cos/sin table for activations at scale 2^q.
inline constexpr int rope_table_bits(int q) { return q + kRopeExtraBits; }

/// Rows 0..max_pos of interleaved (cos, sin) pairs at scale 2^rope_table_bits(q).
inline QTensor build_rope_table(size_t max_pos, size_t head_dim, int q,
                                long double base = kRopeBase) {
  q = rope_table_bits(q);
  VT_ENFORCE(head_dim % 2 == 0 && head_dim > 0, ErrorCode::kOddHeadDim, "rope head dim must be even");
  QTensor t(max_pos + 1, head_dim);
  for (size_t p = 0; p <= max_pos; ++p) {
    for (size_t i = 0; i < head_dim / 2; ++i) {
      const long double theta =
          std::pow(base, -2.0L * static_cast<long double>(i) / static_cast<long double>(head_dim));
      const long double ang = static_cast<long double>(p) * theta;
      t.at(p, 2 * i) = static_cast<int64_t>(std::roundl(std::ldexp(std::cos(ang), q)));
      t.at(p, 2 * i + 1) = static_cast<int64_t>(std::roundl(std::ldexp(std::sin(ang), q)));
    }
  }
  return t;
}

struct RopeResult {
  std::vector<int64_t> y;
  std::vector<int64_t> rem;
};

/// Rotates pairs of `x` (scale 2^q) by a table row; outputs stay at scale 2^q.
inline RopeResult rope_rotate(std::span<const int64_t> x, std::span<const int64_t> table_row, int q) {
  VT_ENFORCE(x.size() % 2 == 0, ErrorCode::kOddHeadDim, "rope_rotate head dim must be even");
  VT_ENFORCE(x.size() == table_row.size(), ErrorCode::kShapeMismatch, "rope table row width");
  RopeResult r{std::vector<int64_t>(x.size()), std::vector<int64_t>(x.size())};
  const i128 den = i128{1} << rope_table_bits(q);
  for (size_t i = 0; i < x.size(); i += 2) {
    const i128 c = table_row[i], s = table_row[i + 1];
    const i128 even = i128{x[i]} * c - i128{x[i + 1]} * s;
    const i128 odd = i128{x[i + 1]} * c + i128{x[i]} * s;
    auto e = floor_div_rem(even, den);
    auto o = floor_div_rem(odd, den);
    r.y[i] = checked_i64(e.quotient, "rope");
    r.rem[i] = static_cast<int64_t>(e.remainder);
    r.y[i + 1] = checked_i64(o.quotient, "rope");
    r.rem[i + 1] = static_cast<int64_t>(o.remainder);
  }
  return r;
}

// ---------------------------------------------------------------- Softmax

struct SoftmaxAux {
  int64_t x_max = 0;
  std::vector<int64_t> delta, y, y_rem, k, f, idx, t, w, p_rem;
  int64_t sum_w = 0;
};

struct SoftmaxResult {
  std::vector<int64_t> p;
  SoftmaxAux aux;
};

/// Per-lane exponent witnesses shared by the softmax kernel and its provers.
struct SoftmaxLane {
  int64_t delta, y, y_rem, k, f, idx, t, w;
};

inline SoftmaxLane softmax_lane(int64_t x, int64_t x_max, const QuantConfig& cfg,
                                const Exp2Table& table) {
  SoftmaxLane s{};
  s.delta = checked_i64(i128{x} - x_max, "softmax delta");
  auto yr = floor_div_rem(i128{s.delta} * log2e_q(cfg.q), i128{1} << cfg.q);
  s.y = checked_i64(yr.quotient, "softmax y");
  s.y_rem = static_cast<int64_t>(yr.remainder);
  const int64_t neg = -s.y;  // >= 0 because delta <= 0
  s.k = neg >> cfg.q;
  s.f = neg & ((int64_t{1} << cfg.q) - 1);
  s.idx = s.f >> (cfg.q - cfg.l);
  s.t = table[static_cast<size_t>(s.idx)];
  s.w = shr_sat(s.t, s.k);
  return s;
}

/// x holds effective inputs: padded or masked lanes already carry neg_inf_q.
inline SoftmaxResult softmax_row(std::span<const int64_t> x, const QuantConfig& cfg,
                                 const Exp2Table& table) {
  VT_ENFORCE(!x.empty(), ErrorCode::kShapeMismatch, "softmax on empty row");
  SoftmaxResult r;
  auto& a = r.aux;
  a.x_max = *std::max_element(x.begin(), x.end());
  VT_ENFORCE(a.x_max > cfg.neg_inf_q, ErrorCode::kAllPadded, "softmax row has no live lanes");
  i128 s = 0;
  for (int64_t v : x) {
    const SoftmaxLane lane = softmax_lane(v, a.x_max, cfg, table);
    a.delta.push_back(lane.delta);
    a.y.push_back(lane.y);
    a.y_rem.push_back(lane.y_rem);
    a.k.push_back(lane.k);
    a.f.push_back(lane.f);
    a.idx.push_back(lane.idx);
    a.t.push_back(lane.t);
    a.w.push_back(lane.w);
    s += lane.w;
  }
  VT_ENFORCE(s > 0, ErrorCode::kAllPadded, "softmax row has no live lanes");
  a.sum_w = checked_i64(s, "softmax sum");
  for (int64_t wv : a.w) {
    auto pr = div_rem(i128{wv} << cfg.q, s);
    r.p.push_back(static_cast<int64_t>(pr.quotient));
    a.p_rem.push_back(static_cast<int64_t>(pr.remainder));
  }
  return r;
}

// ---------------------------------------------------------------- Sigmoid / SiLU

struct SigmoidAux {
  int64_t y = 0, y_rem = 0, k = 0, f = 0, idx = 0, t = 0, u = 0;
  int64_t s_rem = 0;  // sigma (2^q + u) + s_rem = 2^(2q)
};

struct SigmoidResult {
  int64_t s = 0;
  SigmoidAux aux;
};

/// Left shifts beyond q+1 already drive sigma to exactly 0, so u is capped
/// there to keep it bounded.
inline int64_t sigmoid_shift_cap(int q) { return q + 1; }

inline int64_t sigmoid_u(int64_t t, int64_t k, int q) {
  if (k < 0) return shr_sat(t, -k);
  return t << std::min<int64_t>(k, sigmoid_shift_cap(q));
}

inline SigmoidResult sigmoid(int64_t x, const QuantConfig& cfg, const Exp2Table& table) {
  SigmoidResult r;
  auto& a = r.aux;
  auto yr = floor_div_rem(-i128{x} * log2e_q(cfg.q), i128{1} << cfg.q);
  a.y = checked_i64(yr.quotient, "sigmoid y");
  a.y_rem = static_cast<int64_t>(yr.remainder);
  a.k = a.y >> cfg.q;
  a.f = a.y & ((int64_t{1} << cfg.q) - 1);
  a.idx = a.f >> (cfg.q - cfg.l);
  a.t = table[static_cast<size_t>(a.idx)];
  a.u = sigmoid_u(a.t, a.k, cfg.q);
  const i128 den = (i128{1} << cfg.q) + a.u;
  auto sr = div_rem(i128{1} << (2 * cfg.q), den);
  r.s = static_cast<int64_t>(sr.quotient);
  a.s_rem = static_cast<int64_t>(sr.remainder);
  return r;
}

struct SiluResult {
  int64_t y = 0;
  int64_t rem = 0;  // y 2^q + rem = x sigma
  SigmoidResult sig;
};

inline SiluResult silu(int64_t x, const QuantConfig& cfg, const Exp2Table& table) {
  SiluResult r;
  r.sig = sigmoid(x, cfg, table);
  auto d = floor_div_rem(i128{x} * r.sig.s, i128{1} << cfg.q);
  r.y = checked_i64(d.quotient, "silu");
  r.rem = static_cast<int64_t>(d.remainder);
  return r;
}

// ---------------------------------------------------------------- Sort / top-k

enum class SortOrder : uint8_t { kAsc, kDesc };

struct SortWitness {
  std::vector<int64_t> sorted;
  std::vector<size_t> perm;  // sorted[i] = list[perm[i]]
};

/// Stable; descending order sorts the negated values ascending.
inline SortWitness sort_with_witness(std::span<const int64_t> list, SortOrder order) {
  SortWitness w;
  w.perm.resize(list.size());
  std::iota(w.perm.begin(), w.perm.end(), size_t{0});
  auto key = [&](size_t i) { return order == SortOrder::kAsc ? i128{list[i]} : -i128{list[i]}; };
  std::stable_sort(w.perm.begin(), w.perm.end(), [&](size_t a, size_t b) { return key(a) < key(b); });
  for (size_t i : w.perm) w.sorted.push_back(list[i]);
  return w;
}

struct Grouping {
  size_t n_groups = 1;
  size_t per_group_top = 1;
  size_t groups_selected = 1;
  size_t experts_selected = 1;

  void validate(size_t n_experts) const {
    VT_ENFORCE(n_groups > 0 && n_experts % n_groups == 0, ErrorCode::kBadGrouping,
               "n_experts must be divisible by n_groups");
    const size_t gsize = n_experts / n_groups;
    VT_ENFORCE(per_group_top >= 1 && per_group_top <= gsize, ErrorCode::kBadGrouping,
               "per_group_top outside [1, group size]");
    VT_ENFORCE(groups_selected >= 1 && groups_selected <= n_groups, ErrorCode::kBadGrouping,
               "groups_selected outside [1, n_groups]");
    VT_ENFORCE(experts_selected >= 1 && experts_selected <= groups_selected * gsize,
               ErrorCode::kBadGrouping, "experts_selected exceeds surviving experts");
  }
};

struct ExpertSelection {
  std::vector<size_t> experts;              // descending by score, ties by index
  std::vector<int64_t> expert_values;
  std::vector<size_t> groups;               // descending by group score
  std::vector<SortWitness> group_sorts;     // round 1, per group (descending)
  std::vector<int64_t> group_scores;
  SortWitness group_rank;                   // groups by group score
  std::vector<int64_t> masked;              // unselected groups replaced by the mask value
  SortWitness final_rank;                   // round 2 over the masked list
};

/// Two rounds of top-k: groups by the sum of their top per_group_top
/// scores, then experts among the surviving groups.
inline ExpertSelection expert_select(std::span<const int64_t> scores, const Grouping& g,
                                     int64_t mask_value = QuantConfig{}.neg_inf_q) {
  g.validate(scores.size());
  const size_t gsize = scores.size() / g.n_groups;
  ExpertSelection sel;
  for (size_t grp = 0; grp < g.n_groups; ++grp) {
    auto sw = sort_with_witness(scores.subspan(grp * gsize, gsize), SortOrder::kDesc);
    i128 sum = 0;
    for (size_t i = 0; i < g.per_group_top; ++i) sum += sw.sorted[i];
    sel.group_scores.push_back(checked_i64(sum, "group score"));
    sel.group_sorts.push_back(std::move(sw));
  }
  sel.group_rank = sort_with_witness(sel.group_scores, SortOrder::kDesc);
  sel.groups.assign(sel.group_rank.perm.begin(), sel.group_rank.perm.begin() + g.groups_selected);
  std::vector<bool> keep(g.n_groups, false);
  for (size_t grp : sel.groups) keep[grp] = true;
  sel.masked.resize(scores.size());
  for (size_t e = 0; e < scores.size(); ++e) sel.masked[e] = keep[e / gsize] ? scores[e] : mask_value;
  sel.final_rank = sort_with_witness(sel.masked, SortOrder::kDesc);
  for (size_t i = 0; i < g.experts_selected; ++i) {
    sel.experts.push_back(sel.final_rank.perm[i]);
    sel.expert_values.push_back(sel.final_rank.sorted[i]);
  }
  return sel;
}

// ---------------------------------------------------------------- Element-wise

inline QTensor elementwise_add(const QTensor& x, const QTensor& b) {
  VT_ENFORCE(x.rows == b.rows && x.cols == b.cols, ErrorCode::kShapeMismatch, "elementwise_add shapes");
  QTensor y(x.rows, x.cols);
  for (size_t i = 0; i < x.size(); ++i) y.data[i] = checked_i64(i128{x.data[i]} + b.data[i], "add");
  return y;
}

inline Rescaled elementwise_mul(const QTensor& x, const QTensor& b, int rescale_q) {
  VT_ENFORCE(x.rows == b.rows && x.cols == b.cols, ErrorCode::kShapeMismatch, "elementwise_mul shapes");
  Rescaled r{QTensor(x.rows, x.cols), std::vector<int64_t>(x.size())};
  for (size_t i = 0; i < x.size(); ++i) {
    auto d = floor_div_rem(i128{x.data[i]} * b.data[i], i128{1} << rescale_q);
    r.y.data[i] = checked_i64(d.quotient, "mul");
    r.rem[i] = static_cast<int64_t>(d.remainder);
  }
  return r;
}

// ---------------------------------------------------------------- Embedding

inline QTensor embed_tokens(std::span<const uint32_t> token_ids, const QTensor& vocab) {
  QTensor x(token_ids.size(), vocab.cols);
  for (size_t i = 0; i < token_ids.size(); ++i) {
    VT_ENFORCE(token_ids[i] < vocab.rows, ErrorCode::kTokenOutOfRange,
               "token id " + std::to_string(token_ids[i]) + " >= vocab rows");
    auto src = vocab.row(token_ids[i]);
    std::copy(src.begin(), src.end(), x.row(i).begin());
  }
  return x;
}

}  // namespace veritensor
