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

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "veritensor/errors.hpp"
#include "veritensor/field.hpp"

namespace veritensor {

using QInt = int64_t;

struct QuantConfig {
  int q = 16;                                    // scale bits
  int l = 8;                                     // table index bits
  int64_t neg_inf_q = -(int64_t{1} << 40);       // softmax padding constant

  void validate() const {
    VT_ENFORCE(1 <= l && l <= q && q <= 24, ErrorCode::kBadConfig,
               "QuantConfig requires 1 <= l <= q <= 24");
    VT_ENFORCE(neg_inf_q < 0 && -neg_inf_q >= (int64_t{1} << (q + 8)), ErrorCode::kBadConfig,
               "neg_inf_q must be negative with magnitude >= 2^(q+8)");
  }

  friend bool operator==(const QuantConfig&, const QuantConfig&) = default;
};

inline constexpr long double kLog2E = 1.442695040888963407359924681001892137L;

/// round(log2(e) * 2^q), half away from zero, in extended precision.
inline QInt log2e_q(int q) {
  VT_ENFORCE(q >= 0 && q <= 24, ErrorCode::kOutOfRange, "log2e_q: q outside [0, 24]");
  return static_cast<QInt>(std::roundl(std::ldexp(kLog2E, q)));
}

enum class Exp2Direction : uint8_t { kNeg, kPos };

/// entries[i] = round(2^(+-i/2^l) * 2^q).
struct Exp2Table {
  Exp2Direction direction = Exp2Direction::kNeg;
  int q = 0;
  int l = 0;
  std::vector<QInt> entries;

  QInt operator[](size_t i) const { return entries.at(i); }
  size_t size() const { return entries.size(); }
};

namespace detail {

inline Exp2Table compute_exp2_table(int q, int l, Exp2Direction dir) {
  Exp2Table t;
  t.direction = dir;
  t.q = q;
  t.l = l;
  const size_t n = size_t{1} << l;
  t.entries.resize(n);
  const long double sign = dir == Exp2Direction::kNeg ? -1.0L : 1.0L;
  for (size_t i = 0; i < n; ++i) {
    const long double e = sign * static_cast<long double>(i) / static_cast<long double>(n);
    t.entries[i] = static_cast<QInt>(std::roundl(std::ldexp(std::exp2(e), q)));
  }
  return t;
}

}  // namespace detail

/// Built once per (q, l, direction) and shared; tables are immutable.
inline const Exp2Table& build_exp2_frac_table(const QuantConfig& cfg, Exp2Direction dir) {
  cfg.validate();
  static std::mutex mu;
  static std::map<std::tuple<int, int, Exp2Direction>, std::unique_ptr<Exp2Table>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[{cfg.q, cfg.l, dir}];
  if (!slot) slot = std::make_unique<Exp2Table>(detail::compute_exp2_table(cfg.q, cfg.l, dir));
  return *slot;
}

/// floor(sqrt(n)).
inline uint64_t isqrt(i128 n) {
  VT_ENFORCE(n >= 0, ErrorCode::kNegativeInput, "isqrt of negative value");
  const u128 un = static_cast<u128>(n);
  u128 r = static_cast<u128>(std::sqrt(static_cast<long double>(un)));
  while (r * r > un) --r;
  while ((r + 1) * (r + 1) <= un) ++r;
  return static_cast<uint64_t>(r);
}

struct DivRem {
  i128 quotient;
  i128 remainder;

  friend bool operator==(const DivRem&, const DivRem&) = default;
};

inline DivRem div_rem(i128 a, i128 b) {
  VT_ENFORCE(b != 0, ErrorCode::kDivisionByZero, "div_rem by zero");
  VT_ENFORCE(b > 0, ErrorCode::kDivisionByZero, "div_rem divisor must be positive");
  VT_ENFORCE(a >= 0, ErrorCode::kNegativeDividend, "div_rem dividend must be non-negative");
  return {a / b, a % b};
}

/// Floor division with remainder in [0, b) for any sign of a.
inline DivRem floor_div_rem(i128 a, i128 b) {
  VT_ENFORCE(b > 0, ErrorCode::kDivisionByZero, "floor_div_rem divisor must be positive");
  i128 q = a / b;
  i128 r = a % b;
  if (r < 0) {
    r += b;
    --q;
  }
  return {q, r};
}

/// Arithmetic right shift that saturates to the sign for shifts >= 63.
inline int64_t shr_sat(int64_t v, int64_t k) {
  if (k >= 63) return v < 0 ? -1 : 0;
  return v >> k;
}

inline int64_t checked_i64(i128 v, const char* what) {
  VT_ENFORCE(v >= -i128{kWindow} && v <= i128{kWindow}, ErrorCode::kOverflow,
             std::string(what) + ": value leaves the 2^62 window");
  return static_cast<int64_t>(v);
}

}  // namespace veritensor
