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

#include <array>
#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "veritensor/errors.hpp"

namespace veritensor {

using u128 = unsigned __int128;
using i128 = __int128;

/// Signed witness values must stay inside [-2^62, 2^62] so that embedding
/// into a >= 63-bit prime field is injective.
inline constexpr int64_t kWindow = int64_t{1} << 62;

inline constexpr uint64_t kGoldilocks = 0xFFFFFFFF00000001ull;  // 2^64 - 2^32 + 1

namespace detail {

inline uint64_t mulmod(uint64_t a, uint64_t b, uint64_t m) {
  return static_cast<uint64_t>((u128{a} * b) % m);
}

inline uint64_t powmod(uint64_t b, uint64_t e, uint64_t m) {
  uint64_t r = 1 % m;
  b %= m;
  while (e) {
    if (e & 1) r = mulmod(r, b, m);
    b = mulmod(b, b, m);
    e >>= 1;
  }
  return r;
}

}  // namespace detail

/// Deterministic Miller-Rabin; the base set is exact for all n < 2^64.
inline bool is_prime_u64(uint64_t n) {
  if (n < 2) return false;
  for (uint64_t sp : {2ull, 3ull, 5ull, 7ull, 11ull, 13ull, 17ull, 19ull, 23ull,
                      29ull, 31ull, 37ull}) {
    if (n % sp == 0) return n == sp;
  }
  uint64_t d = n - 1;
  int s = 0;
  while ((d & 1) == 0) {
    d >>= 1;
    ++s;
  }
  for (uint64_t a : {2ull, 3ull, 5ull, 7ull, 11ull, 13ull, 17ull, 19ull, 23ull,
                     29ull, 31ull, 37ull}) {
    uint64_t x = detail::powmod(a, d, n);
    if (x == 1 || x == n - 1) continue;
    bool composite = true;
    for (int r = 1; r < s; ++r) {
      x = detail::mulmod(x, x, n);
      if (x == n - 1) {
        composite = false;
        break;
      }
    }
    if (composite) return false;
  }
  return true;
}

struct FieldConfig {
  uint64_t modulus_p = kGoldilocks;
  int field_bits = 64;

  static FieldConfig make(uint64_t p) {
    VT_ENFORCE(is_prime_u64(p), ErrorCode::kBadConfig, "field modulus is not prime");
    const int bits = 64 - std::countl_zero(p);
    VT_ENFORCE(bits >= 61, ErrorCode::kBadConfig, "field modulus must have at least 61 bits");
    return FieldConfig{p, bits};
  }
};

struct FieldElement {
  uint64_t value = 0;

  constexpr FieldElement() = default;
  constexpr explicit FieldElement(uint64_t v) : value(v) {}

  friend constexpr bool operator==(FieldElement, FieldElement) = default;
};

/// Arithmetic over F_p for a runtime modulus. The pipeline uses the default
/// Goldilocks field through the free functions below.
class PrimeField {
 public:
  explicit PrimeField(FieldConfig cfg = {}) : p_(cfg.modulus_p) {}

  uint64_t modulus() const { return p_; }

  FieldElement from_u64(uint64_t v) const { return FieldElement{v % p_}; }

  FieldElement add(FieldElement a, FieldElement b) const {
    uint64_t s = a.value + b.value;
    // overflow past 2^64 or past p both need one subtraction
    if (s < a.value || s >= p_) s -= p_;
    return FieldElement{s};
  }

  FieldElement sub(FieldElement a, FieldElement b) const {
    return FieldElement{a.value >= b.value ? a.value - b.value : a.value + (p_ - b.value)};
  }

  FieldElement neg(FieldElement a) const {
    return FieldElement{a.value == 0 ? 0 : p_ - a.value};
  }

  FieldElement mul(FieldElement a, FieldElement b) const {
    return FieldElement{detail::mulmod(a.value, b.value, p_)};
  }

  FieldElement pow(FieldElement b, uint64_t e) const {
    return FieldElement{detail::powmod(b.value, e, p_)};
  }

  FieldElement inv(FieldElement a) const {
    VT_ENFORCE(a.value != 0, ErrorCode::kDivisionByZero, "field_inv(0)");
    return pow(a, p_ - 2);
  }

  FieldElement embed_signed(int64_t v) const {
    VT_ENFORCE(v >= -kWindow && v <= kWindow, ErrorCode::kOutOfRange,
               "value " + std::to_string(v) + " outside the 2^62 window");
    if (v >= 0) return FieldElement{static_cast<uint64_t>(v) % p_};
    return FieldElement{p_ - (static_cast<uint64_t>(-v) % p_)};
  }

  /// Inverse of embed_signed on the window; values above p/2 decode negative.
  int64_t lift_signed(FieldElement a) const {
    if (a.value <= p_ / 2) return static_cast<int64_t>(a.value);
    return -static_cast<int64_t>(p_ - a.value);
  }

 private:
  uint64_t p_;
};

inline const PrimeField& default_field() {
  static const PrimeField f{FieldConfig::make(kGoldilocks)};
  return f;
}

inline FieldElement field_add(FieldElement a, FieldElement b) { return default_field().add(a, b); }
inline FieldElement field_sub(FieldElement a, FieldElement b) { return default_field().sub(a, b); }
inline FieldElement field_mul(FieldElement a, FieldElement b) { return default_field().mul(a, b); }
inline FieldElement field_neg(FieldElement a) { return default_field().neg(a); }
inline FieldElement field_inv(FieldElement a) { return default_field().inv(a); }
inline FieldElement field_pow(FieldElement b, uint64_t e) { return default_field().pow(b, e); }
inline FieldElement embed_signed(int64_t v) { return default_field().embed_signed(v); }
inline int64_t lift_signed(FieldElement a) { return default_field().lift_signed(a); }

inline FieldElement operator+(FieldElement a, FieldElement b) { return field_add(a, b); }
inline FieldElement operator-(FieldElement a, FieldElement b) { return field_sub(a, b); }
inline FieldElement operator*(FieldElement a, FieldElement b) { return field_mul(a, b); }
inline FieldElement& operator+=(FieldElement& a, FieldElement b) { return a = a + b; }
inline FieldElement& operator*=(FieldElement& a, FieldElement b) { return a = a * b; }

/// P_A(t) = prod_i (t - a_i); the empty product is 1.
inline FieldElement char_poly_eval(std::span<const FieldElement> list, FieldElement t) {
  FieldElement acc{1};
  for (FieldElement a : list) acc *= (t - a);
  return acc;
}

/// Matrix-encoding point z and permutation point t, both nonzero.
struct Challenge {
  FieldElement z;
  FieldElement t;

  friend bool operator==(const Challenge&, const Challenge&) = default;
};

/// Canonical encoding: 8 bytes little-endian.
inline std::array<uint8_t, 8> encode_field(FieldElement a) {
  std::array<uint8_t, 8> out{};
  for (int i = 0; i < 8; ++i) out[i] = static_cast<uint8_t>(a.value >> (8 * i));
  return out;
}

inline FieldElement decode_field(std::span<const uint8_t, 8> in) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | in[i];
  VT_ENFORCE(v < default_field().modulus(), ErrorCode::kDecode, "non-canonical field element");
  return FieldElement{v};
}

}  // namespace veritensor
