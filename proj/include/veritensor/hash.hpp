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

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "veritensor/errors.hpp"
#include "veritensor/field.hpp"

namespace veritensor {

struct Digest {
  std::array<uint8_t, 32> bytes{};

  std::string hex() const {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string s(64, '0');
    for (size_t i = 0; i < 32; ++i) {
      s[2 * i] = kHex[bytes[i] >> 4];
      s[2 * i + 1] = kHex[bytes[i] & 15];
    }
    return s;
  }

  static Digest from_hex(std::string_view h) {
    VT_ENFORCE(h.size() == 64, ErrorCode::kDecode, "digest hex must be 64 characters");
    auto nib = [](char c) -> int {
      if (c >= '0' && c <= '9') return c - '0';
      if (c >= 'a' && c <= 'f') return c - 'a' + 10;
      throw Error(ErrorCode::kDecode, "digest hex must be lowercase hex");
    };
    Digest d;
    for (size_t i = 0; i < 32; ++i) d.bytes[i] = static_cast<uint8_t>(nib(h[2 * i]) << 4 | nib(h[2 * i + 1]));
    return d;
  }

  friend bool operator==(const Digest&, const Digest&) = default;
  friend auto operator<=>(const Digest&, const Digest&) = default;
};

/// Incremental SHA-256 over OpenSSL's EVP interface.
class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    VT_ENFORCE(ctx_ && EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) == 1, ErrorCode::kIo,
               "EVP sha256 init failed");
  }

  Sha256& update(std::span<const uint8_t> data) {
    EVP_DigestUpdate(ctx_.get(), data.data(), data.size());
    return *this;
  }
  Sha256& update(std::string_view s) {
    return update({reinterpret_cast<const uint8_t*>(s.data()), s.size()});
  }
  Sha256& update(const Digest& d) { return update(std::span<const uint8_t>(d.bytes)); }
  Sha256& update_u64(uint64_t v) {
    std::array<uint8_t, 8> b{};
    for (int i = 0; i < 8; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
    return update(b);
  }
  Sha256& update_field(FieldElement f) { return update(encode_field(f)); }

  Digest finish() {
    Digest d;
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), d.bytes.data(), &len);
    return d;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

/// H(tag || count_LE8 || canonical field encoding of each value).
inline Digest hash_segment(std::string_view tag, std::span<const int64_t> values) {
  Sha256 h;
  h.update(tag).update_u64(values.size());
  for (int64_t v : values) h.update_field(embed_signed(v));
  return h.finish();
}

/// Row digest assembled from the digests of its 1 x s segments.
inline Digest hash_row(std::span<const Digest> segment_digests) {
  Sha256 h;
  h.update("VT-ROW").update_u64(segment_digests.size());
  for (const auto& d : segment_digests) h.update(d);
  return h.finish();
}

// ---------------------------------------------------------------- ZMul family

/// Maps a logical (row, col) of an operand onto the exponent of z used by
/// the tensor that produced it. Row-major tensors of width w, column slices
/// and row blocks of wider tensors, and transposed views all fit
/// exponent = offset + i * row_step + j * col_step.
struct Layout {
  uint64_t row_step = 0;
  uint64_t col_step = 1;
  uint64_t offset = 0;

  static Layout row_major(uint64_t width, uint64_t offset = 0) { return {width, 1, offset}; }
  /// Logical M[i][j] stored as S[j][i] in a tensor of width stored_width.
  static Layout transposed(uint64_t stored_width, uint64_t offset = 0) { return {1, stored_width, offset}; }

  uint64_t exponent(uint64_t i, uint64_t j) const { return offset + i * row_step + j * col_step; }

  friend bool operator==(const Layout&, const Layout&) = default;
};

/// Sum over a contiguous run of a logical row: values[j] sits at (i, j0 + j).
inline FieldElement zmul_run(std::span<const int64_t> values, uint64_t i, uint64_t j0,
                             const Layout& layout, FieldElement z) {
  FieldElement acc{0};
  FieldElement pw = field_pow(z, layout.exponent(i, j0));
  const FieldElement step = field_pow(z, layout.col_step);
  for (int64_t v : values) {
    acc += pw * embed_signed(v);
    pw *= step;
  }
  return acc;
}

inline FieldElement zmul(std::span<const int64_t> data, size_t rows, size_t cols, FieldElement z,
                         const Layout& layout) {
  FieldElement acc{0};
  for (size_t i = 0; i < rows; ++i) acc += zmul_run(data.subspan(i * cols, cols), i, 0, layout, z);
  return acc;
}

}  // namespace veritensor
