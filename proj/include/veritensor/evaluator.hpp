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

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "veritensor/commit.hpp"
#include "veritensor/fixed_point.hpp"
#include "veritensor/hash.hpp"
#include "veritensor/kernels.hpp"
#include "veritensor/proof.hpp"

namespace veritensor {

/// A rejected constraint, located by node path.
class VerifyFailure : public std::runtime_error {
 public:
  VerifyFailure(std::string path, std::string constraint)
      : std::runtime_error(path + ": " + constraint), path_(std::move(path)), constraint_(std::move(constraint)) {}
  const std::string& path() const { return path_; }
  const std::string& constraint() const { return constraint_; }

 private:
  std::string path_;
  std::string constraint_;
};

struct Verdict {
  bool accepted = true;
  std::string node_path;
  std::string constraint;
  static Verdict ok() { return {}; }
  static Verdict reject(std::string path, std::string constraint) {
    return {false, std::move(path), std::move(constraint)};
  }
};

/// How the second operand of a component is supplied.
enum class BMode : uint8_t {
  kNone,
  kWeight,      // committed parameter, opened with Merkle paths
  kActivation,  // output of an earlier component, linked by ZMul
  kColumn,      // one activation scalar per row, broadcast across columns
};

/// Everything a prover and verifier agree on about one component before
/// any witness exists: dimensions, segmenting and the exponent layouts
/// that link it to its producers and consumers.
struct ComponentSpec {
  std::string label;
  Kind kind = Kind::kNone;
  size_t rows = 0;   // a
  size_t cols = 0;   // output width b (input width for row-wise kinds)
  size_t inner = 0;  // n for GeMM
  size_t segment = 16;
  size_t heads = 1;  // RoPE / softmax head count; head width = cols / heads
  Layout in = Layout::row_major(0);
  Layout b = Layout::row_major(0);
  Layout out = Layout::row_major(0);
  BMode b_mode = BMode::kNone;
  uint64_t weight_leaf = 0;  // first leaf of this component's weight segments
  std::vector<uint64_t> positions;  // per row; RoPE table rows and the causal mask
  bool causal = false;
  Grouping grouping;

  size_t head_width() const { return cols / heads; }
};

struct EvalContext {
  FieldElement z{1};
  FieldElement t{1};
  QuantConfig cfg;
  std::optional<Digest> weight_root;
  size_t weight_leaf_count = 0;
};

enum class EvalMode : uint8_t { kProve, kVerify };

/// Computes claims bottom-up. In prove mode claims are written into nodes;
/// in verify mode they are compared with the stored ones.
class Evaluator {
 public:
  Evaluator(EvalMode mode, EvalContext ctx) : mode_(mode), ctx_(std::move(ctx)) {}

  const EvalContext& ctx() const { return ctx_; }
  EvalMode mode() const { return mode_; }
  FieldElement z() const { return ctx_.z; }
  FieldElement t() const { return ctx_.t; }
  const QuantConfig& cfg() const { return ctx_.cfg; }

  /// Prover-side constraint checking can be disabled to produce malformed proofs in tests.
  void set_prover_checks(bool on) { prover_checks_ = on; }
  void set_spotcheck(double fraction, uint64_t seed) {
    spot_fraction_ = fraction;
    spot_seed_ = seed;
  }

  void require(bool ok, const std::string& path, const std::string& constraint) const {
    if (!ok && (mode_ == EvalMode::kVerify || prover_checks_)) throw VerifyFailure(path, constraint);
  }

  void settle(ProofNode& n, const Claim& c, const std::string& path) const {
    if (mode_ == EvalMode::kProve) {
      n.claim.zmul_in = c.zmul_in;
      n.claim.zmul_out = c.zmul_out;
      n.claim.aux = c.aux;
      n.claim.vec = c.vec;
      n.claim.digests = c.digests;
      n.claim.shape = c.shape;
      return;
    }
    if (!n.claim.same_public(c)) throw VerifyFailure(path, "claim recomputation");
  }

  /// Leaf nodes outside the spot-check sample keep their stored claims.
  bool sampled(const std::string& path) const {
    if (mode_ != EvalMode::kVerify || spot_fraction_ >= 1.0) return true;
    if (spot_fraction_ <= 0.0) return false;
    const Digest d = Sha256{}.update("VT-SPOT").update_u64(spot_seed_).update(path).finish();
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t{d.bytes[i]} << (8 * i);
    return static_cast<long double>(v) < spot_fraction_ * 18446744073709551616.0L;
  }

  void require_leaf(uint64_t index, const Digest& leaf, const std::vector<AuthPath>& paths, size_t which,
                    const std::string& path, const std::string& constraint) const {
    if (mode_ == EvalMode::kProve && !prover_checks_) return;
    require(ctx_.weight_root.has_value() && which < paths.size() &&
                merkle_verify(*ctx_.weight_root, ctx_.weight_leaf_count, index, leaf, paths[which]),
            path, constraint);
  }

 private:
  EvalMode mode_;
  EvalContext ctx_;
  bool prover_checks_ = true;
  double spot_fraction_ = 1.0;
  uint64_t spot_seed_ = 0;
};

/// Child paths are built only from labels and indices, so they are stable.
inline std::string child_path(const std::string& parent, const char* tag, size_t i) {
  return parent + "/" + tag + std::to_string(i);
}

// ---------------------------------------------------------------- shared helpers

/// Like zmul_run but walking down a column: logical (i0 + r, j).
inline FieldElement zmul_col_run(std::span<const int64_t> values, uint64_t i0, uint64_t j, const Layout& layout,
                                 FieldElement z) {
  FieldElement acc{0};
  FieldElement pw = field_pow(z, layout.exponent(i0, j));
  const FieldElement step = field_pow(z, layout.row_step);
  for (int64_t v : values) {
    acc += pw * embed_signed(v);
    pw *= step;
  }
  return acc;
}

/// Reads opening k of a node, requiring its exact length.
inline std::span<const int64_t> opening(const ProofNode& n, size_t k, size_t len, const std::string& path) {
  if (k >= n.claim.openings.size() || n.claim.openings[k].size() != len)
    throw VerifyFailure(path, "opening layout");
  return n.claim.openings[k];
}

inline void require_children(const ProofNode& n, size_t count, Level level, const std::string& path) {
  if (n.children.size() != count) throw VerifyFailure(path, "child count");
  for (const auto& c : n.children)
    if (c.level != level) throw VerifyFailure(path, "child level");
}

inline void require_node(const ProofNode& n, Level level, Kind kind, const std::string& path) {
  if (n.level != level || n.kind != kind) throw VerifyFailure(path, "node level or kind");
}

/// Signed integer carried in an aux field.
inline FieldElement aux_int(i128 v) { return embed_signed(checked_i64(v, "aux value")); }

inline size_t ceil_div(size_t a, size_t b) { return (a + b - 1) / b; }

}  // namespace veritensor
