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

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "veritensor/errors.hpp"
#include "veritensor/field.hpp"
#include "veritensor/hash.hpp"

namespace veritensor {

inline constexpr std::string_view kTagModelRoot = "MODEL-ROOT";
inline constexpr std::string_view kTagInput = "INPUT";
inline constexpr std::string_view kTagWitnessRoot = "WITNESS-ROOT";
inline constexpr std::string_view kTagZ = "ZMUL-Z";
inline constexpr std::string_view kTagT = "PERM-T";

/// Fiat-Shamir transcript. The state is a pure function of the absorb
/// history; challenges are absorbed back so derivation never rewinds.
class Transcript {
 public:
  Transcript() : state_(Sha256{}.update("VERITENSOR-TRANSCRIPT-V1").finish()) {}

  const Digest& state() const { return state_; }
  const std::vector<std::pair<std::string, Digest>>& log() const { return log_; }

  Transcript& absorb(std::string_view tag, std::span<const uint8_t> data) {
    VT_ENFORCE(!tag.empty(), ErrorCode::kEmptyTag, "transcript tag must be non-empty");
    for (char c : tag)
      VT_ENFORCE(static_cast<unsigned char>(c) < 0x80, ErrorCode::kEmptyTag, "transcript tag must be ASCII");
    state_ = Sha256{}.update(state_).update(tag).update_u64(data.size()).update(data).finish();
    log_.emplace_back(std::string(tag), state_);
    return *this;
  }

  Transcript& absorb(std::string_view tag, const Digest& d) { return absorb(tag, std::span<const uint8_t>(d.bytes)); }

  /// c = (first 16 bytes of H(state || tag [|| counter]) as LE integer) mod p,
  /// re-derived with an incremented counter while c == 0.
  FieldElement challenge_field(std::string_view tag) {
    VT_ENFORCE(!tag.empty(), ErrorCode::kEmptyTag, "transcript tag must be non-empty");
    const uint64_t p = default_field().modulus();
    for (uint64_t counter = 0;; ++counter) {
      Sha256 h;
      h.update(state_).update(tag);
      if (counter > 0) h.update_u64(counter);
      const Digest d = h.finish();
      u128 acc = 0;
      for (int i = 15; i >= 0; --i) acc = (acc << 8) | d.bytes[i];
      const FieldElement c{static_cast<uint64_t>(acc % p)};
      if (c.value == 0) continue;
      const auto enc = encode_field(c);
      absorb(tag, enc);
      return c;
    }
  }

  nlohmann::json log_json() const {
    auto arr = nlohmann::json::array();
    for (const auto& [tag, d] : log_) arr.push_back({{"tag", tag}, {"digest", d.hex()}});
    return arr;
  }

 private:
  Digest state_;
  std::vector<std::pair<std::string, Digest>> log_;
};

/// Absorbs the model root, public input digest and witness root in that
/// order, then derives (z, t).
inline Challenge derive_session_challenges(const Digest& model_root, const Digest& input_digest,
                                           const Digest& witness_root) {
  Transcript tr;
  tr.absorb(kTagModelRoot, model_root).absorb(kTagInput, input_digest).absorb(kTagWitnessRoot, witness_root);
  Challenge c;
  c.z = tr.challenge_field(kTagZ);
  c.t = tr.challenge_field(kTagT);
  return c;
}

/// Prover-side ordering guard: challenges exist only after the witness
/// commitment is bound, and are drawn exactly once.
class ProvingSession {
 public:
  ProvingSession(const Digest& model_root, const Digest& input_digest)
      : model_root_(model_root), input_digest_(input_digest) {}

  void bind_witness(const Digest& witness_root) {
    VT_ENFORCE(!witness_root_, ErrorCode::kSessionState, "witness root already bound");
    witness_root_ = witness_root;
  }

  Challenge challenges() {
    VT_ENFORCE(witness_root_.has_value(), ErrorCode::kSessionState,
               "challenges requested before the witness root was bound");
    VT_ENFORCE(!drawn_, ErrorCode::kSessionState, "session challenges already derived");
    drawn_ = true;
    return derive_session_challenges(model_root_, input_digest_, *witness_root_);
  }

  const Digest& model_root() const { return model_root_; }
  const Digest& input_digest() const { return input_digest_; }
  const std::optional<Digest>& witness_root() const { return witness_root_; }

 private:
  Digest model_root_;
  Digest input_digest_;
  std::optional<Digest> witness_root_;
  bool drawn_ = false;
};

}  // namespace veritensor
