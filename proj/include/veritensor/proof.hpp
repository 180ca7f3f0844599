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
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "veritensor/commit.hpp"
#include "veritensor/errors.hpp"
#include "veritensor/field.hpp"
#include "veritensor/hash.hpp"

namespace veritensor {

enum class Level : uint8_t {
  kSegment,
  kHead,
  kRow,
  kComponent,
  kLayer,
  kModel,
  kXProof,
  kWProof,
  kXWProof,
  kGroup,
  kGroupRow,
  kSortedGroup,
  kSortedGroupRow,
};
inline constexpr uint8_t kLevelCount = 13;

enum class Kind : uint8_t {
  kNone,
  kGemm,
  kRmsNorm,
  kEmbedding,
  kRope,
  kSoftmax,
  kSigmoid,
  kSilu,
  kAdd,
  kMul,
  kTopK,
  kExpertSelector,
  kLayer,
  kModel,
};
inline constexpr uint8_t kKindCount = 14;

inline const char* level_name(Level l) {
  static const char* const kNames[] = {"segment", "head",         "row",     "component", "layer",
                                       "model",   "xproof",       "wproof",  "xwproof",   "group",
                                       "groupRow", "sortedGroup", "sortedGroupRow"};
  return kNames[static_cast<uint8_t>(l)];
}

inline const char* kind_name(Kind k) {
  static const char* const kNames[] = {"none",    "gemm", "rmsnorm", "embedding", "rope",
                                       "softmax", "sigmoid", "silu", "add",       "mul",
                                       "topk",    "experts_selector", "layer", "model"};
  return kNames[static_cast<uint8_t>(k)];
}

/// Rectangle a node speaks for: rows [row_begin, row_end), columns
/// [col_offset, col_offset + width) of the component's logical index space.
struct Shape {
  uint64_t row_begin = 0;
  uint64_t row_end = 0;
  uint64_t col_offset = 0;
  uint64_t width = 0;
  bool operator==(const Shape&) const = default;
};

/// Public assertions of a node plus the openings they are recomputed from.
struct Claim {
  FieldElement zmul_in{0};
  FieldElement zmul_out{0};
  std::map<std::string, FieldElement> aux;
  std::vector<FieldElement> vec;  // ZMulCol / ZMulRow block
  std::vector<Digest> digests;
  Shape shape;
  std::vector<std::vector<int64_t>> openings;
  std::vector<AuthPath> paths;

  /// Equality of everything a verifier recomputes (openings and paths are inputs).
  bool same_public(const Claim& o) const {
    return zmul_in == o.zmul_in && zmul_out == o.zmul_out && aux == o.aux && vec == o.vec &&
           digests == o.digests && shape == o.shape;
  }
  bool operator==(const Claim&) const = default;

  FieldElement get(const std::string& key) const {
    auto it = aux.find(key);
    return it == aux.end() ? FieldElement{0} : it->second;
  }
};

struct ProofNode {
  Level level = Level::kSegment;
  Kind kind = Kind::kNone;
  std::string label;
  Claim claim;
  std::vector<ProofNode> children;

  bool operator==(const ProofNode&) const = default;
};

inline Level parent_level(Level l) {
  switch (l) {
    case Level::kSegment:
    case Level::kHead:
      return Level::kRow;
    case Level::kRow:
    case Level::kXWProof:
    case Level::kGroupRow:
    case Level::kSortedGroupRow:
      return Level::kComponent;
    case Level::kGroup:
      return Level::kGroupRow;
    case Level::kSortedGroup:
      return Level::kSortedGroupRow;
    case Level::kComponent:
      return Level::kLayer;
    case Level::kLayer:
      return Level::kModel;
    default:
      throw Error(ErrorCode::kIncompatibleNodes, std::string("no parent level for ") + level_name(l));
  }
}

inline std::vector<FieldElement> add_vec(const std::vector<FieldElement>& a, const std::vector<FieldElement>& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  VT_ENFORCE(a.size() == b.size(), ErrorCode::kIncompatibleNodes, "vector blocks differ in length");
  std::vector<FieldElement> out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

/// Additive claim combination: ZMul terms, vectors and aux sums add; the
/// shape grows to the bounding rectangle of two adjacent shapes.
inline Claim merge_claims(const Claim& a, const Claim& b) {
  const Shape &l = a.shape, &r = b.shape;
  const bool horizontal = l.row_begin == r.row_begin && l.row_end == r.row_end && r.col_offset == l.col_offset + l.width;
  const bool vertical = l.col_offset == r.col_offset && l.width == r.width && r.row_begin == l.row_end;
  VT_ENFORCE(horizontal || vertical, ErrorCode::kIncompatibleNodes, "merged shapes are not adjacent");
  Claim c;
  c.zmul_in = a.zmul_in + b.zmul_in;
  c.zmul_out = a.zmul_out + b.zmul_out;
  c.aux = a.aux;
  for (const auto& [k, v] : b.aux) c.aux[k] += v;
  c.vec = add_vec(a.vec, b.vec);
  c.shape = horizontal ? Shape{l.row_begin, l.row_end, l.col_offset, l.width + r.width}
                       : Shape{l.row_begin, r.row_end, l.col_offset, l.width};
  return c;
}

/// Folds children claims left to right.
inline Claim fold_children(const std::vector<ProofNode>& children) {
  VT_ENFORCE(!children.empty(), ErrorCode::kIncompatibleNodes, "fold over no children");
  Claim c = children.front().claim;
  c.digests.clear();
  c.openings.clear();
  c.paths.clear();
  for (size_t i = 1; i < children.size(); ++i) c = merge_claims(c, children[i].claim);
  return c;
}

/// Two same-level nodes become children of a new parent; a parent-level left
/// node absorbs the right node, so folding [A, B, C] gives one parent.
inline ProofNode merge(ProofNode left, ProofNode right) {
  if (left.level == right.level) {
    ProofNode p;
    p.level = parent_level(left.level);
    p.kind = left.kind;
    p.claim = merge_claims(left.claim, right.claim);
    p.children.push_back(std::move(left));
    p.children.push_back(std::move(right));
    return p;
  }
  VT_ENFORCE(left.level == parent_level(right.level), ErrorCode::kIncompatibleNodes,
             std::string("cannot merge ") + level_name(left.level) + " with " + level_name(right.level));
  VT_ENFORCE(left.kind == right.kind, ErrorCode::kIncompatibleNodes, "merged kinds differ");
  Claim c = merge_claims(left.claim, right.claim);
  left.claim.zmul_in = c.zmul_in;
  left.claim.zmul_out = c.zmul_out;
  left.claim.aux = c.aux;
  left.claim.vec = c.vec;
  left.claim.shape = c.shape;
  left.children.push_back(std::move(right));
  return left;
}

// ---------------------------------------------------------------- digests

inline void hash_claim(Sha256& h, const Claim& c) {
  h.update_field(c.zmul_in).update_field(c.zmul_out).update_u64(c.aux.size());
  for (const auto& [k, v] : c.aux) h.update_u64(k.size()).update(k).update_field(v);
  h.update_u64(c.vec.size());
  for (auto v : c.vec) h.update_field(v);
  h.update_u64(c.digests.size());
  for (const auto& d : c.digests) h.update(d);
  h.update_u64(c.shape.row_begin).update_u64(c.shape.row_end).update_u64(c.shape.col_offset).update_u64(c.shape.width);
  h.update_u64(c.openings.size());
  for (const auto& o : c.openings) {
    h.update_u64(o.size());
    for (int64_t v : o) h.update_u64(static_cast<uint64_t>(v));
  }
  h.update_u64(c.paths.size());
  for (const auto& p : c.paths) {
    h.update_u64(p.size());
    for (const auto& d : p) h.update(d);
  }
}

/// Binds level, kind, label, claim and every child digest.
inline Digest node_digest(const ProofNode& n) {
  Sha256 h;
  h.update("VT-NODE").update_u64(static_cast<uint8_t>(n.level)).update_u64(static_cast<uint8_t>(n.kind));
  h.update_u64(n.label.size()).update(n.label);
  hash_claim(h, n.claim);
  h.update_u64(n.children.size());
  for (const auto& c : n.children) h.update(node_digest(c));
  return h.finish();
}

/// Node counts per level over the whole subtree.
inline std::map<Level, size_t> count_levels(const ProofNode& n) {
  std::map<Level, size_t> out;
  std::vector<const ProofNode*> stack{&n};
  while (!stack.empty()) {
    const ProofNode* cur = stack.back();
    stack.pop_back();
    ++out[cur->level];
    for (const auto& c : cur->children) stack.push_back(&c);
  }
  return out;
}

// ---------------------------------------------------------------- binary container

inline constexpr uint16_t kProofVersion = 1;

struct ProofHeader {
  uint64_t modulus = kGoldilocks;
  uint32_t q = 16;
  uint32_t l = 8;
  bool operator==(const ProofHeader&) const = default;
};

namespace detail {

class Writer {
 public:
  std::vector<uint8_t> bytes;
  void u8(uint8_t v) { bytes.push_back(v); }
  void u16(uint16_t v) { le(v, 2); }
  void u32(uint32_t v) { le(v, 4); }
  void u64(uint64_t v) { le(v, 8); }
  void field(FieldElement f) { u64(f.value); }
  void digest(const Digest& d) { bytes.insert(bytes.end(), d.bytes.begin(), d.bytes.end()); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }

 private:
  void le(uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
};

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> b) : b_(b) {}
  size_t node_index = 0;  // index of the record being decoded, for error locations

  uint8_t u8() { return static_cast<uint8_t>(le(1)); }
  uint16_t u16() { return static_cast<uint16_t>(le(2)); }
  uint32_t u32() { return static_cast<uint32_t>(le(4)); }
  uint64_t u64() { return le(8); }
  FieldElement field() {
    const uint64_t v = u64();
    VT_ENFORCE(v < default_field().modulus(), ErrorCode::kDecode, where() + "non-canonical field element");
    return FieldElement{v};
  }
  Digest digest() {
    need(32);
    Digest d;
    std::copy_n(b_.begin() + static_cast<std::ptrdiff_t>(pos_), 32, d.bytes.begin());
    pos_ += 32;
    return d;
  }
  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data()) + pos_, n);
    pos_ += n;
    return s;
  }
  /// Length prefix with a plausibility bound: each element needs >= min_bytes.
  uint32_t count(size_t min_bytes) {
    const uint32_t n = u32();
    VT_ENFORCE(static_cast<size_t>(n) * min_bytes <= b_.size() - pos_, ErrorCode::kDecode,
               where() + "length prefix exceeds remaining bytes");
    return n;
  }
  bool done() const { return pos_ == b_.size(); }
  std::string where() const { return "node#" + std::to_string(node_index) + ": "; }

 private:
  void need(size_t n) {
    VT_ENFORCE(n <= b_.size() - pos_, ErrorCode::kDecode, where() + "truncated proof");
  }
  uint64_t le(int n) {
    need(static_cast<size_t>(n));
    uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= uint64_t{b_[pos_ + static_cast<size_t>(i)]} << (8 * i);
    pos_ += static_cast<size_t>(n);
    return v;
  }
  std::span<const uint8_t> b_;
  size_t pos_ = 0;
};

inline void write_node(Writer& w, const ProofNode& n) {
  w.u8(static_cast<uint8_t>(n.level));
  w.u8(static_cast<uint8_t>(n.kind));
  w.str(n.label);
  const Claim& c = n.claim;
  w.field(c.zmul_in);
  w.field(c.zmul_out);
  w.u32(static_cast<uint32_t>(c.aux.size()));
  for (const auto& [k, v] : c.aux) {
    w.str(k);
    w.field(v);
  }
  w.u32(static_cast<uint32_t>(c.vec.size()));
  for (auto v : c.vec) w.field(v);
  w.u32(static_cast<uint32_t>(c.digests.size()));
  for (const auto& d : c.digests) w.digest(d);
  w.u64(c.shape.row_begin);
  w.u64(c.shape.row_end);
  w.u64(c.shape.col_offset);
  w.u64(c.shape.width);
  w.u32(static_cast<uint32_t>(c.openings.size()));
  for (const auto& o : c.openings) {
    w.u32(static_cast<uint32_t>(o.size()));
    for (int64_t v : o) w.u64(static_cast<uint64_t>(v));
  }
  w.u32(static_cast<uint32_t>(c.paths.size()));
  for (const auto& p : c.paths) {
    w.u32(static_cast<uint32_t>(p.size()));
    for (const auto& d : p) w.digest(d);
  }
  w.u32(static_cast<uint32_t>(n.children.size()));
  for (const auto& ch : n.children) write_node(w, ch);
}

inline ProofNode read_node(Reader& r, int depth) {
  VT_ENFORCE(depth < 64, ErrorCode::kDecode, r.where() + "proof nesting too deep");
  ProofNode n;
  const uint8_t lvl = r.u8(), kind = r.u8();
  VT_ENFORCE(lvl < kLevelCount, ErrorCode::kDecode, r.where() + "unknown level");
  VT_ENFORCE(kind < kKindCount, ErrorCode::kDecode, r.where() + "unknown kind");
  n.level = static_cast<Level>(lvl);
  n.kind = static_cast<Kind>(kind);
  n.label = r.str();
  Claim& c = n.claim;
  c.zmul_in = r.field();
  c.zmul_out = r.field();
  const uint32_t n_aux = r.count(12);
  for (uint32_t i = 0; i < n_aux; ++i) {
    std::string k = r.str();
    const FieldElement v = r.field();
    VT_ENFORCE(c.aux.emplace(std::move(k), v).second, ErrorCode::kDecode, r.where() + "duplicate aux key");
  }
  c.vec.resize(r.count(8));
  for (auto& v : c.vec) v = r.field();
  c.digests.resize(r.count(32));
  for (auto& d : c.digests) d = r.digest();
  c.shape.row_begin = r.u64();
  c.shape.row_end = r.u64();
  c.shape.col_offset = r.u64();
  c.shape.width = r.u64();
  c.openings.resize(r.count(4));
  for (auto& o : c.openings) {
    o.resize(r.count(8));
    for (auto& v : o) v = static_cast<int64_t>(r.u64());
  }
  c.paths.resize(r.count(4));
  for (auto& p : c.paths) {
    p.resize(r.count(32));
    for (auto& d : p) d = r.digest();
  }
  n.children.resize(r.count(2));
  for (auto& ch : n.children) {
    ++r.node_index;
    ch = read_node(r, depth + 1);
  }
  return n;
}

}  // namespace detail

inline std::vector<uint8_t> serialize_proof(const ProofNode& root, const ProofHeader& hdr = {}) {
  detail::Writer w;
  for (char ch : std::string_view("VTPF")) w.u8(static_cast<uint8_t>(ch));
  w.u16(kProofVersion);
  w.u64(hdr.modulus);
  w.u32(hdr.q);
  w.u32(hdr.l);
  detail::write_node(w, root);
  return std::move(w.bytes);
}

struct DecodedProof {
  ProofHeader header;
  ProofNode root;
};

/// Throws kDecode with a "node#k" location on any malformed byte sequence.
inline DecodedProof deserialize_proof(std::span<const uint8_t> bytes) {
  detail::Reader r(bytes);
  std::string magic;
  for (int i = 0; i < 4; ++i) magic.push_back(static_cast<char>(r.u8()));
  VT_ENFORCE(magic == "VTPF", ErrorCode::kDecode, "header: bad magic");
  VT_ENFORCE(r.u16() == kProofVersion, ErrorCode::kDecode, "header: unsupported version");
  DecodedProof out;
  out.header.modulus = r.u64();
  out.header.q = r.u32();
  out.header.l = r.u32();
  out.root = detail::read_node(r, 0);
  VT_ENFORCE(r.done(), ErrorCode::kDecode, "trailing bytes after proof");
  return out;
}

/// Debug dump; not a round-trip format.
inline nlohmann::json proof_to_json(const ProofNode& n) {
  nlohmann::json j;
  j["level"] = level_name(n.level);
  j["kind"] = kind_name(n.kind);
  if (!n.label.empty()) j["label"] = n.label;
  j["zmul_in"] = n.claim.zmul_in.value;
  j["zmul_out"] = n.claim.zmul_out.value;
  for (const auto& [k, v] : n.claim.aux) j["aux"][k] = v.value;
  if (!n.claim.vec.empty()) {
    auto& arr = j["vec"] = nlohmann::json::array();
    for (auto v : n.claim.vec) arr.push_back(v.value);
  }
  for (const auto& d : n.claim.digests) j["digests"].push_back(d.hex());
  const auto& s = n.claim.shape;
  j["shape"] = {s.row_begin, s.row_end, s.col_offset, s.width};
  if (!n.claim.openings.empty()) j["openings"] = n.claim.openings;
  if (!n.claim.paths.empty()) j["path_lengths"] = [&] {
      auto a = nlohmann::json::array();
      for (const auto& p : n.claim.paths) a.push_back(p.size());
      return a;
    }();
  for (const auto& c : n.children) j["children"].push_back(proof_to_json(c));
  return j;
}

}  // namespace veritensor
