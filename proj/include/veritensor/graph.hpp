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

#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "veritensor/evaluator.hpp"
#include "veritensor/leaves.hpp"

namespace veritensor {

// ---------------------------------------------------------------- config

struct MoeConfig {
  size_t n_experts = 16;
  size_t n_shared = 1;
  size_t n_groups = 4;
  size_t per_group_top = 1;
  size_t groups_selected = 2;
  size_t experts_selected = 4;
  size_t inter_dim = 32;

  Grouping grouping() const { return {n_groups, per_group_top, groups_selected, experts_selected}; }
  friend bool operator==(const MoeConfig&, const MoeConfig&) = default;
};

/// Segment width used by each component family.
struct SegmentDims {
  size_t gemm = 16;
  size_t norm = 16;
  size_t embedding = 16;
  size_t softmax = 4;
  size_t activation = 16;
  size_t elementwise = 16;
  friend bool operator==(const SegmentDims&, const SegmentDims&) = default;
};

/// Largest expert count whose routing set fits a field-sized bitmask.
inline constexpr size_t kMaxExperts = 63;

struct ModelConfig {
  size_t dim = 64;
  size_t n_layers = 2;
  size_t n_heads = 4;
  size_t head_dim = 16;  // non-rotary query/key width and value width per head
  size_t rope_dim = 8;
  size_t q_lora_rank = 32;
  size_t kv_lora_rank = 16;
  size_t vocab_size = 256;
  size_t max_seq = 64;
  MoeConfig moe;
  QuantConfig quant;
  SegmentDims seg;

  void validate() const {
    auto need = [](bool ok, const char* what) { VT_ENFORCE(ok, ErrorCode::kBadConfig, what); };
    for (size_t v : {dim, n_layers, n_heads, head_dim, rope_dim, q_lora_rank, kv_lora_rank, vocab_size, max_seq,
                     moe.n_experts, moe.inter_dim, seg.gemm, seg.norm, seg.embedding, seg.softmax, seg.activation,
                     seg.elementwise})
      need(v >= 1, "model dimensions must be >= 1");
    need(head_dim % 2 == 0, "head_dim must be even");
    need(rope_dim % 2 == 0, "rope_dim must be even");
    need(moe.n_experts <= kMaxExperts, "too many routed experts");
    need(moe.n_groups >= 1 && moe.n_experts % moe.n_groups == 0, "n_experts must be divisible by n_groups");
    try {
      moe.grouping().validate(moe.n_experts);
    } catch (const Error& e) {
      throw Error(ErrorCode::kBadConfig, e.what());
    }
    quant.validate();
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"dim", c.dim},
          {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},
          {"head_dim", c.head_dim},
          {"rope_dim", c.rope_dim},
          {"q_lora_rank", c.q_lora_rank},
          {"kv_lora_rank", c.kv_lora_rank},
          {"vocab_size", c.vocab_size},
          {"max_seq", c.max_seq},
          {"moe",
           {{"n_experts", c.moe.n_experts},
            {"n_shared", c.moe.n_shared},
            {"n_groups", c.moe.n_groups},
            {"per_group_top", c.moe.per_group_top},
            {"groups_selected", c.moe.groups_selected},
            {"experts_selected", c.moe.experts_selected},
            {"inter_dim", c.moe.inter_dim}}},
          {"quant", {{"q", c.quant.q}, {"l", c.quant.l}, {"neg_inf_q", c.quant.neg_inf_q}}},
          {"segments",
           {{"gemm", c.seg.gemm},
            {"norm", c.seg.norm},
            {"embedding", c.seg.embedding},
            {"softmax", c.seg.softmax},
            {"activation", c.seg.activation},
            {"elementwise", c.seg.elementwise}}}};
}

/// Parses and validates a config; any missing or mistyped field is BadConfig.
inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.dim = j.at("dim");
    c.n_layers = j.at("n_layers");
    c.n_heads = j.at("n_heads");
    c.head_dim = j.at("head_dim");
    c.rope_dim = j.at("rope_dim");
    c.q_lora_rank = j.at("q_lora_rank");
    c.kv_lora_rank = j.at("kv_lora_rank");
    c.vocab_size = j.at("vocab_size");
    c.max_seq = j.at("max_seq");
    const auto& m = j.at("moe");
    c.moe = {m.at("n_experts"),       m.at("n_shared"),         m.at("n_groups"), m.at("per_group_top"),
             m.at("groups_selected"), m.at("experts_selected"), m.at("inter_dim")};
    const auto& q = j.at("quant");
    c.quant.q = q.at("q");
    c.quant.l = q.at("l");
    c.quant.neg_inf_q = q.at("neg_inf_q");
    const auto& s = j.at("segments");
    c.seg = {s.at("gemm"), s.at("norm"), s.at("embedding"), s.at("softmax"), s.at("activation"), s.at("elementwise")};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadConfig, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------- weights

/// How a committed tensor is cut into Merkle leaves.
enum class LeafScheme : uint8_t { kGemm, kStacked, kVector, kVocab, kRope };

struct WeightInfo {
  std::string name;
  size_t rows = 0;
  size_t cols = 0;
  LeafScheme scheme = LeafScheme::kGemm;
  size_t segment = 1;
  size_t blocks = 1;
  uint64_t leaf_offset = 0;
  uint64_t leaf_count = 0;

  size_t block_rows() const { return rows / blocks; }
  uint64_t leaves_per_block() const { return leaf_count / blocks; }
};

inline uint64_t scheme_leaf_count(const WeightInfo& w) {
  switch (w.scheme) {
    case LeafScheme::kGemm:
    case LeafScheme::kStacked:
      return w.blocks * w.cols * ceil_div(w.block_rows(), w.segment);
    case LeafScheme::kVector:
      return ceil_div(w.cols, w.segment);
    case LeafScheme::kVocab:
    case LeafScheme::kRope:
      return w.rows;
  }
  return 0;
}

/// Leaf digests of one tensor under its scheme.
inline std::vector<Digest> weight_leaves(const WeightInfo& info, const QTensor& t) {
  VT_ENFORCE(t.rows == info.rows && t.cols == info.cols, ErrorCode::kShapeMismatch, "tensor " + info.name + " shape");
  switch (info.scheme) {
    case LeafScheme::kGemm:
      return gemm_weight_leaves(t, info.segment);
    case LeafScheme::kStacked:
      return stacked_weight_leaves(t, info.blocks, info.segment);
    case LeafScheme::kVector:
      return vector_leaves(t.row(0), info.segment);
    case LeafScheme::kVocab:
      return vocab_leaves(t, info.segment);
    case LeafScheme::kRope:
      return rope_leaves(t);
  }
  return {};
}

inline std::string layer_name(size_t l) { return "layer" + std::to_string(l); }
inline std::string expert_name(size_t e) { return "expert" + std::to_string(e); }
inline std::string shared_name(size_t j) { return "shared" + std::to_string(j); }

/// Every committed tensor in canonical leaf order with its leaf range.
/// Routed experts are grouped per expert so a layer can stream them apart.
inline std::vector<WeightInfo> weight_catalog(const ModelConfig& c) {
  std::vector<WeightInfo> out;
  uint64_t next = 0;
  auto add = [&](std::string name, size_t r, size_t cols, LeafScheme scheme, size_t s, size_t blocks = 1) {
    WeightInfo w{std::move(name), r, cols, scheme, s, blocks, next, 0};
    w.leaf_count = scheme_leaf_count(w);
    next += w.leaf_count;
    out.push_back(std::move(w));
  };
  const size_t H = c.n_heads, g = c.seg.gemm;
  add("embed", c.vocab_size, c.dim, LeafScheme::kVocab, c.seg.embedding);
  add("rope", c.max_seq, c.rope_dim, LeafScheme::kRope, 1);
  auto mlp = [&](const std::string& p) {
    add(p + ".w1", c.dim, c.moe.inter_dim, LeafScheme::kGemm, g);
    add(p + ".w3", c.dim, c.moe.inter_dim, LeafScheme::kGemm, g);
    add(p + ".w2", c.moe.inter_dim, c.dim, LeafScheme::kGemm, g);
  };
  for (size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = layer_name(l) + ".";
    add(p + "attn_norm", 1, c.dim, LeafScheme::kVector, c.seg.norm);
    add(p + "wq_a", c.dim, c.q_lora_rank, LeafScheme::kGemm, g);
    add(p + "q_norm", 1, c.q_lora_rank, LeafScheme::kVector, c.seg.norm);
    add(p + "wq_b1", c.q_lora_rank, H * c.head_dim, LeafScheme::kGemm, g);
    add(p + "wq_b2", c.q_lora_rank, H * c.rope_dim, LeafScheme::kGemm, g);
    add(p + "wkv_a1", c.dim, c.kv_lora_rank, LeafScheme::kGemm, g);
    add(p + "kv_norm", 1, c.kv_lora_rank, LeafScheme::kVector, c.seg.norm);
    add(p + "wkv_a2", c.dim, c.rope_dim, LeafScheme::kGemm, g);
    add(p + "wkv_b1", H * c.head_dim, c.kv_lora_rank, LeafScheme::kStacked, g, H);
    add(p + "wkv_b2", H * c.kv_lora_rank, c.head_dim, LeafScheme::kStacked, g, H);
    add(p + "wo", H * c.head_dim, c.dim, LeafScheme::kGemm, g);
    add(p + "ffn_norm", 1, c.dim, LeafScheme::kVector, c.seg.norm);
    add(p + "gate", c.dim, c.moe.n_experts, LeafScheme::kGemm, g);
    add(p + "gate_bias", 1, c.moe.n_experts, LeafScheme::kVector, c.seg.elementwise);
    for (size_t j = 0; j < c.moe.n_shared; ++j) mlp(p + shared_name(j));
    for (size_t e = 0; e < c.moe.n_experts; ++e) mlp(p + expert_name(e));
  }
  add("final_norm", 1, c.dim, LeafScheme::kVector, c.seg.norm);
  add("head", c.dim, c.vocab_size, LeafScheme::kGemm, g);
  return out;
}

inline const WeightInfo& find_weight(const std::vector<WeightInfo>& cat, const std::string& name) {
  for (const auto& w : cat)
    if (w.name == name) return w;
  throw Error(ErrorCode::kBadConfig, "unknown weight tensor " + name);
}

// ---------------------------------------------------------------- graph

/// Where a component operand comes from.
struct Operand {
  enum class Source : uint8_t { kNone, kTensor, kWeight };
  Source source = Source::kNone;
  std::string name;
  size_t col0 = 0;
  size_t width = 0;       // 0 reads every column
  bool transposed = false;
  bool broadcast = false;  // one column, repeated across the row
  size_t block = 0;        // stacked weight block
  std::string cover;       // reads sharing a cover jointly span the tensor

  bool is_tensor() const { return source == Source::kTensor; }
  bool is_weight() const { return source == Source::kWeight; }
};

inline Operand none() { return {}; }
inline Operand act(std::string name, size_t col0 = 0, size_t width = 0, std::string cover = {}) {
  return {Operand::Source::kTensor, std::move(name), col0, width, false, false, 0, std::move(cover)};
}
inline Operand act_t(std::string name) { return {Operand::Source::kTensor, std::move(name), 0, 0, true, false, 0, {}}; }
inline Operand act_col(std::string name, size_t col, std::string cover) {
  return {Operand::Source::kTensor, std::move(name), col, 1, false, true, 0, std::move(cover)};
}
inline Operand weight(std::string name, size_t block = 0) {
  return {Operand::Source::kWeight, std::move(name), 0, 0, false, false, block, {}};
}

struct TensorInfo {
  std::string name;
  size_t rows = 0;
  size_t cols = 0;
};

struct GraphNode {
  ComponentSpec spec;
  std::string stage;
  std::vector<std::string> roles;
  Operand x, b;
  std::string out;
  size_t out_col0 = 0;
  size_t out_cols = 0;

  std::string path() const { return "model/" + stage + "/" + spec.label; }
};

enum class Port : uint8_t { kIn, kB, kOut };

struct LinkTerm {
  size_t node = 0;
  Port port = Port::kIn;
};

/// One tensor: the producers' zmul_out sum must equal every cover's sum.
struct LinkGroup {
  std::string tensor;
  std::vector<LinkTerm> producers;
  std::vector<std::vector<LinkTerm>> covers;
};

struct ComponentGraph {
  std::vector<TensorInfo> tensors;
  std::vector<GraphNode> nodes;
  std::vector<std::string> inputs;  // tensors fed from outside the graph
  std::vector<std::string> stages;

  const TensorInfo& tensor(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw Error(ErrorCode::kBadConfig, "unknown tensor " + name);
  }
  bool has_tensor(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return true;
    return false;
  }
  const GraphNode& node(const std::string& stage, const std::string& label) const {
    for (const auto& n : nodes)
      if (n.stage == stage && n.spec.label == label) return n;
    throw Error(ErrorCode::kBadConfig, "unknown component " + stage + "/" + label);
  }
  std::vector<size_t> stage_nodes(const std::string& stage) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i].stage == stage) out.push_back(i);
    return out;
  }
  /// Tensors that no component reads.
  std::vector<std::string> outputs() const {
    std::set<std::string> read;
    for (const auto& n : nodes)
      for (const Operand* o : {&n.x, &n.b})
        if (o->is_tensor()) read.insert(o->name);
    std::vector<std::string> out;
    for (const auto& t : tensors)
      if (!read.count(t.name)) out.push_back(t.name);
    return out;
  }
};

/// Appends components to a graph; tensor names are prefixed by the stage.
class GraphBuilder {
 public:
  GraphBuilder(const ModelConfig& cfg, ComponentGraph& g, std::string stage, size_t rows)
      : cfg_(cfg), g_(g), stage_(std::move(stage)), rows_(rows) {
    if (std::find(g_.stages.begin(), g_.stages.end(), stage_) == g_.stages.end()) g_.stages.push_back(stage_);
  }

  const ModelConfig& cfg() const { return cfg_; }
  size_t rows() const { return rows_; }
  const std::string& stage() const { return stage_; }
  std::string name(const std::string& local) const { return stage_ + "." + local; }
  std::string wname(const std::string& local) const { return stage_ + "." + local; }

  std::string tensor(const std::string& local, size_t cols) {
    const std::string n = name(local);
    if (!g_.has_tensor(n)) g_.tensors.push_back({n, rows_, cols});
    return n;
  }

  /// Adds a component; layouts are derived from the operands.
  GraphNode& add(std::string label, Kind kind, std::vector<std::string> roles, Operand x, Operand b,
                 const std::string& out, size_t out_col0, size_t cols, size_t segment) {
    GraphNode n;
    n.stage = stage_;
    n.roles = std::move(roles);
    n.x = std::move(x);
    n.b = std::move(b);
    n.out = out;
    n.out_col0 = out_col0;
    n.out_cols = cols;
    ComponentSpec& sp = n.spec;
    sp.label = std::move(label);
    sp.kind = kind;
    sp.rows = rows_;
    sp.cols = cols;
    sp.segment = segment;
    for (size_t i = 0; i < rows_; ++i) sp.positions.push_back(i);
    if (n.x.is_tensor()) sp.in = Layout::row_major(g_.tensor(n.x.name).cols, n.x.col0);
    if (n.b.is_tensor()) {
      const size_t w = g_.tensor(n.b.name).cols;
      sp.b = n.b.transposed ? Layout::transposed(w, n.b.col0) : Layout::row_major(w, n.b.col0);
      sp.b_mode = n.b.broadcast ? BMode::kColumn : BMode::kActivation;
    } else if (n.b.is_weight()) {
      sp.b_mode = BMode::kWeight;
    }
    if (!out.empty()) sp.out = Layout::row_major(g_.tensor(out).cols, out_col0);
    g_.nodes.push_back(std::move(n));
    return g_.nodes.back();
  }

  GraphNode& gemm(std::string label, std::vector<std::string> roles, Operand x, Operand w, const std::string& out,
                  size_t out_col0, size_t inner, size_t cols) {
    auto& n = add(std::move(label), Kind::kGemm, std::move(roles), std::move(x), std::move(w), out, out_col0, cols,
                  cfg_.seg.gemm);
    n.spec.inner = inner;
    return n;
  }
  GraphNode& norm(std::string label, std::vector<std::string> roles, Operand x, const std::string& wt,
                  const std::string& out, size_t cols) {
    return add(std::move(label), Kind::kRmsNorm, std::move(roles), std::move(x), weight(wt), out, 0, cols,
               cfg_.seg.norm);
  }
  GraphNode& unary(std::string label, Kind kind, std::vector<std::string> roles, Operand x, const std::string& out,
                   size_t cols) {
    return add(std::move(label), kind, std::move(roles), std::move(x), none(), out, 0, cols, cfg_.seg.activation);
  }
  GraphNode& binary(std::string label, Kind kind, std::vector<std::string> roles, Operand x, Operand b,
                    const std::string& out, size_t cols) {
    return add(std::move(label), kind, std::move(roles), std::move(x), std::move(b), out, 0, cols,
               cfg_.seg.elementwise);
  }

 private:
  const ModelConfig& cfg_;
  ComponentGraph& g_;
  std::string stage_;
  size_t rows_;
};

/// Multi-head latent attention from `in` (rows x dim); returns the wo output.
inline std::string add_mla(GraphBuilder& gb, const std::string& in) {
  const auto& c = gb.cfg();
  const size_t H = c.n_heads, hd = c.head_dim, rd = c.rope_dim, kv = c.kv_lora_rank, T = gb.rows();
  const std::string L = gb.stage() + ".";
  auto xn = gb.tensor("xn", c.dim);
  gb.norm("attn_norm", {"attn_norm"}, act(in), L + "attn_norm", xn, c.dim);
  auto cq = gb.tensor("cq", c.q_lora_rank);
  gb.gemm("wq_a", {"wq_a"}, act(xn), weight(L + "wq_a"), cq, 0, c.dim, c.q_lora_rank);
  auto cqn = gb.tensor("cqn", c.q_lora_rank);
  gb.norm("q_norm", {"q_norm"}, act(cq), L + "q_norm", cqn, c.q_lora_rank);
  auto q_nope = gb.tensor("q_nope", H * hd);
  gb.gemm("wq_b1", {"wq_b1"}, act(cqn), weight(L + "wq_b1"), q_nope, 0, c.q_lora_rank, H * hd);
  auto q_pe_raw = gb.tensor("q_pe_raw", H * rd);
  gb.gemm("wq_b2", {"wq_b2"}, act(cqn), weight(L + "wq_b2"), q_pe_raw, 0, c.q_lora_rank, H * rd);
  auto q_pe = gb.tensor("q_pe", H * rd);
  auto& r1 = gb.add("rope1", Kind::kRope, {"RoPE1"}, act(q_pe_raw), weight("rope"), q_pe, 0, H * rd, rd);
  r1.spec.heads = H;
  r1.spec.b_mode = BMode::kNone;
  auto ckv_raw = gb.tensor("ckv_raw", kv);
  gb.gemm("wkv_a1", {"wkv_a1"}, act(xn), weight(L + "wkv_a1"), ckv_raw, 0, c.dim, kv);
  auto ckv = gb.tensor("ckv", kv);
  gb.norm("kv_norm", {"kv_norm"}, act(ckv_raw), L + "kv_norm", ckv, kv);
  auto kpe_raw = gb.tensor("kpe_raw", rd);
  gb.gemm("wkv_a2", {"wkv_a2"}, act(xn), weight(L + "wkv_a2"), kpe_raw, 0, c.dim, rd);
  auto kpe = gb.tensor("kpe", rd);
  auto& r2 = gb.add("rope2", Kind::kRope, {"RoPE2"}, act(kpe_raw), weight("rope"), kpe, 0, rd, rd);
  r2.spec.heads = 1;
  r2.spec.b_mode = BMode::kNone;

  auto scores = gb.tensor("scores", H * T);
  for (size_t h = 0; h < H; ++h) {
    const std::string s = "." + std::to_string(h);
    auto qa = gb.tensor("qa" + s, kv);
    gb.gemm("wkv_b1" + s, {"wkv_b1"}, act(q_nope, h * hd, hd, "heads"), weight(L + "wkv_b1", h), qa, 0, hd, kv);
    auto s1 = gb.tensor("s1" + s, T);
    gb.gemm("mul1" + s, {"mul1"}, act(qa), act_t(ckv), s1, 0, kv, T);
    auto s2 = gb.tensor("s2" + s, T);
    gb.gemm("mul2" + s, {"mul2"}, act(q_pe, h * rd, rd, "heads"), act_t(kpe), s2, 0, rd, T);
    gb.add("add" + s, Kind::kAdd, {"add"}, act(s1), act(s2), scores, h * T, T, c.seg.elementwise);
  }
  auto probs = gb.tensor("probs", H * T);
  auto& sm = gb.add("softmax", Kind::kSoftmax, {"softmax"}, act(scores), none(), probs, 0, H * T, c.seg.softmax);
  sm.spec.heads = H;
  sm.spec.causal = true;
  auto o = gb.tensor("o", H * hd);
  for (size_t h = 0; h < H; ++h) {
    const std::string s = "." + std::to_string(h);
    auto ov = gb.tensor("ov" + s, kv);
    gb.gemm("mul3" + s, {"mul3"}, act(probs, h * T, T, "heads"), act(ckv), ov, 0, T, kv);
    gb.gemm("wkv_b2" + s, {"wkv_b2"}, act(ov), weight(L + "wkv_b2", h), o, h * hd, kv, hd);
  }
  auto attn = gb.tensor("attn", c.dim);
  gb.gemm("wo", {"wo"}, act(o), weight(L + "wo"), attn, 0, H * hd, c.dim);
  return attn;
}

/// Adds one SwiGLU expert reading `in`; returns its output tensor.
inline std::string add_expert_mlp(GraphBuilder& gb, const std::string& p, const std::string& in) {
  const auto& c = gb.cfg();
  const std::string W = gb.stage() + "." + p;
  const size_t I = c.moe.inter_dim;
  auto h1 = gb.tensor(p + ".h1", I), h3 = gb.tensor(p + ".h3", I);
  gb.gemm(p + ".w1", {"w1"}, act(in), weight(W + ".w1"), h1, 0, c.dim, I);
  gb.gemm(p + ".w3", {"w3"}, act(in), weight(W + ".w3"), h3, 0, c.dim, I);
  auto a = gb.tensor(p + ".act", I);
  gb.unary(p + ".silu", Kind::kSilu, {"silu"}, act(h1), a, I);
  auto gl = gb.tensor(p + ".glu", I);
  gb.binary(p + ".glu", Kind::kMul, {"mul3"}, act(a), act(h3), gl, I);
  auto y = gb.tensor(p + ".y", c.dim);
  gb.gemm(p + ".w2", {"w2"}, act(gl), weight(W + ".w2"), y, 0, I, c.dim);
  return y;
}

/// Mixture of experts from `in`; only `active` routed experts are instantiated.
inline std::string add_moe(GraphBuilder& gb, const std::string& in, const std::vector<size_t>& active) {
  const auto& c = gb.cfg();
  const std::string L = gb.stage() + ".";
  const size_t E = c.moe.n_experts;
  auto xn = gb.tensor("xn2", c.dim);
  gb.norm("ffn_norm", {"ffn_norm"}, act(in), L + "ffn_norm", xn, c.dim);
  auto logits = gb.tensor("gate_logits", E);
  gb.gemm("gate", {"gate"}, act(xn), weight(L + "gate"), logits, 0, c.dim, E);
  auto sig = gb.tensor("gate_sig", E);
  gb.unary("sigmoid", Kind::kSigmoid, {"sigmoid"}, act(logits), sig, E);
  auto biased = gb.tensor("gate_biased", E);
  gb.binary("bias", Kind::kAdd, {"bias"}, act(sig), weight(L + "gate_bias"), biased, E);
  auto mask = gb.tensor("gate_mask", E);
  auto& sel = gb.add("select", Kind::kExpertSelector, {"top-k1", "top-k2"}, act(biased), none(), mask, 0, E,
                     E / c.moe.n_groups);
  sel.spec.grouping = c.moe.grouping();
  auto gates = gb.tensor("gates", E);
  gb.binary("mul2", Kind::kMul, {"mul2"}, act(sig), act(mask), gates, E);

  std::vector<std::string> terms;
  for (size_t j = 0; j < c.moe.n_shared; ++j) terms.push_back(add_expert_mlp(gb, shared_name(j), xn));
  for (size_t e : active) {
    VT_ENFORCE(e < E, ErrorCode::kBadConfig, "active expert index out of range");
    auto y = add_expert_mlp(gb, expert_name(e), xn);
    auto r = gb.tensor(expert_name(e) + ".routed", c.dim);
    gb.binary(expert_name(e) + ".route", Kind::kMul, {"mul1"}, act(y), act_col(gates, e, "route"), r, c.dim);
    terms.push_back(r);
  }
  VT_ENFORCE(!terms.empty(), ErrorCode::kBadConfig, "mixture of experts without any expert");
  std::string acc = terms[0];
  for (size_t k = 1; k < terms.size(); ++k) {
    auto next = gb.tensor("sum." + std::to_string(k), c.dim);
    gb.binary("sum." + std::to_string(k), Kind::kAdd, {"add"}, act(acc), act(terms[k]), next, c.dim);
    acc = next;
  }
  return acc;
}

inline std::vector<size_t> all_experts(const ModelConfig& c) {
  std::vector<size_t> v(c.moe.n_experts);
  for (size_t e = 0; e < v.size(); ++e) v[e] = e;
  return v;
}

/// The attention block on its own, reading external tensor "layer0.x".
inline ComponentGraph build_mla_graph(const ModelConfig& cfg, size_t rows = 1) {
  cfg.validate();
  ComponentGraph g;
  GraphBuilder gb(cfg, g, layer_name(0), rows);
  auto x = gb.tensor("x", cfg.dim);
  g.inputs.push_back(x);
  add_mla(gb, x);
  return g;
}

/// The expert block on its own, reading external tensor "layer0.x".
inline ComponentGraph build_moe_graph(const ModelConfig& cfg, size_t rows = 1,
                                      std::optional<std::vector<size_t>> active = std::nullopt) {
  cfg.validate();
  ComponentGraph g;
  GraphBuilder gb(cfg, g, layer_name(0), rows);
  auto x = gb.tensor("x", cfg.dim);
  g.inputs.push_back(x);
  add_moe(gb, x, active ? *active : all_experts(cfg));
  return g;
}

/// One transformer layer: attention and experts, each with a residual add.
inline std::string add_layer(GraphBuilder& gb, const std::string& in, const std::vector<size_t>& active) {
  const auto& c = gb.cfg();
  auto attn = add_mla(gb, in);
  auto mid = gb.tensor("h_mid", c.dim);
  gb.binary("attn_residual", Kind::kAdd, {"residual"}, act(in), act(attn), mid, c.dim);
  auto moe = add_moe(gb, mid, active);
  auto out = gb.tensor("h_out", c.dim);
  gb.binary("ffn_residual", Kind::kAdd, {"residual"}, act(mid), act(moe), out, c.dim);
  return out;
}

inline const std::string kEmbedStage = "embed";
inline const std::string kHeadStage = "head";

/// The whole inference for `rows` prompt tokens. `active[l]` lists the
/// routed experts layer l runs.
inline ComponentGraph build_model_graph(const ModelConfig& cfg, size_t rows,
                                        const std::vector<std::vector<size_t>>& active) {
  cfg.validate();
  VT_ENFORCE(rows >= 1 && rows <= cfg.max_seq, ErrorCode::kBadConfig, "token count outside [1, max_seq]");
  VT_ENFORCE(active.size() == cfg.n_layers, ErrorCode::kBadConfig, "active expert lists per layer");
  ComponentGraph g;
  std::string h;
  {
    GraphBuilder gb(cfg, g, kEmbedStage, rows);
    h = gb.tensor("h", cfg.dim);
    auto& e = gb.add("embedding", Kind::kEmbedding, {"embedding"}, none(), weight("embed"), h, 0, cfg.dim,
                     cfg.seg.embedding);
    e.spec.inner = cfg.vocab_size;
    e.spec.b_mode = BMode::kNone;
  }
  for (size_t l = 0; l < cfg.n_layers; ++l) {
    GraphBuilder gb(cfg, g, layer_name(l), rows);
    h = add_layer(gb, h, active[l]);
  }
  GraphBuilder gb(cfg, g, kHeadStage, rows);
  auto hn = gb.tensor("hn", cfg.dim);
  gb.norm("final_norm", {"final_norm"}, act(h), "final_norm", hn, cfg.dim);
  auto logits = gb.tensor("logits", cfg.vocab_size);
  gb.gemm("head", {"head"}, act(hn), weight("head"), logits, 0, cfg.dim, cfg.vocab_size);
  auto next = gb.tensor("next", 1);
  gb.add("argmax", Kind::kTopK, {"sampling"}, act(logits), none(), next, 0, cfg.vocab_size, cfg.vocab_size)
      .out_cols = 1;
  return g;
}

// ---------------------------------------------------------------- links

inline std::vector<LinkGroup> link_groups(const ComponentGraph& g) {
  std::vector<LinkGroup> out;
  for (const auto& t : g.tensors) {
    LinkGroup lg{t.name, {}, {}};
    std::map<std::string, size_t> cover_index;
    for (size_t i = 0; i < g.nodes.size(); ++i) {
      const auto& n = g.nodes[i];
      if (n.out == t.name) lg.producers.push_back({i, Port::kOut});
      for (auto [o, port] : {std::pair{&n.x, Port::kIn}, std::pair{&n.b, Port::kB}}) {
        if (!o->is_tensor() || o->name != t.name) continue;
        if (o->cover.empty()) {
          lg.covers.push_back({{i, port}});
          continue;
        }
        auto [it, fresh] = cover_index.try_emplace(o->cover, lg.covers.size());
        if (fresh) lg.covers.emplace_back();
        lg.covers[it->second].push_back({i, port});
      }
    }
    if (!lg.producers.empty() && !lg.covers.empty()) out.push_back(std::move(lg));
  }
  return out;
}

/// Structural checks: acyclic in node order, producers and covers tile their
/// tensors, one output, and each weight block read by exactly one component.
inline void audit_graph(const ComponentGraph& g) {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kBadConfig, "graph audit: " + what); };
  std::map<std::string, size_t> last_producer;
  for (size_t i = 0; i < g.nodes.size(); ++i) last_producer[g.nodes[i].out] = i;
  std::set<std::pair<std::string, size_t>> weights;
  std::set<std::string> labels;
  for (size_t i = 0; i < g.nodes.size(); ++i) {
    const auto& n = g.nodes[i];
    if (!labels.insert(n.path()).second) bad("duplicate component " + n.path());
    if (n.out.empty() || !g.has_tensor(n.out)) bad(n.path() + " writes no tensor");
    for (const Operand* o : {&n.x, &n.b}) {
      if (o->is_tensor()) {
        const bool external = std::find(g.inputs.begin(), g.inputs.end(), o->name) != g.inputs.end();
        auto it = last_producer.find(o->name);
        if (!external && (it == last_producer.end() || it->second >= i)) bad(n.path() + " reads " + o->name + " early");
      }
      if (o->is_weight() && o->name != "rope" && !weights.insert({o->name, o->block}).second)
        bad("weight " + o->name + " read twice");
    }
  }
  for (const auto& t : g.tensors) {
    std::vector<std::pair<size_t, size_t>> prod;
    for (const auto& n : g.nodes)
      if (n.out == t.name) prod.push_back({n.out_col0, n.out_cols});
    const bool external = std::find(g.inputs.begin(), g.inputs.end(), t.name) != g.inputs.end();
    if (prod.empty() != external) bad("tensor " + t.name + " producers");
    std::sort(prod.begin(), prod.end());
    size_t c = 0;
    for (auto [c0, w] : prod) {
      if (c0 != c) bad("tensor " + t.name + " producers overlap or leave gaps");
      c += w;
    }
    if (!external && c != t.cols) bad("tensor " + t.name + " not fully produced");
  }
  for (const auto& lg : link_groups(g)) {
    for (const auto& cover : lg.covers) {
      std::vector<std::pair<size_t, size_t>> cols;
      bool partial = false;
      for (const auto& term : cover) {
        const auto& o = term.port == Port::kIn ? g.nodes[term.node].x : g.nodes[term.node].b;
        const size_t w = o.width ? o.width : g.tensor(lg.tensor).cols;
        cols.push_back({o.col0, w});
        partial |= o.broadcast;
      }
      std::sort(cols.begin(), cols.end());
      size_t end = 0;
      for (auto [c0, w] : cols) {
        if (c0 < end || (!partial && c0 != end)) bad("cover of " + lg.tensor + " overlaps or leaves gaps");
        end = c0 + w;
      }
      if (!partial && end != g.tensor(lg.tensor).cols) bad("cover of " + lg.tensor + " incomplete");
    }
  }
  if (g.outputs().size() != 1) bad("graph must have a single output");
}

}  // namespace veritensor
