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

#include <atomic>
#include <functional>
#include <thread>

#include "veritensor/components.hpp"
#include "veritensor/graph.hpp"
#include "veritensor/model.hpp"
#include "veritensor/transcript.hpp"

namespace veritensor {

// ---------------------------------------------------------------- helpers

/// Runs fn(i) for i in [0, n) on up to `threads` workers.
inline void parallel_for(size_t n, size_t threads, const std::function<void(size_t)>& fn) {
  threads = std::max<size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (size_t w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (size_t i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline size_t default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

inline Digest token_digest(std::span<const uint32_t> tokens) {
  std::vector<int64_t> v(tokens.begin(), tokens.end());
  return hash_segment("VT-TOKENS", v);
}

inline Digest logits_digest(const QTensor& logits) { return hash_segment("VT-LOGITS", logits.data); }

/// Digest of every opened value and path in a component subtree. It is
/// fixed before the challenges exist, so it can seed them.
inline Digest witness_digest(const ProofNode& comp) {
  Sha256 h;
  h.update("VT-WITNESS");
  std::function<void(const ProofNode&)> walk = [&](const ProofNode& n) {
    h.update_u64(n.claim.openings.size());
    for (const auto& o : n.claim.openings) {
      h.update_u64(o.size());
      for (int64_t v : o) h.update_u64(static_cast<uint64_t>(v));
    }
    h.update_u64(n.claim.paths.size());
    for (const auto& p : n.claim.paths) {
      h.update_u64(p.size());
      for (const auto& d : p) h.update(d);
    }
    h.update_u64(n.children.size());
    for (const auto& c : n.children) walk(c);
  };
  walk(comp);
  return h.finish();
}

/// Points every weight-reading component at its first committed leaf.
inline void bind_weights(ComponentGraph& g, const std::vector<WeightInfo>& catalog) {
  for (auto& n : g.nodes) {
    if (!n.b.is_weight()) continue;
    const auto& w = find_weight(catalog, n.b.name);
    n.spec.weight_leaf = w.leaf_offset + n.b.block * w.leaves_per_block();
  }
}

inline uint64_t expert_bitmask(const std::vector<size_t>& active) {
  uint64_t m = 0;
  for (size_t e : active) m |= uint64_t{1} << e;
  return m;
}

inline std::vector<size_t> experts_from_bitmask(uint64_t m) {
  std::vector<size_t> out;
  for (size_t e = 0; e < 64; ++e)
    if (m >> e & 1) out.push_back(e);
  return out;
}

struct ModelProof {
  ProofHeader header;
  ProofNode root;

  std::vector<uint8_t> serialize() const { return serialize_proof(root, header); }
  static ModelProof deserialize(std::span<const uint8_t> bytes) {
    auto d = deserialize_proof(bytes);
    return {d.header, std::move(d.root)};
  }
};

inline ProofHeader header_for(const ModelConfig& c) {
  return {kGoldilocks, static_cast<uint32_t>(c.quant.q), static_cast<uint32_t>(c.quant.l)};
}

// ---------------------------------------------------------------- graph execution

using TensorMap = std::map<std::string, QTensor>;

namespace detail {

inline QTensor read_operand(const Operand& o, const TensorMap& tm) {
  const QTensor& t = tm.at(o.name);
  if (o.transposed) return t.transposed();
  if (o.width && !(o.col0 == 0 && o.width == t.cols)) return t.col_slice(o.col0, o.width);
  return t;
}

inline QTensor weight_operand(const Operand& o, WeightStore& ws, const std::vector<WeightInfo>& catalog) {
  const auto& info = find_weight(catalog, o.name);
  const QTensor& w = ws.get(o.name);
  return info.blocks > 1 ? block(w, info.blocks, o.block) : w;
}

}  // namespace detail

/// Runs one component on its operands, writes its output tensor and returns
/// the unfinalized proof subtree.
inline ProofNode execute_node(const GraphNode& n, const ComponentGraph& g, TensorMap& tm, WeightStore& ws,
                              const std::vector<WeightInfo>& catalog, const MerkleTree& tree,
                              std::span<const uint32_t> tokens) {
  const auto& sp = n.spec;
  const auto& cfg = ws.cfg().quant;
  const int q = cfg.q;
  using namespace detail;
  QTensor x = n.x.is_tensor() ? read_operand(n.x, tm) : QTensor{};
  QTensor y;
  ProofNode proof;
  switch (sp.kind) {
    case Kind::kEmbedding: {
      y = embed_tokens(tokens, ws.get(n.b.name));
      proof = build_embedding(sp, tokens, y, tree);
      break;
    }
    case Kind::kRmsNorm: {
      const QTensor& w = ws.get(n.b.name);
      std::vector<RmsResult> rows;
      y = QTensor(x.rows, x.cols);
      for (size_t i = 0; i < x.rows; ++i) {
        rows.push_back(rmsnorm(x.row(i), w.row(0), q));
        std::copy(rows.back().y.begin(), rows.back().y.end(), y.row(i).begin());
      }
      proof = build_rmsnorm(sp, x, w.row(0), rows, tree);
      break;
    }
    case Kind::kGemm: {
      const bool weighted = n.b.is_weight();
      QTensor w = weighted ? weight_operand(n.b, ws, catalog) : read_operand(n.b, tm);
      auto raw = gemm(x, w);
      auto r = rescale(raw, q);
      proof = build_gemm(sp, x, w, raw, r, weighted ? &tree : nullptr);
      y = std::move(r.y);
      break;
    }
    case Kind::kRope: {
      const QTensor& table = ws.get(n.b.name);
      y = QTensor(x.rows, x.cols);
      QTensor rem(x.rows, x.cols);
      const size_t hw = sp.head_width();
      for (size_t i = 0; i < x.rows; ++i)
        for (size_t h = 0; h < sp.heads; ++h) {
          auto r = rope_rotate(x.row(i).subspan(h * hw, hw), table.row(sp.positions[i]), q);
          std::copy(r.y.begin(), r.y.end(), y.row(i).begin() + static_cast<std::ptrdiff_t>(h * hw));
          std::copy(r.rem.begin(), r.rem.end(), rem.row(i).begin() + static_cast<std::ptrdiff_t>(h * hw));
        }
      proof = build_rope(sp, x, table, y, rem, tree);
      break;
    }
    case Kind::kSoftmax: {
      const auto& table = build_exp2_frac_table(cfg, Exp2Direction::kNeg);
      const size_t hw = sp.head_width();
      std::vector<SoftmaxResult> blocks;
      y = QTensor(x.rows, x.cols);
      for (size_t i = 0; i < x.rows; ++i)
        for (size_t h = 0; h < sp.heads; ++h) {
          blocks.push_back(softmax_row(softmax_effective(sp, cfg, i, x.row(i).subspan(h * hw, hw)), cfg, table));
          std::copy(blocks.back().p.begin(), blocks.back().p.end(),
                    y.row(i).begin() + static_cast<std::ptrdiff_t>(h * hw));
        }
      proof = build_softmax(sp, x, blocks);
      break;
    }
    case Kind::kSigmoid:
    case Kind::kSilu: {
      const auto& table = build_exp2_frac_table(cfg, Exp2Direction::kPos);
      std::vector<SiluResult> lanes;
      y = QTensor(x.rows, x.cols);
      for (size_t k = 0; k < x.size(); ++k) {
        lanes.push_back(silu(x.data[k], cfg, table));
        y.data[k] = sp.kind == Kind::kSilu ? lanes.back().y : lanes.back().sig.s;
      }
      proof = build_sigmoid_silu(sp, x, lanes);
      break;
    }
    case Kind::kAdd:
    case Kind::kMul: {
      QTensor b, full;
      const MerkleTree* t = nullptr;
      if (n.b.is_weight()) {
        b = ws.get(n.b.name);
        full = broadcast_row(b, x.rows);
        t = &tree;
      } else if (n.b.broadcast) {
        b = read_operand(n.b, tm);
        full = broadcast_col(b, 0, x.cols);
      } else {
        b = read_operand(n.b, tm);
        full = b;
      }
      std::vector<int64_t> rem;
      if (sp.kind == Kind::kAdd) {
        y = elementwise_add(x, full);
      } else {
        auto r = elementwise_mul(x, full, q);
        y = std::move(r.y);
        rem = std::move(r.rem);
      }
      proof = build_elementwise(sp, x, b, y, rem, t);
      break;
    }
    case Kind::kExpertSelector: {
      proof = build_expert_selector(sp, x, cfg);
      y = expert_mask(x, sp.grouping, cfg);
      break;
    }
    case Kind::kTopK: {
      proof = build_argmax(sp, x);
      y = QTensor(x.rows, 1);
      for (size_t i = 0; i < x.rows; ++i) y.at(i, 0) = argmax_row(x.row(i));
      break;
    }
    default:
      throw Error(ErrorCode::kBadConfig, "cannot execute component " + sp.label);
  }
  auto [it, fresh] = tm.try_emplace(n.out);
  if (fresh) {
    const auto& info = g.tensor(n.out);
    it->second = QTensor(info.rows, info.cols);
  }
  it->second.set_col_slice(n.out_col0, y);
  return proof;
}

// ---------------------------------------------------------------- proving

struct ProveConfig {
  size_t threads = 1;
  bool check = true;  // false skips prover-side constraint checks (tamper tests)
  /// Called before each component runs; tests use it to corrupt a witness.
  std::function<void(size_t, const GraphNode&, TensorMap&)> before_node;
};

struct ProveResult {
  ModelProof proof;
  QTensor logits;
  Digest logits_digest{};
  uint32_t next_token = 0;
  size_t peak_weight_bytes = 0;
  size_t stage_bound_bytes = 0;  // largest stage plus its routed experts
  TensorMap tensors;
};

/// Bytes of every weight a stage reads.
inline size_t stage_weight_bytes(const ComponentGraph& g, const std::string& stage,
                                 const std::vector<WeightInfo>& catalog) {
  std::set<std::string> names{"rope"};
  for (size_t i : g.stage_nodes(stage))
    if (g.nodes[i].b.is_weight()) names.insert(g.nodes[i].b.name);
  size_t bytes = 0;
  for (const auto& n : names) {
    const auto& w = find_weight(catalog, n);
    bytes += w.rows * w.cols * sizeof(int64_t);
  }
  return bytes;
}

/// Runs the committed model on `tokens` and proves every component.
inline ProveResult prove_inference(WeightStore& ws, const Commitment& cm, std::span<const uint32_t> tokens,
                                   const ProveConfig& pc = {}) {
  const auto& cfg = ws.cfg();
  VT_ENFORCE(!tokens.empty(), ErrorCode::kEmptyInput, "token list is empty");
  VT_ENFORCE(cm.cfg == cfg, ErrorCode::kCommitmentMismatch, "commitment was made for a different configuration");
  for (uint32_t t : tokens)
    VT_ENFORCE(t < cfg.vocab_size, ErrorCode::kTokenOutOfRange, "token " + std::to_string(t) + " outside vocabulary");

  // Routing decides which experts the graph contains.
  ModelState state(cfg);
  auto fwd = run_model(state, ws, tokens);

  ComponentGraph g = build_model_graph(cfg, tokens.size(), fwd.active);
  audit_graph(g);
  bind_weights(g, cm.catalog);
  const MerkleTree tree(cm.leaves);

  ProveResult res;
  std::vector<ProofNode> comps;
  comps.reserve(g.nodes.size());
  std::string stage;
  for (size_t i = 0; i < g.nodes.size(); ++i) {
    const auto& n = g.nodes[i];
    if (pc.before_node) pc.before_node(i, n, res.tensors);
    if (n.stage != stage) {
      ws.keep_only({"rope"});
      res.stage_bound_bytes = std::max(res.stage_bound_bytes, stage_weight_bytes(g, n.stage, cm.catalog));
      stage = n.stage;
    }
    comps.push_back(execute_node(n, g, res.tensors, ws, cm.catalog, tree, tokens));
  }
  ws.release_all();
  res.peak_weight_bytes = ws.peak_bytes();
  res.logits = res.tensors.at(kHeadStage + ".logits");
  VT_ENFORCE(!pc.check || res.logits.data == fwd.logits.data, ErrorCode::kConstraintViolation,
             "graph execution disagrees with the reference forward pass");

  std::vector<Digest> wd(comps.size());
  parallel_for(comps.size(), pc.threads, [&](size_t i) { wd[i] = witness_digest(comps[i]); });
  const Digest witness_root = MerkleTree(wd).root();
  const Digest input = token_digest(tokens);
  ProvingSession session(cm.root, input);
  session.bind_witness(witness_root);
  const auto ch = session.challenges();

  EvalContext ctx;
  ctx.z = ch.z;
  ctx.t = ch.t;
  ctx.cfg = cfg.quant;
  ctx.weight_root = cm.root;
  ctx.weight_leaf_count = cm.leaves.size();
  parallel_for(comps.size(), pc.threads, [&](size_t i) {
    const auto& n = g.nodes[i];
    try {
      finalize_component(comps[i], n.spec, ctx, {pc.check}, n.path());
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kWeightDigestMismatch || e.code() == ErrorCode::kVocabDigestMismatch ||
          e.code() == ErrorCode::kRopeTableDigestMismatch)
        throw Error(ErrorCode::kCommitmentMismatch, e.what());
      throw;
    }
  });

  res.logits_digest = logits_digest(res.logits);
  res.next_token = argmax_row(res.logits.row(res.logits.rows - 1));
  ProofNode model{Level::kModel, Kind::kModel, "model", {}, {}};
  size_t k = 0;
  for (size_t s = 0; s < g.stages.size(); ++s) {
    ProofNode layer{Level::kLayer, Kind::kLayer, g.stages[s], {}, {}};
    const size_t count = g.stage_nodes(g.stages[s]).size();
    for (size_t i = 0; i < count; ++i) layer.children.push_back(std::move(comps[k++]));
    layer.claim.zmul_in = layer.children.front().claim.zmul_in;
    layer.claim.zmul_out = layer.children.back().claim.zmul_out;
    if (s >= 1 && s <= cfg.n_layers) layer.claim.aux["active"] = FieldElement{expert_bitmask(fwd.active[s - 1])};
    model.children.push_back(std::move(layer));
  }
  model.claim.zmul_out = model.children.back().claim.zmul_out;
  model.claim.aux["z"] = ch.z;
  model.claim.aux["t"] = ch.t;
  model.claim.aux["next_token"] = FieldElement{res.next_token};
  model.claim.digests = {cm.root, input, witness_root, res.logits_digest};
  res.proof = {header_for(cfg), std::move(model)};
  return res;
}

// ---------------------------------------------------------------- verification

enum class VerifyMode : uint8_t { kReplay, kSpotCheck };

struct VerifyConfig {
  VerifyMode mode = VerifyMode::kReplay;
  double spot_fraction = 0.1;
  uint64_t seed = 0;
  size_t threads = 1;
  std::optional<Digest> expected_logits;
  std::optional<uint32_t> expected_next;
};

namespace detail {

inline FieldElement port_value(const Claim& c, Port p) {
  switch (p) {
    case Port::kIn:
      return c.zmul_in;
    case Port::kB:
      return c.get("zmul_b");
    case Port::kOut:
      return c.zmul_out;
  }
  return {};
}

}  // namespace detail

/// Public outputs recorded in a proof.
struct PublicOutputs {
  uint32_t next_token = 0;
  Digest logits_digest{};
};

inline PublicOutputs public_outputs(const ModelProof& p) {
  const auto& c = p.root.claim;
  VT_ENFORCE(c.digests.size() == 4, ErrorCode::kDecode, "model node lacks public digests");
  return {static_cast<uint32_t>(c.get("next_token").value), c.digests[3]};
}

/// Checks a model proof against a commitment and the public prompt.
inline Verdict verify_inference(const ModelProof& proof, const Commitment& cm, std::span<const uint32_t> tokens,
                                const VerifyConfig& vc = {}) {
  const auto& cfg = cm.cfg;
  const ProofNode& root = proof.root;
  if (!(proof.header == header_for(cfg))) return Verdict::reject("header", "proof parameters differ from commitment");
  if (tokens.empty()) return Verdict::reject("model", "empty prompt");
  if (root.level != Level::kModel || root.kind != Kind::kModel || root.label != "model")
    return Verdict::reject("model", "node kind");
  if (root.children.size() != cfg.n_layers + 2) return Verdict::reject("model", "stage count");
  if (root.claim.digests.size() != 4) return Verdict::reject("model", "public digests");

  // Routing sets, then the graph they imply.
  std::vector<std::vector<size_t>> active;
  for (size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& layer = root.children[l + 1];
    const uint64_t m = layer.claim.get("active").value;
    if (m >> cfg.moe.n_experts != 0) return Verdict::reject("model/" + layer.label, "active experts");
    active.push_back(experts_from_bitmask(m));
  }
  if (tokens.size() > cfg.max_seq) return Verdict::reject("model", "prompt longer than max_seq");
  ComponentGraph g;
  try {
    g = build_model_graph(cfg, tokens.size(), active);
    audit_graph(g);
  } catch (const Error& e) {
    return Verdict::reject("model", std::string("graph (") + e.what() + ")");
  }
  bind_weights(g, cm.catalog);

  std::vector<const ProofNode*> comps;
  for (size_t s = 0; s < g.stages.size(); ++s) {
    const auto& layer = root.children[s];
    const std::string lp = "model/" + g.stages[s];
    if (layer.level != Level::kLayer || layer.kind != Kind::kLayer || layer.label != g.stages[s])
      return Verdict::reject(lp, "node kind");
    const auto idx = g.stage_nodes(g.stages[s]);
    if (layer.children.size() != idx.size()) return Verdict::reject(lp, "component set");
    for (size_t k = 0; k < idx.size(); ++k) {
      if (layer.children[k].label != g.nodes[idx[k]].spec.label) return Verdict::reject(lp, "component set");
      comps.push_back(&layer.children[k]);
    }
  }

  // The proof must be bound to this commitment and prompt.
  const Digest input = token_digest(tokens);
  if (root.claim.digests[0] != cm.root) return Verdict::reject("model", "commitment root");
  if (root.claim.digests[1] != input) return Verdict::reject("model", "public input");

  // Fiat-Shamir: the challenges must follow from the commitment, the prompt
  // and the witness. A witness that no longer matches its recorded root is
  // located by the component checks below, which run at the recorded
  // challenges; re-derivation is enforced before accepting.
  std::vector<Digest> wd(comps.size());
  parallel_for(comps.size(), vc.threads, [&](size_t i) { wd[i] = witness_digest(*comps[i]); });
  const Digest witness_root = MerkleTree(wd).root();
  const auto ch = derive_session_challenges(cm.root, input, witness_root);
  const FieldElement z = root.claim.get("z"), t = root.claim.get("t");
  const bool rederived = z == ch.z && t == ch.t;
  if (root.claim.digests[2] == witness_root && !rederived) return Verdict::reject("model", "challenge re-derivation");

  EvalContext ctx;
  ctx.z = z;
  ctx.t = t;
  ctx.cfg = cfg.quant;
  ctx.weight_root = cm.root;
  ctx.weight_leaf_count = cm.leaves.size();
  VerifyOptions vo{vc.mode == VerifyMode::kReplay ? 1.0 : vc.spot_fraction, vc.seed};
  // Components after the earliest failure so far are skipped; every earlier
  // one still runs, so the reported failure is the first in node order.
  std::vector<Verdict> verdicts(comps.size());
  std::atomic<size_t> first_failure{comps.size()};
  parallel_for(comps.size(), vc.threads, [&](size_t i) {
    if (i > first_failure.load()) return;
    verdicts[i] = verify_component(*comps[i], g.nodes[i].spec, ctx, vo, g.nodes[i].path());
    if (verdicts[i].accepted) return;
    size_t cur = first_failure.load();
    while (i < cur && !first_failure.compare_exchange_weak(cur, i)) {
    }
  });
  if (first_failure < comps.size()) return verdicts[first_failure];

  // Every tensor handed between components must agree on both sides.
  for (const auto& lg : link_groups(g)) {
    FieldElement produced{0};
    for (const auto& t : lg.producers) produced += detail::port_value(comps[t.node]->claim, t.port);
    for (const auto& cover : lg.covers) {
      FieldElement read{0};
      for (const auto& t : cover) read += detail::port_value(comps[t.node]->claim, t.port);
      if (read != produced) return Verdict::reject(g.nodes[cover.front().node].path(), "link " + lg.tensor);
    }
  }

  // Stage and model claims.
  for (size_t s = 0; s < g.stages.size(); ++s) {
    const auto& layer = root.children[s];
    Claim expect;
    expect.zmul_in = layer.children.front().claim.zmul_in;
    expect.zmul_out = layer.children.back().claim.zmul_out;
    if (s >= 1 && s <= cfg.n_layers) expect.aux["active"] = FieldElement{expert_bitmask(active[s - 1])};
    if (!(layer.claim == expect)) return Verdict::reject("model/" + g.stages[s], "stage claim");
  }

  if (root.claim.digests[2] != witness_root) return Verdict::reject("model", "witness root");
  if (!rederived) return Verdict::reject("model", "challenge re-derivation");

  // Public input and output.
  const auto& embed = *comps.front();
  for (size_t i = 0; i < tokens.size(); ++i)
    if (embed.children[i].claim.openings[0][0] != static_cast<int64_t>(tokens[i]))
      return Verdict::reject(g.nodes.front().path(), "public input token");
  const size_t head_idx = comps.size() - 2;
  const auto& head = *comps[head_idx];
  std::vector<int64_t> logits;
  for (size_t i = 0; i < tokens.size(); ++i) {
    const auto& y = head.claim.openings[3 * i + 1];
    logits.insert(logits.end(), y.begin(), y.end());
  }
  const Digest ld = hash_segment("VT-LOGITS", logits);
  const auto& argmax = *comps.back();
  const FieldElement next = argmax.children.back().claim.get("argmax");
  Claim expect;
  expect.zmul_out = root.children.back().claim.zmul_out;
  expect.aux["z"] = ch.z;
  expect.aux["t"] = ch.t;
  expect.aux["next_token"] = next;
  expect.digests = {cm.root, input, witness_root, ld};
  if (!(root.claim == expect)) return Verdict::reject("model", "public output");
  if (vc.expected_logits && *vc.expected_logits != ld) return Verdict::reject("model", "expected logits");
  if (vc.expected_next && FieldElement{*vc.expected_next} != next) return Verdict::reject("model", "expected next token");
  return Verdict::ok();
}

}  // namespace veritensor
