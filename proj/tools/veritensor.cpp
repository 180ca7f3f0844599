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

// Command-line front end: init, commit, prove, verify, shape and selftest.
//
// Exit codes: 0 success or accept, 1 proof rejected, 2 usage or malformed
// input, 3 shape mismatch, 4 I/O failure.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "veritensor/session.hpp"
#include "veritensor/shape.hpp"

namespace vt = veritensor;
namespace fs = std::filesystem;

namespace {

enum Exit : int { kOk = 0, kReject = 1, kUsage = 2, kShape = 3, kIo = 4 };

/// Maps a library error to the documented exit code.
int exit_code(const vt::Error& e) {
  switch (e.code()) {
    case vt::ErrorCode::kShapeMismatch:
      return kShape;
    case vt::ErrorCode::kIo:
      return kIo;
    case vt::ErrorCode::kCommitmentMismatch:
    case vt::ErrorCode::kWeightDigestMismatch:
    case vt::ErrorCode::kVocabDigestMismatch:
    case vt::ErrorCode::kRopeTableDigestMismatch:
      return kReject;
    default:
      return kUsage;
  }
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("veritensor");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("VERITENSOR_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
}

/// Parses "1,2,3" or "1 2 3"; a leading '@' names a file holding the list.
std::vector<uint32_t> parse_tokens(const std::string& arg) {
  std::string text = arg;
  if (!arg.empty() && arg[0] == '@') {
    auto b = vt::read_bytes(arg.substr(1));
    text.assign(b.begin(), b.end());
  }
  for (char& c : text)
    if (c == ',' || c == '\n' || c == '\t' || c == '\r') c = ' ';
  std::istringstream in(text);
  std::vector<uint32_t> out;
  std::string tok;
  while (in >> tok) {
    size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    VT_ENFORCE(used == tok.size() && tok[0] != '-' && v <= UINT32_MAX, vt::ErrorCode::kBadConfig,
               "token '" + tok + "' is not a non-negative integer");
    out.push_back(static_cast<uint32_t>(v));
  }
  VT_ENFORCE(!out.empty(), vt::ErrorCode::kEmptyInput, "token list is empty");
  return out;
}

struct Options {
  fs::path model, proof, commitment, config;
  std::string tokens, logits, mode = "replay", component;
  std::optional<uint32_t> next;
  std::optional<int> q, l;
  double spot = 0.1;
  uint64_t seed = 0;
  size_t threads = vt::default_threads();
  vt::ShapeQuery shape;
};

/// Optional --q/--l must agree with the configuration they are checked against.
void check_quant(const Options& o, const vt::ModelConfig& c) {
  VT_ENFORCE(!o.q || *o.q == c.quant.q, vt::ErrorCode::kBadConfig, "--q differs from the model configuration");
  VT_ENFORCE(!o.l || *o.l == c.quant.l, vt::ErrorCode::kBadConfig, "--l differs from the model configuration");
}

fs::path commitment_path(const Options& o) {
  if (!o.commitment.empty()) return o.commitment;
  VT_ENFORCE(!o.model.empty(), vt::ErrorCode::kBadConfig, "--commitment or --model is required");
  return o.model / vt::kCommitmentName;
}

int cmd_init(const Options& o) {
  vt::ModelConfig c;
  if (!o.config.empty()) c = vt::config_from_json(vt::read_json(o.config));
  if (o.q) c.quant.q = *o.q;
  if (o.l) c.quant.l = *o.l;
  vt::generate_model(o.model, c, o.seed);
  std::cout << "model written to " << o.model.string() << "\n";
  return kOk;
}

int cmd_commit(const Options& o) {
  vt::WeightStore ws(o.model);
  check_quant(o, ws.cfg());
  spdlog::info("hashing {} tensors", ws.manifest().tensors.size());
  const auto cm = vt::commit_model(ws);
  const fs::path out = o.commitment.empty() ? o.model / vt::kCommitmentName : o.commitment;
  vt::write_text(out, vt::commitment_to_json(cm).dump() + "\n");
  std::cout << cm.root.hex() << "\n";
  return kOk;
}

int cmd_prove(const Options& o) {
  const auto tokens = parse_tokens(o.tokens);
  vt::WeightStore ws(o.model);
  check_quant(o, ws.cfg());
  const auto cm = vt::load_commitment(commitment_path(o));
  spdlog::info("proving {} tokens on {} threads", tokens.size(), o.threads);
  auto r = vt::prove_inference(ws, cm, tokens, {o.threads, true, {}});
  const auto bytes = r.proof.serialize();
  vt::write_bytes(o.proof, bytes);
  spdlog::info("proof {} bytes, peak weights {} bytes", bytes.size(), r.peak_weight_bytes);
  std::cout << "logits " << r.logits_digest.hex() << "\n";
  std::cout << "next " << r.next_token << "\n";
  return kOk;
}

int cmd_verify(const Options& o) {
  const auto tokens = parse_tokens(o.tokens);
  const auto cm = vt::load_commitment(commitment_path(o));
  check_quant(o, cm.cfg);
  VT_ENFORCE(o.mode == "replay" || o.mode == "spot", vt::ErrorCode::kBadConfig, "--mode must be replay or spot");
  VT_ENFORCE(o.spot > 0.0 && o.spot <= 1.0, vt::ErrorCode::kBadConfig, "--spot must lie in (0, 1]");
  vt::VerifyConfig vc;
  vc.mode = o.mode == "spot" ? vt::VerifyMode::kSpotCheck : vt::VerifyMode::kReplay;
  vc.spot_fraction = o.spot;
  vc.seed = o.seed;
  vc.threads = o.threads;
  if (!o.logits.empty()) vc.expected_logits = vt::Digest::from_hex(o.logits);
  vc.expected_next = o.next;
  const auto bytes = vt::read_bytes(o.proof);
  vt::ModelProof proof;
  try {
    proof = vt::ModelProof::deserialize(bytes);
  } catch (const vt::Error& e) {
    if (e.code() != vt::ErrorCode::kDecode) throw;
    std::cout << "REJECT proof: " << e.what() << "\n";
    return kReject;
  }
  const auto v = vt::verify_inference(proof, cm, tokens, vc);
  if (!v.accepted) {
    std::cout << "REJECT " << v.node_path << ": " << v.constraint << "\n";
    return kReject;
  }
  const auto out = vt::public_outputs(proof);
  std::cout << "ACCEPT\nlogits " << out.logits_digest.hex() << "\nnext " << out.next_token << "\n";
  return kOk;
}

int cmd_shape(const Options& o) {
  for (const auto& [level, n] : vt::dag_shape(o.shape)) std::cout << vt::level_name(level) << " " << n << "\n";
  return kOk;
}

// ---------------------------------------------------------------- selftest

struct SelfTest {
  int failures = 0;
  void check(bool ok, const std::string& name) {
    std::cout << (ok ? "ok   " : "FAIL ") << name << "\n";
    failures += !ok;
  }
};

void selftest_shapes(SelfTest& st) {
  using L = vt::Level;
  auto count = [](vt::ShapeQuery q, L l) { return vt::shape_count(vt::dag_shape(q), l); };
  vt::ShapeQuery rope{"rope", 24};
  rope.head_dim = 64;
  rope.heads = 128;
  vt::ShapeQuery sel{"expert_selector", 24, 256};
  sel.groups = 8;
  vt::ShapeQuery gm{"gemm", 24, 512, 112};
  gm.inner = 7168;
  st.check(count({"embedding", 24, 7168, 224}, L::kSegment) == 768 && count(rope, L::kHead) == 3072 &&
               count({"softmax", 24, 0, 32, 24, 128}, L::kHead) == 3072 &&
               count({"sigmoid", 24, 256, 16}, L::kSegment) == 384 && count(sel, L::kGroup) == 192 &&
               count(gm, L::kXProof) == 64 && count(gm, L::kWProof) == 64,
           "published component shapes");
}

void selftest_session(SelfTest& st, size_t threads) {
  const fs::path dir = fs::temp_directory_path() / ("veritensor_selftest_" + std::to_string(std::random_device{}()));
  vt::ModelConfig c;
  c.dim = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.head_dim = 4;
  c.rope_dim = 4;
  c.q_lora_rank = 8;
  c.kv_lora_rank = 8;
  c.vocab_size = 32;
  c.max_seq = 8;
  c.moe = {4, 1, 2, 1, 1, 2, 8};
  c.seg = {4, 4, 4, 2, 4, 4};
  try {
    vt::generate_model(dir, c, 1);
    vt::WeightStore ws(dir);
    const auto cm = vt::commit_model(ws);
    const std::vector<uint32_t> tokens{3, 1, 4, 1, 5};
    auto a = vt::prove_inference(ws, cm, tokens, {threads, true, {}});
    auto b = vt::prove_inference(ws, cm, tokens, {1, true, {}});
    const auto bytes = a.proof.serialize();
    st.check(bytes == b.proof.serialize(), "proof bytes independent of thread count");
    auto proof = vt::ModelProof::deserialize(bytes);
    vt::VerifyConfig vc;
    vc.threads = threads;
    st.check(vt::verify_inference(proof, cm, tokens, vc).accepted, "honest proof accepted");
    vc.mode = vt::VerifyMode::kSpotCheck;
    st.check(vt::verify_inference(proof, cm, tokens, vc).accepted, "honest proof accepted by spot check");
    vc.mode = vt::VerifyMode::kReplay;
    std::mt19937_64 rng(5);
    bool all_rejected = true;
    for (int trial = 0; trial < 20; ++trial) {
      auto t = proof;
      vt::ProofNode* n = &t.root;
      while (!n->children.empty()) n = &n->children[rng() % n->children.size()];
      if (n->claim.openings.empty() || n->claim.openings[0].empty()) continue;
      auto& o = n->claim.openings[rng() % n->claim.openings.size()];
      if (o.empty()) continue;
      o[rng() % o.size()] += 1;
      const auto v = vt::verify_inference(t, cm, tokens, vc);
      all_rejected = all_rejected && !v.accepted && !v.node_path.empty();
    }
    st.check(all_rejected, "tampered openings rejected with a location");
    auto other = tokens;
    other[0] = 4;
    st.check(!vt::verify_inference(proof, cm, other, vc).accepted, "proof bound to its prompt");
  } catch (const std::exception& e) {
    st.check(false, std::string("session: ") + e.what());
  }
  std::error_code ec;
  fs::remove_all(dir, ec);
}

int cmd_selftest(const Options& o) {
  SelfTest st;
  selftest_shapes(st);
  selftest_session(st, o.threads);
  return st.failures == 0 ? kOk : kReject;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"VeriTensor: commit, prove and verify quantized transformer inference"};
  app.require_subcommand(1, 1);
  Options o;

  auto add_quant = [&](CLI::App* c) {
    c->add_option("--q", o.q, "fixed-point fraction bits")->check(CLI::Range(1, 30));
    c->add_option("--l", o.l, "exp2 table resolution bits")->check(CLI::Range(1, 20));
  };
  auto add_threads = [&](CLI::App* c) {
    c->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
  };

  auto* init = app.add_subcommand("init", "generate a random model directory");
  init->add_option("--model", o.model, "output directory")->required();
  init->add_option("--config", o.config, "model configuration JSON (default: toy)");
  init->add_option("--seed", o.seed, "weight generator seed");
  add_quant(init);

  auto* commit = app.add_subcommand("commit", "hash a model and write its commitment");
  commit->add_option("--model", o.model, "model directory")->required();
  commit->add_option("--commitment", o.commitment, "output file (default: MODEL/commitment.json)");
  add_quant(commit);

  auto* prove = app.add_subcommand("prove", "run inference and write a proof");
  prove->add_option("--model", o.model, "model directory")->required();
  prove->add_option("--tokens", o.tokens, "token ids \"1,2,3\" or @file")->required();
  prove->add_option("--proof", o.proof, "output proof file")->required();
  prove->add_option("--commitment", o.commitment, "commitment file (default: MODEL/commitment.json)");
  add_quant(prove);
  add_threads(prove);

  auto* verify = app.add_subcommand("verify", "check a proof against a commitment");
  verify->add_option("--commitment", o.commitment, "commitment file");
  verify->add_option("--model", o.model, "model directory holding commitment.json");
  verify->add_option("--proof", o.proof, "proof file")->required();
  verify->add_option("--tokens", o.tokens, "token ids \"1,2,3\" or @file")->required();
  verify->add_option("--logits", o.logits, "expected logits digest (hex)");
  verify->add_option("--next", o.next, "expected next token");
  verify->add_option("--mode", o.mode, "replay or spot")->check(CLI::IsMember({"replay", "spot"}));
  verify->add_option("--spot", o.spot, "fraction of leaves checked in spot mode");
  verify->add_option("--seed", o.seed, "spot-check sampling seed");
  add_quant(verify);
  add_threads(verify);

  auto* shape = app.add_subcommand("shape", "print proof tree node counts for one component");
  shape->add_option("component", o.shape.component,
                    "embedding, rmsnorm, rope, softmax, sigmoid, silu, add, mul, expert_selector or gemm")
      ->required();
  shape->add_option("--rows,--a", o.shape.rows, "rows (tokens)");
  shape->add_option("--dim,--b", o.shape.dim, "row width (output columns for gemm)");
  shape->add_option("--n,--inner", o.shape.inner, "gemm inner dimension");
  shape->add_option("--segment,-s", o.shape.segment, "segment width");
  shape->add_option("--head-dim", o.shape.head_dim, "per-head width");
  shape->add_option("--heads", o.shape.heads, "head count");
  shape->add_option("--groups", o.shape.groups, "expert groups");

  auto* self = app.add_subcommand("selftest", "run a quick invariant suite");
  add_threads(self);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*init) return cmd_init(o);
    if (*commit) return cmd_commit(o);
    if (*prove) return cmd_prove(o);
    if (*verify) return cmd_verify(o);
    if (*shape) return cmd_shape(o);
    return cmd_selftest(o);
  } catch (const vt::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  }
}
