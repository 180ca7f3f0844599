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
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "veritensor/commit.hpp"
#include "veritensor/components/topk.hpp"
#include "veritensor/graph.hpp"
#include "veritensor/kernels.hpp"

namespace veritensor {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- files

inline constexpr std::string_view kManifestName = "manifest.json";
inline constexpr std::string_view kCommitmentName = "commitment.json";

inline nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  VT_ENFORCE(in.good(), ErrorCode::kIo, "cannot open " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadConfig, p.string() + ": " + e.what());
  }
}

inline void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  VT_ENFORCE(out.good(), ErrorCode::kIo, "cannot write " + p.string());
  out << s;
  VT_ENFORCE(out.good(), ErrorCode::kIo, "write failed: " + p.string());
}

inline std::vector<uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  VT_ENFORCE(in.good(), ErrorCode::kIo, "cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const fs::path& p, std::span<const uint8_t> b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  VT_ENFORCE(out.good(), ErrorCode::kIo, "cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  VT_ENFORCE(out.good(), ErrorCode::kIo, "write failed: " + p.string());
}

/// Raw little-endian int64 tensor file; a size mismatch is a ShapeMismatch.
inline QTensor read_tensor_file(const fs::path& p, size_t rows, size_t cols) {
  auto b = read_bytes(p);
  VT_ENFORCE(b.size() == rows * cols * 8, ErrorCode::kShapeMismatch,
             p.filename().string() + ": expected " + std::to_string(rows * cols * 8) + " bytes, found " +
                 std::to_string(b.size()));
  QTensor t(rows, cols);
  for (size_t i = 0; i < t.size(); ++i) {
    uint64_t v = 0;
    for (int k = 7; k >= 0; --k) v = (v << 8) | b[i * 8 + static_cast<size_t>(k)];
    t.data[i] = static_cast<int64_t>(v);
  }
  return t;
}

inline void write_tensor_file(const fs::path& p, const QTensor& t) {
  std::vector<uint8_t> b(t.size() * 8);
  for (size_t i = 0; i < t.size(); ++i) {
    const auto v = static_cast<uint64_t>(t.data[i]);
    for (size_t k = 0; k < 8; ++k) b[i * 8 + k] = static_cast<uint8_t>(v >> (8 * k));
  }
  write_bytes(p, b);
}

// ---------------------------------------------------------------- manifest

struct TensorEntry {
  std::string name;
  size_t rows = 0;
  size_t cols = 0;
  std::string file;
};

struct Manifest {
  ModelConfig cfg;
  std::vector<TensorEntry> tensors;

  const TensorEntry& entry(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw Error(ErrorCode::kBadConfig, "manifest has no tensor " + name);
  }
};

inline nlohmann::json manifest_to_json(const Manifest& m) {
  nlohmann::json ts = nlohmann::json::array();
  for (const auto& t : m.tensors) ts.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}, {"file", t.file}});
  return {{"format", "veritensor-model"}, {"version", 1}, {"config", config_to_json(m.cfg)}, {"tensors", ts}};
}

/// Parses a manifest and checks its tensor index against the configuration.
/// Structural problems are BadConfig; disagreeing shapes are ShapeMismatch.
inline Manifest load_manifest(const fs::path& dir) {
  const auto j = read_json(dir / kManifestName);
  Manifest m;
  try {
    VT_ENFORCE(j.at("format") == "veritensor-model" && j.at("version") == 1, ErrorCode::kBadConfig,
               "unsupported manifest format");
    m.cfg = config_from_json(j.at("config"));
    for (const auto& t : j.at("tensors")) {
      const auto& shape = t.at("shape");
      VT_ENFORCE(shape.is_array() && shape.size() == 2, ErrorCode::kBadConfig, "tensor shape must be [rows, cols]");
      m.tensors.push_back({t.at("name"), shape[0], shape[1], t.at("file")});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadConfig, std::string("manifest: ") + e.what());
  }
  const auto cat = weight_catalog(m.cfg);
  VT_ENFORCE(cat.size() == m.tensors.size(), ErrorCode::kBadConfig, "manifest tensor count does not match config");
  for (size_t i = 0; i < cat.size(); ++i) {
    const auto& t = m.tensors[i];
    VT_ENFORCE(t.name == cat[i].name, ErrorCode::kBadConfig, "manifest tensor " + std::to_string(i) + " should be " + cat[i].name);
    VT_ENFORCE(t.rows == cat[i].rows && t.cols == cat[i].cols, ErrorCode::kShapeMismatch,
               "manifest shape of " + t.name + " does not match config");
    VT_ENFORCE(!t.file.empty() && t.file.find("..") == std::string::npos, ErrorCode::kBadConfig, "bad file for " + t.name);
  }
  return m;
}

// ---------------------------------------------------------------- weight store

/// Loads tensors on demand and tracks resident bytes, so a prover can keep
/// only the current stage in memory.
class WeightStore {
 public:
  WeightStore(fs::path dir, Manifest m) : dir_(std::move(dir)), m_(std::move(m)) {}
  explicit WeightStore(const fs::path& dir) : WeightStore(dir, load_manifest(dir)) {}

  const ModelConfig& cfg() const { return m_.cfg; }
  const Manifest& manifest() const { return m_; }
  const fs::path& dir() const { return dir_; }

  const QTensor& get(const std::string& name) {
    auto it = resident_.find(name);
    if (it != resident_.end()) return it->second;
    const auto& e = m_.entry(name);
    auto t = read_tensor_file(dir_ / e.file, e.rows, e.cols);
    VT_ENFORCE(t.in_window(), ErrorCode::kOutOfRange, name + " holds values outside the signed window");
    bytes_ += t.bytes();
    peak_ = std::max(peak_, bytes_);
    return resident_.emplace(name, std::move(t)).first->second;
  }

  void release(const std::string& name) {
    auto it = resident_.find(name);
    if (it == resident_.end()) return;
    bytes_ -= it->second.bytes();
    resident_.erase(it);
  }
  void release_all() {
    resident_.clear();
    bytes_ = 0;
  }
  /// Drops everything except the named tensors.
  void keep_only(const std::set<std::string>& keep) {
    for (auto it = resident_.begin(); it != resident_.end();) {
      if (keep.count(it->first)) {
        ++it;
      } else {
        bytes_ -= it->second.bytes();
        it = resident_.erase(it);
      }
    }
  }

  size_t resident_bytes() const { return bytes_; }
  size_t peak_bytes() const { return peak_; }

 private:
  fs::path dir_;
  Manifest m_;
  std::map<std::string, QTensor> resident_;
  size_t bytes_ = 0;
  size_t peak_ = 0;
};

// ---------------------------------------------------------------- commitment

struct Commitment {
  std::string model_name;  // informational: the model directory name
  ModelConfig cfg;
  std::vector<WeightInfo> catalog;
  std::vector<Digest> leaves;
  Digest root{};

  const WeightInfo& weight(const std::string& name) const { return find_weight(catalog, name); }
};

inline nlohmann::json commitment_to_json(const Commitment& c) {
  nlohmann::json ts = nlohmann::json::array();
  for (const auto& w : c.catalog)
    ts.push_back({{"name", w.name}, {"leaf_offset", w.leaf_offset}, {"leaf_count", w.leaf_count}});
  nlohmann::json leaves = nlohmann::json::array();
  for (const auto& d : c.leaves) leaves.push_back(d.hex());
  return {{"format", "veritensor-commitment"},
          {"version", 1},
          {"model_name", c.model_name},
          {"field_modulus", default_field().modulus()},
          {"q", c.cfg.quant.q},
          {"l", c.cfg.quant.l},
          {"config", config_to_json(c.cfg)},
          {"root", c.root.hex()},
          {"leaf_count", c.leaves.size()},
          {"tensors", ts},
          {"leaves", leaves}};
}

/// Parses a commitment and checks that leaves, ranges and root agree.
inline Commitment commitment_from_json(const nlohmann::json& j) {
  Commitment c;
  try {
    VT_ENFORCE(j.at("format") == "veritensor-commitment" && j.at("version") == 1, ErrorCode::kBadConfig,
               "unsupported commitment format");
    c.model_name = j.value("model_name", "");
    c.cfg = config_from_json(j.at("config"));
    VT_ENFORCE(j.at("field_modulus") == default_field().modulus(), ErrorCode::kBadConfig,
               "commitment field modulus is not the Goldilocks prime");
    VT_ENFORCE(j.at("q") == c.cfg.quant.q && j.at("l") == c.cfg.quant.l, ErrorCode::kBadConfig,
               "commitment q/l disagree with its config");
    c.catalog = weight_catalog(c.cfg);
    const auto& ts = j.at("tensors");
    VT_ENFORCE(ts.size() == c.catalog.size(), ErrorCode::kBadConfig, "commitment tensor count");
    for (size_t i = 0; i < ts.size(); ++i) {
      VT_ENFORCE(ts[i].at("name") == c.catalog[i].name && ts[i].at("leaf_offset") == c.catalog[i].leaf_offset &&
                     ts[i].at("leaf_count") == c.catalog[i].leaf_count,
                 ErrorCode::kBadConfig, "commitment leaf range of " + c.catalog[i].name);
    }
    for (const auto& h : j.at("leaves")) c.leaves.push_back(Digest::from_hex(h.get<std::string>()));
    c.root = Digest::from_hex(j.at("root").get<std::string>());
    VT_ENFORCE(j.at("leaf_count") == c.leaves.size(), ErrorCode::kBadConfig, "commitment leaf count");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadConfig, std::string("commitment: ") + e.what());
  }
  const auto& last = c.catalog.back();
  VT_ENFORCE(c.leaves.size() == last.leaf_offset + last.leaf_count, ErrorCode::kBadConfig, "commitment leaf total");
  VT_ENFORCE(MerkleTree(c.leaves).root() == c.root, ErrorCode::kCommitmentMismatch, "commitment root does not match its leaves");
  return c;
}

inline Commitment load_commitment(const fs::path& p) { return commitment_from_json(read_json(p)); }

/// Hashes every tensor (one at a time) into the model Merkle tree.
inline Commitment commit_model(WeightStore& store) {
  Commitment c;
  c.model_name = store.dir().filename().string();
  c.cfg = store.cfg();
  c.catalog = weight_catalog(c.cfg);
  for (const auto& w : c.catalog) {
    auto leaves = weight_leaves(w, store.get(w.name));
    VT_ENFORCE(leaves.size() == w.leaf_count, ErrorCode::kShapeMismatch, "leaf count of " + w.name);
    c.leaves.insert(c.leaves.end(), leaves.begin(), leaves.end());
    store.release(w.name);
  }
  c.root = MerkleTree(c.leaves).root();
  return c;
}

// ---------------------------------------------------------------- toy models

/// Deterministic uniform integers in [-bound, bound].
inline QTensor uniform_tensor(std::mt19937_64& rng, size_t rows, size_t cols, int64_t bound, int64_t center = 0) {
  QTensor t(rows, cols);
  const auto span = static_cast<uint64_t>(2 * bound + 1);
  for (auto& v : t.data) v = center + static_cast<int64_t>(rng() % span) - bound;
  return t;
}

/// Random weights scaled like a trained network: uniform with variance
/// 1/fan_in, unit norm weights, and the attention scale folded into the
/// query projections.
inline QTensor generate_weight(const ModelConfig& c, const WeightInfo& w, std::mt19937_64& rng) {
  const double one = std::ldexp(1.0, c.quant.q);
  auto fan = [&](double gain, size_t fan_in) {
    return static_cast<int64_t>(std::llround(gain * one * std::sqrt(3.0 / static_cast<double>(fan_in))));
  };
  const std::string& n = w.name;
  auto ends = [&](std::string_view suffix) { return n.size() >= suffix.size() && n.ends_with(suffix); };
  if (n == "rope") return build_rope_table(c.max_seq - 1, c.rope_dim, c.quant.q);
  if (n == "embed") return uniform_tensor(rng, w.rows, w.cols, fan(1.0, 1));
  if (w.scheme == LeafScheme::kVector) {
    if (ends("gate_bias")) return uniform_tensor(rng, 1, w.cols, static_cast<int64_t>(one / 8));
    return uniform_tensor(rng, 1, w.cols, static_cast<int64_t>(one / 8), static_cast<int64_t>(one));
  }
  const double attn_scale = 1.0 / std::sqrt(std::sqrt(static_cast<double>(c.head_dim + c.rope_dim)));
  if (ends(".wq_b1") || ends(".wq_b2") || ends(".wkv_b1") || ends(".wkv_a2")) return uniform_tensor(rng, w.rows, w.cols, fan(attn_scale, w.block_rows()));
  if (ends(".gate")) return uniform_tensor(rng, w.rows, w.cols, fan(2.0, w.rows));
  return uniform_tensor(rng, w.rows, w.cols, fan(1.0, w.block_rows()));
}

/// Writes a random model directory (manifest plus one file per tensor).
inline Manifest generate_model(const fs::path& dir, const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  fs::create_directories(dir);
  Manifest m{cfg, {}};
  std::mt19937_64 rng(seed);
  for (const auto& w : weight_catalog(cfg)) {
    const std::string file = w.name + ".bin";
    write_tensor_file(dir / file, generate_weight(cfg, w, rng));
    m.tensors.push_back({w.name, w.rows, w.cols, file});
  }
  write_text(dir / kManifestName, manifest_to_json(m).dump(2) + "\n");
  return m;
}

// ---------------------------------------------------------------- reference forward

/// Per-layer caches of compressed keys/values and rotated key positions.
struct ModelState {
  std::vector<QTensor> kv_cache;
  std::vector<QTensor> pe_cache;
  size_t m = 0;  // tokens processed

  explicit ModelState(const ModelConfig& c) {
    for (size_t l = 0; l < c.n_layers; ++l) {
      kv_cache.emplace_back(0, c.kv_lora_rank);
      pe_cache.emplace_back(0, c.rope_dim);
    }
  }
};

// Snapshot layout (little endian): "VTKV", u16 version, u64 layers, u64 m,
// then per layer the kv cache followed by the pe cache, each as rows x cols
// int64 values (rows = m).
inline constexpr std::string_view kStateMagic = "VTKV";
inline constexpr uint16_t kStateVersion = 1;

inline std::vector<uint8_t> state_to_bytes(const ModelState& st) {
  std::vector<uint8_t> b(kStateMagic.begin(), kStateMagic.end());
  auto le = [&](uint64_t v, int n) {
    for (int i = 0; i < n; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
  };
  le(kStateVersion, 2);
  le(st.kv_cache.size(), 8);
  le(st.m, 8);
  for (size_t l = 0; l < st.kv_cache.size(); ++l)
    for (const auto* t : {&st.kv_cache[l], &st.pe_cache[l]})
      for (int64_t v : t->data) le(static_cast<uint64_t>(v), 8);
  return b;
}

/// Restores caches for `cfg`; malformed bytes are Decode errors and a
/// snapshot taken under another configuration is BadConfig.
inline ModelState state_from_bytes(std::span<const uint8_t> b, const ModelConfig& cfg) {
  size_t pos = 0;
  auto le = [&](int n) {
    VT_ENFORCE(b.size() - pos >= static_cast<size_t>(n), ErrorCode::kDecode, "truncated cache snapshot");
    uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= uint64_t{b[pos + static_cast<size_t>(i)]} << (8 * i);
    pos += static_cast<size_t>(n);
    return v;
  };
  VT_ENFORCE(b.size() >= kStateMagic.size() && std::equal(kStateMagic.begin(), kStateMagic.end(), b.begin()),
             ErrorCode::kDecode, "cache snapshot: bad magic");
  pos = kStateMagic.size();
  VT_ENFORCE(le(2) == kStateVersion, ErrorCode::kDecode, "cache snapshot: unsupported version");
  const uint64_t layers = le(8), m = le(8);
  VT_ENFORCE(layers == cfg.n_layers, ErrorCode::kBadConfig, "cache snapshot layer count");
  VT_ENFORCE(m <= cfg.max_seq, ErrorCode::kBadConfig, "cache snapshot holds more than max_seq tokens");
  const uint64_t values = layers * m * (cfg.kv_lora_rank + cfg.rope_dim);
  VT_ENFORCE(b.size() - pos == values * 8, ErrorCode::kDecode, "cache snapshot length");
  ModelState st(cfg);
  st.m = m;
  for (size_t l = 0; l < layers; ++l)
    for (auto* t : {&st.kv_cache[l], &st.pe_cache[l]}) {
      *t = QTensor(m, t->cols);
      for (auto& v : t->data) v = static_cast<int64_t>(le(8));
    }
  return st;
}

inline void save_state(const fs::path& p, const ModelState& st) { write_bytes(p, state_to_bytes(st)); }
inline ModelState load_state(const fs::path& p, const ModelConfig& cfg) { return state_from_bytes(read_bytes(p), cfg); }

/// Named intermediate tensors of one forward pass, keyed like the graph.
using Trace = std::map<std::string, QTensor>;

namespace detail {

inline QTensor matmul(const QTensor& x, const QTensor& w, int q) { return rescale(gemm(x, w), q).y; }

inline QTensor norm_rows(const QTensor& x, const QTensor& w, int q) {
  QTensor y(x.rows, x.cols);
  for (size_t i = 0; i < x.rows; ++i) {
    auto r = rmsnorm(x.row(i), w.row(0), q);
    std::copy(r.y.begin(), r.y.end(), y.row(i).begin());
  }
  return y;
}

inline QTensor rope_rows(const QTensor& x, const QTensor& table, size_t heads, size_t pos0, int q) {
  QTensor y(x.rows, x.cols);
  const size_t hw = x.cols / heads;
  for (size_t i = 0; i < x.rows; ++i)
    for (size_t h = 0; h < heads; ++h) {
      auto r = rope_rotate(x.row(i).subspan(h * hw, hw), table.row(pos0 + i), q);
      std::copy(r.y.begin(), r.y.end(), y.row(i).begin() + static_cast<std::ptrdiff_t>(h * hw));
    }
  return y;
}

inline QTensor block(const QTensor& w, size_t blocks, size_t h) {
  const size_t n = w.rows / blocks;
  QTensor b(n, w.cols);
  std::copy(w.data.begin() + static_cast<std::ptrdiff_t>(h * n * w.cols),
            w.data.begin() + static_cast<std::ptrdiff_t>((h + 1) * n * w.cols), b.data.begin());
  return b;
}

inline QTensor vstack(const QTensor& a, const QTensor& b) {
  QTensor t(a.rows + b.rows, a.cols);
  std::copy(a.data.begin(), a.data.end(), t.data.begin());
  std::copy(b.data.begin(), b.data.end(), t.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return t;
}

inline QTensor map_lanes(const QTensor& x, const std::function<int64_t(int64_t)>& f) {
  QTensor y(x.rows, x.cols);
  for (size_t i = 0; i < x.size(); ++i) y.data[i] = f(x.data[i]);
  return y;
}

inline QTensor broadcast_row(const QTensor& v, size_t rows) {
  QTensor t(rows, v.cols);
  for (size_t i = 0; i < rows; ++i) std::copy(v.data.begin(), v.data.end(), t.row(i).begin());
  return t;
}

inline QTensor broadcast_col(const QTensor& x, size_t col, size_t width) {
  QTensor t(x.rows, width);
  for (size_t i = 0; i < x.rows; ++i)
    for (size_t j = 0; j < width; ++j) t.at(i, j) = x.at(i, col);
  return t;
}

}  // namespace detail

/// Routed experts any row selects, ascending.
inline std::vector<size_t> active_experts(const QTensor& mask) {
  std::vector<size_t> out;
  for (size_t e = 0; e < mask.cols; ++e)
    for (size_t i = 0; i < mask.rows; ++i)
      if (mask.at(i, e) != 0) {
        out.push_back(e);
        break;
      }
  return out;
}

struct LayerResult {
  QTensor out;
  std::vector<size_t> active;
};

/// One transformer layer over the new rows `x`, placed after the rows already
/// in this layer's cache and attending to all of them; appends to both caches. Tensors land in `trace` when given.
inline LayerResult run_layer(ModelState& state, size_t l, WeightStore& ws, const QTensor& x, Trace* trace = nullptr) {
  const auto& c = ws.cfg();
  const int q = c.quant.q;
  const size_t H = c.n_heads, hd = c.head_dim, rd = c.rope_dim, n = x.rows;
  VT_ENFORCE(x.cols == c.dim && n >= 1, ErrorCode::kShapeMismatch, "layer input shape");
  const size_t pos0 = state.kv_cache.at(l).rows;
  VT_ENFORCE(pos0 + n <= c.max_seq, ErrorCode::kOutOfRange, "sequence longer than max_seq");
  const std::string L = layer_name(l) + ".";
  auto W = [&](const std::string& name) -> const QTensor& { return ws.get(L + name); };
  auto rec = [&](const std::string& name, const QTensor& t) {
    if (trace) (*trace)[L + name] = t;
  };
  using namespace detail;
  const auto& table = ws.get("rope");

  auto xn = norm_rows(x, W("attn_norm"), q);
  auto cq = matmul(xn, W("wq_a"), q);
  auto cqn = norm_rows(cq, W("q_norm"), q);
  auto q_nope = matmul(cqn, W("wq_b1"), q);
  auto q_pe_raw = matmul(cqn, W("wq_b2"), q);
  auto q_pe = rope_rows(q_pe_raw, table, H, pos0, q);
  auto ckv_raw = matmul(xn, W("wkv_a1"), q);
  auto ckv_new = norm_rows(ckv_raw, W("kv_norm"), q);
  auto kpe_raw = matmul(xn, W("wkv_a2"), q);
  auto kpe_new = rope_rows(kpe_raw, table, 1, pos0, q);
  for (auto [k, t] : {std::pair{"xn", &xn}, {"cq", &cq}, {"cqn", &cqn}, {"q_nope", &q_nope}, {"q_pe_raw", &q_pe_raw},
                      {"q_pe", &q_pe}, {"ckv_raw", &ckv_raw}, {"ckv", &ckv_new}, {"kpe_raw", &kpe_raw},
                      {"kpe", &kpe_new}})
    rec(k, *t);
  state.kv_cache[l] = vstack(state.kv_cache[l], ckv_new);
  state.pe_cache[l] = vstack(state.pe_cache[l], kpe_new);
  const QTensor& ckv = state.kv_cache[l];
  const QTensor& kpe = state.pe_cache[l];
  const size_t N = ckv.rows;

  const auto& neg = build_exp2_frac_table(c.quant, Exp2Direction::kNeg);
  QTensor scores(n, H * N), probs(n, H * N), o(n, H * hd);
  for (size_t h = 0; h < H; ++h) {
    const std::string s = "." + std::to_string(h);
    auto qa = matmul(q_nope.col_slice(h * hd, hd), block(W("wkv_b1"), H, h), q);
    auto s1 = matmul(qa, ckv.transposed(), q);
    auto s2 = matmul(q_pe.col_slice(h * rd, rd), kpe.transposed(), q);
    auto sc = elementwise_add(s1, s2);
    scores.set_col_slice(h * N, sc);
    QTensor p(n, N);
    for (size_t i = 0; i < n; ++i) {
      std::vector<int64_t> row(sc.row(i).begin(), sc.row(i).end());
      for (size_t j = pos0 + i + 1; j < N; ++j) row[j] = c.quant.neg_inf_q;
      auto r = softmax_row(row, c.quant, neg);
      std::copy(r.p.begin(), r.p.end(), p.row(i).begin());
    }
    probs.set_col_slice(h * N, p);
    auto ov = matmul(p, ckv, q);
    o.set_col_slice(h * hd, matmul(ov, block(W("wkv_b2"), H, h), q));
    rec("qa" + s, qa);
    rec("s1" + s, s1);
    rec("s2" + s, s2);
    rec("ov" + s, ov);
  }
  auto attn = matmul(o, W("wo"), q);
  auto mid = elementwise_add(x, attn);
  for (auto [k, t] : {std::pair{"scores", &scores}, {"probs", &probs}, {"o", &o}, {"attn", &attn}, {"h_mid", &mid}})
    rec(k, *t);

  const auto& pos = build_exp2_frac_table(c.quant, Exp2Direction::kPos);
  auto xn2 = norm_rows(mid, W("ffn_norm"), q);
  auto logits = matmul(xn2, W("gate"), q);
  auto sig = map_lanes(logits, [&](int64_t v) { return sigmoid(v, c.quant, pos).s; });
  auto biased = elementwise_add(sig, broadcast_row(W("gate_bias"), n));
  auto mask = expert_mask(biased, c.moe.grouping(), c.quant);
  auto gates = elementwise_mul(sig, mask, q).y;
  for (auto [k, t] : {std::pair{"xn2", &xn2}, {"gate_logits", &logits}, {"gate_sig", &sig}, {"gate_biased", &biased},
                      {"gate_mask", &mask}, {"gates", &gates}})
    rec(k, *t);

  auto mlp = [&](const std::string& p) {
    auto h1 = matmul(xn2, W(p + ".w1"), q);
    auto h3 = matmul(xn2, W(p + ".w3"), q);
    auto a = map_lanes(h1, [&](int64_t v) { return silu(v, c.quant, pos).y; });
    auto g = elementwise_mul(a, h3, q).y;
    auto y = matmul(g, W(p + ".w2"), q);
    for (auto [k, t] : {std::pair{".h1", &h1}, {".h3", &h3}, {".act", &a}, {".glu", &g}, {".y", &y}}) rec(p + k, *t);
    return y;
  };
  std::vector<QTensor> terms;
  for (size_t j = 0; j < c.moe.n_shared; ++j) terms.push_back(mlp(shared_name(j)));
  auto active = active_experts(mask);
  for (size_t e : active) {
    auto y = mlp(expert_name(e));
    auto r = elementwise_mul(y, broadcast_col(gates, e, c.dim), q).y;
    rec(expert_name(e) + ".routed", r);
    terms.push_back(std::move(r));
  }
  QTensor acc = terms[0];
  for (size_t k = 1; k < terms.size(); ++k) {
    acc = elementwise_add(acc, terms[k]);
    rec("sum." + std::to_string(k), acc);
  }
  auto out = elementwise_add(mid, acc);
  rec("h_out", out);
  return {std::move(out), std::move(active)};
}

struct ForwardResult {
  QTensor logits;
  std::vector<uint32_t> next;                // argmax per row
  std::vector<std::vector<size_t>> active;  // per layer
  size_t peak_bytes = 0;
};

inline uint32_t argmax_row(std::span<const int64_t> v) {
  return static_cast<uint32_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Embeds `tokens`, runs every layer and the head, streaming one stage of
/// weights at a time.
inline ForwardResult run_model(ModelState& state, WeightStore& ws, std::span<const uint32_t> tokens,
                               Trace* trace = nullptr) {
  const auto& c = ws.cfg();
  VT_ENFORCE(!tokens.empty(), ErrorCode::kEmptyInput, "token list is empty");
  ForwardResult r;
  QTensor h = embed_tokens(tokens, ws.get("embed"));
  if (trace) (*trace)[kEmbedStage + ".h"] = h;
  ws.keep_only({"rope"});
  for (size_t l = 0; l < c.n_layers; ++l) {
    auto lr = run_layer(state, l, ws, h, trace);
    h = std::move(lr.out);
    r.active.push_back(std::move(lr.active));
    ws.keep_only({"rope"});
  }
  state.m += tokens.size();
  auto hn = detail::norm_rows(h, ws.get("final_norm"), c.quant.q);
  r.logits = detail::matmul(hn, ws.get("head"), c.quant.q);
  for (size_t i = 0; i < r.logits.rows; ++i) r.next.push_back(argmax_row(r.logits.row(i)));
  if (trace) {
    (*trace)[kHeadStage + ".hn"] = hn;
    (*trace)[kHeadStage + ".logits"] = r.logits;
  }
  ws.release_all();
  r.peak_bytes = ws.peak_bytes();
  return r;
}

}  // namespace veritensor
