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

#include <string>

#include "veritensor/components/elementwise.hpp"
#include "veritensor/components/embedding.hpp"
#include "veritensor/components/gemm.hpp"
#include "veritensor/components/rmsnorm.hpp"
#include "veritensor/components/rope.hpp"
#include "veritensor/components/sigmoid.hpp"
#include "veritensor/components/softmax.hpp"
#include "veritensor/components/topk.hpp"
#include "veritensor/evaluator.hpp"

namespace veritensor {

/// Every node below a component carries the component kind and no label.
inline void require_uniform_kind(const ProofNode& n, Kind kind, const std::string& path) {
  for (size_t i = 0; i < n.children.size(); ++i) {
    const ProofNode& c = n.children[i];
    const std::string p = path + "/#" + std::to_string(i);
    if (c.kind != kind || !c.label.empty()) throw VerifyFailure(p, "node kind");
    require_uniform_kind(c, kind, p);
  }
}

/// Evaluates one component subtree. Malformed structure inside the subtree
/// (bad lengths, values outside the window) is reported at the component.
inline void eval_component(ProofNode& n, const ComponentSpec& sp, const Evaluator& ev, const std::string& path) {
  require_node(n, Level::kComponent, sp.kind, path);
  if (n.label != sp.label) throw VerifyFailure(path, "component label");
  require_uniform_kind(n, sp.kind, path);
  try {
    switch (sp.kind) {
      case Kind::kGemm:
        return eval_gemm(n, sp, ev, path);
      case Kind::kRmsNorm:
        return eval_rmsnorm(n, sp, ev, path);
      case Kind::kEmbedding:
        return eval_embedding(n, sp, ev, path);
      case Kind::kRope:
        return eval_rope(n, sp, ev, path);
      case Kind::kSoftmax:
        return eval_softmax(n, sp, ev, path);
      case Kind::kSigmoid:
      case Kind::kSilu:
        return eval_sigmoid_silu(n, sp, ev, path);
      case Kind::kAdd:
      case Kind::kMul:
        return eval_elementwise(n, sp, ev, path);
      case Kind::kTopK:
        return eval_argmax(n, sp, ev, path);
      case Kind::kExpertSelector:
        return eval_expert_selector(n, sp, ev, path);
      default:
        throw VerifyFailure(path, "unsupported component kind");
    }
  } catch (const Error& e) {
    throw VerifyFailure(path, std::string("malformed (") + e.what() + ")");
  }
}

/// Error code a prover reports for a failed constraint.
inline ErrorCode failure_code(const std::string& constraint) {
  if (constraint == "weight digest") return ErrorCode::kWeightDigestMismatch;
  if (constraint == "vocab digest") return ErrorCode::kVocabDigestMismatch;
  if (constraint == "rope table digest") return ErrorCode::kRopeTableDigestMismatch;
  if (constraint == "permutation") return ErrorCode::kPermutationMismatch;
  if (constraint == "order") return ErrorCode::kOrderViolation;
  return ErrorCode::kConstraintViolation;
}

struct ProveOptions {
  bool check = true;  // false lets tests build proofs over malformed witnesses
};

/// Fills every claim of a freshly built component subtree.
inline void finalize_component(ProofNode& n, const ComponentSpec& sp, const EvalContext& ctx, ProveOptions opt = {},
                               const std::string& path = {}) {
  Evaluator ev(EvalMode::kProve, ctx);
  ev.set_prover_checks(opt.check);
  try {
    eval_component(n, sp, ev, path.empty() ? sp.label : path);
  } catch (const VerifyFailure& f) {
    throw Error(failure_code(f.constraint()), f.what());
  }
}

struct VerifyOptions {
  double spot_fraction = 1.0;  // 1.0 is full replay
  uint64_t seed = 0;
};

inline Verdict verify_component(const ProofNode& n, const ComponentSpec& sp, const EvalContext& ctx,
                                VerifyOptions opt = {}, const std::string& path = {}) {
  Evaluator ev(EvalMode::kVerify, ctx);
  ev.set_spotcheck(opt.spot_fraction, opt.seed);
  try {
    // Verify mode never writes through the node.
    eval_component(const_cast<ProofNode&>(n), sp, ev, path.empty() ? sp.label : path);
  } catch (const VerifyFailure& f) {
    return Verdict::reject(f.path(), f.constraint());
  }
  return Verdict::ok();
}

/// Standalone sorting claim at challenge t.
inline ProofNode prove_topk(std::span<const int64_t> input, std::span<const int64_t> sorted, size_t k, FieldElement t,
                            SortOrder order, ProveOptions opt = {}) {
  ProofNode n = build_topk(input, sorted, k);
  EvalContext ctx;
  ctx.t = t;
  Evaluator ev(EvalMode::kProve, ctx);
  ev.set_prover_checks(opt.check);
  try {
    eval_topk(n, k, order, ev, "topk");
  } catch (const VerifyFailure& f) {
    throw Error(failure_code(f.constraint()), f.what());
  }
  return n;
}

inline Verdict verify_topk(const ProofNode& n, size_t k, FieldElement t, SortOrder order) {
  EvalContext ctx;
  ctx.t = t;
  Evaluator ev(EvalMode::kVerify, ctx);
  try {
    eval_topk(const_cast<ProofNode&>(n), k, order, ev, "topk");
  } catch (const VerifyFailure& f) {
    return Verdict::reject(f.path(), f.constraint());
  } catch (const Error& e) {
    return Verdict::reject("topk", e.what());
  }
  return Verdict::ok();
}

}  // namespace veritensor
