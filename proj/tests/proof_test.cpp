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

#include <random>

#include "gtest/gtest.h"
#include "test_util.hpp"
#include "veritensor/components.hpp"

namespace veritensor {
namespace {

using testing::collect_openings;
using testing::OpenedValue;
using testing::random_tensor;
using testing::simple_spec;
using testing::test_context;

const QuantConfig kCfg{};

/// Flips every opened value by +1 in turn and expects a located rejection.
void expect_all_opening_tampers_rejected(const ProofNode& proof, const ComponentSpec& sp, const EvalContext& ctx) {
  ProofNode copy = proof;
  std::vector<OpenedValue> vals;
  collect_openings(copy, vals);
  ASSERT_FALSE(vals.empty());
  for (const auto& v : vals) {
    int64_t& cell = v.node->claim.openings[v.opening][v.index];
    cell += 1;
    const Verdict verdict = verify_component(copy, sp, ctx);
    EXPECT_FALSE(verdict.accepted);
    EXPECT_FALSE(verdict.node_path.empty());
    cell -= 1;
  }
  EXPECT_TRUE(verify_component(copy, sp, ctx).accepted);
}

// ---------------------------------------------------------------- merge

ProofNode leaf_node(uint64_t row, uint64_t col, uint64_t width, uint64_t zin, uint64_t zout) {
  ProofNode n{Level::kSegment, Kind::kAdd, {}, {}, {}};
  n.claim.zmul_in = FieldElement{zin};
  n.claim.zmul_out = FieldElement{zout};
  n.claim.aux["sum"] = FieldElement{zin};
  n.claim.shape = {row, row + 1, col, width};
  return n;
}

TEST(MergeTest, PaddingIsAdditiveIdentity) {
  auto a = leaf_node(0, 0, 4, 17, 23);
  auto pad = leaf_node(0, 4, 4, 0, 0);
  auto m = merge(a, pad);
  EXPECT_EQ(m.level, Level::kRow);
  EXPECT_EQ(m.claim.zmul_in, a.claim.zmul_in);
  EXPECT_EQ(m.claim.zmul_out, a.claim.zmul_out);
  EXPECT_EQ(m.claim.shape, (Shape{0, 1, 0, 8}));
}

TEST(MergeTest, LeftFoldIsCanonical) {
  auto a = leaf_node(0, 0, 2, 1, 2), b = leaf_node(0, 2, 2, 3, 4), c = leaf_node(0, 4, 2, 5, 6);
  auto m = merge(merge(a, b), c);
  ProofNode expect{Level::kRow, Kind::kAdd, {}, {}, {a, b, c}};
  expect.claim = fold_children(expect.children);
  EXPECT_EQ(m, expect);
  EXPECT_EQ(node_digest(m), node_digest(expect));
  EXPECT_EQ(m.claim.get("sum").value, 9u);
}

TEST(MergeTest, IncompatibleNodes) {
  auto a = leaf_node(0, 0, 2, 1, 2);
  auto far = leaf_node(0, 5, 2, 1, 2);
  auto other_row = leaf_node(3, 0, 2, 1, 2);
  for (const auto* b : {&far, &other_row}) {
    try {
      merge(a, *b);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kIncompatibleNodes);
    }
  }
  ProofNode comp{Level::kComponent, Kind::kAdd, {}, {}, {}};
  EXPECT_THROW(merge(comp, a), Error);
}

TEST(MergeTest, VerticalMergeAndDigestSensitivity) {
  auto a = leaf_node(0, 0, 4, 1, 2), b = leaf_node(1, 0, 4, 3, 4);
  auto m = merge(a, b);
  EXPECT_EQ(m.claim.shape, (Shape{0, 2, 0, 4}));
  auto m2 = m;
  m2.children[1].claim.zmul_out = FieldElement{5};
  EXPECT_NE(node_digest(m), node_digest(m2));
}

// ---------------------------------------------------------------- gemm

struct GemmCase {
  ComponentSpec sp;
  QTensor x, w, raw;
  Rescaled y;
  MerkleTree tree;
  EvalContext ctx;
  ProofNode proof;
};

GemmCase make_gemm(std::mt19937_64& rng, size_t a, size_t n, size_t b, size_t s, int64_t bound = 1 << 17) {
  auto x = random_tensor(rng, a, n, bound);
  auto w = random_tensor(rng, n, b, bound);
  auto raw = gemm(x, w);
  auto y = rescale(raw, kCfg.q);
  MerkleTree tree(gemm_weight_leaves(w, s));
  auto sp = simple_spec(Kind::kGemm, a, b, s);
  sp.inner = n;
  sp.in = Layout::row_major(n);
  sp.b_mode = BMode::kWeight;
  auto ctx = test_context(rng, &tree);
  auto proof = build_gemm(sp, x, w, raw, y, &tree);
  finalize_component(proof, sp, ctx);
  return {sp, x, w, raw, y, tree, ctx, proof};
}

TEST(GemmProofTest, OneByOne) {
  std::mt19937_64 rng(1);
  QTensor x = QTensor::from_rows({{3}}), w = QTensor::from_rows({{4}});
  auto raw = gemm(x, w);
  auto y = rescale(raw, kCfg.q);
  MerkleTree tree(gemm_weight_leaves(w, 1));
  auto sp = simple_spec(Kind::kGemm, 1, 1, 1);
  sp.inner = 1;
  sp.in = Layout::row_major(1);
  sp.b_mode = BMode::kWeight;
  auto ctx = test_context(rng, &tree);
  auto proof = build_gemm(sp, x, w, raw, y, &tree);
  finalize_component(proof, sp, ctx);
  EXPECT_EQ(proof.children.size(), 1u);
  EXPECT_EQ(proof.claim.get("ip").value, 12u);
  EXPECT_TRUE(verify_component(proof, sp, ctx).accepted);
}

TEST(GemmProofTest, BlockCountsFollowSegmenting) {
  std::mt19937_64 rng(2);
  auto g = make_gemm(rng, 3, 10, 4, 3);
  auto counts = count_levels(g.proof);
  EXPECT_EQ(counts[Level::kXProof], 4u);
  EXPECT_EQ(counts[Level::kWProof], 4u);
  EXPECT_EQ(counts[Level::kXWProof], 4u);
  EXPECT_EQ(counts[Level::kComponent], 1u);
  EXPECT_EQ(counts[Level::kSegment], 4u * (3 + 4));
}

TEST(GemmProofTest, RandomAcceptsAndEveryOpeningTamperRejects) {
  std::mt19937_64 rng(3);
  auto g = make_gemm(rng, 4, 6, 3, 2);
  EXPECT_TRUE(verify_component(g.proof, g.sp, g.ctx).accepted);
  EXPECT_EQ(zmul(g.x, g.ctx.z), g.proof.claim.zmul_in);
  EXPECT_EQ(zmul(g.y.y, g.ctx.z), g.proof.claim.zmul_out);
  expect_all_opening_tampers_rejected(g.proof, g.sp, g.ctx);
}

TEST(GemmProofTest, TamperedWeightIsCaught) {
  std::mt19937_64 rng(4);
  auto g = make_gemm(rng, 4, 6, 3, 2);
  for (size_t k = 0; k < g.w.size(); ++k) {
    QTensor w2 = g.w;
    w2.data[k] += 1;
    auto raw = gemm(g.x, w2);
    auto y = rescale(raw, kCfg.q);
    auto p = build_gemm(g.sp, g.x, w2, raw, y, &g.tree);
    try {
      finalize_component(p, g.sp, g.ctx);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kWeightDigestMismatch);
    }
    finalize_component(p, g.sp, g.ctx, {.check = false});
    auto v = verify_component(p, g.sp, g.ctx);
    EXPECT_FALSE(v.accepted);
    EXPECT_EQ(v.constraint, "weight digest");
  }
}

TEST(GemmProofTest, TamperedOutputFailsIdentity) {
  std::mt19937_64 rng(5);
  auto g = make_gemm(rng, 3, 5, 2, 2);
  QTensor raw = g.raw;
  raw.data[1] += 1 << 16;
  auto y = rescale(raw, kCfg.q);
  auto p = build_gemm(g.sp, g.x, g.w, raw, y, &g.tree);
  try {
    finalize_component(p, g.sp, g.ctx);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConstraintViolation);
  }
  finalize_component(p, g.sp, g.ctx, {.check = false});
  auto v = verify_component(p, g.sp, g.ctx);
  EXPECT_FALSE(v.accepted);
  EXPECT_EQ(v.constraint, "gemm identity");
}

TEST(GemmProofTest, ActivationOperandInTransposedLayout) {
  std::mt19937_64 rng(6);
  auto x = random_tensor(rng, 3, 4, 1000);
  auto stored = random_tensor(rng, 5, 4, 1000);  // W = stored^T
  auto w = stored.transposed();
  auto raw = gemm(x, w);
  auto y = rescale(raw, kCfg.q);
  auto sp = simple_spec(Kind::kGemm, 3, 5, 2);
  sp.inner = 4;
  sp.in = Layout::row_major(4);
  sp.b_mode = BMode::kActivation;
  sp.b = Layout::transposed(4);
  auto ctx = test_context(rng);
  auto p = build_gemm(sp, x, w, raw, y, nullptr);
  finalize_component(p, sp, ctx);
  EXPECT_TRUE(verify_component(p, sp, ctx).accepted);
  EXPECT_EQ(p.claim.get("zmul_b"), zmul(stored, ctx.z));
}

TEST(GemmProofTest, SpotCheckAcceptsHonestAndIsSeeded) {
  std::mt19937_64 rng(7);
  auto g = make_gemm(rng, 4, 8, 4, 2);
  for (double f : {0.0, 0.1, 0.5, 1.0}) EXPECT_TRUE(verify_component(g.proof, g.sp, g.ctx, {f, 9}).accepted);
  Evaluator a(EvalMode::kVerify, g.ctx), b(EvalMode::kVerify, g.ctx);
  a.set_spotcheck(0.3, 42);
  b.set_spotcheck(0.3, 42);
  size_t hits = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::string p = "n/" + std::to_string(i);
    EXPECT_EQ(a.sampled(p), b.sampled(p));
    hits += a.sampled(p);
  }
  EXPECT_GT(hits, 200u);
  EXPECT_LT(hits, 400u);
}

TEST(GemmProofTest, WrongChallengeRejected) {
  std::mt19937_64 rng(8);
  auto g = make_gemm(rng, 2, 4, 2, 2);
  auto ctx = g.ctx;
  ctx.z = ctx.z + FieldElement{1};
  EXPECT_FALSE(verify_component(g.proof, g.sp, ctx).accepted);
}

// ---------------------------------------------------------------- rmsnorm

struct NormCase {
  ComponentSpec sp;
  MerkleTree tree;
  EvalContext ctx;
  ProofNode proof;
};

NormCase make_norm(std::mt19937_64& rng, const QTensor& x, std::span<const int64_t> w, size_t s) {
  MerkleTree tree(vector_leaves(w, s));
  auto sp = simple_spec(Kind::kRmsNorm, x.rows, x.cols, s);
  std::vector<RmsResult> rows;
  for (size_t i = 0; i < x.rows; ++i) rows.push_back(rmsnorm(x.row(i), w, kCfg.q));
  auto ctx = test_context(rng, &tree);
  auto p = build_rmsnorm(sp, x, w, rows, tree);
  finalize_component(p, sp, ctx);
  return {sp, tree, ctx, p};
}

TEST(RmsNormProofTest, AcceptsAndRejectsTampers) {
  std::mt19937_64 rng(10);
  auto x = random_tensor(rng, 3, 10, 1 << 18);
  auto w = random_tensor(rng, 1, 10, 1 << 17);
  auto c = make_norm(rng, x, w.row(0), 4);
  EXPECT_TRUE(verify_component(c.proof, c.sp, c.ctx).accepted);
  EXPECT_EQ(count_levels(c.proof)[Level::kSegment], 9u);
  expect_all_opening_tampers_rejected(c.proof, c.sp, c.ctx);
}

TEST(RmsNormProofTest, ZeroRowHasUnitRms) {
  std::mt19937_64 rng(11);
  QTensor x(2, 8);
  auto w = random_tensor(rng, 1, 8, 1 << 16);
  auto c = make_norm(rng, x, w.row(0), 4);
  EXPECT_EQ(c.proof.children[0].claim.openings[0][2], 1);
  EXPECT_TRUE(verify_component(c.proof, c.sp, c.ctx).accepted);
}

TEST(RmsNormProofTest, BrokenMeanSquareIsConstraintViolation) {
  std::mt19937_64 rng(12);
  auto x = random_tensor(rng, 2, 8, 1 << 18);
  auto w = random_tensor(rng, 1, 8, 1 << 16);
  auto c = make_norm(rng, x, w.row(0), 4);
  auto p = c.proof;
  p.children[1].claim.openings[0][0] += 1;  // Q
  try {
    finalize_component(p, c.sp, c.ctx);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConstraintViolation);
  }
}

// ---------------------------------------------------------------- embedding

TEST(EmbeddingProofTest, RowsMatchVocabularyDigests) {
  std::mt19937_64 rng(20);
  auto vocab = random_tensor(rng, 5, 10, 1 << 16);
  MerkleTree tree(vocab_leaves(vocab, 4));
  std::vector<uint32_t> tokens{1, 3, 1};
  auto x = embed_tokens(tokens, vocab);
  auto sp = simple_spec(Kind::kEmbedding, 3, 10, 4);
  sp.inner = 5;
  auto ctx = test_context(rng, &tree);
  auto p = build_embedding(sp, tokens, x, tree);
  finalize_component(p, sp, ctx);
  EXPECT_TRUE(verify_component(p, sp, ctx).accepted);
  EXPECT_EQ(p.children[0].claim.digests, p.children[2].claim.digests);
  EXPECT_EQ(p.claim.zmul_out, zmul(x, ctx.z));
  expect_all_opening_tampers_rejected(p, sp, ctx);

  QTensor bad = x;
  bad.at(0, 7) += 1;
  auto q = build_embedding(sp, tokens, bad, tree);
  try {
    finalize_component(q, sp, ctx);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kVocabDigestMismatch);
  }
}

// ---------------------------------------------------------------- rope

struct RopeCase {
  ComponentSpec sp;
  QTensor x, table, y, rem;
  MerkleTree tree;
  EvalContext ctx;
};

RopeCase make_rope(std::mt19937_64& rng) {
  auto table = build_rope_table(7, 4, kCfg.q);
  MerkleTree tree(rope_leaves(table));
  auto sp = simple_spec(Kind::kRope, 3, 8, 4);
  sp.heads = 2;
  sp.positions = {0, 1, 2};
  auto x = random_tensor(rng, 3, 8, 8 << 16);
  QTensor y(3, 8), rem(3, 8);
  for (size_t i = 0; i < 3; ++i)
    for (size_t h = 0; h < 2; ++h) {
      auto r = rope_rotate(x.row(i).subspan(h * 4, 4), table.row(i), kCfg.q);
      std::copy(r.y.begin(), r.y.end(), y.row(i).begin() + static_cast<std::ptrdiff_t>(h * 4));
      std::copy(r.rem.begin(), r.rem.end(), rem.row(i).begin() + static_cast<std::ptrdiff_t>(h * 4));
    }
  return {sp, x, table, y, rem, tree, test_context(rng, &tree)};
}

TEST(RopeProofTest, AcceptsAndPositionZeroIsIdentity) {
  std::mt19937_64 rng(30);
  auto c = make_rope(rng);
  auto p = build_rope(c.sp, c.x, c.table, c.y, c.rem, c.tree);
  finalize_component(p, c.sp, c.ctx);
  EXPECT_TRUE(verify_component(p, c.sp, c.ctx).accepted);
  for (size_t j = 0; j < 8; ++j) EXPECT_EQ(c.y.at(0, j), c.x.at(0, j));
  EXPECT_EQ(count_levels(p)[Level::kHead], 6u);
  expect_all_opening_tampers_rejected(p, c.sp, c.ctx);
}

TEST(RopeProofTest, TamperedSinEntry) {
  std::mt19937_64 rng(31);
  auto c = make_rope(rng);
  QTensor bad = c.table;
  bad.at(1, 1) += 1;
  auto p = build_rope(c.sp, c.x, bad, c.y, c.rem, c.tree);
  try {
    finalize_component(p, c.sp, c.ctx);
    FAIL();
  } catch (const Error& e) {
    // The rotation is checked against the opened row first only when the
    // row digest passes, so either error identifies the tamper.
    EXPECT_TRUE(e.code() == ErrorCode::kRopeTableDigestMismatch || e.code() == ErrorCode::kConstraintViolation);
  }
  finalize_component(p, c.sp, c.ctx, {.check = false});
  EXPECT_FALSE(verify_component(p, c.sp, c.ctx).accepted);
}

// ---------------------------------------------------------------- softmax

struct SoftmaxCase {
  ComponentSpec sp;
  QTensor x;
  EvalContext ctx;
  ProofNode proof;
};

SoftmaxCase make_softmax(std::mt19937_64& rng, const QTensor& x, size_t heads, size_t s, bool causal) {
  auto sp = simple_spec(Kind::kSoftmax, x.rows, x.cols, s);
  sp.heads = heads;
  sp.causal = causal;
  for (size_t i = 0; i < x.rows; ++i) sp.positions.push_back(i);
  const auto& table = build_exp2_frac_table(kCfg, Exp2Direction::kNeg);
  std::vector<SoftmaxResult> blocks;
  const size_t hw = sp.head_width();
  for (size_t i = 0; i < x.rows; ++i)
    for (size_t h = 0; h < heads; ++h)
      blocks.push_back(softmax_row(softmax_effective(sp, kCfg, i, x.row(i).subspan(h * hw, hw)), kCfg, table));
  auto ctx = test_context(rng);
  auto p = build_softmax(sp, x, blocks);
  finalize_component(p, sp, ctx);
  return {sp, x, ctx, p};
}

TEST(SoftmaxProofTest, CausalAcceptsAndRejectsTampers) {
  std::mt19937_64 rng(40);
  auto x = random_tensor(rng, 4, 8, 8 << 16);
  auto c = make_softmax(rng, x, 2, 2, true);
  EXPECT_TRUE(verify_component(c.proof, c.sp, c.ctx).accepted);
  EXPECT_EQ(c.proof.claim.zmul_in, zmul(x, c.ctx.z));
  auto counts = count_levels(c.proof);
  EXPECT_EQ(counts[Level::kHead], 8u);
  EXPECT_EQ(counts[Level::kSegment], 16u);
  // Row 0 attends only to lane 0 of each head.
  EXPECT_EQ(c.proof.children[0].children[0].children[0].claim.openings[1][0], 1 << 16);
  expect_all_opening_tampers_rejected(c.proof, c.sp, c.ctx);
}

TEST(SoftmaxProofTest, UniformHeadAndStepFiveTamper) {
  std::mt19937_64 rng(41);
  QTensor x(1, 4);
  auto c = make_softmax(rng, x, 1, 4, false);
  EXPECT_EQ(c.proof.children[0].children[0].children[0].claim.openings[1],
            (std::vector<int64_t>{1 << 14, 1 << 14, 1 << 14, 1 << 14}));
  auto p = c.proof;
  p.children[0].children[0].children[0].claim.openings[1][2] += 1;
  auto v = verify_component(p, c.sp, c.ctx);
  EXPECT_FALSE(v.accepted);
  EXPECT_EQ(v.constraint, "softmax step 5 normalization");
}

// ---------------------------------------------------------------- sigmoid / silu

ProofNode make_act(const ComponentSpec& sp, const QTensor& x, const EvalContext& ctx) {
  const auto& table = build_exp2_frac_table(kCfg, Exp2Direction::kPos);
  std::vector<SiluResult> lanes;
  for (auto v : x.data) lanes.push_back(silu(v, kCfg, table));
  auto p = build_sigmoid_silu(sp, x, lanes);
  finalize_component(p, sp, ctx);
  return p;
}

TEST(SigmoidProofTest, AcceptsZeroLaneAndShiftTamper) {
  std::mt19937_64 rng(50);
  auto x = random_tensor(rng, 2, 16, 8 << 16);
  x.at(0, 0) = 0;
  auto sp = simple_spec(Kind::kSigmoid, 2, 16, 4);
  auto ctx = test_context(rng);
  auto p = make_act(sp, x, ctx);
  EXPECT_TRUE(verify_component(p, sp, ctx).accepted);
  EXPECT_EQ(p.children[0].children[0].claim.openings[1][0], 1 << 15);
  expect_all_opening_tampers_rejected(p, sp, ctx);
  auto bad = p;
  bad.children[1].children[2].claim.openings[8][1] += 1;  // u
  auto v = verify_component(bad, sp, ctx);
  EXPECT_FALSE(v.accepted);
  EXPECT_EQ(v.constraint, "sigmoid shift split");
}

TEST(SiluProofTest, Accepts) {
  std::mt19937_64 rng(51);
  auto x = random_tensor(rng, 3, 10, 8 << 16);
  auto sp = simple_spec(Kind::kSilu, 3, 10, 4);
  auto ctx = test_context(rng);
  auto p = make_act(sp, x, ctx);
  EXPECT_TRUE(verify_component(p, sp, ctx).accepted);
  expect_all_opening_tampers_rejected(p, sp, ctx);
}

// ---------------------------------------------------------------- elementwise

TEST(ElementwiseProofTest, AddZeroKeepsZMul) {
  std::mt19937_64 rng(60);
  auto x = random_tensor(rng, 2, 6, 1 << 20);
  auto sp = simple_spec(Kind::kAdd, 2, 6, 4);
  sp.b_mode = BMode::kActivation;
  auto ctx = test_context(rng);
  QTensor zero(2, 6);
  auto p = build_elementwise(sp, x, zero, elementwise_add(x, zero), {}, nullptr);
  finalize_component(p, sp, ctx);
  EXPECT_TRUE(verify_component(p, sp, ctx).accepted);
  EXPECT_EQ(p.claim.zmul_out, p.claim.zmul_in);
  EXPECT_EQ(p.claim.get("zmul_b").value, 0u);
}

TEST(ElementwiseProofTest, ChainLinksThroughZMul) {
  std::mt19937_64 rng(61);
  auto x = random_tensor(rng, 2, 8, 4 << 16);
  auto ctx = test_context(rng);
  auto sig_sp = simple_spec(Kind::kSigmoid, 2, 8, 4);
  auto sig = make_act(sig_sp, x, ctx);
  const auto& table = build_exp2_frac_table(kCfg, Exp2Direction::kPos);
  QTensor s(2, 8);
  for (size_t i = 0; i < x.size(); ++i) s.data[i] = sigmoid(x.data[i], kCfg, table).s;
  auto other = random_tensor(rng, 2, 8, 1 << 16);
  auto add_sp = simple_spec(Kind::kAdd, 2, 8, 4);
  add_sp.b_mode = BMode::kActivation;
  auto add = build_elementwise(add_sp, other, s, elementwise_add(other, s), {}, nullptr);
  finalize_component(add, add_sp, ctx);
  EXPECT_EQ(add.claim.get("zmul_b"), sig.claim.zmul_out);
  auto y = elementwise_add(other, s);
  y.data[5] += 1;
  auto bad = build_elementwise(add_sp, other, s, y, {}, nullptr);
  finalize_component(bad, add_sp, ctx, {.check = false});
  auto v = verify_component(bad, add_sp, ctx);
  EXPECT_FALSE(v.accepted);
  EXPECT_EQ(v.constraint, "elementwise add");
}

TEST(ElementwiseProofTest, WeightAndColumnOperands) {
  std::mt19937_64 rng(62);
  auto x = random_tensor(rng, 3, 6, 1 << 18);
  auto bias = random_tensor(rng, 1, 6, 1 << 16);
  MerkleTree tree(vector_leaves(bias.row(0), 4));
  auto ctx = test_context(rng, &tree);
  auto sp = simple_spec(Kind::kAdd, 3, 6, 4);
  sp.b_mode = BMode::kWeight;
  QTensor bfull(3, 6);
  for (size_t i = 0; i < 3; ++i)
    for (size_t j = 0; j < 6; ++j) bfull.at(i, j) = bias.at(0, j);
  auto p = build_elementwise(sp, x, bias, elementwise_add(x, bfull), {}, &tree);
  finalize_component(p, sp, ctx);
  EXPECT_TRUE(verify_component(p, sp, ctx).accepted);
  expect_all_opening_tampers_rejected(p, sp, ctx);

  auto g = random_tensor(rng, 3, 1, 1 << 16);
  QTensor gb(3, 6);
  for (size_t i = 0; i < 3; ++i)
    for (size_t j = 0; j < 6; ++j) gb.at(i, j) = g.at(i, 0);
  auto msp = simple_spec(Kind::kMul, 3, 6, 4);
  msp.b_mode = BMode::kColumn;
  msp.b = Layout::row_major(5, 2);  // column 2 of a 3 x 5 producer
  auto r = elementwise_mul(x, gb, kCfg.q);
  auto m = build_elementwise(msp, x, g, r.y, r.rem, nullptr);
  finalize_component(m, msp, ctx);
  EXPECT_TRUE(verify_component(m, msp, ctx).accepted);
  FieldElement expect{0};
  for (size_t i = 0; i < 3; ++i) expect += field_pow(ctx.z, i * 5 + 2) * embed_signed(g.at(i, 0));
  EXPECT_EQ(m.claim.get("zmul_b"), expect);
  expect_all_opening_tampers_rejected(m, msp, ctx);
}

// ---------------------------------------------------------------- top-k / selector

TEST(TopKProofTest, Examples) {
  std::mt19937_64 rng(70);
  const FieldElement t{1 + rng() % (kGoldilocks - 1)};
  std::vector<int64_t> in{5, 2, 8, 1}, srt{1, 2, 5, 8};
  auto p = prove_topk(in, srt, 2, t, SortOrder::kAsc);
  EXPECT_EQ(p.claim.get("cp_in"), p.claim.get("cp_sorted"));
  EXPECT_TRUE(verify_topk(p, 2, t, SortOrder::kAsc).accepted);
  auto q = prove_topk(srt, srt, 4, t, SortOrder::kAsc);
  EXPECT_TRUE(verify_topk(q, 4, t, SortOrder::kAsc).accepted);
  std::vector<int64_t> unsorted{2, 1, 5, 8};
  try {
    prove_topk(in, unsorted, 2, t, SortOrder::kAsc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kOrderViolation);
  }
}

TEST(TopKProofTest, ForeignValueRejectedAtRandomT) {
  std::mt19937_64 rng(71);
  std::vector<int64_t> in{5, 2, 8, 1}, bad{0, 2, 5, 8};
  for (int trial = 0; trial < 1000; ++trial) {
    const FieldElement t{1 + rng() % (kGoldilocks - 1)};
    try {
      prove_topk(in, bad, 2, t, SortOrder::kAsc);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kPermutationMismatch);
    }
    auto p = prove_topk(in, bad, 2, t, SortOrder::kAsc, {.check = false});
    auto v = verify_topk(p, 2, t, SortOrder::kAsc);
    EXPECT_FALSE(v.accepted);
    EXPECT_EQ(v.constraint, "permutation");
  }
}

TEST(ArgmaxProofTest, PicksLowestIndexOnTies) {
  std::mt19937_64 rng(72);
  auto logits = QTensor::from_rows({{3, 9, 9, 1}, {-5, -2, -7, -2}});
  auto sp = simple_spec(Kind::kTopK, 2, 4, 4);
  sp.out = Layout::row_major(1);
  auto ctx = test_context(rng);
  auto p = build_argmax(sp, logits);
  finalize_component(p, sp, ctx);
  EXPECT_TRUE(verify_component(p, sp, ctx).accepted);
  EXPECT_EQ(p.children[0].claim.get("argmax").value, 1u);
  EXPECT_EQ(p.children[1].claim.get("argmax").value, 1u);
  expect_all_opening_tampers_rejected(p, sp, ctx);
}

struct SelectorCase {
  ComponentSpec sp;
  EvalContext ctx;
  ProofNode proof;
};

SelectorCase make_selector(std::mt19937_64& rng, const QTensor& scores, Grouping g) {
  auto sp = simple_spec(Kind::kExpertSelector, scores.rows, scores.cols, scores.cols);
  sp.grouping = g;
  auto ctx = test_context(rng);
  auto p = build_expert_selector(sp, scores, kCfg);
  finalize_component(p, sp, ctx);
  return {sp, ctx, p};
}

TEST(ExpertSelectorProofTest, ToyInstanceSelectsTwoAndSix) {
  std::mt19937_64 rng(80);
  auto scores = QTensor::from_rows({{1, 5, 9, 2, 3, 3, 8, 7}});
  auto c = make_selector(rng, scores, Grouping{4, 1, 2, 2});
  EXPECT_TRUE(verify_component(c.proof, c.sp, c.ctx).accepted);
  QTensor mask(1, 8);
  mask.at(0, 2) = mask.at(0, 6) = 1 << 16;
  EXPECT_EQ(c.proof.claim.zmul_out, zmul(mask, c.ctx.z));
  EXPECT_EQ(c.proof.children[0].claim.get("groups").value, (1u << 1) | (1u << 3));
  EXPECT_EQ(expert_mask(scores, Grouping{4, 1, 2, 2}, kCfg), mask);
  auto counts = count_levels(c.proof);
  EXPECT_EQ(counts[Level::kGroup], 4u);
  EXPECT_EQ(counts[Level::kSortedGroup], 4u);
  expect_all_opening_tampers_rejected(c.proof, c.sp, c.ctx);
}

TEST(ExpertSelectorProofTest, AllEqualAndRandomRows) {
  std::mt19937_64 rng(81);
  QTensor eq(2, 16);
  for (auto& v : eq.data) v = 7;
  auto c = make_selector(rng, eq, Grouping{4, 2, 2, 3});
  EXPECT_TRUE(verify_component(c.proof, c.sp, c.ctx).accepted);
  QTensor mask(2, 16);
  for (size_t i = 0; i < 2; ++i)
    for (size_t e : {0, 1, 2}) mask.at(i, e) = 1 << 16;
  EXPECT_EQ(c.proof.claim.zmul_out, zmul(mask, c.ctx.z));
  for (int trial = 0; trial < 50; ++trial) {
    auto s = random_tensor(rng, 3, 16, 5);
    Grouping g{4, 1 + rng() % 4, 1 + rng() % 4, 1};
    g.experts_selected = 1 + rng() % (g.groups_selected * 4);
    auto r = make_selector(rng, s, g);
    EXPECT_TRUE(verify_component(r.proof, r.sp, r.ctx).accepted);
    EXPECT_EQ(r.proof.claim.zmul_out, zmul(expert_mask(s, g, kCfg), r.ctx.z));
  }
}

// ---------------------------------------------------------------- container

Verdict verify_bytes(std::span<const uint8_t> bytes, const ComponentSpec& sp, const EvalContext& ctx) {
  try {
    auto d = deserialize_proof(bytes);
    if (!(d.header == ProofHeader{})) return Verdict::reject("header", "header mismatch");
    return verify_component(d.root, sp, ctx);
  } catch (const Error& e) {
    return Verdict::reject("decode", e.what());
  }
}

TEST(ContainerTest, RoundTripIsBitExact) {
  std::mt19937_64 rng(90);
  auto g = make_gemm(rng, 3, 5, 2, 2);
  auto bytes = serialize_proof(g.proof);
  auto d = deserialize_proof(bytes);
  EXPECT_EQ(d.root, g.proof);
  EXPECT_EQ(serialize_proof(d.root), bytes);
  EXPECT_EQ(node_digest(d.root), node_digest(g.proof));
  EXPECT_FALSE(proof_to_json(g.proof).dump().empty());
}

TEST(ContainerTest, EveryFlippedByteRejected) {
  std::mt19937_64 rng(91);
  auto g = make_gemm(rng, 2, 3, 2, 2);
  auto bytes = serialize_proof(g.proof);
  ASSERT_TRUE(verify_bytes(bytes, g.sp, g.ctx).accepted);
  for (size_t i = 0; i < bytes.size(); ++i) {
    auto b = bytes;
    b[i] ^= static_cast<uint8_t>(1u << (rng() % 8));
    auto v = verify_bytes(b, g.sp, g.ctx);
    EXPECT_FALSE(v.accepted) << "byte " << i;
    EXPECT_FALSE(v.node_path.empty());
  }
  bytes.push_back(0);
  EXPECT_FALSE(verify_bytes(bytes, g.sp, g.ctx).accepted);
}

TEST(ContainerTest, DecodeErrorsAreLocated) {
  std::mt19937_64 rng(92);
  auto g = make_gemm(rng, 2, 3, 2, 2);
  auto bytes = serialize_proof(g.proof);
  bytes.resize(bytes.size() - 3);
  try {
    deserialize_proof(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDecode);
    EXPECT_NE(std::string(e.what()).find("node#"), std::string::npos);
  }
}

TEST(ContainerTest, EveryOpeningBitFlipRejected) {
  std::mt19937_64 rng(93);
  auto g = make_gemm(rng, 2, 3, 2, 2);
  ProofNode copy = g.proof;
  std::vector<OpenedValue> vals;
  collect_openings(copy, vals);
  for (const auto& v : vals) {
    int64_t& cell = v.node->claim.openings[v.opening][v.index];
    for (int bit = 0; bit < 64; ++bit) {
      cell ^= int64_t{1} << bit;
      EXPECT_FALSE(verify_component(copy, g.sp, g.ctx).accepted);
      cell ^= int64_t{1} << bit;
    }
  }
}

}  // namespace
}  // namespace veritensor
