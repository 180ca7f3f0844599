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

#include "veritensor/transcript.hpp"

#include <set>

#include "gtest/gtest.h"

namespace veritensor {
namespace {

Digest h(std::string_view s) { return Sha256{}.update(s).finish(); }

TEST(TranscriptTest, InitialStateGolden) {
  EXPECT_EQ(Transcript{}.state().hex(), "19ef6276bf0e433f0ef44a6a9108f0acf8df030d1514a15acc34daf1e89dc44d");
}

TEST(TranscriptTest, SessionChallengesGolden) {
  Digest zero{};
  auto c = derive_session_challenges(zero, h("in"), h("w"));
  EXPECT_EQ(c.z.value, 4687804591942001112u);
  EXPECT_EQ(c.t.value, 1545551876221596865u);
  Digest seq{};
  for (uint8_t i = 0; i < 32; ++i) seq.bytes[i] = i;
  auto d = derive_session_challenges(seq, h("in"), h("w"));
  EXPECT_EQ(d.z.value, 11381299795823388733u);
  EXPECT_EQ(d.t.value, 12573285279019185838u);
}

TEST(TranscriptTest, DeterministicAndOrderSensitive) {
  auto a = derive_session_challenges(h("m"), h("x"), h("w"));
  auto b = derive_session_challenges(h("m"), h("x"), h("w"));
  EXPECT_EQ(a.z, b.z);
  EXPECT_EQ(a.t, b.t);
  EXPECT_NE(a.z, a.t);
  auto c = derive_session_challenges(h("m"), h("x"), h("w2"));
  EXPECT_NE(a.z, c.z);
  Transcript t1, t2;
  t1.absorb("A", h("1")).absorb("B", h("2"));
  t2.absorb("B", h("2")).absorb("A", h("1"));
  EXPECT_NE(t1.state(), t2.state());
}

TEST(TranscriptTest, ChallengesNonZeroAndAbsorbed) {
  Transcript t;
  for (int i = 0; i < 1000; ++i) {
    const auto before = t.state();
    auto c = t.challenge_field("C");
    EXPECT_NE(c.value, 0u);
    EXPECT_LT(c.value, kGoldilocks);
    EXPECT_NE(t.state(), before);
  }
  EXPECT_EQ(t.log().size(), 1000u);
  EXPECT_EQ(t.log_json().size(), 1000u);
}

TEST(TranscriptTest, EmptyTagRejected) {
  Transcript t;
  try {
    t.absorb("", h("x"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyTag);
  }
  EXPECT_THROW(t.challenge_field(""), Error);
}

TEST(ProvingSessionTest, Ordering) {
  ProvingSession s(h("m"), h("x"));
  try {
    s.challenges();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSessionState);
  }
  s.bind_witness(h("w"));
  EXPECT_THROW(s.bind_witness(h("w")), Error);
  auto c = s.challenges();
  auto ref = derive_session_challenges(h("m"), h("x"), h("w"));
  EXPECT_EQ(c.z, ref.z);
  EXPECT_EQ(c.t, ref.t);
  EXPECT_THROW(s.challenges(), Error);
}

TEST(TranscriptTest, ManyChallengesDoNotRepeat) {
  Transcript t;
  t.absorb("SEED", h("seed"));
  std::set<uint64_t> seen;
  for (int i = 0; i < 10000; ++i) seen.insert(t.challenge_field("C").value);
  EXPECT_EQ(seen.size(), 10000u);
}

TEST(TranscriptTest, DistinctTagsGiveDistinctChallenges) {
  for (int seed = 0; seed < 1000; ++seed) {
    Transcript a, b;
    a.absorb("SEED", h(std::to_string(seed)));
    b.absorb("SEED", h(std::to_string(seed)));
    EXPECT_NE(a.challenge_field("Z"), b.challenge_field("T"));
  }
}

TEST(TranscriptTest, AbsorbOrderFuzz) {
  for (int i = 0; i < 1000; ++i) {
    auto d1 = h("a" + std::to_string(i)), d2 = h("b" + std::to_string(i));
    Transcript t1, t2;
    t1.absorb("X", d1).absorb("X", d2);
    t2.absorb("X", d2).absorb("X", d1);
    EXPECT_NE(t1.state(), t2.state());
  }
}

TEST(TranscriptTest, EveryInputBitMovesZ) {
  const auto m = h("m"), x = h("x"), w = h("w");
  const auto ref = derive_session_challenges(m, x, w);
  for (int which = 0; which < 3; ++which) {
    for (size_t bit = 0; bit < 256; ++bit) {
      Digest dm = m, dx = x, dw = w;
      Digest& d = which == 0 ? dm : which == 1 ? dx : dw;
      d.bytes[bit / 8] ^= static_cast<uint8_t>(1u << (bit % 8));
      const auto c = derive_session_challenges(dm, dx, dw);
      EXPECT_NE(c.z, ref.z);
      EXPECT_NE(c.t, ref.t);
    }
  }
}

}  // namespace
}  // namespace veritensor
