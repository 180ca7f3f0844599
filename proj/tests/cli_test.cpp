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

#include <sys/wait.h>

#include <cstdio>
#include <fstream>

#include "gtest/gtest.h"
#include "test_util.hpp"
#include "veritensor/model.hpp"

namespace veritensor {
namespace {

using testing::TempDir;

struct Run {
  int rc = -1;
  std::string out;
};

/// Runs the command-line tool and captures stdout.
Run cli(const std::string& args) {
  const std::string cmd = std::string(VERITENSOR_CLI) + " " + args + " 2>/dev/null";
  FILE* p = popen(cmd.c_str(), "r");
  Run r;
  if (!p) return r;
  char buf[4096];
  size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = std::make_unique<TempDir>("cli");
    ASSERT_EQ(cli("init --model " + q(model()) + " --seed 7").rc, 0);
    ASSERT_EQ(cli("commit --model " + q(model())).rc, 0);
  }
  static void TearDownTestSuite() { dir_.reset(); }
  static fs::path root() { return dir_->path; }
  static fs::path model() { return dir_->path / "toy"; }

 private:
  static inline std::unique_ptr<TempDir> dir_;
};

const char* kTokens = "--tokens 5,9,200,1,1,64,3,250";
const char* kRoot = "8f3fb97bc9c9f9d7de927a36615f204e6a9fd2541ea05e91bc218bd09b5595ee";

TEST_F(CliTest, CommitPrintsPinnedRootAndIsRepeatable) {
  auto a = cli("commit --model " + q(model()) + " --commitment " + q(root() / "c1.json"));
  auto b = cli("commit --model " + q(model()) + " --commitment " + q(root() / "c2.json"));
  EXPECT_EQ(a.rc, 0);
  EXPECT_EQ(a.out, std::string(kRoot) + "\n");
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(read_bytes(root() / "c1.json"), read_bytes(root() / "c2.json"));
}

TEST_F(CliTest, ProveVerifyRoundTripAndDeterminism) {
  const auto p1 = root() / "p1.bin", p2 = root() / "p2.bin";
  auto a = cli("prove --model " + q(model()) + " " + kTokens + " --proof " + q(p1) + " --threads 1");
  auto b = cli("prove --model " + q(model()) + " " + kTokens + " --proof " + q(p2) + " --threads 3");
  ASSERT_EQ(a.rc, 0);
  ASSERT_EQ(b.rc, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(read_bytes(p1), read_bytes(p2));
  const std::string logits = a.out.substr(a.out.find("logits ") + 7, 64);
  auto v = cli("verify --model " + q(model()) + " --proof " + q(p1) + " " + kTokens + " --logits " + logits);
  EXPECT_EQ(v.rc, 0) << v.out;
  EXPECT_NE(v.out.find("ACCEPT"), std::string::npos);
  v = cli("verify --commitment " + q(model() / "commitment.json") + " --proof " + q(p1) + " " + kTokens +
          " --mode spot --spot 0.2 --seed 4 --threads 2");
  EXPECT_EQ(v.rc, 0) << v.out;
  v = cli("verify --model " + q(model()) + " --proof " + q(p1) + " " + kTokens + " --next 100000");
  EXPECT_EQ(v.rc, 1);
}

TEST_F(CliTest, TamperedProofIsRejectedWithPath) {
  const auto p = root() / "pt.bin";
  ASSERT_EQ(cli("prove --model " + q(model()) + " " + kTokens + " --proof " + q(p)).rc, 0);
  auto bytes = read_bytes(p);
  for (size_t at : {bytes.size() / 3, bytes.size() / 2, bytes.size() - 9}) {
    auto t = bytes;
    t[at] ^= 0x10;
    write_bytes(root() / "flip.bin", t);
    auto v = cli("verify --model " + q(model()) + " --proof " + q(root() / "flip.bin") + " " + kTokens);
    EXPECT_EQ(v.rc, 1) << at;
    EXPECT_EQ(v.out.rfind("REJECT ", 0), 0u) << v.out;
    EXPECT_GT(v.out.size(), 10u);
  }
  // A proof checked against another model's commitment fails the binding check.
  ASSERT_EQ(cli("init --model " + q(root() / "other") + " --seed 8").rc, 0);
  ASSERT_EQ(cli("commit --model " + q(root() / "other")).rc, 0);
  auto v = cli("verify --model " + q(root() / "other") + " --proof " + q(p) + " " + kTokens);
  EXPECT_EQ(v.rc, 1);
  EXPECT_NE(v.out.find("commitment root"), std::string::npos) << v.out;
}

TEST_F(CliTest, ExitCodesForBadInputs) {
  const auto bad = root() / "bad";
  fs::copy(model(), bad, fs::copy_options::recursive);
  write_text(bad / "manifest.json", "{\"format\": 3");
  EXPECT_EQ(cli("commit --model " + q(bad)).rc, 2);

  fs::remove_all(bad);
  fs::copy(model(), bad, fs::copy_options::recursive);
  auto b = read_bytes(bad / "layer1.wo.bin");
  b.resize(b.size() / 2);
  write_bytes(bad / "layer1.wo.bin", b);
  EXPECT_EQ(cli("commit --model " + q(bad)).rc, 3);

  EXPECT_EQ(cli("commit --model " + q(root() / "absent")).rc, 4);
  EXPECT_EQ(cli("prove --model " + q(model()) + " --tokens '' --proof " + q(root() / "x.bin")).rc, 2);
  EXPECT_EQ(cli("prove --model " + q(model()) + " --tokens 1,x --proof " + q(root() / "x.bin")).rc, 2);
  EXPECT_EQ(cli("prove --model " + q(model()) + " --tokens 1,999 --proof " + q(root() / "x.bin")).rc, 2);
  EXPECT_EQ(cli("prove --model " + q(model()) + " --tokens 1 --q 12 --proof " + q(root() / "x.bin")).rc, 2);
  EXPECT_EQ(cli("prove --model " + q(model()) + " --tokens 1 --proof " + q(root() / "no/such/dir/x.bin")).rc, 4);
  EXPECT_EQ(cli("verify --model " + q(model()) + " --proof " + q(root() / "missing.bin") + " " + kTokens).rc, 4);
  EXPECT_EQ(cli("verify --model " + q(model()) + " --proof x --tokens 1 --mode fast").rc, 2);
  EXPECT_EQ(cli("shape conv2d --rows 2 --dim 4 --segment 2").rc, 2);
  EXPECT_EQ(cli("").rc, 2);
  EXPECT_EQ(cli("frobnicate").rc, 2);
  EXPECT_EQ(cli("--help").rc, 0);
}

TEST_F(CliTest, ShapeReproducesPublishedCounts) {
  EXPECT_EQ(cli("shape embedding --rows 24 --dim 7168 --segment 224").out, "segment 768\nrow 24\ncomponent 1\n");
  auto g = cli("shape gemm --a 24 --n 7168 --b 512 --segment 112");
  EXPECT_EQ(g.rc, 0);
  EXPECT_NE(g.out.find("xproof 64\nwproof 64\n"), std::string::npos) << g.out;
  EXPECT_NE(g.out.find("component 1\n"), std::string::npos);
  auto s = cli("shape expert_selector --rows 24 --dim 256 --groups 8");
  EXPECT_EQ(s.out, "group 192\ngroupRow 24\nsortedGroup 192\nsortedGroupRow 24\ncomponent 1\n");
}

TEST_F(CliTest, SelftestPasses) {
  auto r = cli("selftest --threads 2");
  EXPECT_EQ(r.rc, 0) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

}  // namespace
}  // namespace veritensor
