// Copyright 2026 The fedpoison Authors
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

#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "fedpoison/runner.hpp"
#include "synthetic.hpp"

namespace fedpoison {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class RunnerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("fedpoison_runner_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    oracle::write_synthetic_ml100k(dir_ / "u.data", 60, 40, 5);
  }

  json base() const {
    return {{"dataset.path", (dir_ / "u.data").string()},
            {"model.embed_dim", 4},
            {"model.hidden_dims", {4}},
            {"training.global_epochs", 3},
            {"training.batch_size", 8},
            {"training.learning_rate", 0.01},
            {"attack.malicious_fraction", 0.05},
            {"attack.approx_count", 2},
            {"attack.approx_steps", 3},
            {"attack.promotion_steps", 2},
            {"eval.every", 2},
            {"eval.dump_embeddings", true},
            {"seed", 4},
            {"output_dir", (dir_ / "runs").string()}};
  }

  fs::path dir_;
};

TEST_F(RunnerTest, WritesOutputs) {
  const auto man = run_experiment(ExperimentConfig::from_json(base()));
  ASSERT_TRUE(man.ok()) << man.error;
  EXPECT_EQ(man.run_dir.filename().string(), man.run_id);
  EXPECT_TRUE(man.run_id.ends_with("-s4"));
  for (const char* f : {"manifest.json", "metrics.csv", "rounds.jsonl", "embeddings/round_1.csv", "embeddings/round_3.csv"}) {
    EXPECT_TRUE(fs::exists(man.run_dir / f)) << f;
  }
  const auto csv = slurp(man.run_dir / "metrics.csv");
  EXPECT_TRUE(csv.starts_with("round,group,metric,value\n"));
  EXPECT_NE(csv.find("\n2,target,ER@5,"), std::string::npos);
  EXPECT_NE(csv.find("\n3,all,0.5-GER@10,"), std::string::npos);
  EXPECT_EQ(csv.find("\n1,"), std::string::npos);  // round 1 is not an evaluation round

  std::ifstream log(man.run_dir / "rounds.jsonl");
  int lines = 0;
  for (std::string line; std::getline(log, line); ++lines) EXPECT_EQ(json::parse(line)["round"], lines + 1);
  EXPECT_EQ(lines, 3);

  const auto manifest = json::parse(slurp(man.run_dir / "manifest.json"));
  EXPECT_EQ(manifest["status"], "ok");
  EXPECT_EQ(manifest["setup"]["malicious_clients"], 3);
  EXPECT_EQ(manifest["setup"]["benign_clients"], 60);
  EXPECT_EQ(manifest["version"], version_string());

  const auto emb = slurp(man.run_dir / "embeddings" / "round_2.csv");
  EXPECT_TRUE(emb.starts_with("client,kind,index,e0,e1,e2,e3\n"));
  EXPECT_NE(emb.find(",target_item,"), std::string::npos);
}

TEST_F(RunnerTest, RerunAndThreadCountGiveIdenticalMetrics) {
  auto doc = base();
  const auto a = run_experiment(ExperimentConfig::from_json(doc));
  const auto first = slurp(a.run_dir / "metrics.csv");
  const auto b = run_experiment(ExperimentConfig::from_json(doc));
  EXPECT_EQ(first, slurp(b.run_dir / "metrics.csv"));
  doc["training.threads"] = 3;
  doc["output_dir"] = (dir_ / "threaded").string();
  const auto c = run_experiment(ExperimentConfig::from_json(doc));
  EXPECT_EQ(first, slurp(c.run_dir / "metrics.csv"));
  doc["seed"] = 5;
  const auto d = run_experiment(ExperimentConfig::from_json(doc));
  EXPECT_NE(first, slurp(d.run_dir / "metrics.csv"));
}

TEST_F(RunnerTest, FailuresAreRecorded) {
  auto doc = base();
  doc["attack.target_items"] = {500};
  const auto man = run_experiment(ExperimentConfig::from_json(doc));
  EXPECT_FALSE(man.ok());
  EXPECT_FALSE(man.error.empty());
  const auto manifest = json::parse(slurp(man.run_dir / "manifest.json"));
  EXPECT_EQ(manifest["status"], "failed");
}

TEST_F(RunnerTest, DefensesRunEndToEnd) {
  for (const char* kind : {"normbound", "median", "trimmedmean", "krum", "multikrum", "bulyan"}) {
    auto doc = base();
    doc["defense.kind"] = kind;
    doc["eval.dump_embeddings"] = false;
    const auto man = run_experiment(ExperimentConfig::from_json(doc));
    EXPECT_TRUE(man.ok()) << kind << ": " << man.error;
    if (std::string(kind) == "normbound") EXPECT_GT(man.setup["defense"]["norm_threshold"].get<double>(), 0.0);
  }
}

TEST_F(RunnerTest, MatrixWritesComparison) {
  const json entries = json::parse(R"([{"name": "clean", "set": {"attack.malicious_fraction": 0.0}},
                                       {"attack.margin": 2.0}])");
  const auto parsed = parse_matrix_entries(entries);
  ASSERT_EQ(parsed.size(), 2u);
  EXPECT_EQ(parsed[0].name, "clean");
  auto doc = base();
  doc["eval.dump_embeddings"] = false;
  const auto result = run_matrix(unflatten_keys(doc), parsed, dir_ / "matrix");
  ASSERT_EQ(result.manifests.size(), 2u);
  const auto csv = slurp(result.comparison_csv);
  EXPECT_TRUE(csv.starts_with("config,run_id,seed,status,"));
  EXPECT_NE(csv.find("\nclean,"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_THROW(parse_matrix_entries(json::object()), ConfigError);
}

TEST(Runner, MaliciousCount) {
  EXPECT_EQ(malicious_count(0.0, 943), 0);
  EXPECT_EQ(malicious_count(0.002, 943), 2);
  EXPECT_EQ(malicious_count(0.0001, 10), 1);
}

}  // namespace
}  // namespace fedpoison
