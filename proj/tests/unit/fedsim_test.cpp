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

#include <cmath>
#include <memory>
#include <random>

#include <gtest/gtest.h>

#include "fedpoison/fedsim.hpp"
#include "oracles.hpp"

namespace fedpoison {
namespace {

ModelConfig small() {
  ModelConfig c;
  c.embed_dim = 4;
  c.hidden_dims = {4};
  return c;
}

// Uploads a fixed vector on one item; NaN when poisoned.
class FixedClient final : public Client {
 public:
  FixedClient(ClientId id, double value, bool poisoned = false) : id_(id), value_(value), poisoned_(poisoned) {}
  ClientId id() const override { return id_; }
  ClientRole role() const override { return ClientRole::kMalicious; }
  ClientUpdate local_update(const GlobalParams& broadcast, const RoundContext&, Rng&) override {
    ClientUpdate u;
    u.client_id = id_;
    u.items.ids = {0};
    u.items.rows = RowMatrix::Constant(1, broadcast.embed_dim(), poisoned_ ? std::nan("") : value_);
    u.model = broadcast.model.zeros_like();
    return u;
  }

 private:
  ClientId id_;
  double value_;
  bool poisoned_;
};

struct World {
  GlobalParams params;
  std::vector<std::unique_ptr<BenignClient>> clients;
  std::vector<Client*> population;
  std::vector<ClientId> ids;
};

World make_world(int users, int items, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  World w;
  w.params = oracle::random_params(small(), items, rng, 0.3);
  std::uniform_int_distribution<ItemId> pick(0, items - 1);
  for (int u = 0; u < users; ++u) {
    std::vector<ItemId> pos{pick(rng), pick(rng), pick(rng)};
    std::sort(pos.begin(), pos.end());
    pos.erase(std::unique(pos.begin(), pos.end()), pos.end());
    w.clients.push_back(std::make_unique<BenignClient>(u, pos, oracle::random_vector(4, rng, 0.1)));
    w.population.push_back(w.clients.back().get());
    w.ids.push_back(u);
  }
  return w;
}

TEST(Fedsim, SelectClientsIsSortedDistinctAndSeeded) {
  std::vector<ClientId> pop(50);
  std::iota(pop.begin(), pop.end(), 0);
  Rng a(1), b(1);
  const auto s = select_clients(0, pop, 0.3, a);
  EXPECT_EQ(s.size(), 15u);
  EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
  EXPECT_EQ(std::adjacent_find(s.begin(), s.end()), s.end());
  EXPECT_EQ(s, select_clients(0, pop, 0.3, b));
  Rng c(1);
  EXPECT_EQ(select_clients(0, pop, 1.0, c), pop);
}

TEST(Fedsim, LocalTrainUploadIsSumOfStepGradients) {
  World w = make_world(1, 12, 2);
  TrainingSettings t;
  t.batch_size = 2;
  t.negative_ratio = 1;
  t.learning_rate = 0.05;
  const std::vector<ItemId> positives{1, 4, 6};
  Rng rng(4);
  const auto r = benign_local_train(0, Vector::Constant(4, 0.1), positives, w.params, t, rng);
  EXPECT_TRUE(std::is_sorted(r.update.items.ids.begin(), r.update.items.ids.end()));
  EXPECT_EQ(r.update.train_pairs, 6u);
  EXPECT_NE(r.user_embedding, Vector::Constant(4, 0.1));
  for (ItemId p : positives) EXPECT_GE(r.update.items.find(p), 0);
  Rng again(4);
  const auto r2 = benign_local_train(0, Vector::Constant(4, 0.1), positives, w.params, t, again);
  EXPECT_EQ(r.update.items.rows, r2.update.items.rows);
}

TEST(Fedsim, RoundIsIndependentOfThreadCount) {
  TrainingSettings t;
  t.batch_size = 4;
  GlobalParams results[2];
  for (int k = 0; k < 2; ++k) {
    World w = make_world(30, 20, 7);
    ServerSettings s{0.01, ModelAggregation::kMean, k == 0 ? 1 : 4, 99};
    GlobalParams p = w.params;
    for (int round = 0; round < 3; ++round) {
      RoundPlan plan{round, 3, w.ids, t};
      p = run_round(p, plan, w.population, DefenseConfig{}, s).params;
    }
    results[k] = p;
  }
  EXPECT_TRUE(results[0] == results[1]);
}

TEST(Fedsim, AggregationSumsItemsAndAveragesModel) {
  World w = make_world(0, 3, 1);
  FixedClient a(0, 1.0), b(1, 3.0), bad(2, 0.0, true);
  std::vector<Client*> pop{&a, &b, &bad};
  RoundPlan plan{0, 1, {0, 1, 2}, TrainingSettings{}};
  ServerSettings s{0.5, ModelAggregation::kMean, 1, 0};
  const auto r = run_round(w.params, plan, pop, DefenseConfig{}, s);
  EXPECT_EQ(r.log.dropped, std::vector<ClientId>{2});
  for (int j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(r.params.item_embeddings(0, j), w.params.item_embeddings(0, j) - 2.0);
  EXPECT_EQ(r.params.item_embeddings.row(1), w.params.item_embeddings.row(1));

  GlobalParams p = w.params;
  const auto n = static_cast<Eigen::Index>(flat_size(p));
  Vector agg = Vector::Zero(n);
  agg[n - 1] = 4.0;  // last model coordinate
  apply_aggregate(p, agg, 0.5, ModelAggregation::kMean, 4);
  const Vector before = oracle::flatten(w.params.model), after = oracle::flatten(p.model);
  EXPECT_DOUBLE_EQ(after[after.size() - 1], before[before.size() - 1] - 0.5);
  apply_aggregate(p, agg, 0.5, ModelAggregation::kSum, 4);
  EXPECT_DOUBLE_EQ(oracle::flatten(p.model)[after.size() - 1], before[before.size() - 1] - 2.5);
}

TEST(Fedsim, FlattenLayout) {
  World w = make_world(0, 3, 1);
  ClientUpdate u;
  u.items.ids = {2};
  u.items.rows = RowMatrix::Constant(1, 4, 7.0);
  u.model = w.params.model.zeros_like();
  const auto f = flatten(u, 3, 4);
  EXPECT_EQ(static_cast<std::size_t>(f.values.size()), flat_size(w.params));
  EXPECT_EQ(f.values.segment(8, 4), Vector::Constant(4, 7.0));
  EXPECT_EQ(f.values.head(8).squaredNorm(), 0.0);
}

TEST(Fedsim, PlanValidation) {
  RoundPlan plan{0, 1, {2, 1, 2}, TrainingSettings{}};
  EXPECT_THROW(plan.validate(), std::invalid_argument);
  TrainingSettings t;
  t.batch_size = 0;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  EXPECT_EQ(parse_model_aggregation("sum"), ModelAggregation::kSum);
  EXPECT_THROW(parse_model_aggregation("max"), std::invalid_argument);
}

}  // namespace
}  // namespace fedpoison
