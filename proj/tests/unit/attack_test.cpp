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
#include <random>

#include <gtest/gtest.h>

#include "fedpoison/attack.hpp"
#include "gradient_checks.hpp"
#include "oracles.hpp"

namespace fedpoison {
namespace {

ModelConfig small() {
  ModelConfig c;
  c.embed_dim = 4;
  c.hidden_dims = {6};
  return c;
}

AttackConfig attack_config() {
  AttackConfig a;
  a.target_items = {7};
  a.interested_items = {1, 2};
  a.approx_count = 3;
  a.relevant_top_k = 3;
  a.approx_steps = 5;
  a.promotion_steps = 4;
  return a;
}

TEST(Attack, ApproximationGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 25; ++trial) {
    const auto r = oracle::check_approximation_gradient(rng);
    EXPECT_LT(r.gradient_error, 1e-4);
    EXPECT_LT(r.loss_error, 1e-12);
  }
}

TEST(Attack, PromotionGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 25; ++trial) {
    const auto r = oracle::check_promotion_gradient(rng);
    EXPECT_LT(r.gradient_error, 1e-4);
    EXPECT_LT(r.loss_error, 1e-12);
  }
}

TEST(Attack, RepulsionHasNoGradientAtCoincidentPoints) {
  std::mt19937_64 rng(1);
  GlobalParams p = oracle::random_params(small(), 4, rng);
  AttackState s;
  s.target_users = RowMatrix::Zero(1, 4);
  s.non_target_users = RowMatrix::Zero(1, 4);
  RowMatrix dt, dn;
  const auto with = approximation_loss(p, s, std::vector<ItemId>{}, 2.0, true, &dt, &dn);
  const auto without = approximation_loss(p, s, std::vector<ItemId>{}, 2.0, false);
  EXPECT_EQ(with.repulsion, 2.0);
  EXPECT_EQ(without.repulsion, 0.0);
  EXPECT_EQ(dt.squaredNorm(), 0.0);
  EXPECT_EQ(dn.squaredNorm(), 0.0);
}

TEST(Attack, RelevantItemsMatchFullSort) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    // Dyadic embeddings produce many exact cosine ties.
    const auto p = oracle::dyadic_params(small(), 20, rng);
    const std::vector<ItemId> interested{3, 11};
    const std::vector<ItemId> excluded{0, 5};
    for (int k : {0, 1, 4, 30}) {
      EXPECT_EQ(build_relevant_items(p, interested, excluded, k), oracle::relevant_items(p, interested, excluded, k));
    }
  }
}

TEST(Attack, NormalizedRankMatchesFullSort) {
  std::mt19937_64 rng(43);
  const auto p = oracle::dyadic_params(small(), 25, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const Vector u = oracle::dyadic_vector(4, rng);
    for (ItemId i = 0; i < 25; ++i) EXPECT_EQ(normalized_rank(p, u, i), oracle::normalized_rank(p, u, i));
  }
}

TEST(Attack, GammaFollowsGroupRanks) {
  std::mt19937_64 rng(47);
  const auto p = oracle::random_params(small(), 12, rng);
  AttackState s;
  s.target_users = oracle::random_rows(2, 4, rng);
  s.non_target_users = oracle::random_rows(2, 4, rng);
  const std::vector<ItemId> targets{4};
  double rg = 0.0, rn = 0.0;
  for (int u = 0; u < 2; ++u) {
    rg += oracle::normalized_rank(p, s.target_users.row(u).transpose(), 4) / 2.0;
    rn += (1.0 - oracle::normalized_rank(p, s.non_target_users.row(u).transpose(), 4)) / 2.0;
  }
  const auto g = compute_gamma(p, s, targets);
  EXPECT_NEAR(g.target, rg / (rg + rn), 1e-12);
  EXPECT_NEAR(g.target + g.non_target, 1.0, 1e-15);
}

TEST(Attack, PromotionCoefficientsScheduleQuadratically) {
  const GammaWeights g{0.8, 0.2};
  const auto start = promotion_coefficients(g, 0, 10, true);
  EXPECT_EQ(start.target, 1.0);
  EXPECT_EQ(start.non_target, 1.0);
  const auto mid = promotion_coefficients(g, 5, 10, true);
  EXPECT_NEAR(mid.target, 1.2, 1e-15);
  EXPECT_NEAR(mid.non_target, 0.95, 1e-15);
  const auto off = promotion_coefficients(g, 9, 10, false);
  EXPECT_EQ(off.target, 1.0);
  EXPECT_EQ(off.non_target, 1.0);
}

TEST(Attack, PromotionUploadIsScaledGradientSum) {
  std::mt19937_64 rng(53);
  const auto p = oracle::random_params(small(), 10, rng);
  auto a = attack_config();
  a.toggles.adaptive_tuning = false;
  AttackState s;
  s.target_users = oracle::random_rows(3, 4, rng);
  s.non_target_users = oracle::random_rows(3, 4, rng);
  s.relevant_items = {1, 2, 5};
  const double server_lr = 0.01;
  const auto up = promotion_stage(p, s, a, 0, 10, server_lr);
  ASSERT_EQ(up.items.ids, a.target_items);

  // Replay the descent with the public objective.
  RowMatrix relevant(3, 4);
  for (int r = 0; r < 3; ++r) relevant.row(r) = p.item_embeddings.row(s.relevant_items[static_cast<std::size_t>(r)]);
  PromotionVariables vars{p.item_embeddings.row(7), p.model};
  const PromotionVariables start = vars;
  for (int step = 0; step < a.promotion_steps; ++step) {
    PromotionVariables g;
    promotion_loss(vars, s, relevant, {}, a.alignment_weight, &g);
    vars.target_rows -= a.promotion_lr * g.target_rows;
    vars.model.add_scaled(g.model, -a.promotion_lr);
  }
  const RowMatrix moved = (start.target_rows - vars.target_rows) / server_lr;
  EXPECT_LT((up.items.rows - moved).cwiseAbs().maxCoeff(), 1e-9 * (1.0 + moved.cwiseAbs().maxCoeff()));

  a.norm_budget = 0.5;
  const auto clipped = promotion_stage(p, s, a, 0, 10, server_lr);
  EXPECT_NEAR(std::sqrt(clipped.squared_norm()), 0.5, 1e-12);
}

TEST(Attack, MaliciousRoundIsSeeded) {
  std::mt19937_64 gen(59);
  const auto p = oracle::random_params(small(), 12, gen);
  const auto a = attack_config();
  Rng r0(5);
  auto s1 = init_attack_state(a, 4, r0);
  auto s2 = s1;
  Rng x(99), y(99);
  const auto u1 = malicious_client_round(p, a, s1, 3, 10, 0.01, x);
  const auto u2 = malicious_client_round(p, a, s2, 3, 10, 0.01, y);
  EXPECT_EQ(u1.items.rows, u2.items.rows);
  EXPECT_TRUE(u1.model == u2.model);
  EXPECT_EQ(s1.non_target_sample, s2.non_target_sample);
  EXPECT_EQ(s1.non_target_sample.size(), a.interested_items.size());
  for (ItemId i : s1.non_target_sample) {
    EXPECT_FALSE(std::binary_search(s1.relevant_items.begin(), s1.relevant_items.end(), i));
    EXPECT_NE(i, 7);
  }
  EXPECT_EQ(s1.relevant_items.size(), a.interested_items.size() + 3);
}

TEST(Attack, ConfigValidation) {
  auto a = attack_config();
  EXPECT_NO_THROW(a.validate(10));
  EXPECT_THROW(a.validate(5), std::invalid_argument);
  a.interested_items = {7};
  EXPECT_THROW(a.validate(), std::invalid_argument);
  a = attack_config();
  a.margin = 0.0;
  EXPECT_THROW(a.validate(), std::invalid_argument);
  a = attack_config();
  a.target_items = {3, 2};
  EXPECT_THROW(a.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace fedpoison
