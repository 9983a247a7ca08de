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

// Spattack: a malicious client that approximates a target and a non-target
// user group with synthetic embeddings, then pushes the target items toward
// the first group and away from the second.

#pragma once

#include <functional>
#include <span>
#include <vector>

#include "fedpoison/fedsim.hpp"
#include "fedpoison/model.hpp"

namespace fedpoison {

struct AttackToggles {
  bool repulsion = true;       // inter-group margin loss
  bool relevant_items = true;  // augment interested items with nearest neighbours
  bool alignment = true;       // target / relevant cosine alignment
  bool adaptive_tuning = true; // rank-driven group coefficients
};

struct AttackConfig {
  std::vector<ItemId> target_items;      // ascending
  std::vector<ItemId> interested_items;  // ascending
  double margin = 1.0;
  double alignment_weight = 1.0;
  int relevant_top_k = 10;
  int approx_count = 8;
  int approx_steps = 20;
  double approx_lr = 0.01;
  int promotion_steps = 10;
  double promotion_lr = 0.05;
  // Upper bound on the L2 norm of the upload; <= 0 disables it.
  double norm_budget = 0.0;
  AttackToggles toggles;

  // Throws std::invalid_argument. num_items < 0 skips the range checks.
  void validate(int num_items = -1) const;
};

struct AttackState {
  RowMatrix target_users;      // m x d
  RowMatrix non_target_users;  // m x d
  std::vector<ItemId> relevant_items;     // ascending, contains the interested items
  std::vector<ItemId> non_target_sample;  // ascending
  double gamma_target = 0.5;
  double gamma_non_target = 0.5;
};

// Both groups drawn from N(0, 0.01), target rows first.
AttackState init_attack_state(const AttackConfig& config, int embed_dim, Rng& rng);

// Interested items plus the k items closest (cosine) to their centroid,
// excluding the sorted `excluded` ids. Ties go to the smaller id.
std::vector<ItemId> build_relevant_items(const GlobalParams& params, std::span<const ItemId> interested,
                                         std::span<const ItemId> excluded, int k);

struct ApproximationTerms {
  double target = 0.0;
  double non_target = 0.0;
  double repulsion = 0.0;
  double total() const { return target + non_target + repulsion; }
};

// Approximation objective at the current state embeddings. Gradients with
// respect to the two embedding blocks are written when the pointers are set.
ApproximationTerms approximation_loss(const GlobalParams& params, const AttackState& state,
                                      std::span<const ItemId> target_items, double margin, bool repulsion,
                                      RowMatrix* d_target = nullptr, RowMatrix* d_non_target = nullptr);

// Mean pairwise cross-group L2 distance.
double mean_group_distance(const AttackState& state);

// Resamples the non-target sample and runs approx_steps of gradient descent on
// the group embeddings with V and Theta held fixed.
void approximation_stage(const GlobalParams& params, const AttackConfig& config, AttackState& state, Rng& rng);

// Rank of `item` among all items for one user (1 = best, ties by id) divided
// by the item count.
double normalized_rank(const GlobalParams& params, const Vector& user, ItemId item);

struct GammaWeights {
  double target = 0.5;
  double non_target = 0.5;
};

GammaWeights compute_gamma(const GlobalParams& params, const AttackState& state, std::span<const ItemId> target_items);

struct PromotionCoefficients {
  double target = 1.0;
  double non_target = 1.0;
};

PromotionCoefficients promotion_coefficients(GammaWeights gamma, int round_index, int global_epochs, bool adaptive);

// Trainable part of the promotion problem.
struct PromotionVariables {
  RowMatrix target_rows;  // aligned with the target item list
  Mlp model;
};

struct PromotionTerms {
  double target = 0.0;
  double non_target = 0.0;
  double similarity = 0.0;
  double total = 0.0;  // weighted
};

// Weighted promotion objective. relevant_rows are treated as constants.
PromotionTerms promotion_loss(const PromotionVariables& vars, const AttackState& state, const RowMatrix& relevant_rows,
                              PromotionCoefficients coefficients, double alignment_weight,
                              PromotionVariables* gradient = nullptr);

// Runs promotion_steps of gradient descent and returns the pseudo-gradient
// (broadcast - trained) / server_lr over the target rows and Theta.
ClientUpdate promotion_stage(const GlobalParams& params, const AttackState& state, const AttackConfig& config,
                             int round_index, int global_epochs, double server_lr);

ClientUpdate malicious_client_round(const GlobalParams& params, const AttackConfig& config, AttackState& state,
                                    int round_index, int global_epochs, double server_lr, Rng& rng);

struct AttackSnapshot {
  int round = 0;
  ClientId client = 0;
  RowMatrix target_users;
  RowMatrix non_target_users;
  std::vector<ItemId> target_items;
  RowMatrix target_item_rows;  // after this client's promotion
  std::vector<ItemId> relevant_items;
  RowMatrix relevant_item_rows;
};

class SpattackClient final : public Client {
 public:
  using SnapshotSink = std::function<void(const AttackSnapshot&)>;

  SpattackClient(ClientId id, AttackConfig config, AttackState state);

  ClientId id() const override { return id_; }
  ClientRole role() const override { return ClientRole::kMalicious; }
  ClientUpdate local_update(const GlobalParams& broadcast, const RoundContext& context, Rng& rng) override;

  const AttackState& state() const { return state_; }
  const AttackConfig& config() const { return config_; }
  // Called from the worker thread after each round.
  void set_snapshot_sink(SnapshotSink sink) { sink_ = std::move(sink); }

 private:
  ClientId id_;
  AttackConfig config_;
  AttackState state_;
  SnapshotSink sink_;
};

}  // namespace fedpoison
