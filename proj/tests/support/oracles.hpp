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

// Reference implementations used by the unit and acceptance tests. Everything
// here is written for clarity: straight-line loops, full sorts, no caching.

#pragma once

#include <functional>
#include <random>
#include <vector>

#include "fedpoison/attack.hpp"
#include "fedpoison/data.hpp"
#include "fedpoison/defense.hpp"
#include "fedpoison/metrics.hpp"
#include "fedpoison/model.hpp"

namespace fedpoison::oracle {

// ---- model ----------------------------------------------------------------

// Forward pass on the concatenated input [u ; v].
double logit(const Mlp& model, const Vector& user, const Vector& item);
double bce(const Mlp& model, const Vector& user, const RowMatrix& items, const std::vector<ItemId>& ids,
           const std::vector<double>& labels);

// Smallest |pre-activation| over the hidden units for one pair. Finite
// differences are only meaningful away from the ReLU kinks.
double min_abs_preactivation(const Mlp& model, const Vector& user, const Vector& item);

// ---- finite differences ---------------------------------------------------

Vector central_difference(const std::function<double(const Vector&)>& f, const Vector& x, double h = 1e-5);

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
double max_relative_error(const Vector& a, const Vector& b, double floor = 1e-6);

Vector flatten(const Mlp& model);
Mlp unflatten(const Mlp& shape, const Vector& flat);

// ---- attack objectives ----------------------------------------------------

ApproximationTerms approximation_terms(const GlobalParams& params, const AttackState& state,
                                       const std::vector<ItemId>& target_items, double margin, bool repulsion);
PromotionTerms promotion_terms(const PromotionVariables& vars, const AttackState& state,
                               const RowMatrix& relevant_rows, PromotionCoefficients c, double alignment_weight);

// Relevant-item set by sorting every candidate by cosine to the centroid.
std::vector<ItemId> relevant_items(const GlobalParams& params, const std::vector<ItemId>& interested,
                                   const std::vector<ItemId>& excluded, int k);
// 1-based rank of `item` among all items by descending logit, ties by id,
// divided by the item count.
double normalized_rank(const GlobalParams& params, const Vector& user, ItemId item);

// ---- metrics --------------------------------------------------------------

// Every non-train item ordered by descending logit, ties by ascending id.
std::vector<ItemId> full_ranking(const GlobalParams& params, const Vector& user, const std::vector<ItemId>& train);

struct GroupScores {
  double exposure = 0.0;
  double hit_ratio = 0.0;
  double ndcg = 0.0;
  bool has_test = false;
};

GroupScores group_scores(const std::vector<std::vector<ItemId>>& rankings, const std::vector<UserId>& group,
                         const InteractionDataset& dataset, const std::vector<ItemId>& targets, int k);

// ---- defenses -------------------------------------------------------------

Vector median(const std::vector<FlatUpdate>& updates);
Vector trimmed_mean(const std::vector<FlatUpdate>& updates, double beta);

struct Selection {
  std::vector<ClientId> selected;
  Vector aggregate;
};
Selection krum(const std::vector<FlatUpdate>& updates, int f, int multi_m);
Selection bulyan(const std::vector<FlatUpdate>& updates, int f);

// ---- random instances -----------------------------------------------------

// Parameters with every entry a multiple of 1/4 in [-1, 1]. With small
// dimensions all arithmetic on them is exact.
GlobalParams dyadic_params(const ModelConfig& config, int num_items, std::mt19937_64& rng);
Vector dyadic_vector(int n, std::mt19937_64& rng);

GlobalParams random_params(const ModelConfig& config, int num_items, std::mt19937_64& rng, double scale = 0.5);
Vector random_vector(int n, std::mt19937_64& rng, double scale = 0.5);
RowMatrix random_rows(int rows, int cols, std::mt19937_64& rng, double scale = 0.5);

}  // namespace fedpoison::oracle
