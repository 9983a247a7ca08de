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

#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedpoison/data.hpp"
#include "fedpoison/model.hpp"

namespace fedpoison {

// Top-K recommendation over items the user has not interacted with in train.
// Items are ordered by descending logit (equivalently descending predicted
// probability before clamping), ties by ascending item id.
struct TopKList {
  UserId user = 0;
  std::vector<ItemId> items;
  bool truncated = false;  // fewer than K candidates existed
};

TopKList top_k(UserId user, const Vector& user_embedding, std::span<const ItemId> interacted_sorted,
               const GlobalParams& params, int k);

// Caches the item half of the first layer so that scoring every item for
// many users costs one pass over the table per user.
class Recommender {
 public:
  explicit Recommender(const GlobalParams& params);
  TopKList top_k(UserId user, const Vector& user_embedding, std::span<const ItemId> interacted_sorted, int k) const;
  std::vector<double> scores(const Vector& user_embedding) const;

 private:
  const GlobalParams* params_;
  RowMatrix item_projection_;
};

// Exposure ratio of the target items in a group (lists indexed by user id).
// A target item with no eligible user contributes 0. Throws if no target item
// has an eligible user.
double exposure_ratio(std::span<const UserId> group, std::span<const ItemId> target_items,
                      const std::vector<TopKList>& lists, const InteractionDataset& dataset, int k);

double alpha_ger(double er_target, double er_non_target, double alpha);

struct HitNdcg {
  double hit_ratio = 0.0;
  double ndcg = 0.0;
  std::size_t users = 0;
};

// Over users in `group` that hold a test item. Throws if there are none.
HitNdcg hit_ratio_ndcg(std::span<const UserId> group, const InteractionDataset& dataset,
                       const std::vector<TopKList>& lists, int k);

enum class UserGroup { kTarget, kNonTarget, kAll };
std::string_view to_string(UserGroup group);

struct GroupMetrics {
  std::map<int, double> exposure;  // K -> ER@K
  std::map<int, double> hit_ratio;
  std::map<int, double> ndcg;
};

struct MetricsReport {
  int round = 0;
  std::map<UserGroup, GroupMetrics> groups;
  std::map<int, std::map<double, double>> alpha_ger;  // K -> alpha -> value

  nlohmann::json to_json() const;
  // Rows of (round, group, metric, value) in a fixed order.
  std::vector<std::string> csv_rows() const;
};

struct EvaluationSpec {
  std::vector<int> k_list{5, 10};
  std::vector<double> alpha_list{0.5};
};

MetricsReport evaluate(const GlobalParams& params, std::span<const Vector> user_embeddings,
                       const InteractionDataset& dataset, const GroupLabeling& groups,
                       std::span<const ItemId> target_items, const EvaluationSpec& spec, int round);

std::string format_metric_value(double value);

}  // namespace fedpoison
