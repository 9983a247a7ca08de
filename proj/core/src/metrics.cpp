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

#include "fedpoison/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace fedpoison {

namespace {

TopKList select_top_k(UserId user, const std::vector<double>& scores, std::span<const ItemId> interacted_sorted,
                      int k) {
  if (k < 1) throw std::invalid_argument("top_k: K must be >= 1");
  std::vector<ItemId> candidates;
  candidates.reserve(scores.size());
  for (ItemId i = 0; i < static_cast<ItemId>(scores.size()); ++i) {
    if (!std::binary_search(interacted_sorted.begin(), interacted_sorted.end(), i)) candidates.push_back(i);
  }
  auto better = [&](ItemId a, ItemId b) {
    const double sa = scores[static_cast<std::size_t>(a)];
    const double sb = scores[static_cast<std::size_t>(b)];
    return sa > sb || (sa == sb && a < b);
  };
  TopKList out;
  out.user = user;
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), candidates.size());
  out.truncated = take < static_cast<std::size_t>(k);
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take), candidates.end(),
                    better);
  out.items.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take));
  return out;
}

}  // namespace

Recommender::Recommender(const GlobalParams& params) : params_(&params) {
  const auto hidden = params.model.layers.front().weight.rows();
  item_projection_.resize(params.num_items(), hidden);
  for (ItemId i = 0; i < params.num_items(); ++i) {
    project_item(params.model, params.item_embeddings.row(i).data(), item_projection_.row(i).data());
  }
}

std::vector<double> Recommender::scores(const Vector& user_embedding) const {
  if (user_embedding.size() != params_->embed_dim()) throw std::invalid_argument("user embedding size mismatch");
  Vector user_proj(item_projection_.cols());
  project_user(params_->model, user_embedding.data(), user_proj.data());
  NcfKernel kernel(params_->model);
  std::vector<double> out(static_cast<std::size_t>(params_->num_items()));
  for (ItemId i = 0; i < params_->num_items(); ++i) {
    out[static_cast<std::size_t>(i)] = kernel.forward_projected(user_proj.data(), item_projection_.row(i).data());
  }
  return out;
}

TopKList Recommender::top_k(UserId user, const Vector& user_embedding, std::span<const ItemId> interacted_sorted,
                            int k) const {
  return select_top_k(user, scores(user_embedding), interacted_sorted, k);
}

TopKList top_k(UserId user, const Vector& user_embedding, std::span<const ItemId> interacted_sorted,
               const GlobalParams& params, int k) {
  TopKList out = Recommender(params).top_k(user, user_embedding, interacted_sorted, k);
  if (out.truncated) spdlog::debug("top_k: user {} has only {} candidates for K = {}", user, out.items.size(), k);
  return out;
}

double exposure_ratio(std::span<const UserId> group, std::span<const ItemId> target_items,
                      const std::vector<TopKList>& lists, const InteractionDataset& dataset, int k) {
  if (group.empty()) throw std::invalid_argument("exposure_ratio: empty user group");
  if (target_items.empty()) throw std::invalid_argument("exposure_ratio: no target items");
  double total = 0.0;
  std::size_t defined = 0;
  for (ItemId v : target_items) {
    std::size_t eligible = 0;
    std::size_t exposed = 0;
    for (UserId u : group) {
      if (dataset.in_train(u, v)) continue;
      ++eligible;
      const auto& items = lists.at(static_cast<std::size_t>(u)).items;
      const auto depth = std::min<std::size_t>(static_cast<std::size_t>(k), items.size());
      if (std::find(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(depth), v) !=
          items.begin() + static_cast<std::ptrdiff_t>(depth)) {
        ++exposed;
      }
    }
    if (eligible == 0) {
      spdlog::warn("exposure_ratio: target item {} has no eligible user in the group; counted as 0", v);
      continue;
    }
    ++defined;
    total += static_cast<double>(exposed) / static_cast<double>(eligible);
  }
  if (defined == 0) throw std::domain_error("exposure_ratio: no target item has an eligible user");
  return total / static_cast<double>(target_items.size());
}

double alpha_ger(double er_target, double er_non_target, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha_ger: alpha must be in [0, 1]");
  return alpha * er_target + (1.0 - alpha) * (1.0 - er_non_target);
}

HitNdcg hit_ratio_ndcg(std::span<const UserId> group, const InteractionDataset& dataset,
                       const std::vector<TopKList>& lists, int k) {
  HitNdcg out;
  double hits = 0.0;
  double gain = 0.0;
  for (UserId u : group) {
    const auto& held = dataset.test.at(static_cast<std::size_t>(u));
    if (!held) continue;
    ++out.users;
    const auto& items = lists.at(static_cast<std::size_t>(u)).items;
    const auto depth = std::min<std::size_t>(static_cast<std::size_t>(k), items.size());
    for (std::size_t r = 0; r < depth; ++r) {
      if (items[r] == *held) {
        hits += 1.0;
        gain += 1.0 / std::log2(static_cast<double>(r) + 2.0);
        break;
      }
    }
  }
  if (out.users == 0) throw std::domain_error("hit_ratio_ndcg: no user with a held-out item");
  out.hit_ratio = hits / static_cast<double>(out.users);
  out.ndcg = gain / static_cast<double>(out.users);
  return out;
}

std::string_view to_string(UserGroup group) {
  switch (group) {
    case UserGroup::kTarget: return "target";
    case UserGroup::kNonTarget: return "non_target";
    case UserGroup::kAll: return "all";
  }
  return "unknown";
}

std::string format_metric_value(double value) { return fmt::format("{:.10f}", value); }

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["round"] = round;
  for (const auto& [group, m] : groups) {
    auto& g = j["groups"][std::string(to_string(group))];
    for (const auto& [k, v] : m.exposure) g[fmt::format("ER@{}", k)] = v;
    for (const auto& [k, v] : m.hit_ratio) g[fmt::format("HR@{}", k)] = v;
    for (const auto& [k, v] : m.ndcg) g[fmt::format("NDCG@{}", k)] = v;
  }
  for (const auto& [k, by_alpha] : alpha_ger) {
    for (const auto& [alpha, v] : by_alpha) j["alpha_ger"][fmt::format("{}-GER@{}", alpha, k)] = v;
  }
  return j;
}

std::vector<std::string> MetricsReport::csv_rows() const {
  std::vector<std::string> rows;
  for (const auto& [group, m] : groups) {
    const auto name = to_string(group);
    for (const auto& [k, v] : m.exposure) rows.push_back(fmt::format("{},{},ER@{},{}", round, name, k, format_metric_value(v)));
    for (const auto& [k, v] : m.hit_ratio) rows.push_back(fmt::format("{},{},HR@{},{}", round, name, k, format_metric_value(v)));
    for (const auto& [k, v] : m.ndcg) rows.push_back(fmt::format("{},{},NDCG@{},{}", round, name, k, format_metric_value(v)));
  }
  for (const auto& [k, by_alpha] : alpha_ger) {
    for (const auto& [alpha, v] : by_alpha) {
      rows.push_back(fmt::format("{},all,{}-GER@{},{}", round, alpha, k, format_metric_value(v)));
    }
  }
  return rows;
}

MetricsReport evaluate(const GlobalParams& params, std::span<const Vector> user_embeddings,
                       const InteractionDataset& dataset, const GroupLabeling& groups,
                       std::span<const ItemId> target_items, const EvaluationSpec& spec, int round) {
  if (spec.k_list.empty()) throw std::invalid_argument("evaluate: empty K list");
  if (user_embeddings.size() != static_cast<std::size_t>(dataset.num_users)) {
    throw std::invalid_argument("evaluate: one embedding per benign user required");
  }
  const int max_k = *std::max_element(spec.k_list.begin(), spec.k_list.end());
  const Recommender recommender(params);
  std::vector<TopKList> lists(static_cast<std::size_t>(dataset.num_users));
  for (UserId u = 0; u < dataset.num_users; ++u) {
    lists[static_cast<std::size_t>(u)] =
        recommender.top_k(u, user_embeddings[static_cast<std::size_t>(u)], dataset.train[static_cast<std::size_t>(u)], max_k);
  }
  std::vector<UserId> all(static_cast<std::size_t>(dataset.num_users));
  std::iota(all.begin(), all.end(), 0);

  MetricsReport report;
  report.round = round;
  const std::pair<UserGroup, const std::vector<UserId>*> members[] = {
      {UserGroup::kTarget, &groups.target_users},
      {UserGroup::kNonTarget, &groups.non_target_users},
      {UserGroup::kAll, &all},
  };
  for (const auto& [group, users] : members) {
    if (users->empty()) continue;
    GroupMetrics& m = report.groups[group];
    for (int k : spec.k_list) {
      if (!target_items.empty()) m.exposure[k] = exposure_ratio(*users, target_items, lists, dataset, k);
      const bool any_test = std::any_of(users->begin(), users->end(), [&](UserId u) {
        return dataset.test[static_cast<std::size_t>(u)].has_value();
      });
      if (any_test) {
        const auto hn = hit_ratio_ndcg(*users, dataset, lists, k);
        m.hit_ratio[k] = hn.hit_ratio;
        m.ndcg[k] = hn.ndcg;
      }
    }
  }
  const auto t = report.groups.find(UserGroup::kTarget);
  const auto n = report.groups.find(UserGroup::kNonTarget);
  if (t != report.groups.end() && n != report.groups.end()) {
    for (int k : spec.k_list) {
      if (!t->second.exposure.contains(k) || !n->second.exposure.contains(k)) continue;
      for (double alpha : spec.alpha_list) {
        report.alpha_ger[k][alpha] = alpha_ger(t->second.exposure.at(k), n->second.exposure.at(k), alpha);
      }
    }
  }
  return report;
}

}  // namespace fedpoison
