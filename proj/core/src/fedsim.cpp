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

#include "fedpoison/fedsim.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "fedpoison/data.hpp"

namespace fedpoison {

void TrainingSettings::validate() const {
  if (local_epochs < 0) throw std::invalid_argument("local_epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (negative_ratio < 0) throw std::invalid_argument("negative_ratio must be >= 0");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
}

void RoundPlan::validate() const {
  if (global_epochs < 1 || round_index < 0 || round_index >= global_epochs) {
    throw std::invalid_argument(fmt::format("round index {} outside [0, {})", round_index, global_epochs));
  }
  auto ids = selected_client_ids;
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw std::invalid_argument("selected client ids must be unique");
  }
  training.validate();
}

ModelAggregation parse_model_aggregation(std::string_view name) {
  if (name == "sum") return ModelAggregation::kSum;
  if (name == "mean") return ModelAggregation::kMean;
  throw std::invalid_argument(fmt::format("model aggregation must be 'sum' or 'mean', got '{}'", name));
}

std::string_view to_string(ModelAggregation aggregation) {
  return aggregation == ModelAggregation::kSum ? "sum" : "mean";
}

std::size_t flat_size(const GlobalParams& params) {
  return static_cast<std::size_t>(params.item_embeddings.size()) + params.model.parameter_count();
}

FlatUpdate flatten(const ClientUpdate& update, int num_items, int embed_dim) {
  FlatUpdate out;
  out.client_id = update.client_id;
  const auto item_block = static_cast<Eigen::Index>(num_items) * embed_dim;
  out.values = Vector::Zero(item_block + static_cast<Eigen::Index>(update.model.parameter_count()));
  for (std::size_t r = 0; r < update.items.ids.size(); ++r) {
    const ItemId id = update.items.ids[r];
    if (id < 0 || id >= num_items) throw std::out_of_range("update touches an unknown item");
    out.values.segment(static_cast<Eigen::Index>(id) * embed_dim, embed_dim) =
        update.items.rows.row(static_cast<Eigen::Index>(r)).transpose();
  }
  update.model.flatten_into(out.values.data() + item_block);
  return out;
}

LocalTrainResult benign_local_train(ClientId id, const Vector& user_embedding, std::span<const ItemId> positives,
                                    const GlobalParams& params, const TrainingSettings& settings, Rng& rng) {
  settings.validate();
  const int d = params.embed_dim();
  const int num_items = params.num_items();
  if (user_embedding.size() != d) throw std::invalid_argument("benign_local_train: embedding size mismatch");

  LocalTrainResult out;
  out.user_embedding = user_embedding;
  out.update.client_id = id;
  out.update.model = params.model.zeros_like();
  out.update.items.rows.resize(0, d);
  if (settings.local_epochs == 0 || positives.empty()) return out;

  Mlp local_model = params.model;
  Mlp step_model = params.model.zeros_like();
  std::vector<int> slot(static_cast<std::size_t>(num_items), -1);
  std::vector<ItemId> slot_items;
  RowMatrix local_rows(0, d);
  RowMatrix accum_rows(0, d);
  RowMatrix step_rows(0, d);

  auto slot_of = [&](ItemId item) {
    int& s = slot[static_cast<std::size_t>(item)];
    if (s < 0) {
      s = static_cast<int>(slot_items.size());
      slot_items.push_back(item);
      const Eigen::Index n = static_cast<Eigen::Index>(slot_items.size());
      local_rows.conservativeResize(n, d);
      accum_rows.conservativeResize(n, d);
      step_rows.conservativeResize(n, d);
      local_rows.row(n - 1) = params.item_embeddings.row(item);
      accum_rows.row(n - 1).setZero();
      step_rows.row(n - 1).setZero();
    }
    return s;
  };

  const double lr = settings.learning_rate;
  Vector step_user(d);
  std::vector<std::pair<int, double>> pairs;
  std::vector<int> touched;
  NcfKernel kernel(local_model);

  for (int epoch = 0; epoch < settings.local_epochs; ++epoch) {
    const auto negatives = sample_excluding(
        num_items, positives, static_cast<std::size_t>(settings.negative_ratio) * positives.size(), rng);
    pairs.clear();
    for (ItemId p : positives) pairs.emplace_back(slot_of(p), 1.0);
    for (ItemId n : negatives) pairs.emplace_back(slot_of(n), 0.0);
    std::shuffle(pairs.begin(), pairs.end(), rng);

    for (std::size_t start = 0; start < pairs.size(); start += static_cast<std::size_t>(settings.batch_size)) {
      const std::size_t stop = std::min(pairs.size(), start + static_cast<std::size_t>(settings.batch_size));
      step_user.setZero();
      for (auto& l : step_model.layers) {
        l.weight.setZero();
        l.bias.setZero();
      }
      touched.clear();
      for (std::size_t k = start; k < stop; ++k) {
        const auto [s, label] = pairs[k];
        const double l = kernel.forward(out.user_embedding.data(), local_rows.row(s).data());
        out.update.train_loss += pair_loss(l, label);
        const double dlogit = sigmoid(l) - label;
        if (step_rows.row(s).isZero(0.0)) touched.push_back(s);
        kernel.backward(dlogit, &step_model, step_user.data(), step_rows.row(s).data());
      }
      out.update.train_pairs += stop - start;
      std::sort(touched.begin(), touched.end());
      touched.erase(std::unique(touched.begin(), touched.end()), touched.end());

      out.user_embedding -= lr * step_user;
      for (int s : touched) {
        local_rows.row(s) -= lr * step_rows.row(s);
        accum_rows.row(s) += step_rows.row(s);
        step_rows.row(s).setZero();
      }
      local_model.add_scaled(step_model, -lr);
      out.update.model.add_scaled(step_model, 1.0);
    }
  }

  std::vector<int> order(slot_items.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = static_cast<int>(k);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return slot_items[static_cast<std::size_t>(a)] < slot_items[static_cast<std::size_t>(b)]; });
  out.update.items.ids.reserve(order.size());
  out.update.items.rows.resize(static_cast<Eigen::Index>(order.size()), d);
  for (std::size_t k = 0; k < order.size(); ++k) {
    out.update.items.ids.push_back(slot_items[static_cast<std::size_t>(order[k])]);
    out.update.items.rows.row(static_cast<Eigen::Index>(k)) = accum_rows.row(order[k]);
  }
  return out;
}

BenignClient::BenignClient(ClientId id, std::vector<ItemId> positives, Vector embedding)
    : id_(id), positives_(std::move(positives)), embedding_(std::move(embedding)) {
  std::sort(positives_.begin(), positives_.end());
}

ClientUpdate BenignClient::local_update(const GlobalParams& broadcast, const RoundContext& context, Rng& rng) {
  auto result = benign_local_train(id_, embedding_, positives_, broadcast, context.training, rng);
  embedding_ = std::move(result.user_embedding);
  return std::move(result.update);
}

std::vector<ClientId> select_clients(int round_index, std::span<const ClientId> population, double fraction, Rng& rng) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("participation fraction must be in (0, 1]");
  std::vector<ClientId> ids(population.begin(), population.end());
  std::sort(ids.begin(), ids.end());
  if (fraction == 1.0) return ids;
  const auto count = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(ids.size()) - 1e-9));
  for (std::size_t k = 0; k < count; ++k) {
    std::uniform_int_distribution<std::size_t> dist(k, ids.size() - 1);
    std::swap(ids[k], ids[dist(rng)]);
  }
  ids.resize(count);
  std::sort(ids.begin(), ids.end());
  spdlog::trace("round {}: selected {} of {} clients", round_index, ids.size(), population.size());
  return ids;
}

nlohmann::json RoundLog::to_json() const {
  nlohmann::json j;
  j["round"] = round;
  j["clients"] = clients.size();
  j["mean_grad_norm"] = mean_norm;
  j["max_grad_norm"] = max_norm;
  j["mean_train_loss"] = mean_train_loss;
  j["wall_ms"] = wall_ms;
  j["dropped"] = dropped;
  j["defense_clipped"] = defense_clipped;
  j["defense_selected_count"] = defense_selected.size();
  return j;
}

void apply_aggregate(GlobalParams& params, const Vector& aggregate, double learning_rate,
                     ModelAggregation model_aggregation, std::size_t accepted) {
  const Eigen::Index item_block = params.item_embeddings.size();
  if (aggregate.size() != static_cast<Eigen::Index>(flat_size(params))) {
    throw std::invalid_argument("apply_aggregate: aggregate length mismatch");
  }
  params.item_embeddings -= learning_rate * Eigen::Map<const RowMatrix>(aggregate.data(), params.num_items(),
                                                                         params.embed_dim());
  Mlp delta = params.model.zeros_like();
  delta.unflatten_from(aggregate.data() + item_block);
  double scale = learning_rate;
  if (model_aggregation == ModelAggregation::kMean && accepted > 0) scale /= static_cast<double>(accepted);
  params.model.add_scaled(delta, -scale);
}

RoundResult run_round(const GlobalParams& params_in, const RoundPlan& plan, std::span<Client* const> population,
                      const DefenseConfig& defense, const ServerSettings& server) {
  plan.validate();
  if (!params_in.all_finite()) throw std::invalid_argument("run_round: broadcast parameters are not finite");
  const auto started = std::chrono::steady_clock::now();

  std::vector<ClientId> selected = plan.selected_client_ids;
  std::sort(selected.begin(), selected.end());
  for (ClientId c : selected) {
    if (c < 0 || static_cast<std::size_t>(c) >= population.size() || population[static_cast<std::size_t>(c)] == nullptr ||
        population[static_cast<std::size_t>(c)]->id() != c) {
      throw std::invalid_argument(fmt::format("run_round: client {} not in population", c));
    }
  }

  const RoundContext context{plan.round_index, plan.global_epochs, plan.training};
  std::vector<ClientUpdate> updates(selected.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next.fetch_add(1); k < selected.size(); k = next.fetch_add(1)) {
      const ClientId c = selected[k];
      Rng rng = make_rng(server.master_seed, {static_cast<std::uint64_t>(Stream::kClient), static_cast<std::uint64_t>(c),
                                              static_cast<std::uint64_t>(plan.round_index)});
      updates[k] = population[static_cast<std::size_t>(c)]->local_update(params_in, context, rng);
      updates[k].client_id = c;
    }
  };
  const int threads = std::max(1, std::min<int>(server.threads, static_cast<int>(selected.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  RoundResult result{params_in, {}};
  RoundLog& log = result.log;
  log.round = plan.round_index;
  std::vector<std::size_t> accepted;
  double loss_sum = 0.0;
  std::size_t loss_clients = 0;
  for (std::size_t k = 0; k < updates.size(); ++k) {
    ClientRecord rec{updates[k].client_id, 0.0, updates[k].train_loss, updates[k].train_pairs, false};
    if (!updates[k].all_finite() || !std::isfinite(updates[k].train_loss)) {
      rec.dropped = true;
      log.dropped.push_back(rec.id);
      spdlog::warn("round {}: dropping non-finite update from client {}", plan.round_index, rec.id);
    } else {
      rec.norm = std::sqrt(updates[k].squared_norm());
      accepted.push_back(k);
      if (rec.train_pairs > 0) {
        loss_sum += rec.train_loss / static_cast<double>(rec.train_pairs);
        ++loss_clients;
      }
    }
    log.clients.push_back(rec);
  }
  if (!accepted.empty()) {
    double sum = 0.0;
    for (std::size_t k : accepted) {
      sum += log.clients[k].norm;
      log.max_norm = std::max(log.max_norm, log.clients[k].norm);
    }
    log.mean_norm = sum / static_cast<double>(accepted.size());
  }
  if (loss_clients > 0) log.mean_train_loss = loss_sum / static_cast<double>(loss_clients);

  if (!accepted.empty()) {
    const int num_items = params_in.num_items();
    const int d = params_in.embed_dim();
    Vector aggregate;
    if (defense.kind == DefenseKind::kNone) {
      aggregate = Vector::Zero(static_cast<Eigen::Index>(flat_size(params_in)));
      const Eigen::Index item_block = params_in.item_embeddings.size();
      Vector model_flat(static_cast<Eigen::Index>(params_in.model.parameter_count()));
      for (std::size_t k : accepted) {
        const auto& u = updates[k];
        for (std::size_t r = 0; r < u.items.ids.size(); ++r) {
          const ItemId id = u.items.ids[r];
          if (id < 0 || id >= num_items) throw std::out_of_range("update touches an unknown item");
          aggregate.segment(static_cast<Eigen::Index>(id) * d, d) += u.items.rows.row(static_cast<Eigen::Index>(r)).transpose();
        }
        u.model.flatten_into(model_flat.data());
        aggregate.segment(item_block, model_flat.size()) += model_flat;
        log.defense_selected.push_back(u.client_id);
      }
    } else {
      std::vector<FlatUpdate> flat;
      flat.reserve(accepted.size());
      for (std::size_t k : accepted) flat.push_back(flatten(updates[k], num_items, d));
      auto outcome = apply_defense(defense, flat);
      aggregate = std::move(outcome.aggregate);
      log.defense_selected = std::move(outcome.selected);
      log.defense_clipped = std::move(outcome.clipped);
    }
    apply_aggregate(result.params, aggregate, server.learning_rate, server.model_aggregation, accepted.size());
  }

  log.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return result;
}

}  // namespace fedpoison
