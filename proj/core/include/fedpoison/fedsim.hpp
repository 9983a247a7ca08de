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

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedpoison/defense.hpp"
#include "fedpoison/model.hpp"
#include "fedpoison/rng.hpp"

namespace fedpoison {

struct TrainingSettings {
  int local_epochs = 1;
  int batch_size = 256;
  int negative_ratio = 4;
  double learning_rate = 0.001;

  void validate() const;
};

struct RoundContext {
  int round_index = 0;
  int global_epochs = 1;
  TrainingSettings training;
};

struct RoundPlan {
  int round_index = 0;
  int global_epochs = 1;
  std::vector<ClientId> selected_client_ids;
  TrainingSettings training;

  void validate() const;
};

// What a client uploads. There is deliberately no user-embedding field: the
// private parameters never leave the client.
struct ClientUpdate {
  ClientId client_id = 0;
  ItemGradients items;  // only touched items
  Mlp model;
  double train_loss = 0.0;
  std::size_t train_pairs = 0;

  double squared_norm() const { return items.squared_norm() + model.squared_norm(); }
  bool all_finite() const { return items.all_finite() && model.all_finite(); }
};

// Dense layout: item table row-major, then the model (see Mlp::flatten_into).
FlatUpdate flatten(const ClientUpdate& update, int num_items, int embed_dim);
std::size_t flat_size(const GlobalParams& params);

enum class ClientRole { kBenign, kMalicious };

class Client {
 public:
  virtual ~Client() = default;
  virtual ClientId id() const = 0;
  virtual ClientRole role() const = 0;
  // Runs one round of local work on the broadcast parameters. Implementations
  // may update their own private state but nothing else.
  virtual ClientUpdate local_update(const GlobalParams& broadcast, const RoundContext& context, Rng& rng) = 0;
};

struct LocalTrainResult {
  Vector user_embedding;
  ClientUpdate update;
};

// L passes of mini-batch SGD over the positives plus freshly sampled negatives.
// The upload is the sum of the per-step gradients, i.e. the pseudo-gradient
// (broadcast - trained) / lr without the rounding of that subtraction.
LocalTrainResult benign_local_train(ClientId id, const Vector& user_embedding, std::span<const ItemId> positives,
                                    const GlobalParams& params, const TrainingSettings& settings, Rng& rng);

class BenignClient final : public Client {
 public:
  BenignClient(ClientId id, std::vector<ItemId> positives, Vector embedding);

  ClientId id() const override { return id_; }
  ClientRole role() const override { return ClientRole::kBenign; }
  ClientUpdate local_update(const GlobalParams& broadcast, const RoundContext& context, Rng& rng) override;

  const Vector& embedding() const { return embedding_; }
  std::span<const ItemId> positives() const { return positives_; }

 private:
  ClientId id_;
  std::vector<ItemId> positives_;
  Vector embedding_;
};

// ceil(fraction * n) distinct ids, ascending. fraction = 1 returns everyone.
std::vector<ClientId> select_clients(int round_index, std::span<const ClientId> population, double fraction, Rng& rng);

enum class ModelAggregation { kSum, kMean };

ModelAggregation parse_model_aggregation(std::string_view name);
std::string_view to_string(ModelAggregation aggregation);

struct ServerSettings {
  double learning_rate = 0.001;
  ModelAggregation model_aggregation = ModelAggregation::kMean;
  int threads = 1;
  std::uint64_t master_seed = 0;
};

struct ClientRecord {
  ClientId id = 0;
  double norm = 0.0;
  double train_loss = 0.0;
  std::size_t train_pairs = 0;
  bool dropped = false;
};

struct RoundLog {
  int round = 0;
  std::vector<ClientRecord> clients;  // ascending id
  std::vector<ClientId> dropped;
  std::vector<ClientId> defense_selected;
  std::vector<ClientId> defense_clipped;
  double mean_norm = 0.0;
  double max_norm = 0.0;
  double mean_train_loss = 0.0;  // mean per-pair loss over reporting clients
  double wall_ms = 0.0;

  nlohmann::json to_json() const;
};

struct RoundResult {
  GlobalParams params;
  RoundLog log;
};

// One federated round. `population` is indexed by client id. Client work
// runs on server.threads workers; the result does not depend on scheduling
// because every client draws from its own (seed, client, round) stream and the
// server sums in ascending client-id order.
RoundResult run_round(const GlobalParams& params_in, const RoundPlan& plan, std::span<Client* const> population,
                      const DefenseConfig& defense, const ServerSettings& server);

// Applies a sum-equivalent aggregate: V -= lr * S_items, Theta -= lr * c *
// S_model with c = 1 (sum) or 1 / accepted (mean).
void apply_aggregate(GlobalParams& params, const Vector& aggregate, double learning_rate,
                     ModelAggregation model_aggregation, std::size_t accepted);

}  // namespace fedpoison
