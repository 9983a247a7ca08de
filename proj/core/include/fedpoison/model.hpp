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

// NCF scorer: r_hat = sigmoid(MLP([u ; v])) with ReLU hidden layers, plus the
// binary cross-entropy objective and its analytic gradients.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "fedpoison/rng.hpp"
#include "fedpoison/types.hpp"

namespace fedpoison {

inline constexpr double kProbabilityEpsilon = 1e-7;

struct ModelConfig {
  int embed_dim = 8;
  std::vector<int> hidden_dims{8};
  double learning_rate = 0.001;

  int input_dim() const { return 2 * embed_dim; }
  // Throws std::invalid_argument.
  void validate() const;
};

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;
};

// Hidden layers use ReLU. The last layer has one output unit (the logit).
struct Mlp {
  std::vector<DenseLayer> layers;

  static Mlp zeros(const ModelConfig& config);
  Mlp zeros_like() const;

  std::size_t parameter_count() const;
  double squared_norm() const;
  bool all_finite() const;
  bool same_shape(const Mlp& other) const;
  void add_scaled(const Mlp& other, double scale);
  void scale(double factor);

  // Layer order; each weight row-major, followed by its bias.
  void flatten_into(double* out) const;
  void unflatten_from(const double* in);

  bool operator==(const Mlp& other) const;
};

struct GlobalParams {
  RowMatrix item_embeddings;  // num_items x embed_dim
  Mlp model;

  int num_items() const { return static_cast<int>(item_embeddings.rows()); }
  int embed_dim() const { return static_cast<int>(item_embeddings.cols()); }
  bool all_finite() const;
  bool operator==(const GlobalParams& other) const;
};

// Weights ~ U(-0.5/sqrt(fan_in), 0.5/sqrt(fan_in)), biases 0, item embeddings
// ~ N(0, 0.01).
GlobalParams init_global_params(const ModelConfig& config, int num_items, Rng& rng);
Vector init_user_embedding(int embed_dim, Rng& rng);

// Sparse item-embedding rows with strictly ascending ids.
struct ItemGradients {
  std::vector<ItemId> ids;
  RowMatrix rows;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  std::ptrdiff_t find(ItemId id) const;
  double squared_norm() const;
  bool all_finite() const;
};

struct GradTargets {
  bool user = false;
  bool items = false;
  bool model = false;

  static constexpr GradTargets all() { return {true, true, true}; }
};

// Groups that were not requested stay empty (nullopt / no item rows).
struct GradientBundle {
  std::optional<Vector> user;
  ItemGradients items;
  std::optional<Mlp> model;
};

struct ScoredLabel {
  double probability;
  double label;
};

double sigmoid(double x);
double clamp_probability(double p);

// BCE of one pair expressed through its logit. The probability is clamped to
// [eps, 1 - eps] before taking logs.
double pair_loss(double logit, double label);

// First-layer pre-activation is computed as (W_u u + b) + W_v v so the item
// half can be cached during evaluation without changing any bits.
void project_user(const Mlp& model, const double* u, double* out);
void project_item(const Mlp& model, const double* v, double* out);

// Single-pair forward/backward with reusable buffers. Not thread-safe; use one
// kernel per thread.
class NcfKernel {
 public:
  explicit NcfKernel(const Mlp& model);

  double forward(const double* u, const double* v);
  // Continues a forward pass from cached first-layer projections.
  double forward_projected(const double* user_projection, const double* item_projection);

  // Accumulates dlogit * d(logit) into every non-null output. Must follow a
  // call to forward() with the same model.
  void backward(double dlogit, Mlp* d_model, double* d_user, double* d_item);

  int embed_dim() const { return embed_dim_; }

 private:
  double finish_forward();

  const Mlp* model_;
  int embed_dim_;
  const double* u_ = nullptr;
  const double* v_ = nullptr;
  std::vector<Vector> pre_;
  std::vector<Vector> post_;
  Vector user_proj_;
  Vector item_proj_;
  Vector delta_;
  Vector delta_prev_;
};

double logit(const Vector& user, ItemId item, const GlobalParams& params);

// Clamped predicted probability. Throws std::out_of_range on a bad item id.
double predict(const Vector& user, ItemId item, const GlobalParams& params);

// -sum[r log r_hat + (1 - r) log(1 - r_hat)]; r_hat is clamped first.
double bce_loss(std::span<const ScoredLabel> pairs);

double bce_loss(const Vector& user, std::span<const ItemId> items, std::span<const double> labels,
                const GlobalParams& params);

// Gradients of the summed BCE over (user, items[i], labels[i]). The logit-space
// derivative sigmoid(l) - r is used, which is exact wherever the clamp is
// inactive.
GradientBundle backward(const Vector& user, std::span<const ItemId> items,
                        std::span<const double> labels, const GlobalParams& params,
                        GradTargets wrt);

// out = in - lr * grad on the coordinates present in the gradient.
GlobalParams sgd_step(GlobalParams params, const GradientBundle& gradient, double learning_rate);
Vector sgd_step(Vector user, const Vector& gradient, double learning_rate);

void apply_item_gradients(RowMatrix& item_embeddings, const ItemGradients& gradient, double scale);

}  // namespace fedpoison
