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

#include "fedpoison/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include <spdlog/spdlog.h>

namespace fedpoison {

void ModelConfig::validate() const {
  if (embed_dim < 1) throw std::invalid_argument("embed_dim must be >= 1");
  for (int h : hidden_dims) {
    if (h < 1) throw std::invalid_argument("hidden dims must be >= 1");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate must be positive");
  }
}

Mlp Mlp::zeros(const ModelConfig& config) {
  config.validate();
  Mlp mlp;
  int in = config.input_dim();
  for (int h : config.hidden_dims) {
    mlp.layers.push_back({Matrix::Zero(h, in), Vector::Zero(h)});
    in = h;
  }
  mlp.layers.push_back({Matrix::Zero(1, in), Vector::Zero(1)});
  return mlp;
}

Mlp Mlp::zeros_like() const {
  Mlp out;
  out.layers.reserve(layers.size());
  for (const auto& l : layers) {
    out.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  }
  return out;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

double Mlp::squared_norm() const {
  double s = 0.0;
  for (const auto& l : layers) s += l.weight.squaredNorm() + l.bias.squaredNorm();
  return s;
}

bool Mlp::all_finite() const {
  return std::all_of(layers.begin(), layers.end(),
                     [](const DenseLayer& l) { return l.weight.allFinite() && l.bias.allFinite(); });
}

bool Mlp::same_shape(const Mlp& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].weight.rows() != other.layers[i].weight.rows() ||
        layers[i].weight.cols() != other.layers[i].weight.cols() ||
        layers[i].bias.size() != other.layers[i].bias.size()) {
      return false;
    }
  }
  return true;
}

void Mlp::add_scaled(const Mlp& other, double factor) {
  if (!same_shape(other)) throw std::invalid_argument("Mlp::add_scaled: shape mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weight += factor * other.layers[i].weight;
    layers[i].bias += factor * other.layers[i].bias;
  }
}

void Mlp::scale(double factor) {
  for (auto& l : layers) {
    l.weight *= factor;
    l.bias *= factor;
  }
}

void Mlp::flatten_into(double* out) const {
  for (const auto& l : layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) *out++ = l.weight(r, c);
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) *out++ = l.bias[r];
  }
}

void Mlp::unflatten_from(const double* in) {
  for (auto& l : layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = *in++;
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias[r] = *in++;
  }
}

bool Mlp::operator==(const Mlp& other) const {
  if (!same_shape(other)) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].weight != other.layers[i].weight || layers[i].bias != other.layers[i].bias) return false;
  }
  return true;
}

bool GlobalParams::all_finite() const { return item_embeddings.allFinite() && model.all_finite(); }

bool GlobalParams::operator==(const GlobalParams& other) const {
  return item_embeddings.rows() == other.item_embeddings.rows() &&
         item_embeddings.cols() == other.item_embeddings.cols() &&
         item_embeddings == other.item_embeddings && model == other.model;
}

GlobalParams init_global_params(const ModelConfig& config, int num_items, Rng& rng) {
  if (num_items < 1) throw std::invalid_argument("init_global_params: num_items must be >= 1");
  GlobalParams params;
  params.model = Mlp::zeros(config);
  for (auto& layer : params.model.layers) {
    const double bound = 0.5 / std::sqrt(static_cast<double>(layer.weight.cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = dist(rng);
    }
  }
  std::normal_distribution<double> normal(0.0, 0.01);
  params.item_embeddings.resize(num_items, config.embed_dim);
  for (Eigen::Index i = 0; i < params.item_embeddings.rows(); ++i) {
    for (Eigen::Index j = 0; j < params.item_embeddings.cols(); ++j) params.item_embeddings(i, j) = normal(rng);
  }
  return params;
}

Vector init_user_embedding(int embed_dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 0.01);
  Vector u(embed_dim);
  for (int j = 0; j < embed_dim; ++j) u[j] = normal(rng);
  return u;
}

std::ptrdiff_t ItemGradients::find(ItemId id) const {
  auto it = std::lower_bound(ids.begin(), ids.end(), id);
  if (it == ids.end() || *it != id) return -1;
  return it - ids.begin();
}

double ItemGradients::squared_norm() const { return rows.squaredNorm(); }

bool ItemGradients::all_finite() const { return rows.allFinite(); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double clamp_probability(double p) { return std::clamp(p, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon); }

double pair_loss(double logit_value, double label) {
  const double p = clamp_probability(sigmoid(logit_value));
  return -(label * std::log(p) + (1.0 - label) * std::log(1.0 - p));
}

void project_user(const Mlp& model, const double* u, double* out) {
  const DenseLayer& first = model.layers.front();
  const Eigen::Index d = first.weight.cols() / 2;
  for (Eigen::Index h = 0; h < first.weight.rows(); ++h) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < d; ++k) s += first.weight(h, k) * u[k];
    out[h] = s + first.bias[h];
  }
}

void project_item(const Mlp& model, const double* v, double* out) {
  const DenseLayer& first = model.layers.front();
  const Eigen::Index d = first.weight.cols() / 2;
  for (Eigen::Index h = 0; h < first.weight.rows(); ++h) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < d; ++k) s += first.weight(h, d + k) * v[k];
    out[h] = s;
  }
}

NcfKernel::NcfKernel(const Mlp& model) : model_(&model) {
  if (model.layers.empty()) throw std::invalid_argument("NcfKernel: empty model");
  embed_dim_ = static_cast<int>(model.layers.front().weight.cols() / 2);
  for (const auto& l : model.layers) {
    pre_.emplace_back(l.weight.rows());
    post_.emplace_back(l.weight.rows());
  }
  user_proj_.resize(model.layers.front().weight.rows());
  item_proj_.resize(model.layers.front().weight.rows());
}

double NcfKernel::forward(const double* u, const double* v) {
  u_ = u;
  v_ = v;
  project_user(*model_, u, user_proj_.data());
  project_item(*model_, v, item_proj_.data());
  pre_[0] = user_proj_ + item_proj_;
  return finish_forward();
}

double NcfKernel::forward_projected(const double* user_projection, const double* item_projection) {
  u_ = nullptr;
  v_ = nullptr;
  const Eigen::Index h = pre_[0].size();
  for (Eigen::Index k = 0; k < h; ++k) pre_[0][k] = user_projection[k] + item_projection[k];
  return finish_forward();
}

double NcfKernel::finish_forward() {
  const std::size_t n = model_->layers.size();
  for (std::size_t l = 0; l + 1 < n; ++l) {
    post_[l] = pre_[l].cwiseMax(0.0);
    const DenseLayer& next = model_->layers[l + 1];
    pre_[l + 1].noalias() = next.weight * post_[l];
    pre_[l + 1] += next.bias;
  }
  return pre_[n - 1][0];
}

void NcfKernel::backward(double dlogit, Mlp* d_model, double* d_user, double* d_item) {
  if (u_ == nullptr || v_ == nullptr) throw std::logic_error("NcfKernel::backward without forward()");
  const std::size_t n = model_->layers.size();
  delta_.resize(1);
  delta_[0] = dlogit;
  for (std::size_t l = n; l-- > 0;) {
    const DenseLayer& layer = model_->layers[l];
    if (d_model != nullptr) {
      DenseLayer& g = d_model->layers[l];
      if (l > 0) {
        g.weight.noalias() += delta_ * post_[l - 1].transpose();
      } else {
        for (Eigen::Index r = 0; r < g.weight.rows(); ++r) {
          for (Eigen::Index c = 0; c < embed_dim_; ++c) {
            g.weight(r, c) += delta_[r] * u_[c];
            g.weight(r, embed_dim_ + c) += delta_[r] * v_[c];
          }
        }
      }
      g.bias += delta_;
    }
    if (l > 0) {
      delta_prev_.noalias() = layer.weight.transpose() * delta_;
      const Vector& pre = pre_[l - 1];
      for (Eigen::Index k = 0; k < delta_prev_.size(); ++k) {
        if (pre[k] <= 0.0) delta_prev_[k] = 0.0;
      }
      delta_.swap(delta_prev_);
    } else {
      for (Eigen::Index c = 0; c < embed_dim_; ++c) {
        double gu = 0.0;
        double gv = 0.0;
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
          gu += layer.weight(r, c) * delta_[r];
          gv += layer.weight(r, embed_dim_ + c) * delta_[r];
        }
        if (d_user != nullptr) d_user[c] += gu;
        if (d_item != nullptr) d_item[c] += gv;
      }
    }
  }
}

namespace {

void check_pair_shapes(const Vector& user, const GlobalParams& params) {
  if (params.model.layers.empty()) throw std::invalid_argument("model has no layers");
  if (user.size() != params.embed_dim() || params.model.layers.front().weight.cols() != 2 * params.embed_dim()) {
    throw std::invalid_argument("embedding dimension mismatch");
  }
}

void check_item(ItemId item, const GlobalParams& params) {
  if (item < 0 || item >= params.num_items()) {
    throw std::out_of_range("item id " + std::to_string(item) + " outside [0, " +
                            std::to_string(params.num_items()) + ")");
  }
}

}  // namespace

double logit(const Vector& user, ItemId item, const GlobalParams& params) {
  check_pair_shapes(user, params);
  check_item(item, params);
  NcfKernel kernel(params.model);
  return kernel.forward(user.data(), params.item_embeddings.row(item).data());
}

double predict(const Vector& user, ItemId item, const GlobalParams& params) {
  return clamp_probability(sigmoid(logit(user, item, params)));
}

double bce_loss(std::span<const ScoredLabel> pairs) {
  if (pairs.empty()) {
    spdlog::debug("bce_loss: empty pair sequence, returning 0");
    return 0.0;
  }
  double loss = 0.0;
  for (const auto& [p_raw, r] : pairs) {
    const double p = clamp_probability(p_raw);
    loss -= r * std::log(p) + (1.0 - r) * std::log(1.0 - p);
  }
  return loss;
}

double bce_loss(const Vector& user, std::span<const ItemId> items, std::span<const double> labels,
                const GlobalParams& params) {
  if (items.size() != labels.size()) throw std::invalid_argument("bce_loss: items/labels size mismatch");
  check_pair_shapes(user, params);
  NcfKernel kernel(params.model);
  double loss = 0.0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    check_item(items[i], params);
    loss += pair_loss(kernel.forward(user.data(), params.item_embeddings.row(items[i]).data()), labels[i]);
  }
  return loss;
}

GradientBundle backward(const Vector& user, std::span<const ItemId> items, std::span<const double> labels,
                        const GlobalParams& params, GradTargets wrt) {
  if (items.size() != labels.size()) throw std::invalid_argument("backward: items/labels size mismatch");
  if (items.empty()) throw std::invalid_argument("backward: item list is empty");
  check_pair_shapes(user, params);
  for (double r : labels) {
    if (r != 0.0 && r != 1.0) throw std::invalid_argument("backward: labels must be 0 or 1");
  }

  const int d = params.embed_dim();
  GradientBundle out;
  Vector d_user = Vector::Zero(d);
  Mlp d_model = params.model.zeros_like();
  std::map<ItemId, Vector> d_items;

  NcfKernel kernel(params.model);
  Vector scratch(d);
  for (std::size_t i = 0; i < items.size(); ++i) {
    check_item(items[i], params);
    const double l = kernel.forward(user.data(), params.item_embeddings.row(items[i]).data());
    const double dlogit = sigmoid(l) - labels[i];
    scratch.setZero();
    kernel.backward(dlogit, wrt.model ? &d_model : nullptr, wrt.user ? d_user.data() : nullptr,
                    wrt.items ? scratch.data() : nullptr);
    if (wrt.items) {
      auto [it, inserted] = d_items.try_emplace(items[i], Vector::Zero(d));
      it->second += scratch;
    }
  }

  if (wrt.user) out.user = std::move(d_user);
  if (wrt.model) out.model = std::move(d_model);
  if (wrt.items) {
    out.items.ids.reserve(d_items.size());
    out.items.rows.resize(static_cast<Eigen::Index>(d_items.size()), d);
    Eigen::Index r = 0;
    for (const auto& [id, g] : d_items) {
      out.items.ids.push_back(id);
      out.items.rows.row(r++) = g.transpose();
    }
  } else {
    out.items.rows.resize(0, d);
  }
  return out;
}

void apply_item_gradients(RowMatrix& item_embeddings, const ItemGradients& gradient, double scale) {
  for (std::size_t r = 0; r < gradient.ids.size(); ++r) {
    const ItemId id = gradient.ids[r];
    if (id < 0 || id >= item_embeddings.rows()) throw std::out_of_range("gradient item id out of range");
    item_embeddings.row(id) += scale * gradient.rows.row(static_cast<Eigen::Index>(r));
  }
}

GlobalParams sgd_step(GlobalParams params, const GradientBundle& gradient, double learning_rate) {
  if (!gradient.items.empty()) {
    if (gradient.items.rows.cols() != params.embed_dim()) throw std::invalid_argument("sgd_step: item width mismatch");
    apply_item_gradients(params.item_embeddings, gradient.items, -learning_rate);
  }
  if (gradient.model) params.model.add_scaled(*gradient.model, -learning_rate);
  return params;
}

Vector sgd_step(Vector user, const Vector& gradient, double learning_rate) {
  if (user.size() != gradient.size()) throw std::invalid_argument("sgd_step: user gradient size mismatch");
  user -= learning_rate * gradient;
  return user;
}

}  // namespace fedpoison
