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

#include "fedpoison/attack.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "fedpoison/data.hpp"
#include "fedpoison/metrics.hpp"

namespace fedpoison {

namespace {

bool strictly_ascending(std::span<const ItemId> ids) {
  return std::adjacent_find(ids.begin(), ids.end(), [](ItemId a, ItemId b) { return a >= b; }) == ids.end();
}

std::vector<ItemId> sorted_union(std::span<const ItemId> a, std::span<const ItemId> b) {
  std::vector<ItemId> out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

RowMatrix gather_rows(const RowMatrix& table, std::span<const ItemId> ids) {
  RowMatrix out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = table.row(ids[r]);
  return out;
}

// cos(a, b) and d cos / d b. Zero vectors give cos = 0 and no gradient.
double cosine_with_grad(const double* a, const double* b, int d, double* d_b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (int j = 0; j < d; ++j) {
    ab += a[j] * b[j];
    aa += a[j] * a[j];
    bb += b[j] * b[j];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  const double cos = ab / (na * nb);
  if (d_b != nullptr) {
    for (int j = 0; j < d; ++j) d_b[j] = a[j] / (na * nb) - cos * b[j] / bb;
  }
  return cos;
}

// Summed BCE of one embedding against positive and negative items; the
// gradient is added into d_user.
double embedding_bce(NcfKernel& kernel, const RowMatrix& items, const double* user, std::span<const ItemId> positives,
                     std::span<const ItemId> negatives, double* d_user) {
  double loss = 0.0;
  for (ItemId p : positives) {
    const double l = kernel.forward(user, items.row(p).data());
    loss += pair_loss(l, 1.0);
    if (d_user != nullptr) kernel.backward(sigmoid(l) - 1.0, nullptr, d_user, nullptr);
  }
  for (ItemId n : negatives) {
    const double l = kernel.forward(user, items.row(n).data());
    loss += pair_loss(l, 0.0);
    if (d_user != nullptr) kernel.backward(sigmoid(l), nullptr, d_user, nullptr);
  }
  return loss;
}

}  // namespace

void AttackConfig::validate(int num_items) const {
  if (target_items.empty()) throw std::invalid_argument("attack: target_items is empty");
  if (interested_items.empty()) throw std::invalid_argument("attack: interested_items is empty");
  if (!strictly_ascending(target_items) || !strictly_ascending(interested_items)) {
    throw std::invalid_argument("attack: item sets must be sorted and unique");
  }
  std::vector<ItemId> both;
  std::set_intersection(target_items.begin(), target_items.end(), interested_items.begin(), interested_items.end(),
                        std::back_inserter(both));
  if (!both.empty()) throw std::invalid_argument(fmt::format("attack: item {} is both target and interested", both[0]));
  if (num_items >= 0) {
    auto bad = [num_items](ItemId i) { return i < 0 || i >= num_items; };
    if (std::any_of(target_items.begin(), target_items.end(), bad) ||
        std::any_of(interested_items.begin(), interested_items.end(), bad)) {
      throw std::invalid_argument("attack: item id out of range");
    }
  }
  if (!(margin > 0.0)) throw std::invalid_argument("attack: margin must be positive");
  if (!(alignment_weight >= 0.0)) throw std::invalid_argument("attack: alignment_weight must be >= 0");
  if (relevant_top_k < 0) throw std::invalid_argument("attack: relevant_top_k must be >= 0");
  if (approx_count < 1) throw std::invalid_argument("attack: approx_count must be >= 1");
  if (approx_steps < 0) throw std::invalid_argument("attack: approx_steps must be >= 0");
  if (!(approx_lr > 0.0)) throw std::invalid_argument("attack: approx_lr must be positive");
  if (promotion_steps < 1) throw std::invalid_argument("attack: promotion_steps must be >= 1");
  if (!(promotion_lr > 0.0)) throw std::invalid_argument("attack: promotion_lr must be positive");
}

AttackState init_attack_state(const AttackConfig& config, int embed_dim, Rng& rng) {
  AttackState state;
  state.target_users.resize(config.approx_count, embed_dim);
  state.non_target_users.resize(config.approx_count, embed_dim);
  for (int i = 0; i < config.approx_count; ++i) state.target_users.row(i) = init_user_embedding(embed_dim, rng).transpose();
  for (int i = 0; i < config.approx_count; ++i) {
    state.non_target_users.row(i) = init_user_embedding(embed_dim, rng).transpose();
  }
  state.relevant_items = config.interested_items;
  return state;
}

std::vector<ItemId> build_relevant_items(const GlobalParams& params, std::span<const ItemId> interested,
                                         std::span<const ItemId> excluded, int k) {
  if (k < 0) throw std::invalid_argument("build_relevant_items: k must be >= 0");
  std::vector<ItemId> base(interested.begin(), interested.end());
  std::sort(base.begin(), base.end());
  base.erase(std::unique(base.begin(), base.end()), base.end());
  if (k == 0 || base.empty()) return base;

  const int d = params.embed_dim();
  Vector centroid = Vector::Zero(d);
  for (ItemId i : base) centroid += params.item_embeddings.row(i).transpose();
  centroid /= static_cast<double>(base.size());
  if (centroid.squaredNorm() == 0.0) {
    spdlog::warn("build_relevant_items: interested-item centroid has zero norm; using the interested items only");
    return base;
  }

  const auto skip = sorted_union(base, excluded);
  std::vector<std::pair<double, ItemId>> ranked;
  ranked.reserve(static_cast<std::size_t>(params.num_items()));
  for (ItemId i = 0; i < params.num_items(); ++i) {
    if (std::binary_search(skip.begin(), skip.end(), i)) continue;
    ranked.emplace_back(cosine_with_grad(centroid.data(), params.item_embeddings.row(i).data(), d, nullptr), i);
  }
  const auto take = std::min(ranked.size(), static_cast<std::size_t>(k));
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take), ranked.end(),
                    [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  for (std::size_t r = 0; r < take; ++r) base.push_back(ranked[r].second);
  std::sort(base.begin(), base.end());
  return base;
}

ApproximationTerms approximation_loss(const GlobalParams& params, const AttackState& state,
                                      std::span<const ItemId> target_items, double margin, bool repulsion,
                                      RowMatrix* d_target, RowMatrix* d_non_target) {
  const auto m = state.target_users.rows();
  const int d = params.embed_dim();
  if (state.non_target_users.rows() != m || state.target_users.cols() != d || state.non_target_users.cols() != d) {
    throw std::invalid_argument("approximation_loss: state shape mismatch");
  }
  if (d_target != nullptr) d_target->setZero(m, d);
  if (d_non_target != nullptr) d_non_target->setZero(m, d);

  ApproximationTerms terms;
  NcfKernel kernel(params.model);
  for (Eigen::Index i = 0; i < m; ++i) {
    terms.target += embedding_bce(kernel, params.item_embeddings, state.target_users.row(i).data(),
                                  state.relevant_items, target_items,
                                  d_target != nullptr ? d_target->row(i).data() : nullptr);
    terms.non_target += embedding_bce(kernel, params.item_embeddings, state.non_target_users.row(i).data(),
                                      state.non_target_sample, {},
                                      d_non_target != nullptr ? d_non_target->row(i).data() : nullptr);
  }
  if (!repulsion) return terms;

  const double pairs = static_cast<double>(m * m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const Vector diff = (state.target_users.row(i) - state.non_target_users.row(j)).transpose();
      const double dist = diff.norm();
      if (dist >= margin) continue;
      const double gap = margin - dist;
      terms.repulsion += 0.5 * gap * gap / pairs;
      if (dist == 0.0) continue;
      const Vector g = (-gap / (dist * pairs)) * diff;
      if (d_target != nullptr) d_target->row(i) += g.transpose();
      if (d_non_target != nullptr) d_non_target->row(j) -= g.transpose();
    }
  }
  return terms;
}

double mean_group_distance(const AttackState& state) {
  const auto m = state.target_users.rows();
  const auto n = state.non_target_users.rows();
  if (m == 0 || n == 0) return 0.0;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) sum += (state.target_users.row(i) - state.non_target_users.row(j)).norm();
  }
  return sum / static_cast<double>(m * n);
}

void approximation_stage(const GlobalParams& params, const AttackConfig& config, AttackState& state, Rng& rng) {
  const auto excluded = sorted_union(state.relevant_items, config.target_items);
  state.non_target_sample = sample_excluding(params.num_items(), excluded, config.interested_items.size(), rng);
  std::sort(state.non_target_sample.begin(), state.non_target_sample.end());

  RowMatrix d_target, d_non_target;
  for (int step = 0; step < config.approx_steps; ++step) {
    approximation_loss(params, state, config.target_items, config.margin, config.toggles.repulsion, &d_target,
                       &d_non_target);
    state.target_users -= config.approx_lr * d_target;
    state.non_target_users -= config.approx_lr * d_non_target;
  }
}

double normalized_rank(const GlobalParams& params, const Vector& user, ItemId item) {
  if (item < 0 || item >= params.num_items()) throw std::out_of_range("normalized_rank: bad item id");
  const auto scores = Recommender(params).scores(user);
  const double s = scores[static_cast<std::size_t>(item)];
  std::size_t rank = 1;
  for (ItemId i = 0; i < params.num_items(); ++i) {
    const double t = scores[static_cast<std::size_t>(i)];
    if (t > s || (t == s && i < item)) ++rank;
  }
  return static_cast<double>(rank) / static_cast<double>(params.num_items());
}

GammaWeights compute_gamma(const GlobalParams& params, const AttackState& state, std::span<const ItemId> target_items) {
  if (target_items.empty()) return {};
  const Recommender rec(params);
  const auto n = static_cast<double>(params.num_items());
  auto mean_rank = [&](const RowMatrix& users, bool flip) {
    double sum = 0.0;
    for (Eigen::Index u = 0; u < users.rows(); ++u) {
      const auto scores = rec.scores(users.row(u).transpose());
      for (ItemId item : target_items) {
        const double s = scores[static_cast<std::size_t>(item)];
        std::size_t rank = 1;
        for (ItemId i = 0; i < params.num_items(); ++i) {
          const double t = scores[static_cast<std::size_t>(i)];
          if (t > s || (t == s && i < item)) ++rank;
        }
        const double r = static_cast<double>(rank) / n;
        sum += flip ? 1.0 - r : r;
      }
    }
    const auto count = static_cast<double>(users.rows()) * static_cast<double>(target_items.size());
    return count > 0.0 ? sum / count : 0.0;
  };
  const double rg = mean_rank(state.target_users, false);
  const double rn = mean_rank(state.non_target_users, true);
  if (rg + rn == 0.0) return {};
  GammaWeights w;
  w.target = rg / (rg + rn);
  w.non_target = 1.0 - w.target;
  return w;
}

PromotionCoefficients promotion_coefficients(GammaWeights gamma, int round_index, int global_epochs, bool adaptive) {
  if (!adaptive) return {};
  if (global_epochs < 1) throw std::invalid_argument("promotion_coefficients: global_epochs must be >= 1");
  const double frac = static_cast<double>(round_index) / static_cast<double>(global_epochs);
  const double f = frac * frac;
  return {1.0 + gamma.target * f, 1.0 - gamma.non_target * f};
}

PromotionTerms promotion_loss(const PromotionVariables& vars, const AttackState& state, const RowMatrix& relevant_rows,
                              PromotionCoefficients coefficients, double alignment_weight,
                              PromotionVariables* gradient) {
  const int d = static_cast<int>(vars.target_rows.cols());
  if (gradient != nullptr) {
    gradient->target_rows.setZero(vars.target_rows.rows(), d);
    gradient->model = vars.model.zeros_like();
  }
  PromotionTerms terms;
  NcfKernel kernel(vars.model);
  auto group = [&](const RowMatrix& users, double label, double coef) {
    double loss = 0.0;
    for (Eigen::Index u = 0; u < users.rows(); ++u) {
      for (Eigen::Index t = 0; t < vars.target_rows.rows(); ++t) {
        const double l = kernel.forward(users.row(u).data(), vars.target_rows.row(t).data());
        loss += pair_loss(l, label);
        if (gradient != nullptr) {
          kernel.backward(coef * (sigmoid(l) - label), &gradient->model, nullptr, gradient->target_rows.row(t).data());
        }
      }
    }
    return loss;
  };
  terms.target = group(state.target_users, 1.0, coefficients.target);
  terms.non_target = group(state.non_target_users, 0.0, coefficients.non_target);
  terms.total = coefficients.target * terms.target + coefficients.non_target * terms.non_target;

  if (alignment_weight > 0.0 && relevant_rows.rows() > 0 && vars.target_rows.rows() > 0) {
    const double pairs = static_cast<double>(relevant_rows.rows() * vars.target_rows.rows());
    Vector dcos(d);
    for (Eigen::Index r = 0; r < relevant_rows.rows(); ++r) {
      for (Eigen::Index t = 0; t < vars.target_rows.rows(); ++t) {
        dcos.setZero();
        const double cos = cosine_with_grad(relevant_rows.row(r).data(), vars.target_rows.row(t).data(), d,
                                            gradient != nullptr ? dcos.data() : nullptr);
        terms.similarity += (1.0 - cos) / pairs;
        if (gradient != nullptr) gradient->target_rows.row(t) -= (alignment_weight / pairs) * dcos.transpose();
      }
    }
    terms.total += alignment_weight * terms.similarity;
  }
  return terms;
}

ClientUpdate promotion_stage(const GlobalParams& params, const AttackState& state, const AttackConfig& config,
                             int round_index, int global_epochs, double server_lr) {
  if (!(server_lr > 0.0)) throw std::invalid_argument("promotion_stage: server_lr must be positive");
  const auto coefficients =
      promotion_coefficients({state.gamma_target, state.gamma_non_target}, round_index, global_epochs,
                             config.toggles.adaptive_tuning);
  const double alpha = config.toggles.alignment ? config.alignment_weight : 0.0;
  const RowMatrix relevant_rows = gather_rows(params.item_embeddings, state.relevant_items);

  PromotionVariables vars{gather_rows(params.item_embeddings, config.target_items), params.model};
  PromotionVariables grad;
  RowMatrix sum_rows = RowMatrix::Zero(vars.target_rows.rows(), vars.target_rows.cols());
  Mlp sum_model = params.model.zeros_like();
  for (int step = 0; step < config.promotion_steps; ++step) {
    promotion_loss(vars, state, relevant_rows, coefficients, alpha, &grad);
    sum_rows += grad.target_rows;
    sum_model.add_scaled(grad.model, 1.0);
    vars.target_rows -= config.promotion_lr * grad.target_rows;
    vars.model.add_scaled(grad.model, -config.promotion_lr);
  }

  const double scale = config.promotion_lr / server_lr;
  ClientUpdate update;
  update.items.ids = config.target_items;
  update.items.rows = scale * sum_rows;
  update.model = std::move(sum_model);
  update.model.scale(scale);
  if (config.norm_budget > 0.0) {
    const double norm = std::sqrt(update.squared_norm());
    if (norm > config.norm_budget) {
      const double shrink = config.norm_budget / norm;
      update.items.rows *= shrink;
      update.model.scale(shrink);
    }
  }
  return update;
}

ClientUpdate malicious_client_round(const GlobalParams& params, const AttackConfig& config, AttackState& state,
                                    int round_index, int global_epochs, double server_lr, Rng& rng) {
  state.relevant_items = config.toggles.relevant_items
                             ? build_relevant_items(params, config.interested_items, config.target_items,
                                                    config.relevant_top_k)
                             : config.interested_items;
  approximation_stage(params, config, state, rng);
  const auto gamma = compute_gamma(params, state, config.target_items);
  state.gamma_target = gamma.target;
  state.gamma_non_target = gamma.non_target;
  return promotion_stage(params, state, config, round_index, global_epochs, server_lr);
}

SpattackClient::SpattackClient(ClientId id, AttackConfig config, AttackState state)
    : id_(id), config_(std::move(config)), state_(std::move(state)) {
  config_.validate();
}

ClientUpdate SpattackClient::local_update(const GlobalParams& broadcast, const RoundContext& context, Rng& rng) {
  auto update = malicious_client_round(broadcast, config_, state_, context.round_index, context.global_epochs,
                                       context.training.learning_rate, rng);
  update.client_id = id_;
  if (sink_) {
    AttackSnapshot snap;
    snap.round = context.round_index;
    snap.client = id_;
    snap.target_users = state_.target_users;
    snap.non_target_users = state_.non_target_users;
    snap.target_items = config_.target_items;
    snap.target_item_rows =
        gather_rows(broadcast.item_embeddings, config_.target_items) - context.training.learning_rate * update.items.rows;
    snap.relevant_items = state_.relevant_items;
    snap.relevant_item_rows = gather_rows(broadcast.item_embeddings, state_.relevant_items);
    sink_(snap);
  }
  return update;
}

}  // namespace fedpoison
