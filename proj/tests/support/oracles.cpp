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

#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace fedpoison::oracle {

namespace {

std::vector<Vector> activations(const Mlp& model, const Vector& user, const Vector& item, std::vector<Vector>* pre) {
  Vector x(user.size() + item.size());
  for (Eigen::Index j = 0; j < user.size(); ++j) x[j] = user[j];
  for (Eigen::Index j = 0; j < item.size(); ++j) x[user.size() + j] = item[j];
  std::vector<Vector> out{x};
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    Vector z(layer.weight.rows());
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      double s = layer.bias[r];
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) s += layer.weight(r, c) * out.back()[c];
      z[r] = s;
    }
    const bool hidden = l + 1 < model.layers.size();
    if (pre != nullptr && hidden) pre->push_back(z);
    if (hidden) {
      for (Eigen::Index r = 0; r < z.size(); ++r) z[r] = std::max(0.0, z[r]);
    }
    out.push_back(z);
  }
  return out;
}

double neg_log_prob(double logit_value, double label) {
  double p = 1.0 / (1.0 + std::exp(-logit_value));
  p = std::min(std::max(p, kProbabilityEpsilon), 1.0 - kProbabilityEpsilon);
  return -(label * std::log(p) + (1.0 - label) * std::log(1.0 - p));
}

Vector row(const RowMatrix& m, Eigen::Index r) { return m.row(r).transpose(); }

double cosine(const Vector& a, const Vector& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

std::vector<FlatUpdate> by_id(std::vector<FlatUpdate> updates) {
  std::sort(updates.begin(), updates.end(), [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
  return updates;
}

double middle(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

// Krum score of every member of `pool` (indices into `u`).
std::vector<double> scores_within(const std::vector<FlatUpdate>& u, const std::vector<std::size_t>& pool, int f) {
  const int take = static_cast<int>(pool.size()) - f - 2;
  std::vector<double> scores;
  for (std::size_t a : pool) {
    std::vector<double> d;
    for (std::size_t b : pool) {
      if (a != b) d.push_back((u[a].values - u[b].values).squaredNorm());
    }
    std::sort(d.begin(), d.end());
    double s = 0.0;
    for (int k = 0; k < take; ++k) s += d[static_cast<std::size_t>(k)];
    scores.push_back(s);
  }
  return scores;
}

}  // namespace

double logit(const Mlp& model, const Vector& user, const Vector& item) {
  return activations(model, user, item, nullptr).back()[0];
}

double bce(const Mlp& model, const Vector& user, const RowMatrix& items, const std::vector<ItemId>& ids,
           const std::vector<double>& labels) {
  double s = 0.0;
  for (std::size_t k = 0; k < ids.size(); ++k) s += neg_log_prob(logit(model, user, row(items, ids[k])), labels[k]);
  return s;
}

double min_abs_preactivation(const Mlp& model, const Vector& user, const Vector& item) {
  std::vector<Vector> pre;
  activations(model, user, item, &pre);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& z : pre) best = std::min(best, z.cwiseAbs().minCoeff());
  return best;
}

Vector central_difference(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

double max_relative_error(const Vector& a, const Vector& b, double floor) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

Vector flatten(const Mlp& model) {
  Vector v(static_cast<Eigen::Index>(model.parameter_count()));
  model.flatten_into(v.data());
  return v;
}

Mlp unflatten(const Mlp& shape, const Vector& flat) {
  Mlp m = shape;
  m.unflatten_from(flat.data());
  return m;
}

ApproximationTerms approximation_terms(const GlobalParams& params, const AttackState& state,
                                       const std::vector<ItemId>& target_items, double margin, bool repulsion) {
  ApproximationTerms t;
  const auto& V = params.item_embeddings;
  for (Eigen::Index i = 0; i < state.target_users.rows(); ++i) {
    const Vector u = row(state.target_users, i);
    for (ItemId p : state.relevant_items) t.target += neg_log_prob(logit(params.model, u, row(V, p)), 1.0);
    for (ItemId q : target_items) t.target += neg_log_prob(logit(params.model, u, row(V, q)), 0.0);
  }
  for (Eigen::Index j = 0; j < state.non_target_users.rows(); ++j) {
    const Vector u = row(state.non_target_users, j);
    for (ItemId p : state.non_target_sample) t.non_target += neg_log_prob(logit(params.model, u, row(V, p)), 1.0);
  }
  if (repulsion) {
    const auto m = static_cast<double>(state.target_users.rows());
    for (Eigen::Index i = 0; i < state.target_users.rows(); ++i) {
      for (Eigen::Index j = 0; j < state.non_target_users.rows(); ++j) {
        const double d = (state.target_users.row(i) - state.non_target_users.row(j)).norm();
        const double gap = std::max(0.0, margin - d);
        t.repulsion += 0.5 * gap * gap / (m * m);
      }
    }
  }
  return t;
}

PromotionTerms promotion_terms(const PromotionVariables& vars, const AttackState& state,
                               const RowMatrix& relevant_rows, PromotionCoefficients c, double alignment_weight) {
  PromotionTerms t;
  for (Eigen::Index u = 0; u < state.target_users.rows(); ++u) {
    for (Eigen::Index k = 0; k < vars.target_rows.rows(); ++k) {
      t.target += neg_log_prob(logit(vars.model, row(state.target_users, u), row(vars.target_rows, k)), 1.0);
    }
  }
  for (Eigen::Index u = 0; u < state.non_target_users.rows(); ++u) {
    for (Eigen::Index k = 0; k < vars.target_rows.rows(); ++k) {
      t.non_target += neg_log_prob(logit(vars.model, row(state.non_target_users, u), row(vars.target_rows, k)), 0.0);
    }
  }
  if (relevant_rows.rows() > 0 && vars.target_rows.rows() > 0) {
    double s = 0.0;
    for (Eigen::Index r = 0; r < relevant_rows.rows(); ++r) {
      for (Eigen::Index k = 0; k < vars.target_rows.rows(); ++k) {
        s += 1.0 - cosine(row(relevant_rows, r), row(vars.target_rows, k));
      }
    }
    t.similarity = s / static_cast<double>(relevant_rows.rows() * vars.target_rows.rows());
  }
  t.total = c.target * t.target + c.non_target * t.non_target + alignment_weight * t.similarity;
  return t;
}

std::vector<ItemId> relevant_items(const GlobalParams& params, const std::vector<ItemId>& interested,
                                   const std::vector<ItemId>& excluded, int k) {
  std::vector<ItemId> out = interested;
  std::sort(out.begin(), out.end());
  Vector centroid = Vector::Zero(params.embed_dim());
  for (ItemId i : interested) centroid += row(params.item_embeddings, i);
  centroid /= static_cast<double>(interested.size());
  if (k == 0 || centroid.norm() == 0.0) return out;
  std::vector<std::pair<double, ItemId>> all;
  for (ItemId i = 0; i < params.num_items(); ++i) {
    const bool skip = std::find(interested.begin(), interested.end(), i) != interested.end() ||
                      std::find(excluded.begin(), excluded.end(), i) != excluded.end();
    if (!skip) all.emplace_back(cosine(centroid, row(params.item_embeddings, i)), i);
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (std::size_t r = 0; r < all.size() && r < static_cast<std::size_t>(k); ++r) out.push_back(all[r].second);
  std::sort(out.begin(), out.end());
  return out;
}

double normalized_rank(const GlobalParams& params, const Vector& user, ItemId item) {
  std::vector<std::pair<double, ItemId>> all;
  for (ItemId i = 0; i < params.num_items(); ++i) {
    all.emplace_back(logit(params.model, user, row(params.item_embeddings, i)), i);
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (std::size_t r = 0; r < all.size(); ++r) {
    if (all[r].second == item) return static_cast<double>(r + 1) / static_cast<double>(all.size());
  }
  return 1.0;
}

std::vector<ItemId> full_ranking(const GlobalParams& params, const Vector& user, const std::vector<ItemId>& train) {
  std::vector<std::pair<double, ItemId>> all;
  for (ItemId i = 0; i < params.num_items(); ++i) {
    if (std::find(train.begin(), train.end(), i) != train.end()) continue;
    all.emplace_back(logit(params.model, user, row(params.item_embeddings, i)), i);
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<ItemId> out;
  for (const auto& [s, i] : all) out.push_back(i);
  return out;
}

GroupScores group_scores(const std::vector<std::vector<ItemId>>& rankings, const std::vector<UserId>& group,
                         const InteractionDataset& dataset, const std::vector<ItemId>& targets, int k) {
  GroupScores g;
  double er = 0.0;
  for (ItemId t : targets) {
    int eligible = 0, exposed = 0;
    for (UserId u : group) {
      const auto& train = dataset.train[static_cast<std::size_t>(u)];
      if (std::find(train.begin(), train.end(), t) != train.end()) continue;
      ++eligible;
      const auto& r = rankings[static_cast<std::size_t>(u)];
      for (std::size_t p = 0; p < r.size() && p < static_cast<std::size_t>(k); ++p) {
        if (r[p] == t) ++exposed;
      }
    }
    if (eligible > 0) er += static_cast<double>(exposed) / static_cast<double>(eligible);
  }
  g.exposure = er / static_cast<double>(targets.size());

  double hits = 0.0, gain = 0.0;
  int users = 0;
  for (UserId u : group) {
    const auto& held = dataset.test[static_cast<std::size_t>(u)];
    if (!held) continue;
    ++users;
    const auto& r = rankings[static_cast<std::size_t>(u)];
    for (std::size_t p = 0; p < r.size() && p < static_cast<std::size_t>(k); ++p) {
      if (r[p] == *held) {
        hits += 1.0;
        gain += 1.0 / std::log2(static_cast<double>(p) + 2.0);
      }
    }
  }
  g.has_test = users > 0;
  if (users > 0) {
    g.hit_ratio = hits / users;
    g.ndcg = gain / users;
  }
  return g;
}

Vector median(const std::vector<FlatUpdate>& updates) {
  const auto u = by_id(updates);
  Vector out(u.front().values.size());
  for (Eigen::Index c = 0; c < out.size(); ++c) {
    std::vector<double> col;
    for (const auto& x : u) col.push_back(x.values[c]);
    out[c] = middle(col);
  }
  return out;
}

Vector trimmed_mean(const std::vector<FlatUpdate>& updates, double beta) {
  const auto u = by_id(updates);
  const std::size_t n = u.size();
  const auto trim = static_cast<std::size_t>(std::floor(beta * static_cast<double>(n)));
  Vector out(u.front().values.size());
  for (Eigen::Index c = 0; c < out.size(); ++c) {
    std::vector<double> col;
    for (const auto& x : u) col.push_back(x.values[c]);
    std::sort(col.begin(), col.end());
    double s = 0.0;
    for (std::size_t k = trim; k < n - trim; ++k) s += col[k];
    out[c] = s / static_cast<double>(n - 2 * trim);
  }
  return out;
}

Selection krum(const std::vector<FlatUpdate>& updates, int f, int multi_m) {
  const auto u = by_id(updates);
  std::vector<std::size_t> pool(u.size());
  std::iota(pool.begin(), pool.end(), 0);
  const auto scores = scores_within(u, pool, f);
  std::vector<std::size_t> order = pool;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] != scores[b] ? scores[a] < scores[b] : a < b;
  });
  order.resize(static_cast<std::size_t>(multi_m));
  Selection s;
  for (std::size_t p : order) s.selected.push_back(u[p].client_id);
  std::sort(order.begin(), order.end());
  s.aggregate = Vector::Zero(u.front().values.size());
  for (std::size_t p : order) s.aggregate += u[p].values;
  s.aggregate /= static_cast<double>(multi_m);
  return s;
}

Selection bulyan(const std::vector<FlatUpdate>& updates, int f) {
  const auto u = by_id(updates);
  const std::size_t n = u.size();
  const std::size_t theta = n - 2 * static_cast<std::size_t>(f);
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  std::vector<std::size_t> chosen;
  Selection s;
  while (chosen.size() < theta) {
    const auto scores = scores_within(u, pool, f);
    std::size_t best = 0;
    for (std::size_t a = 0; a < pool.size(); ++a) {
      if (scores[a] < scores[best] || (scores[a] == scores[best] && pool[a] < pool[best])) best = a;
    }
    chosen.push_back(pool[best]);
    s.selected.push_back(u[pool[best]].client_id);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(best));
  }
  std::sort(chosen.begin(), chosen.end());
  const std::size_t keep = theta - 2 * static_cast<std::size_t>(f);
  s.aggregate.resize(u.front().values.size());
  for (Eigen::Index c = 0; c < s.aggregate.size(); ++c) {
    std::vector<double> col;
    for (std::size_t p : chosen) col.push_back(u[p].values[c]);
    const double med = middle(col);
    std::vector<std::size_t> idx(col.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const double da = std::abs(col[a] - med), db = std::abs(col[b] - med);
      return da != db ? da < db : a < b;
    });
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());
    double sum = 0.0;
    for (std::size_t k : idx) sum += col[k];
    s.aggregate[c] = sum / static_cast<double>(keep);
  }
  return s;
}

Vector dyadic_vector(int n, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> q(-4, 4);
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = q(rng) / 4.0;
  return v;
}

GlobalParams dyadic_params(const ModelConfig& config, int num_items, std::mt19937_64& rng) {
  GlobalParams p;
  p.model = Mlp::zeros(config);
  Vector flat = dyadic_vector(static_cast<int>(p.model.parameter_count()), rng);
  p.model.unflatten_from(flat.data());
  p.item_embeddings.resize(num_items, config.embed_dim);
  for (int i = 0; i < num_items; ++i) p.item_embeddings.row(i) = dyadic_vector(config.embed_dim, rng).transpose();
  return p;
}

Vector random_vector(int n, std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> d(-scale, scale);
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

RowMatrix random_rows(int rows, int cols, std::mt19937_64& rng, double scale) {
  RowMatrix m(rows, cols);
  for (int r = 0; r < rows; ++r) m.row(r) = random_vector(cols, rng, scale).transpose();
  return m;
}

GlobalParams random_params(const ModelConfig& config, int num_items, std::mt19937_64& rng, double scale) {
  GlobalParams p;
  p.model = Mlp::zeros(config);
  Vector flat = random_vector(static_cast<int>(p.model.parameter_count()), rng, scale);
  p.model.unflatten_from(flat.data());
  p.item_embeddings = random_rows(num_items, config.embed_dim, rng, scale);
  return p;
}

}  // namespace fedpoison::oracle
