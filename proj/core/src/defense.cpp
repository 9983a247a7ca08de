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

#include "fedpoison/defense.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

namespace fedpoison {

DefenseKind parse_defense_kind(std::string_view name) {
  if (name == "none") return DefenseKind::kNone;
  if (name == "normbound" || name == "norm") return DefenseKind::kNormBound;
  if (name == "median") return DefenseKind::kMedian;
  if (name == "trimmedmean" || name == "trimmed_mean") return DefenseKind::kTrimmedMean;
  if (name == "krum") return DefenseKind::kKrum;
  if (name == "multikrum" || name == "multi_krum") return DefenseKind::kMultiKrum;
  if (name == "bulyan") return DefenseKind::kBulyan;
  throw std::invalid_argument(fmt::format("unknown defense '{}'", name));
}

std::string_view to_string(DefenseKind kind) {
  switch (kind) {
    case DefenseKind::kNone: return "none";
    case DefenseKind::kNormBound: return "normbound";
    case DefenseKind::kMedian: return "median";
    case DefenseKind::kTrimmedMean: return "trimmedmean";
    case DefenseKind::kKrum: return "krum";
    case DefenseKind::kMultiKrum: return "multikrum";
    case DefenseKind::kBulyan: return "bulyan";
  }
  return "unknown";
}

void DefenseConfig::validate() const {
  if (kind == DefenseKind::kNormBound && !(norm_threshold > 0.0)) {
    throw std::invalid_argument("normbound requires tau > 0");
  }
  if (!(trim_fraction >= 0.0 && trim_fraction < 0.5)) throw std::invalid_argument("trim fraction must be in [0, 0.5)");
  if (byzantine_count < 0) throw std::invalid_argument("byzantine count must be >= 0");
}

namespace {

// Indices of `updates` in ascending client-id order, checking shape.
std::vector<std::size_t> id_order(std::span<const FlatUpdate> updates) {
  if (updates.empty()) throw std::invalid_argument("aggregation over an empty update set");
  const Eigen::Index dim = updates.front().values.size();
  std::vector<std::size_t> order(updates.size());
  std::iota(order.begin(), order.end(), 0);
  for (const auto& u : updates) {
    if (u.values.size() != dim) throw std::invalid_argument("flat updates differ in length");
  }
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return updates[a].client_id < updates[b].client_id; });
  for (std::size_t k = 1; k < order.size(); ++k) {
    if (updates[order[k]].client_id == updates[order[k - 1]].client_id) {
      throw std::invalid_argument("duplicate client id in update set");
    }
  }
  return order;
}

// Pairwise squared distances among the id-sorted updates, through the Gram
// matrix: |a - b|^2 = |a|^2 + |b|^2 - 2 a.b, clamped at zero.
std::vector<double> distance_matrix(std::span<const FlatUpdate> updates, const std::vector<std::size_t>& order) {
  const std::size_t n = order.size();
  const Eigen::Index dim = updates.front().values.size();
  Matrix stacked(dim, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) stacked.col(static_cast<Eigen::Index>(i)) = updates[order[i]].values;
  Matrix gram = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  gram.selfadjointView<Eigen::Lower>().rankUpdate(stacked.transpose());
  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      const double d = std::max(0.0, gram(ii, ii) + gram(jj, jj) - 2.0 * gram(jj, ii));
      dist[i * n + j] = d;
      dist[j * n + i] = d;
    }
  }
  return dist;
}

// Krum scores of the members of `pool` (positions into the id order) using
// only distances inside the pool.
std::vector<double> krum_scores(const std::vector<double>& dist, std::size_t n, const std::vector<std::size_t>& pool,
                                int f) {
  const std::size_t m = pool.size();
  const std::ptrdiff_t neighbours = static_cast<std::ptrdiff_t>(m) - f - 2;
  std::vector<double> scores(m, 0.0);
  std::vector<double> row;
  for (std::size_t a = 0; a < m; ++a) {
    row.clear();
    for (std::size_t b = 0; b < m; ++b) {
      if (a != b) row.push_back(dist[pool[a] * n + pool[b]]);
    }
    if (neighbours > 0) {
      std::nth_element(row.begin(), row.begin() + (neighbours - 1), row.end());
      std::sort(row.begin(), row.begin() + neighbours);
      double s = 0.0;
      for (std::ptrdiff_t k = 0; k < neighbours; ++k) s += row[static_cast<std::size_t>(k)];
      scores[a] = s;
    }
  }
  return scores;
}

}  // namespace

std::vector<FlatUpdate> norm_bound(std::span<const FlatUpdate> updates, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("norm_bound: tau must be positive");
  std::vector<FlatUpdate> out(updates.begin(), updates.end());
  for (auto& u : out) {
    const double norm = u.values.norm();
    if (norm > tau) u.values *= tau / norm;
  }
  return out;
}

Vector coordinate_median(std::span<const FlatUpdate> updates) {
  const auto order = id_order(updates);
  const std::size_t n = order.size();
  const Eigen::Index dim = updates.front().values.size();
  Vector out(dim);
  std::vector<double> column(n);
  for (Eigen::Index c = 0; c < dim; ++c) {
    for (std::size_t k = 0; k < n; ++k) column[k] = updates[order[k]].values[c];
    std::sort(column.begin(), column.end());
    out[c] = (n % 2 == 1) ? column[n / 2] : (column[n / 2 - 1] + column[n / 2]) / 2.0;
  }
  return out;
}

Vector trimmed_mean(std::span<const FlatUpdate> updates, double beta) {
  if (!(beta >= 0.0 && beta < 0.5)) throw std::invalid_argument("trimmed_mean: beta must be in [0, 0.5)");
  const auto order = id_order(updates);
  const std::size_t n = order.size();
  const auto trim = static_cast<std::size_t>(std::floor(beta * static_cast<double>(n)));
  if (2 * trim >= n) {
    throw std::invalid_argument(fmt::format("trimmed_mean: trimming {} per side leaves no values of {}", trim, n));
  }
  const Eigen::Index dim = updates.front().values.size();
  Vector out(dim);
  std::vector<double> column(n);
  for (Eigen::Index c = 0; c < dim; ++c) {
    for (std::size_t k = 0; k < n; ++k) column[k] = updates[order[k]].values[c];
    std::sort(column.begin(), column.end());
    double s = 0.0;
    for (std::size_t k = trim; k < n - trim; ++k) s += column[k];
    out[c] = s / static_cast<double>(n - 2 * trim);
  }
  return out;
}

KrumResult krum(std::span<const FlatUpdate> updates, int f, int multi_m) {
  const auto order = id_order(updates);
  const std::size_t n = order.size();
  if (f < 0) throw std::invalid_argument("krum: f must be >= 0");
  if (n < static_cast<std::size_t>(2 * f + 3)) {
    throw std::invalid_argument(fmt::format("krum: need n >= 2f + 3, got n = {}, f = {}", n, f));
  }
  if (multi_m < 1 || static_cast<std::size_t>(multi_m) > n) {
    throw std::invalid_argument(fmt::format("krum: multi_m = {} outside [1, {}]", multi_m, n));
  }
  const auto dist = distance_matrix(updates, order);
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  KrumResult result;
  result.scores = krum_scores(dist, n, pool, f);

  std::vector<std::size_t> ranked(n);
  std::iota(ranked.begin(), ranked.end(), 0);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [&](std::size_t a, std::size_t b) { return result.scores[a] < result.scores[b]; });
  ranked.resize(static_cast<std::size_t>(multi_m));
  for (std::size_t p : ranked) result.selected.push_back(updates[order[p]].client_id);

  std::sort(ranked.begin(), ranked.end());
  result.aggregate = Vector::Zero(updates.front().values.size());
  for (std::size_t p : ranked) result.aggregate += updates[order[p]].values;
  result.aggregate /= static_cast<double>(multi_m);
  return result;
}

BulyanResult bulyan(std::span<const FlatUpdate> updates, int f) {
  const auto order = id_order(updates);
  const std::size_t n = order.size();
  if (f < 0) throw std::invalid_argument("bulyan: f must be >= 0");
  if (n < static_cast<std::size_t>(4 * f + 3)) {
    throw std::invalid_argument(fmt::format("bulyan: need n >= 4f + 3, got n = {}, f = {}", n, f));
  }
  const auto dist = distance_matrix(updates, order);
  const std::size_t theta = n - 2 * static_cast<std::size_t>(f);
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  std::vector<std::size_t> chosen;  // positions in id order
  BulyanResult result;
  while (chosen.size() < theta) {
    const auto scores = krum_scores(dist, n, pool, f);
    std::size_t best = 0;
    for (std::size_t a = 1; a < pool.size(); ++a) {
      if (scores[a] < scores[best]) best = a;  // pool is id-ascending, so ties keep the lower id
    }
    chosen.push_back(pool[best]);
    result.selected.push_back(updates[order[pool[best]]].client_id);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(best));
  }

  std::sort(chosen.begin(), chosen.end());
  const std::size_t beta = theta - 2 * static_cast<std::size_t>(f);
  const Eigen::Index dim = updates.front().values.size();
  result.aggregate.resize(dim);
  std::vector<double> column(theta);
  std::vector<double> sorted(theta);
  std::vector<std::size_t> closest(theta);
  for (Eigen::Index c = 0; c < dim; ++c) {
    for (std::size_t k = 0; k < theta; ++k) column[k] = updates[order[chosen[k]]].values[c];
    sorted = column;
    std::sort(sorted.begin(), sorted.end());
    const double med =
        (theta % 2 == 1) ? sorted[theta / 2] : (sorted[theta / 2 - 1] + sorted[theta / 2]) / 2.0;
    std::iota(closest.begin(), closest.end(), 0);
    std::stable_sort(closest.begin(), closest.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(column[a] - med) < std::abs(column[b] - med);
    });
    std::sort(closest.begin(), closest.begin() + static_cast<std::ptrdiff_t>(beta));
    double s = 0.0;
    for (std::size_t k = 0; k < beta; ++k) s += column[closest[k]];
    result.aggregate[c] = s / static_cast<double>(beta);
  }
  return result;
}

DefenseOutcome apply_defense(const DefenseConfig& config, std::span<const FlatUpdate> updates) {
  config.validate();
  const auto order = id_order(updates);
  const auto n = static_cast<double>(order.size());
  DefenseOutcome out;
  switch (config.kind) {
    case DefenseKind::kNone:
    case DefenseKind::kNormBound: {
      std::vector<FlatUpdate> kept(updates.begin(), updates.end());
      if (config.kind == DefenseKind::kNormBound) {
        kept = norm_bound(updates, config.norm_threshold);
        for (std::size_t k = 0; k < kept.size(); ++k) {
          if (!(kept[k].values == updates[k].values)) out.clipped.push_back(kept[k].client_id);
        }
        std::sort(out.clipped.begin(), out.clipped.end());
      }
      out.aggregate = Vector::Zero(updates.front().values.size());
      for (std::size_t p : order) {
        out.aggregate += kept[p].values;
        out.selected.push_back(kept[p].client_id);
      }
      break;
    }
    case DefenseKind::kMedian:
      out.aggregate = coordinate_median(updates) * n;
      for (std::size_t p : order) out.selected.push_back(updates[p].client_id);
      break;
    case DefenseKind::kTrimmedMean:
      out.aggregate = trimmed_mean(updates, config.trim_fraction) * n;
      for (std::size_t p : order) out.selected.push_back(updates[p].client_id);
      break;
    case DefenseKind::kKrum:
    case DefenseKind::kMultiKrum: {
      int m = 1;
      if (config.kind == DefenseKind::kMultiKrum) {
        m = config.multi_krum_m > 0 ? config.multi_krum_m
                                    : static_cast<int>(order.size()) - config.byzantine_count - 2;
      }
      auto r = krum(updates, config.byzantine_count, m);
      out.aggregate = r.aggregate * n;
      out.selected = std::move(r.selected);
      break;
    }
    case DefenseKind::kBulyan: {
      auto r = bulyan(updates, config.byzantine_count);
      out.aggregate = r.aggregate * n;
      out.selected = std::move(r.selected);
      break;
    }
  }
  return out;
}

}  // namespace fedpoison
