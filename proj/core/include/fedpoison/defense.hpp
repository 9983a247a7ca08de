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

// Byzantine-robust aggregation rules over densely flattened client updates.
//
// Every rule is permutation invariant: inputs are ordered by client id before
// any order-sensitive step, and ties are resolved by the lower client id.
// Sums run in ascending client-id order unless stated otherwise.

#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedpoison/types.hpp"

namespace fedpoison {

struct FlatUpdate {
  ClientId client_id = 0;
  Vector values;
};

enum class DefenseKind { kNone, kNormBound, kMedian, kTrimmedMean, kKrum, kMultiKrum, kBulyan };

DefenseKind parse_defense_kind(std::string_view name);
std::string_view to_string(DefenseKind kind);

struct DefenseConfig {
  DefenseKind kind = DefenseKind::kNone;
  double norm_threshold = 0.0;  // NormBound tau; <= 0 means "calibrate"
  double trim_fraction = 0.1;   // TrimmedMean beta
  int byzantine_count = 0;      // Krum family f
  int multi_krum_m = -1;        // < 0 means n - f - 2

  // Throws std::invalid_argument.
  void validate() const;
};

// Clips every update whose L2 norm exceeds tau to norm tau.
std::vector<FlatUpdate> norm_bound(std::span<const FlatUpdate> updates, double tau);

// Per-coordinate median; the mean of the two middle values for even counts.
Vector coordinate_median(std::span<const FlatUpdate> updates);

// Per-coordinate mean after dropping floor(beta * n) values from each tail.
// The kept values are summed in ascending value order.
Vector trimmed_mean(std::span<const FlatUpdate> updates, double beta);

struct KrumResult {
  std::vector<ClientId> selected;  // ascending score, ties by client id
  std::vector<double> scores;      // aligned with the id-sorted input
  Vector aggregate;                // mean of the selected updates
};

// score(i) = sum of squared L2 distances to its n - f - 2 nearest neighbours.
// Selects the `multi_m` lowest scores (multi_m = 1 is plain Krum).
KrumResult krum(std::span<const FlatUpdate> updates, int f, int multi_m = 1);

struct BulyanResult {
  std::vector<ClientId> selected;  // in selection order
  Vector aggregate;
};

// Selects n - 2f updates by repeated Krum, then per coordinate averages the
// n - 4f selected values closest to the selection's coordinate median
// (closeness ties by client id; kept values summed in client-id order).
BulyanResult bulyan(std::span<const FlatUpdate> updates, int f);

struct DefenseOutcome {
  Vector aggregate;  // sum-equivalent: add to parameters after scaling by -lr
  std::vector<ClientId> selected;
  std::vector<ClientId> clipped;
};

// Applies the configured rule. Rules that produce one representative vector
// (median, trimmed mean, Krum family, Bulyan) are rescaled by n so that the
// server update has the same magnitude as a plain sum.
DefenseOutcome apply_defense(const DefenseConfig& config, std::span<const FlatUpdate> updates);

}  // namespace fedpoison
