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
#include <initializer_list>
#include <random>

namespace fedpoison {

using Rng = std::mt19937_64;

// SplitMix64 finalizer. Used to turn structured keys into independent seeds.
std::uint64_t mix64(std::uint64_t x);

// Derives a seed from a master seed and a sequence of stream keys such as
// (client id, round). Different key sequences give statistically independent
// streams, so per-client work can run in any order.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> keys);

inline Rng make_rng(std::uint64_t master, std::initializer_list<std::uint64_t> keys) {
  return Rng(derive_seed(master, keys));
}

// Named streams so that unrelated consumers of the master seed never collide.
enum class Stream : std::uint64_t {
  kInit = 1,
  kSplit = 2,
  kGroups = 3,
  kClientSelection = 4,
  kClient = 5,
  kAttackInit = 6,
  kWarmup = 7,
};

}  // namespace fedpoison
