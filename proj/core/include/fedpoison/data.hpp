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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fedpoison/rng.hpp"
#include "fedpoison/types.hpp"

namespace fedpoison {

enum class DatasetFormat { kMl100k, kMl1m, kSteamCsv };

DatasetFormat parse_dataset_format(std::string_view name);
std::string_view to_string(DatasetFormat format);

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& message);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// One deduplicated (user, item) interaction. `order` is the position of the
// last raw line that produced it.
struct ItemEvent {
  ItemId item;
  std::optional<std::int64_t> timestamp;
  std::size_t order;
};

// Implicit-feedback dataset. Ids are dense and assigned in order of first
// appearance in the source file.
struct InteractionDataset {
  int num_users = 0;
  int num_items = 0;
  std::size_t raw_interaction_count = 0;
  bool has_timestamps = false;

  std::vector<std::vector<ItemEvent>> events;     // per user, full deduplicated history
  std::vector<std::vector<ItemId>> train;         // per user, ascending
  std::vector<std::optional<ItemId>> test;        // per user, held-out item
  std::vector<std::string> user_keys;             // raw ids
  std::vector<std::string> item_keys;

  std::size_t train_size() const;
  std::size_t unique_interaction_count() const;
  bool in_train(UserId user, ItemId item) const;
  // Train plus the held-out item, ascending.
  std::vector<ItemId> full_items(UserId user) const;
  // Number of users holding each item in train.
  std::vector<std::size_t> train_item_frequency() const;
};

InteractionDataset load_dataset(const std::filesystem::path& path, DatasetFormat format);
InteractionDataset parse_dataset(std::string_view text, DatasetFormat format);

// Holds out one interaction per user with >= 2 interactions: the latest by
// timestamp (ties: the later line in the file), or a seeded uniform pick when
// the source has no timestamps.
InteractionDataset leave_one_out_split(const InteractionDataset& dataset, std::uint64_t rng_seed);

// Uniform sample without replacement from [0, num_items) minus the sorted
// `excluded` ids. Returns min(count, available) ids in draw order.
std::vector<ItemId> sample_excluding(int num_items, std::span<const ItemId> excluded, std::size_t count, Rng& rng);

// Negatives for a user: items outside the user's train set and `exclude`.
std::vector<ItemId> sample_negatives(const InteractionDataset& dataset, UserId user, std::size_t count, Rng& rng,
                                     std::span<const ItemId> exclude = {});

struct GroupLabeling {
  std::vector<ItemId> interested_items;   // ascending
  std::vector<UserId> target_users;       // ascending
  std::vector<UserId> non_target_users;   // ascending
  std::vector<bool> is_target;            // indexed by user
};

// u is a target user iff every interested item is in u's full (pre-split)
// history. Throws std::invalid_argument on an empty or invalid item set.
GroupLabeling label_groups(const InteractionDataset& dataset, std::span<const ItemId> interested_items);

struct PopularityBand {
  double lo = 0.0;
  double hi = 1.0;
};

// Items whose train-frequency quantile lies in the band. Items are ordered by
// (frequency, id); the item at position p has quantile p / (n - 1).
std::vector<ItemId> items_in_band(const InteractionDataset& dataset, PopularityBand band);

// Samples `size` interested items from the band such that the target group is
// nonempty, retrying up to 100 times.
std::vector<ItemId> select_interested_items(const InteractionDataset& dataset, std::size_t size, Rng& rng,
                                            PopularityBand band, std::span<const ItemId> exclude = {});

// Samples `count` target items from the band (default: coldest decile).
std::vector<ItemId> select_target_items(const InteractionDataset& dataset, std::size_t count, Rng& rng,
                                        PopularityBand band = {0.0, 0.1}, std::span<const ItemId> exclude = {});

// FNV-1a over raw bytes, rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);
std::string file_checksum(const std::filesystem::path& path);

}  // namespace fedpoison
