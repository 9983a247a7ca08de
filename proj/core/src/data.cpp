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

#include "fedpoison/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace fedpoison {

DatasetFormat parse_dataset_format(std::string_view name) {
  if (name == "ml100k" || name == "ml-100k") return DatasetFormat::kMl100k;
  if (name == "ml1m" || name == "ml-1m") return DatasetFormat::kMl1m;
  if (name == "steam-csv" || name == "steam") return DatasetFormat::kSteamCsv;
  throw std::invalid_argument(fmt::format("unknown dataset format '{}'", name));
}

std::string_view to_string(DatasetFormat format) {
  switch (format) {
    case DatasetFormat::kMl100k: return "ml100k";
    case DatasetFormat::kMl1m: return "ml1m";
    case DatasetFormat::kSteamCsv: return "steam-csv";
  }
  return "unknown";
}

ParseError::ParseError(std::size_t line, const std::string& message)
    : std::runtime_error(fmt::format("line {}: {}", line, message)), line_(line) {}

std::size_t InteractionDataset::train_size() const {
  std::size_t n = 0;
  for (const auto& t : train) n += t.size();
  return n;
}

std::size_t InteractionDataset::unique_interaction_count() const {
  std::size_t n = 0;
  for (const auto& e : events) n += e.size();
  return n;
}

bool InteractionDataset::in_train(UserId user, ItemId item) const {
  const auto& t = train.at(static_cast<std::size_t>(user));
  return std::binary_search(t.begin(), t.end(), item);
}

std::vector<ItemId> InteractionDataset::full_items(UserId user) const {
  std::vector<ItemId> items = train.at(static_cast<std::size_t>(user));
  if (const auto& held = test.at(static_cast<std::size_t>(user)); held) {
    items.insert(std::upper_bound(items.begin(), items.end(), *held), *held);
  }
  return items;
}

std::vector<std::size_t> InteractionDataset::train_item_frequency() const {
  std::vector<std::size_t> freq(static_cast<std::size_t>(num_items), 0);
  for (const auto& t : train) {
    for (ItemId i : t) ++freq[static_cast<std::size_t>(i)];
  }
  return freq;
}

namespace {

std::vector<std::string_view> split_on(std::string_view line, std::string_view sep) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + sep.size();
  }
  return fields;
}

// RFC-4180 style: commas inside double quotes, "" escapes a quote.
std::vector<std::string> split_csv(std::string_view line, std::size_t line_no) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          fields.back().push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        fields.back().push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back().push_back(c);
    }
  }
  if (quoted) throw ParseError(line_no, "unterminated quoted field");
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::int64_t parse_int(std::string_view field, std::size_t line_no, const char* what) {
  field = trim(field);
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
    throw ParseError(line_no, fmt::format("invalid {} '{}'", what, field));
  }
  return value;
}

double parse_number(std::string_view field, std::size_t line_no, const char* what) {
  field = trim(field);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
    throw ParseError(line_no, fmt::format("invalid {} '{}'", what, field));
  }
  return value;
}

class DatasetBuilder {
 public:
  void add(std::string_view user_key, std::string_view item_key, std::optional<std::int64_t> timestamp) {
    const UserId u = intern(users_, data_.user_keys, user_key);
    const ItemId i = intern(items_, data_.item_keys, item_key);
    if (static_cast<std::size_t>(u) >= data_.events.size()) data_.events.resize(static_cast<std::size_t>(u) + 1);
    const std::uint64_t key = (static_cast<std::uint64_t>(u) << 32) | static_cast<std::uint32_t>(i);
    const std::size_t order = data_.raw_interaction_count++;
    auto [it, inserted] = pairs_.try_emplace(key, data_.events[static_cast<std::size_t>(u)].size());
    auto& history = data_.events[static_cast<std::size_t>(u)];
    if (inserted) {
      history.push_back({i, timestamp, order});
    } else {
      ItemEvent& e = history[it->second];
      if (timestamp && (!e.timestamp || *timestamp >= *e.timestamp)) e.timestamp = timestamp;
      e.order = order;
    }
    if (timestamp) data_.has_timestamps = true;
  }

  InteractionDataset finish() && {
    data_.num_users = static_cast<int>(data_.user_keys.size());
    data_.num_items = static_cast<int>(data_.item_keys.size());
    data_.events.resize(static_cast<std::size_t>(data_.num_users));
    data_.train.resize(data_.events.size());
    data_.test.assign(data_.events.size(), std::nullopt);
    for (std::size_t u = 0; u < data_.events.size(); ++u) {
      auto& t = data_.train[u];
      for (const auto& e : data_.events[u]) t.push_back(e.item);
      std::sort(t.begin(), t.end());
    }
    return std::move(data_);
  }

 private:
  template <typename Id>
  static Id intern(std::unordered_map<std::string, Id>& table, std::vector<std::string>& keys, std::string_view key) {
    auto [it, inserted] = table.try_emplace(std::string(key), static_cast<Id>(keys.size()));
    if (inserted) keys.emplace_back(key);
    return it->second;
  }

  InteractionDataset data_;
  std::unordered_map<std::string, UserId> users_;
  std::unordered_map<std::string, ItemId> items_;
  std::unordered_map<std::uint64_t, std::size_t> pairs_;
};

}  // namespace

InteractionDataset parse_dataset(std::string_view text, DatasetFormat format) {
  DatasetBuilder builder;
  std::size_t line_no = 0;
  std::size_t records = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) {
      if (end == text.size()) break;
      continue;
    }

    switch (format) {
      case DatasetFormat::kMl100k:
      case DatasetFormat::kMl1m: {
        const auto fields = split_on(line, format == DatasetFormat::kMl100k ? "\t" : "::");
        if (fields.size() != 4) {
          throw ParseError(line_no, fmt::format("expected 4 fields, found {}", fields.size()));
        }
        parse_int(fields[0], line_no, "user id");
        parse_int(fields[1], line_no, "item id");
        parse_number(fields[2], line_no, "rating");
        const std::int64_t ts = parse_int(fields[3], line_no, "timestamp");
        builder.add(trim(fields[0]), trim(fields[1]), ts);
        break;
      }
      case DatasetFormat::kSteamCsv: {
        const auto fields = split_csv(line, line_no);
        if (fields.size() != 4 && fields.size() != 5) {
          throw ParseError(line_no, fmt::format("expected 4 or 5 fields, found {}", fields.size()));
        }
        const std::string_view behavior = trim(fields[2]);
        if (records == 0 && behavior == "behavior") continue;  // header
        if (behavior != "play" && behavior != "purchase") {
          throw ParseError(line_no, fmt::format("unknown behavior '{}'", behavior));
        }
        parse_number(fields[3], line_no, "value");
        const std::string_view user = trim(fields[0]);
        if (user.empty()) throw ParseError(line_no, "empty user id");
        builder.add(user, fields[1], std::nullopt);
        break;
      }
    }
    ++records;
    if (end == text.size()) break;
  }
  if (records == 0) throw ParseError(line_no, "dataset contains no interactions");
  return std::move(builder).finish();
}

InteractionDataset load_dataset(const std::filesystem::path& path, DatasetFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open dataset '{}'", path.string()));
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  InteractionDataset data = parse_dataset(text, format);
  spdlog::debug("loaded {}: {} users, {} items, {} raw interactions", path.string(), data.num_users, data.num_items,
                data.raw_interaction_count);
  return data;
}

InteractionDataset leave_one_out_split(const InteractionDataset& dataset, std::uint64_t rng_seed) {
  InteractionDataset out = dataset;
  Rng rng(rng_seed);
  for (std::size_t u = 0; u < out.events.size(); ++u) {
    const auto& history = out.events[u];
    std::vector<ItemId> train;
    train.reserve(history.size());
    for (const auto& e : history) train.push_back(e.item);
    out.test[u] = std::nullopt;
    if (history.size() >= 2) {
      std::size_t pick = 0;
      if (dataset.has_timestamps) {
        for (std::size_t k = 1; k < history.size(); ++k) {
          const auto tk = history[k].timestamp.value_or(INT64_MIN);
          const auto tp = history[pick].timestamp.value_or(INT64_MIN);
          if (tk > tp || (tk == tp && history[k].order > history[pick].order)) pick = k;
        }
      } else {
        std::uniform_int_distribution<std::size_t> dist(0, history.size() - 1);
        pick = dist(rng);
      }
      out.test[u] = history[pick].item;
      train.erase(train.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    std::sort(train.begin(), train.end());
    out.train[u] = std::move(train);
  }
  return out;
}

std::vector<ItemId> sample_excluding(int num_items, std::span<const ItemId> excluded, std::size_t count, Rng& rng) {
  std::vector<ItemId> out;
  if (count == 0 || num_items <= 0) return out;
  std::size_t excluded_in_range = 0;
  for (std::size_t k = 0; k < excluded.size(); ++k) {
    if (excluded[k] >= 0 && excluded[k] < num_items && (k == 0 || excluded[k] != excluded[k - 1])) {
      ++excluded_in_range;
    }
  }
  const std::size_t available = static_cast<std::size_t>(num_items) - excluded_in_range;
  const std::size_t take = std::min(count, available);
  if (take == 0) return out;
  out.reserve(take);

  if (take * 3 <= available) {
    std::vector<char> seen(static_cast<std::size_t>(num_items), 0);
    std::uniform_int_distribution<ItemId> dist(0, num_items - 1);
    while (out.size() < take) {
      const ItemId c = dist(rng);
      if (seen[static_cast<std::size_t>(c)]) continue;
      if (std::binary_search(excluded.begin(), excluded.end(), c)) continue;
      seen[static_cast<std::size_t>(c)] = 1;
      out.push_back(c);
    }
    return out;
  }

  std::vector<ItemId> pool;
  pool.reserve(available);
  for (ItemId i = 0; i < num_items; ++i) {
    if (!std::binary_search(excluded.begin(), excluded.end(), i)) pool.push_back(i);
  }
  for (std::size_t k = 0; k < take; ++k) {
    std::uniform_int_distribution<std::size_t> dist(k, pool.size() - 1);
    std::swap(pool[k], pool[dist(rng)]);
    out.push_back(pool[k]);
  }
  return out;
}

std::vector<ItemId> sample_negatives(const InteractionDataset& dataset, UserId user, std::size_t count, Rng& rng,
                                     std::span<const ItemId> exclude) {
  const auto& positives = dataset.train.at(static_cast<std::size_t>(user));
  if (exclude.empty()) return sample_excluding(dataset.num_items, positives, count, rng);
  std::vector<ItemId> extra(exclude.begin(), exclude.end());
  std::sort(extra.begin(), extra.end());
  std::vector<ItemId> merged;
  merged.reserve(positives.size() + extra.size());
  std::set_union(positives.begin(), positives.end(), extra.begin(), extra.end(), std::back_inserter(merged));
  return sample_excluding(dataset.num_items, merged, count, rng);
}

GroupLabeling label_groups(const InteractionDataset& dataset, std::span<const ItemId> interested_items) {
  if (interested_items.empty()) throw std::invalid_argument("label_groups: interested item set is empty");
  GroupLabeling out;
  out.interested_items.assign(interested_items.begin(), interested_items.end());
  std::sort(out.interested_items.begin(), out.interested_items.end());
  out.interested_items.erase(std::unique(out.interested_items.begin(), out.interested_items.end()),
                             out.interested_items.end());
  for (ItemId i : out.interested_items) {
    if (i < 0 || i >= dataset.num_items) throw std::invalid_argument(fmt::format("interested item {} out of range", i));
  }
  out.is_target.assign(static_cast<std::size_t>(dataset.num_users), false);
  for (UserId u = 0; u < dataset.num_users; ++u) {
    const auto full = dataset.full_items(u);
    const bool target =
        std::includes(full.begin(), full.end(), out.interested_items.begin(), out.interested_items.end());
    out.is_target[static_cast<std::size_t>(u)] = target;
    (target ? out.target_users : out.non_target_users).push_back(u);
  }
  if (out.target_users.empty()) {
    spdlog::warn("label_groups: no user interacted with all {} interested items; target group is empty",
                 out.interested_items.size());
  }
  return out;
}

std::vector<ItemId> items_in_band(const InteractionDataset& dataset, PopularityBand band) {
  if (!(band.lo >= 0.0 && band.hi <= 1.0 && band.lo <= band.hi)) {
    throw std::invalid_argument("popularity band must satisfy 0 <= lo <= hi <= 1");
  }
  const auto freq = dataset.train_item_frequency();
  std::vector<ItemId> order(static_cast<std::size_t>(dataset.num_items));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](ItemId a, ItemId b) {
    return freq[static_cast<std::size_t>(a)] < freq[static_cast<std::size_t>(b)];
  });
  std::vector<ItemId> out;
  const double denom = order.size() > 1 ? static_cast<double>(order.size() - 1) : 1.0;
  for (std::size_t p = 0; p < order.size(); ++p) {
    const double q = order.size() > 1 ? static_cast<double>(p) / denom : 0.0;
    if (q >= band.lo && q <= band.hi) out.push_back(order[p]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

std::vector<ItemId> band_candidates(const InteractionDataset& dataset, PopularityBand band,
                                    std::span<const ItemId> exclude) {
  std::vector<ItemId> ex(exclude.begin(), exclude.end());
  std::sort(ex.begin(), ex.end());
  std::vector<ItemId> candidates;
  for (ItemId i : items_in_band(dataset, band)) {
    if (!std::binary_search(ex.begin(), ex.end(), i)) candidates.push_back(i);
  }
  return candidates;
}

std::vector<ItemId> draw_subset(std::vector<ItemId> pool, std::size_t size, Rng& rng) {
  for (std::size_t k = 0; k < size; ++k) {
    std::uniform_int_distribution<std::size_t> dist(k, pool.size() - 1);
    std::swap(pool[k], pool[dist(rng)]);
  }
  pool.resize(size);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace

std::vector<ItemId> select_interested_items(const InteractionDataset& dataset, std::size_t size, Rng& rng,
                                            PopularityBand band, std::span<const ItemId> exclude) {
  if (size < 1) throw std::invalid_argument("select_interested_items: size must be >= 1");
  if (size > static_cast<std::size_t>(dataset.num_items)) {
    throw std::invalid_argument(
        fmt::format("select_interested_items: size {} exceeds item count {}", size, dataset.num_items));
  }
  const auto candidates = band_candidates(dataset, band, exclude);
  if (candidates.size() < size) {
    throw std::invalid_argument(
        fmt::format("select_interested_items: only {} candidate items in band [{}, {}]", candidates.size(), band.lo,
                    band.hi));
  }
  constexpr int kMaxAttempts = 100;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    auto chosen = draw_subset(candidates, size, rng);
    bool any_target = false;
    for (UserId u = 0; u < dataset.num_users && !any_target; ++u) {
      const auto full = dataset.full_items(u);
      any_target = std::includes(full.begin(), full.end(), chosen.begin(), chosen.end());
    }
    if (any_target) return chosen;
  }
  throw std::runtime_error(
      fmt::format("select_interested_items: no {}-item set with a nonempty target group after {} attempts", size,
                  kMaxAttempts));
}

std::vector<ItemId> select_target_items(const InteractionDataset& dataset, std::size_t count, Rng& rng,
                                        PopularityBand band, std::span<const ItemId> exclude) {
  if (count < 1) throw std::invalid_argument("select_target_items: count must be >= 1");
  const auto candidates = band_candidates(dataset, band, exclude);
  if (candidates.size() < count) {
    throw std::invalid_argument(fmt::format("select_target_items: only {} candidates in band", candidates.size()));
  }
  return draw_subset(candidates, count, rng);
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

std::string file_checksum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return fnv1a_hex(buffer.str());
}

}  // namespace fedpoison
