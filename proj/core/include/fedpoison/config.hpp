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

// Experiment configuration: a JSON document, nested or flat with dotted keys,
// resolved against built-in defaults.

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedpoison/attack.hpp"
#include "fedpoison/data.hpp"
#include "fedpoison/defense.hpp"
#include "fedpoison/fedsim.hpp"
#include "fedpoison/metrics.hpp"
#include "fedpoison/model.hpp"

namespace fedpoison {

struct DatasetSettings {
  std::string path;
  DatasetFormat format = DatasetFormat::kMl100k;
};

struct RoundSettings {
  int global_epochs = 30;
  double participation = 1.0;
  ModelAggregation model_aggregation = ModelAggregation::kMean;
  int threads = 1;
};

struct AttackSetup {
  double malicious_fraction = 0.0;  // rho
  // Explicit item sets; empty means "sample from the band".
  std::vector<ItemId> target_items;
  std::vector<ItemId> interested_items;
  int target_count = 1;
  PopularityBand target_band{0.0, 0.1};
  int interested_count = 2;
  PopularityBand interested_band{0.9, 1.0};
  AttackConfig params;  // item sets are filled in at run time
};

struct DefenseSetup {
  // norm_threshold <= 0 is calibrated from a warmup; byzantine_count is
  // filled in at run time.
  DefenseConfig config;
  int warmup_rounds = 3;
  int byzantine_count = -1;  // < 0: ceil(rho * clients)
};

struct EvalSettings {
  EvaluationSpec spec;
  int every = 5;
  bool dump_embeddings = false;
};

struct ExperimentConfig {
  DatasetSettings dataset;
  ModelConfig model;
  TrainingSettings training;
  RoundSettings rounds;
  AttackSetup attack;
  DefenseSetup defense;
  EvalSettings eval;
  std::uint64_t seed = 0;
  std::string output_dir;

  // Throws std::invalid_argument. Checks that the dataset path exists.
  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& doc);
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Turns {"a.b": 1} into {"a": {"b": 1}}; nested input passes through.
nlohmann::json unflatten_keys(const nlohmann::json& doc);
// Dotted-key view of a nested document; arrays are leaves.
nlohmann::json flatten_keys(const nlohmann::json& doc);

// Parses "key=value". The value is read as JSON when possible, otherwise as a
// string.
std::pair<std::string, nlohmann::json> parse_override(std::string_view text);
void apply_override(nlohmann::json& doc, const std::string& dotted_key, const nlohmann::json& value);

// Reads a config file. A run manifest is accepted too (its config snapshot is
// used). Relative dataset paths are resolved against the file's directory.
nlohmann::json load_config_document(const std::filesystem::path& path);

// Stable hash of everything except seed and output_dir.
std::string config_hash(const ExperimentConfig& config);

}  // namespace fedpoison
