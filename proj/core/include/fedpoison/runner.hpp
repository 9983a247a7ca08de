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

// Experiment orchestration: one configured run end to end, and matrices of
// patched runs with a comparison table.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedpoison/config.hpp"
#include "fedpoison/metrics.hpp"

namespace fedpoison {

std::string version_string();

struct RunManifest {
  std::string run_id;  // <config hash>-s<seed>
  nlohmann::json config;
  std::string dataset_checksum;
  std::string version;
  std::string status = "ok";  // "ok" or "failed"
  std::optional<int> failure_round;
  std::string error;
  nlohmann::json setup;  // resolved item sets, group sizes, client counts, defense parameters
  std::vector<double> round_wall_ms;
  std::optional<MetricsReport> final_report;
  std::filesystem::path run_dir;

  bool ok() const { return status == "ok"; }
  nlohmann::json to_json() const;
};

// Malicious clients added for fraction rho of n benign users.
int malicious_count(double rho, int benign_users);

// Runs the experiment and writes manifest.json, metrics.csv, rounds.jsonl and
// (optionally) embeddings/ under <output_dir>/<run_id>/. Errors after the
// output directory exists are recorded in a failed manifest instead of being
// thrown.
RunManifest run_experiment(const ExperimentConfig& config);

struct MatrixEntry {
  std::string name;
  nlohmann::json overrides;  // dotted keys
};

// Accepts an array of {"name": ..., "set": {...}} objects or of plain
// dotted-key objects.
std::vector<MatrixEntry> parse_matrix_entries(const nlohmann::json& doc);

struct MatrixResult {
  std::vector<RunManifest> manifests;
  std::filesystem::path comparison_csv;
};

// Runs every entry on top of the base document. An empty list runs the base
// once. Failures are recorded and the matrix continues.
MatrixResult run_matrix(const nlohmann::json& base, const std::vector<MatrixEntry>& entries,
                        const std::filesystem::path& output_dir);

// One comparison row per run: config name, seed, status, then metric x group
// columns.
std::string comparison_header(const EvaluationSpec& spec);
std::string comparison_row(const std::string& name, const RunManifest& manifest, const EvaluationSpec& spec);

// Writes through a temporary file and a rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace fedpoison
