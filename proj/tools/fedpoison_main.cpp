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

// fedpoison command-line front end.
//
//   fedpoison run --config exp.json [--set key=value ...] [--seed N] [--out DIR]
//   fedpoison matrix --config exp.json --overrides matrix.json [--out DIR]
//   fedpoison inspect --manifest runs/<id>/manifest.json
//
// FEDPOISON_OUT sets the output directory when neither --out nor the config
// does.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "fedpoison/config.hpp"
#include "fedpoison/runner.hpp"

namespace {

using nlohmann::json;

std::string default_output_dir(const std::string& flag, const json& doc) {
  if (!flag.empty()) return flag;
  if (doc.contains("output_dir") && doc["output_dir"].is_string() && !doc["output_dir"].get<std::string>().empty()) {
    return doc["output_dir"].get<std::string>();
  }
  if (const char* env = std::getenv("FEDPOISON_OUT"); env != nullptr && *env != '\0') return env;
  return "runs";
}

void print_report(const fedpoison::RunManifest& man) {
  std::cout << fmt::format("run {} [{}]\n", man.run_id, man.status);
  if (!man.ok()) std::cout << fmt::format("  error: {}\n", man.error);
  if (man.final_report) {
    for (const auto& row : man.final_report->csv_rows()) std::cout << "  " << row << '\n';
  }
  std::cout << fmt::format("  output: {}\n", man.run_dir.string());
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& sets, std::optional<std::uint64_t> seed,
            const std::string& out) {
  json doc = fedpoison::load_config_document(config_path);
  for (const auto& s : sets) {
    auto [key, value] = fedpoison::parse_override(s);
    fedpoison::apply_override(doc, key, value);
  }
  if (seed) doc["seed"] = *seed;
  doc["output_dir"] = default_output_dir(out, doc);
  const auto cfg = fedpoison::ExperimentConfig::from_json(doc);
  const auto man = fedpoison::run_experiment(cfg);
  print_report(man);
  return man.ok() ? 0 : 1;
}

int cmd_matrix(const std::string& config_path, const std::string& overrides_path, const std::string& out) {
  json base = fedpoison::load_config_document(config_path);
  std::ifstream in(overrides_path);
  if (!in) throw fedpoison::ConfigError(fmt::format("cannot open overrides {}", overrides_path));
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw fedpoison::ConfigError(fmt::format("{} is not valid JSON", overrides_path));
  const auto entries = fedpoison::parse_matrix_entries(doc);
  const auto result = fedpoison::run_matrix(base, entries, default_output_dir(out, base));
  int failed = 0;
  for (const auto& m : result.manifests) {
    print_report(m);
    failed += m.ok() ? 0 : 1;
  }
  std::cout << fmt::format("comparison: {} ({} of {} runs failed)\n", result.comparison_csv.string(), failed,
                           result.manifests.size());
  return failed == 0 ? 0 : 1;
}

int cmd_inspect(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw fedpoison::ConfigError(fmt::format("cannot open manifest {}", manifest_path));
  json m = json::parse(in, nullptr, false);
  if (m.is_discarded() || !m.is_object()) throw fedpoison::ConfigError("manifest is not a JSON object");
  std::cout << fmt::format("run:      {}\n", m.value("run_id", "?"));
  std::cout << fmt::format("status:   {}\n", m.value("status", "?"));
  if (m.contains("failure_round") && !m["failure_round"].is_null()) {
    std::cout << fmt::format("failed:   round {}: {}\n", m["failure_round"].get<int>(), m.value("error", ""));
  }
  std::cout << fmt::format("version:  {}\n", m.value("version", "?"));
  std::cout << fmt::format("dataset:  {} ({})\n", m["config"]["dataset"].value("path", "?"),
                           m.value("dataset_checksum", "?"));
  std::cout << fmt::format("seed:     {}\n", m["config"].value("seed", 0ULL));
  if (m.contains("setup") && m["setup"].is_object()) {
    const auto& s = m["setup"];
    std::cout << fmt::format("clients:  {} benign + {} malicious\n", s.value("benign_clients", 0),
                             s.value("malicious_clients", 0));
    std::cout << fmt::format("groups:   {} target / {} non-target users\n", s.value("target_users", 0),
                             s.value("non_target_users", 0));
    std::cout << "targets:  " << s.value("target_items", json::array()).dump() << '\n';
    std::cout << "interest: " << s.value("interested_items", json::array()).dump() << '\n';
    std::cout << "defense:  " << s.value("defense", json::object()).dump() << '\n';
  }
  if (m.contains("round_wall_ms") && m["round_wall_ms"].is_array() && !m["round_wall_ms"].empty()) {
    double total = 0.0;
    for (const auto& v : m["round_wall_ms"]) total += v.get<double>();
    std::cout << fmt::format("rounds:   {} ({:.1f} s of client work)\n", m["round_wall_ms"].size(), total / 1000.0);
  }
  if (m.contains("final_metrics") && !m["final_metrics"].is_null()) {
    std::cout << "metrics:\n" << m["final_metrics"].dump(2) << '\n';
  }
  return m.value("status", "") == "ok" ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated recommendation poisoning simulator"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off");

  std::string config, overrides, manifest, out;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;

  auto* run = app.add_subcommand("run", "Run one experiment");
  run->add_option("--config", config, "Experiment config (JSON) or a previous manifest")->required()->check(CLI::ExistingFile);
  run->add_option("--set", sets, "Dotted-key override, e.g. attack.margin=2.0");
  run->add_option("--seed", seed, "Master seed");
  run->add_option("--out", out, "Output directory (default: $FEDPOISON_OUT or ./runs)");

  auto* matrix = app.add_subcommand("matrix", "Run a list of patched configs and compare them");
  matrix->add_option("--config", config, "Base experiment config")->required()->check(CLI::ExistingFile);
  matrix->add_option("--overrides", overrides, "JSON array of override sets")->required()->check(CLI::ExistingFile);
  matrix->add_option("--out", out, "Output directory");

  auto* inspect = app.add_subcommand("inspect", "Summarize a run manifest");
  inspect->add_option("--manifest", manifest, "manifest.json")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*run) return cmd_run(config, sets, seed, out);
    if (*matrix) return cmd_matrix(config, overrides, out);
    if (*inspect) return cmd_inspect(manifest);
  } catch (const fedpoison::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
