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

#include "fedpoison/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "fedpoison/attack.hpp"
#include "fedpoison/data.hpp"
#include "fedpoison/fedsim.hpp"

#ifndef FEDPOISON_VERSION
#define FEDPOISON_VERSION "unknown"
#endif

namespace fedpoison {

using nlohmann::json;

namespace {

struct Population {
  std::vector<std::unique_ptr<BenignClient>> benign;
  std::vector<std::unique_ptr<SpattackClient>> malicious;
  std::vector<Client*> all;  // indexed by client id
  std::vector<ClientId> ids;
};

std::vector<std::unique_ptr<BenignClient>> make_benign(const InteractionDataset& ds, int embed_dim, std::uint64_t seed) {
  std::vector<std::unique_ptr<BenignClient>> out;
  out.reserve(static_cast<std::size_t>(ds.num_users));
  for (UserId u = 0; u < ds.num_users; ++u) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(Stream::kInit), 1, static_cast<std::uint64_t>(u)});
    out.push_back(std::make_unique<BenignClient>(u, ds.train[static_cast<std::size_t>(u)],
                                                 init_user_embedding(embed_dim, rng)));
  }
  return out;
}

std::vector<Client*> as_population(const std::vector<std::unique_ptr<BenignClient>>& benign) {
  std::vector<Client*> out;
  for (const auto& c : benign) out.push_back(c.get());
  return out;
}

double median_of(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Median client norm over a short attack-free, defense-free run from the same
// initial state.
double calibrate_norm_threshold(const ExperimentConfig& cfg, const InteractionDataset& ds,
                                const GlobalParams& init, const TrainingSettings& training) {
  auto benign = make_benign(ds, cfg.model.embed_dim, cfg.seed);
  auto population = as_population(benign);
  std::vector<ClientId> ids(population.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<ClientId>(i);

  ServerSettings server{cfg.training.learning_rate, cfg.rounds.model_aggregation, cfg.rounds.threads,
                        derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stream::kWarmup)})};
  GlobalParams params = init;
  std::vector<double> norms;
  const int rounds = cfg.defense.warmup_rounds;
  for (int k = 0; k < rounds; ++k) {
    RoundPlan plan{k, rounds, ids, training};
    auto result = run_round(params, plan, population, DefenseConfig{}, server);
    for (const auto& rec : result.log.clients) {
      if (!rec.dropped) norms.push_back(rec.norm);
    }
    params = std::move(result.params);
  }
  return median_of(std::move(norms));
}

void write_embedding_dump(const std::filesystem::path& path, const std::vector<std::optional<AttackSnapshot>>& snaps) {
  std::ostringstream out;
  int d = 0;
  for (const auto& s : snaps) {
    if (s) d = static_cast<int>(s->target_users.cols());
  }
  out << "client,kind,index";
  for (int j = 0; j < d; ++j) out << ",e" << j;
  out << '\n';
  auto rows = [&](ClientId client, const char* kind, const RowMatrix& m, const std::vector<ItemId>* ids) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      out << client << ',' << kind << ',' << (ids != nullptr ? (*ids)[static_cast<std::size_t>(r)] : r);
      for (Eigen::Index j = 0; j < m.cols(); ++j) out << ',' << format_metric_value(m(r, j));
      out << '\n';
    }
  };
  for (const auto& s : snaps) {
    if (!s) continue;
    rows(s->client, "target_user", s->target_users, nullptr);
    rows(s->client, "non_target_user", s->non_target_users, nullptr);
    rows(s->client, "target_item", s->target_item_rows, &s->target_items);
    rows(s->client, "relevant_item", s->relevant_item_rows, &s->relevant_items);
  }
  write_file_atomic(path, out.str());
}

std::string metrics_csv(const std::vector<MetricsReport>& reports) {
  std::string out = "round,group,metric,value\n";
  for (const auto& r : reports) {
    for (const auto& row : r.csv_rows()) {
      out += row;
      out += '\n';
    }
  }
  return out;
}

}  // namespace

std::string version_string() { return FEDPOISON_VERSION; }

json RunManifest::to_json() const {
  json j;
  j["run_id"] = run_id;
  j["version"] = version;
  j["status"] = status;
  j["failure_round"] = failure_round ? json(*failure_round) : json(nullptr);
  j["error"] = error;
  j["dataset_checksum"] = dataset_checksum;
  j["config"] = config;
  j["setup"] = setup;
  j["round_wall_ms"] = round_wall_ms;
  j["final_metrics"] = final_report ? final_report->to_json() : json(nullptr);
  return j;
}

int malicious_count(double rho, int benign_users) {
  if (!(rho > 0.0)) return 0;
  const double raw = rho * static_cast<double>(benign_users);
  return std::max(1, static_cast<int>(std::ceil(raw - 1e-9)));
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", tmp.string()));
    out << contents;
    if (!out) throw std::runtime_error(fmt::format("write failed for {}", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

RunManifest run_experiment(const ExperimentConfig& config) {
  ExperimentConfig cfg = config;
  cfg.model.learning_rate = cfg.training.learning_rate;
  cfg.validate();

  RunManifest man;
  man.version = version_string();
  man.config = cfg.to_json();
  man.run_id = fmt::format("{}-s{}", config_hash(cfg), cfg.seed);
  man.run_dir = std::filesystem::path(cfg.output_dir.empty() ? "runs" : cfg.output_dir) / man.run_id;
  std::filesystem::create_directories(man.run_dir);
  spdlog::info("run {} -> {}", man.run_id, man.run_dir.string());

  std::vector<MetricsReport> reports;
  std::ofstream round_log(man.run_dir / "rounds.jsonl", std::ios::trunc);
  int current_round = -1;
  try {
    man.dataset_checksum = file_checksum(cfg.dataset.path);
    const auto raw = load_dataset(cfg.dataset.path, cfg.dataset.format);
    const auto ds = leave_one_out_split(raw, derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stream::kSplit)}));

    Rng group_rng = make_rng(cfg.seed, {static_cast<std::uint64_t>(Stream::kGroups)});
    auto targets = cfg.attack.target_items;
    if (targets.empty()) {
      targets = select_target_items(ds, static_cast<std::size_t>(cfg.attack.target_count), group_rng,
                                    cfg.attack.target_band);
    }
    std::sort(targets.begin(), targets.end());
    auto interested = cfg.attack.interested_items;
    if (interested.empty()) {
      interested = select_interested_items(ds, static_cast<std::size_t>(cfg.attack.interested_count), group_rng,
                                           cfg.attack.interested_band, targets);
    }
    std::sort(interested.begin(), interested.end());
    const auto groups = label_groups(ds, interested);

    Rng init_rng = make_rng(cfg.seed, {static_cast<std::uint64_t>(Stream::kInit), 0});
    GlobalParams params = init_global_params(cfg.model, ds.num_items, init_rng);

    Population pop;
    pop.benign = make_benign(ds, cfg.model.embed_dim, cfg.seed);
    pop.all = as_population(pop.benign);
    const int n_mal = malicious_count(cfg.attack.malicious_fraction, ds.num_users);
    AttackConfig attack = cfg.attack.params;
    attack.target_items = targets;
    attack.interested_items = interested;
    std::vector<std::optional<AttackSnapshot>> snapshots(static_cast<std::size_t>(n_mal));
    if (n_mal > 0) attack.validate(ds.num_items);
    for (int i = 0; i < n_mal; ++i) {
      const ClientId id = ds.num_users + i;
      Rng rng = make_rng(cfg.seed, {static_cast<std::uint64_t>(Stream::kAttackInit), static_cast<std::uint64_t>(id)});
      auto client = std::make_unique<SpattackClient>(id, attack, init_attack_state(attack, cfg.model.embed_dim, rng));
      if (cfg.eval.dump_embeddings) {
        client->set_snapshot_sink([&snapshots, i](const AttackSnapshot& s) { snapshots[static_cast<std::size_t>(i)] = s; });
      }
      pop.all.push_back(client.get());
      pop.malicious.push_back(std::move(client));
    }
    for (std::size_t i = 0; i < pop.all.size(); ++i) pop.ids.push_back(static_cast<ClientId>(i));

    const int per_round = static_cast<int>(std::ceil(cfg.rounds.participation * static_cast<double>(pop.ids.size()) - 1e-9));
    DefenseConfig defense = cfg.defense.config;
    defense.byzantine_count =
        cfg.defense.byzantine_count >= 0
            ? cfg.defense.byzantine_count
            : static_cast<int>(std::ceil(cfg.attack.malicious_fraction * static_cast<double>(per_round) - 1e-9));
    const TrainingSettings training = cfg.training;
    if (defense.kind == DefenseKind::kNormBound && !(defense.norm_threshold > 0.0)) {
      defense.norm_threshold = calibrate_norm_threshold(cfg, ds, params, training);
      spdlog::info("normbound threshold calibrated to {:.6g}", defense.norm_threshold);
    }
    defense.validate();

    man.setup = {
        {"target_items", targets},
        {"interested_items", interested},
        {"target_users", groups.target_users.size()},
        {"non_target_users", groups.non_target_users.size()},
        {"benign_clients", ds.num_users},
        {"malicious_clients", n_mal},
        {"num_items", ds.num_items},
        {"train_interactions", ds.train_size()},
        {"defense",
         {{"kind", std::string(to_string(defense.kind))},
          {"norm_threshold", defense.norm_threshold},
          {"trim_fraction", defense.trim_fraction},
          {"byzantine_count", defense.byzantine_count},
          {"multi_krum_m", defense.multi_krum_m}}},
    };
    spdlog::info("{} users, {} items, |U^t| = {}, {} malicious, targets [{}], interested [{}]", ds.num_users,
                 ds.num_items, groups.target_users.size(), n_mal, fmt::join(targets, ","), fmt::join(interested, ","));

    ServerSettings server{cfg.training.learning_rate, cfg.rounds.model_aggregation, cfg.rounds.threads, cfg.seed};
    const int T = cfg.rounds.global_epochs;
    for (int k = 0; k < T; ++k) {
      current_round = k;
      Rng select_rng = make_rng(cfg.seed, {static_cast<std::uint64_t>(Stream::kClientSelection), static_cast<std::uint64_t>(k)});
      RoundPlan plan{k, T, select_clients(k, pop.ids, cfg.rounds.participation, select_rng), training};
      auto result = run_round(params, plan, pop.all, defense, server);
      params = std::move(result.params);
      if (!params.all_finite()) throw std::runtime_error("global parameters became non-finite");

      const auto eval_started = std::chrono::steady_clock::now();
      json line = result.log.to_json();
      line["round"] = k + 1;
      if ((k + 1) % cfg.eval.every == 0 || k + 1 == T) {
        std::vector<Vector> embeddings;
        embeddings.reserve(pop.benign.size());
        for (const auto& c : pop.benign) embeddings.push_back(c->embedding());
        reports.push_back(evaluate(params, embeddings, ds, groups, targets, cfg.eval.spec, k + 1));
        line["metrics"] = reports.back().to_json();
      }
      if (!pop.malicious.empty()) {
        const auto& st = pop.malicious.front()->state();
        line["gamma"] = {st.gamma_target, st.gamma_non_target};
      }
      const double eval_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - eval_started).count();
      line["eval_ms"] = eval_ms;
      man.round_wall_ms.push_back(result.log.wall_ms);
      round_log << line.dump() << '\n' << std::flush;

      if (cfg.eval.dump_embeddings && n_mal > 0) {
        std::filesystem::create_directories(man.run_dir / "embeddings");
        write_embedding_dump(man.run_dir / "embeddings" / fmt::format("round_{}.csv", k + 1), snapshots);
      }
      spdlog::info("round {}/{}: loss {:.5f}, mean norm {:.4g}, {:.0f} ms{}", k + 1, T, result.log.mean_train_loss,
                   result.log.mean_norm, result.log.wall_ms + eval_ms,
                   line.contains("metrics") ? " (evaluated)" : "");
    }
    if (!reports.empty()) man.final_report = reports.back();
  } catch (const std::exception& e) {
    man.status = "failed";
    if (current_round >= 0) man.failure_round = current_round + 1;
    man.error = e.what();
    spdlog::error("run {} failed{}: {}", man.run_id,
                  current_round >= 0 ? fmt::format(" in round {}", current_round + 1) : std::string(), e.what());
  }
  write_file_atomic(man.run_dir / "metrics.csv", metrics_csv(reports));
  write_file_atomic(man.run_dir / "manifest.json", man.to_json().dump(2) + "\n");
  return man;
}

std::vector<MatrixEntry> parse_matrix_entries(const json& doc) {
  if (!doc.is_array()) throw ConfigError("matrix overrides must be a JSON array");
  std::vector<MatrixEntry> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const json& e = doc[i];
    if (!e.is_object()) throw ConfigError(fmt::format("matrix entry {} is not an object", i));
    MatrixEntry entry;
    if (e.contains("set")) {
      entry.name = e.value("name", "");
      entry.overrides = e["set"];
    } else {
      entry.overrides = e;
    }
    if (!entry.overrides.is_object()) throw ConfigError(fmt::format("matrix entry {}: overrides must be an object", i));
    if (entry.name.empty()) {
      std::vector<std::string> parts;
      const json flat = flatten_keys(entry.overrides);
      for (auto& [k, v] : flat.items()) parts.push_back(k + "=" + v.dump());
      entry.name = parts.empty() ? "base" : fmt::format("{}", fmt::join(parts, ";"));
    }
    out.push_back(std::move(entry));
  }
  return out;
}

std::string comparison_header(const EvaluationSpec& spec) {
  std::string h = "config,run_id,seed,status";
  for (int k : spec.k_list) {
    h += fmt::format(",ER@{0}_target,ER@{0}_non_target", k);
    for (double a : spec.alpha_list) h += fmt::format(",{}-GER@{}", a, k);
    h += fmt::format(",HR@{0}_all,NDCG@{0}_all", k);
  }
  return h;
}

std::string comparison_row(const std::string& name, const RunManifest& manifest, const EvaluationSpec& spec) {
  std::string quoted = name;
  if (quoted.find_first_of(",\"") != std::string::npos) {
    std::string esc;
    for (char c : quoted) esc += c == '"' ? std::string("\"\"") : std::string(1, c);
    quoted = "\"" + esc + "\"";
  }
  const auto seed = manifest.config.contains("seed") ? manifest.config["seed"].dump() : std::string();
  std::string row = fmt::format("{},{},{},{}", quoted, manifest.run_id, seed, manifest.status);
  auto cell = [](const std::map<int, double>* m, int k) {
    if (m == nullptr) return std::string();
    auto it = m->find(k);
    return it == m->end() ? std::string() : format_metric_value(it->second);
  };
  const MetricsReport* r = manifest.final_report ? &*manifest.final_report : nullptr;
  auto group = [&](UserGroup g) -> const GroupMetrics* {
    if (r == nullptr) return nullptr;
    auto it = r->groups.find(g);
    return it == r->groups.end() ? nullptr : &it->second;
  };
  const GroupMetrics* t = group(UserGroup::kTarget);
  const GroupMetrics* n = group(UserGroup::kNonTarget);
  const GroupMetrics* all = group(UserGroup::kAll);
  for (int k : spec.k_list) {
    row += "," + cell(t ? &t->exposure : nullptr, k);
    row += "," + cell(n ? &n->exposure : nullptr, k);
    for (double a : spec.alpha_list) {
      std::string v;
      if (r != nullptr) {
        auto it = r->alpha_ger.find(k);
        if (it != r->alpha_ger.end()) {
          auto jt = it->second.find(a);
          if (jt != it->second.end()) v = format_metric_value(jt->second);
        }
      }
      row += "," + v;
    }
    row += "," + cell(all ? &all->hit_ratio : nullptr, k);
    row += "," + cell(all ? &all->ndcg : nullptr, k);
  }
  return row;
}

MatrixResult run_matrix(const json& base, const std::vector<MatrixEntry>& entries,
                        const std::filesystem::path& output_dir) {
  std::vector<MatrixEntry> plan = entries;
  if (plan.empty()) plan.push_back({"base", json::object()});
  const json base_doc = unflatten_keys(base);

  MatrixResult result;
  std::optional<EvaluationSpec> spec;
  std::vector<std::string> names;
  for (const auto& entry : plan) {
    json doc = base_doc;
    const json flat = flatten_keys(entry.overrides);
    for (auto& [k, v] : flat.items()) apply_override(doc, k, v);
    if (!output_dir.empty() && (!doc.contains("output_dir") || doc["output_dir"] == "")) {
      doc["output_dir"] = output_dir.string();
    }
    RunManifest man;
    try {
      const auto cfg = ExperimentConfig::from_json(doc);
      if (!spec) spec = cfg.eval.spec;
      man = run_experiment(cfg);
    } catch (const std::exception& e) {
      spdlog::error("matrix entry '{}' failed: {}", entry.name, e.what());
      man.status = "failed";
      man.error = e.what();
      man.config = doc;
      man.version = version_string();
    }
    names.push_back(entry.name);
    result.manifests.push_back(std::move(man));
  }

  const EvaluationSpec cols = spec.value_or(EvaluationSpec{});
  std::string csv = comparison_header(cols) + "\n";
  for (std::size_t i = 0; i < names.size(); ++i) csv += comparison_row(names[i], result.manifests[i], cols) + "\n";
  const auto dir = output_dir.empty() ? std::filesystem::path("runs") : output_dir;
  std::filesystem::create_directories(dir);
  result.comparison_csv = dir / "comparison.csv";
  write_file_atomic(result.comparison_csv, csv);
  return result;
}

}  // namespace fedpoison
