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

#include "fedpoison/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>

#include <fmt/format.h>

namespace fedpoison {

using nlohmann::json;

namespace {

json band_json(PopularityBand b) { return json::array({b.lo, b.hi}); }

PopularityBand band_from(const json& j, const char* key) {
  if (!j.is_array() || j.size() != 2) throw ConfigError(fmt::format("{} must be [lo, hi]", key));
  return {j[0].get<double>(), j[1].get<double>()};
}

void check_known(const json& defaults, const json& doc, const std::string& prefix) {
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!defaults.contains(it.key())) throw ConfigError(fmt::format("unknown config key '{}'", key));
    const json& def = defaults.at(it.key());
    if (def.is_object()) {
      if (!it.value().is_object()) throw ConfigError(fmt::format("config key '{}' must be an object", key));
      check_known(def, it.value(), key);
    }
  }
}

void merge_into(json& base, const json& patch) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object()) {
      merge_into(base[it.key()], it.value());
    } else {
      base[it.key()] = it.value();
    }
  }
}

template <typename T>
T read(const json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config key '{}.{}': {}", section, key, e.what()));
  }
}

}  // namespace

json ExperimentConfig::to_json() const {
  const auto& a = attack.params;
  return json{
      {"dataset", {{"path", dataset.path}, {"format", std::string(fedpoison::to_string(dataset.format))}}},
      {"model", {{"embed_dim", model.embed_dim}, {"hidden_dims", model.hidden_dims}}},
      {"training",
       {{"global_epochs", rounds.global_epochs},
        {"local_epochs", training.local_epochs},
        {"batch_size", training.batch_size},
        {"negative_ratio", training.negative_ratio},
        {"learning_rate", training.learning_rate},
        {"participation", rounds.participation},
        {"model_aggregation", std::string(fedpoison::to_string(rounds.model_aggregation))},
        {"threads", rounds.threads}}},
      {"attack",
       {{"malicious_fraction", attack.malicious_fraction},
        {"target_items", attack.target_items},
        {"interested_items", attack.interested_items},
        {"target_count", attack.target_count},
        {"target_band", band_json(attack.target_band)},
        {"interested_count", attack.interested_count},
        {"interested_band", band_json(attack.interested_band)},
        {"margin", a.margin},
        {"alignment_weight", a.alignment_weight},
        {"relevant_top_k", a.relevant_top_k},
        {"approx_count", a.approx_count},
        {"approx_steps", a.approx_steps},
        {"approx_lr", a.approx_lr},
        {"promotion_steps", a.promotion_steps},
        {"promotion_lr", a.promotion_lr},
        {"norm_budget", a.norm_budget},
        {"repulsion", a.toggles.repulsion},
        {"relevant_items", a.toggles.relevant_items},
        {"alignment", a.toggles.alignment},
        {"adaptive_tuning", a.toggles.adaptive_tuning}}},
      {"defense",
       {{"kind", std::string(fedpoison::to_string(defense.config.kind))},
        {"norm_threshold", defense.config.norm_threshold},
        {"trim_fraction", defense.config.trim_fraction},
        {"byzantine_count", defense.byzantine_count},
        {"multi_krum_m", defense.config.multi_krum_m},
        {"warmup_rounds", defense.warmup_rounds}}},
      {"eval",
       {{"k_list", eval.spec.k_list},
        {"alpha_list", eval.spec.alpha_list},
        {"every", eval.every},
        {"dump_embeddings", eval.dump_embeddings}}},
      {"seed", seed},
      {"output_dir", output_dir},
  };
}

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
  const json defaults = ExperimentConfig{}.to_json();
  const json user = unflatten_keys(doc);
  check_known(defaults, user, "");
  json j = defaults;
  merge_into(j, user);

  ExperimentConfig c;
  c.dataset.path = read<std::string>(j, "dataset", "path");
  try {
    c.dataset.format = parse_dataset_format(read<std::string>(j, "dataset", "format"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.model.embed_dim = read<int>(j, "model", "embed_dim");
  c.model.hidden_dims = read<std::vector<int>>(j, "model", "hidden_dims");

  c.rounds.global_epochs = read<int>(j, "training", "global_epochs");
  c.training.local_epochs = read<int>(j, "training", "local_epochs");
  c.training.batch_size = read<int>(j, "training", "batch_size");
  c.training.negative_ratio = read<int>(j, "training", "negative_ratio");
  c.training.learning_rate = read<double>(j, "training", "learning_rate");
  c.model.learning_rate = c.training.learning_rate;
  c.rounds.participation = read<double>(j, "training", "participation");
  try {
    c.rounds.model_aggregation = parse_model_aggregation(read<std::string>(j, "training", "model_aggregation"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.rounds.threads = read<int>(j, "training", "threads");

  auto& a = c.attack;
  a.malicious_fraction = read<double>(j, "attack", "malicious_fraction");
  a.target_items = read<std::vector<ItemId>>(j, "attack", "target_items");
  a.interested_items = read<std::vector<ItemId>>(j, "attack", "interested_items");
  a.target_count = read<int>(j, "attack", "target_count");
  a.target_band = band_from(j["attack"]["target_band"], "attack.target_band");
  a.interested_count = read<int>(j, "attack", "interested_count");
  a.interested_band = band_from(j["attack"]["interested_band"], "attack.interested_band");
  a.params.margin = read<double>(j, "attack", "margin");
  a.params.alignment_weight = read<double>(j, "attack", "alignment_weight");
  a.params.relevant_top_k = read<int>(j, "attack", "relevant_top_k");
  a.params.approx_count = read<int>(j, "attack", "approx_count");
  a.params.approx_steps = read<int>(j, "attack", "approx_steps");
  a.params.approx_lr = read<double>(j, "attack", "approx_lr");
  a.params.promotion_steps = read<int>(j, "attack", "promotion_steps");
  a.params.promotion_lr = read<double>(j, "attack", "promotion_lr");
  a.params.norm_budget = read<double>(j, "attack", "norm_budget");
  a.params.toggles.repulsion = read<bool>(j, "attack", "repulsion");
  a.params.toggles.relevant_items = read<bool>(j, "attack", "relevant_items");
  a.params.toggles.alignment = read<bool>(j, "attack", "alignment");
  a.params.toggles.adaptive_tuning = read<bool>(j, "attack", "adaptive_tuning");

  try {
    c.defense.config.kind = parse_defense_kind(read<std::string>(j, "defense", "kind"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.defense.config.norm_threshold = read<double>(j, "defense", "norm_threshold");
  c.defense.config.trim_fraction = read<double>(j, "defense", "trim_fraction");
  c.defense.byzantine_count = read<int>(j, "defense", "byzantine_count");
  c.defense.config.multi_krum_m = read<int>(j, "defense", "multi_krum_m");
  c.defense.warmup_rounds = read<int>(j, "defense", "warmup_rounds");

  c.eval.spec.k_list = read<std::vector<int>>(j, "eval", "k_list");
  c.eval.spec.alpha_list = read<std::vector<double>>(j, "eval", "alpha_list");
  c.eval.every = read<int>(j, "eval", "every");
  c.eval.dump_embeddings = read<bool>(j, "eval", "dump_embeddings");

  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.output_dir = j.at("output_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config: {}", e.what()));
  }
  return c;
}

void ExperimentConfig::validate() const {
  if (dataset.path.empty()) throw ConfigError("dataset.path is required");
  if (!std::filesystem::exists(dataset.path)) throw ConfigError(fmt::format("dataset not found: {}", dataset.path));
  try {
    model.validate();
    training.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (rounds.global_epochs < 1) throw ConfigError("training.global_epochs must be >= 1");
  if (!(rounds.participation > 0.0 && rounds.participation <= 1.0)) {
    throw ConfigError("training.participation must be in (0, 1]");
  }
  if (rounds.threads < 1) throw ConfigError("training.threads must be >= 1");
  if (!(attack.malicious_fraction >= 0.0 && attack.malicious_fraction < 0.5)) {
    throw ConfigError("attack.malicious_fraction must be in [0, 0.5)");
  }
  if (attack.target_items.empty() && attack.target_count < 1) throw ConfigError("attack.target_count must be >= 1");
  if (attack.interested_items.empty() && attack.interested_count < 1) {
    throw ConfigError("attack.interested_count must be >= 1");
  }
  for (auto band : {attack.target_band, attack.interested_band}) {
    if (!(band.lo >= 0.0 && band.lo <= band.hi && band.hi <= 1.0)) throw ConfigError("popularity bands need 0 <= lo <= hi <= 1");
  }
  AttackConfig probe = attack.params;
  probe.target_items = {0};
  probe.interested_items = {1};
  try {
    probe.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(defense.config.trim_fraction >= 0.0 && defense.config.trim_fraction < 0.5)) {
    throw ConfigError("defense.trim_fraction must be in [0, 0.5)");
  }
  if (defense.warmup_rounds < 1) throw ConfigError("defense.warmup_rounds must be >= 1");
  if (eval.spec.k_list.empty()) throw ConfigError("eval.k_list must not be empty");
  for (int k : eval.spec.k_list) {
    if (k < 1) throw ConfigError("eval.k_list entries must be >= 1");
  }
  for (double a : eval.spec.alpha_list) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("eval.alpha_list entries must be in [0, 1]");
  }
  if (eval.every < 1) throw ConfigError("eval.every must be >= 1");
}

json unflatten_keys(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config document must be a JSON object");
  json out = json::object();
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const json value = it.value().is_object() ? unflatten_keys(it.value()) : it.value();
    apply_override(out, it.key(), value);
  }
  return out;
}

json flatten_keys(const json& doc) {
  json out = json::object();
  std::function<void(const json&, const std::string&)> walk = [&](const json& j, const std::string& prefix) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
      if (it.value().is_object() && !it.value().empty()) {
        walk(it.value(), key);
      } else {
        out[key] = it.value();
      }
    }
  };
  walk(doc, "");
  return out;
}

std::pair<std::string, json> parse_override(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError(fmt::format("override '{}' is not of the form key=value", text));
  }
  std::string key(text.substr(0, eq));
  std::string raw(text.substr(eq + 1));
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  return {key, value};
}

void apply_override(json& doc, const std::string& dotted_key, const json& value) {
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted_key.find('.', start);
    const std::string part = dotted_key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError(fmt::format("malformed key '{}'", dotted_key));
    if (dot == std::string::npos) {
      if (value.is_object() && node->contains(part) && (*node)[part].is_object()) {
        merge_into((*node)[part], value);
      } else {
        (*node)[part] = value;
      }
      return;
    }
    json& next = (*node)[part];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw ConfigError(fmt::format("key '{}' descends into a non-object", dotted_key));
    node = &next;
    start = dot + 1;
  }
}

json load_config_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config {}", path.string()));
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw ConfigError(fmt::format("{} is not a JSON object", path.string()));
  if (doc.contains("config") && doc.contains("dataset_checksum")) doc = doc["config"];
  doc = unflatten_keys(doc);
  if (doc.contains("dataset") && doc["dataset"].contains("path") && doc["dataset"]["path"].is_string()) {
    std::filesystem::path p = doc["dataset"]["path"].get<std::string>();
    if (p.is_relative()) doc["dataset"]["path"] = (path.parent_path() / p).lexically_normal().string();
  }
  return doc;
}

std::string config_hash(const ExperimentConfig& config) {
  json j = config.to_json();
  j.erase("seed");
  j.erase("output_dir");
  return fnv1a_hex(j.dump());
}

}  // namespace fedpoison
