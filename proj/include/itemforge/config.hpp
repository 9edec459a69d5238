/*
 * Copyright 2026 The itemforge Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "itemforge/augment.hpp"
#include "itemforge/dataset.hpp"
#include "itemforge/error.hpp"
#include "itemforge/eval.hpp"
#include "itemforge/features.hpp"
#include "itemforge/svr.hpp"

namespace itemforge {

/// Everything one pipeline run needs. Loaded from a JSON file whose relative
/// paths resolve against the file's directory.
struct RunConfig {
  std::string train_path;
  std::string test_path;
  std::string cache_path = "answers.jsonl";
  std::optional<std::string> embeddings_path;
  std::vector<LlmEndpointConfig> endpoints;
  FeatureSetId feature_set = FeatureSetId::QLlmsAKey;
  FeaturizerKind featurizer = FeaturizerKind::Tfidf;
  std::size_t pca_k = 100;
  GridSpec grid;
  std::uint64_t seed = 0;
  std::size_t n_folds = 5;
  LabelName label = LabelName::ResponseTime;
  std::string output_dir = "out";
  SvrHyperparams svr;
};

inline void validate(const RunConfig& cfg) {
  if (cfg.featurizer == FeaturizerKind::Embeddings && !cfg.embeddings_path)
    throw Error(ErrorKind::InvalidArgument, "featurizer 'embeddings' requires embeddings_path");
  if (cfg.pca_k < 1) throw Error(ErrorKind::InvalidArgument, "pca_k must be >= 1");
  if (cfg.n_folds < 2) throw Error(ErrorKind::InvalidArgument, "n_folds must be >= 2");
  validate_endpoints(cfg.endpoints);
  validate(cfg.svr);
}

inline SelectionMetric parse_selection_metric(std::string_view s) {
  const auto v = text::to_lower(s);
  if (v == "tau_mean" || v == "taumean") return SelectionMetric::TauMean;
  if (v == "mse_mean" || v == "msemean") return SelectionMetric::MseMean;
  throw Error(ErrorKind::InvalidArgument, "unknown selection metric '" + std::string(s) + "'");
}

/// Reads a RunConfig from JSON. `base_dir` anchors relative paths. The
/// ITEMFORGE_AUTH_TOKEN environment variable replaces every endpoint token.
inline RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  auto resolve = [&](const std::string& p) -> std::string {
    if (p.empty()) return p;
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path.string() : (base_dir / path).lexically_normal().string();
  };
  RunConfig cfg;
  try {
    cfg.train_path = resolve(j.value("train_path", std::string()));
    cfg.test_path = resolve(j.value("test_path", std::string()));
    cfg.cache_path = resolve(j.value("cache_path", cfg.cache_path));
    if (j.contains("embeddings_path") && !j["embeddings_path"].is_null())
      cfg.embeddings_path = resolve(j["embeddings_path"].get<std::string>());
    for (const auto& e : j.value("endpoints", nlohmann::json::array())) {
      LlmEndpointConfig ep;
      ep.name = e.at("name").get<std::string>();
      ep.base_url = e.at("base_url").get<std::string>();
      ep.model_id = e.value("model_id", ep.name);
      ep.max_new_tokens = e.value("max_new_tokens", ep.max_new_tokens);
      ep.temperature = e.value("temperature", ep.temperature);
      ep.timeout = std::chrono::milliseconds(e.value("timeout_ms", static_cast<long long>(ep.timeout.count())));
      ep.max_retries = e.value("max_retries", ep.max_retries);
      if (e.contains("auth_token") && !e["auth_token"].is_null()) ep.auth_token = e["auth_token"].get<std::string>();
      ep.concurrency = e.value("concurrency", ep.concurrency);
      ep.backoff_base =
          std::chrono::milliseconds(e.value("backoff_ms", static_cast<long long>(ep.backoff_base.count())));
      cfg.endpoints.push_back(std::move(ep));
    }
    cfg.feature_set = parse_feature_set(j.value("feature_set", std::string(to_string(cfg.feature_set))));
    cfg.featurizer = parse_featurizer(j.value("featurizer", std::string(to_string(cfg.featurizer))));
    cfg.pca_k = j.value("pca_k", cfg.pca_k);
    if (j.contains("grid")) {
      const auto& g = j["grid"];
      cfg.grid.c_values = g.value("c_values", cfg.grid.c_values);
      cfg.grid.nu_values = g.value("nu_values", cfg.grid.nu_values);
      if (g.contains("feature_sets")) {
        cfg.grid.feature_sets.clear();
        for (const auto& fs : g["feature_sets"]) cfg.grid.feature_sets.push_back(parse_feature_set(fs.get<std::string>()));
      }
      cfg.grid.selection_metric = parse_selection_metric(g.value("selection_metric", std::string("tau_mean")));
    }
    cfg.seed = j.value("seed", cfg.seed);
    cfg.n_folds = j.value("n_folds", cfg.n_folds);
    cfg.label = parse_label_name(j.value("label", std::string(to_string(cfg.label))));
    cfg.output_dir = resolve(j.value("output_dir", cfg.output_dir));
    if (j.contains("svr")) {
      cfg.svr.tolerance = j["svr"].value("tolerance", cfg.svr.tolerance);
      cfg.svr.max_iterations = j["svr"].value("max_iterations", cfg.svr.max_iterations);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::BadFormat, std::string("config: ") + e.what());
  }
  if (const char* token = std::getenv("ITEMFORGE_AUTH_TOKEN"); token && *token)
    for (auto& ep : cfg.endpoints) ep.auth_token = token;
  for (double c : cfg.grid.c_values)
    if (!(c > 0.0)) throw Error(ErrorKind::InvalidArgument, "grid C values must be positive");
  for (double nu : cfg.grid.nu_values)
    if (!(nu > 0.0 && nu <= 1.0)) throw Error(ErrorKind::InvalidArgument, "grid nu values must lie in (0, 1]");
  validate(cfg);
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open config " + path);
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorKind::BadFormat, path + " is not valid JSON");
  return parse_run_config(j, std::filesystem::path(path).parent_path());
}

}  // namespace itemforge
