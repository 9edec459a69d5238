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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "itemforge/augment.hpp"
#include "itemforge/bundle.hpp"
#include "itemforge/config.hpp"
#include "itemforge/dataset.hpp"
#include "itemforge/error.hpp"
#include "itemforge/eval.hpp"
#include "itemforge/features.hpp"
#include "itemforge/metrics.hpp"
#include "itemforge/svr.hpp"

namespace itemforge::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kIo = 2;
inline constexpr int kEndpoint = 3;
inline constexpr int kMissingAugmentation = 4;
inline constexpr int kSolverHealth = 5;
inline constexpr int kDimension = 6;

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Timeout:
    case ErrorKind::Transport:
    case ErrorKind::HttpStatus:
    case ErrorKind::MalformedResponse: return kEndpoint;
    case ErrorKind::MissingLlmAnswers: return kMissingAugmentation;
    case ErrorKind::DimensionMismatch: return kDimension;
    case ErrorKind::Io:
    case ErrorKind::EmptyFile:
    case ErrorKind::MissingColumn:
    case ErrorKind::BadLabel:
    case ErrorKind::InvalidItem:
    case ErrorKind::DuplicateItemNum:
    case ErrorKind::DuplicateItem:
    case ErrorKind::MissingVectorField:
    case ErrorKind::BadFormat:
    case ErrorKind::InvalidArgument:
    case ErrorKind::DegenerateRange: return kIo;
    default: return kFailure;
  }
}

/// Writes to a sibling temp file, then renames over `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error(ErrorKind::Io, "write failed on " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot rename " + tmp.string() + ": " + ec.message());
}

/// Published cross-validation figures for q_llms_a_key with frozen
/// 768-d encoder embeddings and a nu-SVR head, used by `report`.
struct ReferenceTarget {
  LabelName label;
  std::string metric;
  double reference;
  double tolerance;
};

inline const std::vector<ReferenceTarget>& reference_targets() {
  static const std::vector<ReferenceTarget> targets{
      {LabelName::ResponseTime, "mse_mean", 0.0132, 0.003},
      {LabelName::Difficulty, "tau_mean", 0.1592, 0.06},
  };
  return targets;
}

struct ReferenceRow {
  ReferenceTarget target;
  std::optional<double> observed;
  bool within = false;
};

/// Compares the best q_llms_a_key cell against the reference figure for
/// `label`. Nothing is compared when the sweep did not use embeddings.
inline std::vector<ReferenceRow> compare_with_reference(const GridResult& grid, LabelName label, FeaturizerKind kind,
                                                        SelectionMetric metric) {
  std::vector<ReferenceRow> rows;
  for (const auto& t : reference_targets()) {
    if (t.label != label) continue;
    ReferenceRow row{t, std::nullopt, false};
    if (kind == FeaturizerKind::Embeddings) {
      for (auto id : rank_cells(grid, metric)) {
        const auto& cell = grid.cells[id];
        if (cell.feature_set != FeatureSetId::QLlmsAKey) continue;
        row.observed = t.metric == "mse_mean" ? cell.report->mse_mean : cell.report->tau_mean;
        break;
      }
    }
    if (row.observed) row.within = std::abs(*row.observed - t.reference) <= t.tolerance;
    rows.push_back(row);
  }
  return rows;
}

inline void write_reference_table(std::ostream& out, const std::vector<ReferenceRow>& rows) {
  out << "reference comparison (q_llms_a_key + 768-d embeddings, best cell)\n";
  out << "label          metric     reference   tolerance   observed    status\n";
  for (const auto& r : rows) {
    char line[256];
    std::snprintf(line, sizeof line, "%-14s %-10s %-11s %-11s %-11s %s\n",
                  std::string(to_string(r.target.label)).c_str(), r.target.metric.c_str(),
                  fixed(r.target.reference).c_str(), fixed(r.target.tolerance).c_str(),
                  r.observed ? fixed(*r.observed).c_str() : "n/a",
                  !r.observed ? "not comparable" : r.within ? "within" : "outside");
    out << line;
  }
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> label;
  std::optional<std::string> feature_set;
  std::optional<std::string> output_dir;
  std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
};

inline RunConfig load_config(const std::string& path, const Overrides& o) {
  auto cfg = load_run_config(path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.label) cfg.label = parse_label_name(*o.label);
  if (o.feature_set) cfg.feature_set = parse_feature_set(*o.feature_set);
  if (o.output_dir) cfg.output_dir = *o.output_dir;
  return cfg;
}

inline std::vector<AugmentedItem> attach_answers(const std::vector<Item>& items, const RunConfig& cfg,
                                                 FeatureSetId fs) {
  if (!needs_llm_answers(fs)) return without_llm_answers(items);
  if (cfg.endpoints.empty())
    throw Error(ErrorKind::MissingLlmAnswers, std::string(to_string(fs)) + " needs LLM answers but no endpoints are configured");
  return augment_dataset(items, cfg.endpoints, cfg.cache_path, AugmentOptions{false}).items;
}

inline std::vector<AugmentedItem> attach_answers(const std::vector<Item>& items, const RunConfig& cfg,
                                                 std::span<const FeatureSetId> sets) {
  for (auto fs : sets)
    if (needs_llm_answers(fs)) return attach_answers(items, cfg, fs);
  return without_llm_answers(items);
}

inline std::optional<EmbeddingTable> maybe_embeddings(const RunConfig& cfg) {
  if (cfg.featurizer != FeaturizerKind::Embeddings) return std::nullopt;
  return load_embeddings(*cfg.embeddings_path);
}

inline std::filesystem::path out_path(const RunConfig& cfg, const std::string& name) {
  return std::filesystem::path(cfg.output_dir) / name;
}

inline int cmd_augment(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  if (cfg.endpoints.empty()) {
    err << "augment: no endpoints configured; add at least one entry under \"endpoints\"\n";
    return kIo;
  }
  auto items = load_items(cfg.train_path, SetRole::Train).items;
  if (!cfg.test_path.empty() && std::filesystem::exists(cfg.test_path)) {
    auto test = load_items(cfg.test_path, SetRole::Test).items;
    items.insert(items.end(), test.begin(), test.end());
  }
  const auto result = augment_dataset(items, cfg.endpoints, cfg.cache_path);
  out << "fetched " << result.fetched << ", cached " << result.cached << '\n';
  return kOk;
}

inline int cmd_features(const RunConfig& cfg, std::ostream& out) {
  const auto train = attach_answers(load_items(cfg.train_path, SetRole::Train).items, cfg, cfg.feature_set);
  std::ostringstream texts;
  for (const auto& a : train)
    texts << nlohmann::json{{"item_num", a.item.item_num}, {"text", assemble_text(a, cfg.feature_set)}}.dump() << '\n';
  std::optional<std::vector<AugmentedItem>> test;
  if (!cfg.test_path.empty() && std::filesystem::exists(cfg.test_path)) {
    test = attach_answers(load_items(cfg.test_path, SetRole::Test).items, cfg, cfg.feature_set);
    for (const auto& a : *test)
      texts << nlohmann::json{{"item_num", a.item.item_num}, {"text", assemble_text(a, cfg.feature_set)}}.dump() << '\n';
  }
  const auto texts_path = out_path(cfg, "texts_" + std::string(to_string(cfg.feature_set)) + ".jsonl");
  write_file_atomic(texts_path, texts.str());
  out << "wrote " << texts_path.string() << '\n';

  auto emb = maybe_embeddings(cfg);
  const auto featurizer = fit_featurizer(cfg.featurizer, cfg.feature_set, train, cfg.pca_k, emb ? &*emb : nullptr);
  std::ostringstream csv;
  write_feature_matrix_csv(csv, featurizer.transform(train));
  write_file_atomic(out_path(cfg, "features_train.csv"), csv.str());
  out << "wrote " << out_path(cfg, "features_train.csv").string() << " (" << train.size() << " x "
      << featurizer.width() << ")\n";
  if (test) {
    std::ostringstream tcsv;
    write_feature_matrix_csv(tcsv, featurizer.transform(*test));
    write_file_atomic(out_path(cfg, "features_test.csv"), tcsv.str());
    out << "wrote " << out_path(cfg, "features_test.csv").string() << " (" << test->size() << " x "
        << featurizer.width() << ")\n";
  }
  return kOk;
}

inline int cmd_correlate(const RunConfig& cfg, std::ostream& out) {
  const auto report = correlation_report(load_items(cfg.train_path, SetRole::Train));
  std::ostringstream csv;
  write_correlation_report(csv, report);
  write_file_atomic(out_path(cfg, "correlation.csv"), csv.str());
  out << csv.str();
  return kOk;
}

/// Shared by `cv` (configured feature set only) and `grid` (every feature
/// set listed in the grid).
inline int run_sweep(const RunConfig& cfg, const Overrides& o, bool all_feature_sets, std::ostream& out,
                     std::ostream& err) {
  GridSpec grid = cfg.grid;
  if (!all_feature_sets) grid.feature_sets = {cfg.feature_set};
  const std::string stem = all_feature_sets ? "grid" : "cv";

  auto items = attach_answers(load_items(cfg.train_path, SetRole::Train).items, cfg, grid.feature_sets);
  auto emb = maybe_embeddings(cfg);
  const auto input = make_cv_input(std::move(items), cfg.label, cfg.pca_k, emb ? &*emb : nullptr);
  const auto plan = make_folds(input.items.size(), cfg.n_folds, cfg.seed);
  const auto result = grid_search(input, grid, cfg.featurizer, plan, cfg.svr, o.jobs);

  std::ostringstream csv, summary;
  write_grid_csv(csv, result);
  auto j = to_json(result, grid.selection_metric);
  j["metadata"]["label"] = to_string(cfg.label);
  j["metadata"]["featurizer"] = to_string(cfg.featurizer);
  j["metadata"]["seed"] = cfg.seed;
  j["metadata"]["n_folds"] = cfg.n_folds;
  j["metadata"]["n_items"] = input.items.size();
  j["metadata"]["scaler"] = {{"min", input.scaler.min}, {"max", input.scaler.max}};
  write_grid_summary(summary, result, grid.selection_metric,
                     std::string(stem) + " sweep, label " + std::string(to_string(cfg.label)) + ", featurizer " +
                         std::string(to_string(cfg.featurizer)) + ", " + std::to_string(cfg.n_folds) + " folds, seed " +
                         std::to_string(cfg.seed));
  write_file_atomic(out_path(cfg, stem + "_report.csv"), csv.str());
  write_file_atomic(out_path(cfg, stem + "_report.json"), j.dump(2) + "\n");
  write_file_atomic(out_path(cfg, stem + "_summary.txt"), summary.str());
  out << summary.str();

  std::size_t unhealthy = 0;
  for (const auto& c : result.cells)
    if (c.status != CellStatus::Ok) ++unhealthy;
  if (2 * unhealthy > result.cells.size()) {
    err << stem << ": " << unhealthy << " of " << result.cells.size() << " cells did not converge or failed\n";
    return kSolverHealth;
  }
  return kOk;
}

struct TrainChoice {
  std::optional<double> c;
  std::optional<double> nu;
  std::optional<std::string> from_report;
  std::optional<std::string> model_path;
};

inline int cmd_train(const RunConfig& cfg, const TrainChoice& choice, std::ostream& out) {
  double c = 0.0, nu = 0.0;
  FeatureSetId fs = cfg.feature_set;
  if (choice.c && choice.nu) {
    c = *choice.c;
    nu = *choice.nu;
  } else {
    const auto report_path =
        choice.from_report ? std::filesystem::path(*choice.from_report) : out_path(cfg, "cv_report.json");
    std::ifstream in(report_path);
    if (!in) throw Error(ErrorKind::Io, "pass --c and --nu, or run `cv` first (missing " + report_path.string() + ")");
    const auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.contains("best") || j["best"].is_null())
      throw Error(ErrorKind::BadFormat, report_path.string() + " has no best cell");
    const auto& best = j["cells"].at(j["best"].get<std::size_t>());
    c = choice.c.value_or(best.at("c").get<double>());
    nu = choice.nu.value_or(best.at("nu").get<double>());
    fs = parse_feature_set(best.at("feature_set").get<std::string>());
  }

  auto items = attach_answers(load_items(cfg.train_path, SetRole::Train).items, cfg, fs);
  auto emb = maybe_embeddings(cfg);
  const auto input = make_cv_input(std::move(items), cfg.label, cfg.pca_k, emb ? &*emb : nullptr);

  ModelBundle bundle;
  bundle.scaler = input.scaler;
  bundle.featurizer = fit_featurizer(cfg.featurizer, fs, input.items, cfg.pca_k, input.embeddings);
  SvrHyperparams hp = cfg.svr;
  hp.c = c;
  hp.nu = nu;
  bundle.svr = train_nu_svr(bundle.featurizer.transform(input.items), input.y_scaled, hp);

  const auto model_path = choice.model_path ? std::filesystem::path(*choice.model_path) : out_path(cfg, "model.json");
  write_file_atomic(model_path, to_json(bundle).dump(2) + "\n");
  out << "trained " << to_string(cfg.label) << " model on " << input.items.size() << " items (" << to_string(fs)
      << ", " << to_string(cfg.featurizer) << ", C=" << format_decimal(c) << ", nu=" << format_decimal(nu)
      << (bundle.svr.converged ? "" : ", NOT converged") << ")\nwrote " << model_path.string() << '\n';
  return bundle.svr.converged ? kOk : kSolverHealth;
}

inline int cmd_predict(const RunConfig& cfg, const std::string& model_path, std::ostream& out) {
  std::ifstream in(model_path);
  if (!in) throw Error(ErrorKind::Io, "cannot open model " + model_path);
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorKind::BadFormat, model_path + " is not valid JSON");
  if (cfg.test_path.empty() || !std::filesystem::exists(cfg.test_path))
    throw Error(ErrorKind::Io, "test set not found: " + cfg.test_path);

  std::optional<EmbeddingTable> emb;
  if (j.contains("featurizer") && j["featurizer"].value("kind", "") == "embeddings") {
    if (!cfg.embeddings_path) throw Error(ErrorKind::InvalidArgument, "model uses embeddings; set embeddings_path");
    emb = load_embeddings(*cfg.embeddings_path);
  }
  const auto bundle = bundle_from_json(j, emb ? &*emb : nullptr);
  const auto test = load_items(cfg.test_path, SetRole::Test);
  const auto items = attach_answers(test.items, cfg, bundle.featurizer.feature_set);
  const auto features = bundle.featurizer.transform(items);
  const auto pred = predict_rows(bundle.svr, features.rows);

  std::ostringstream csv;
  csv << "item_num,pred_scaled,pred_raw\n";
  for (std::size_t i = 0; i < pred.size(); ++i) {
    char line[128];
    std::snprintf(line, sizeof line, "%lld,%.6f,%.6f\n", static_cast<long long>(features.item_nums[i]), pred[i],
                  bundle.scaler.unscale(pred[i]));
    csv << line;
  }
  const auto pred_path = out_path(cfg, "predictions.csv");
  write_file_atomic(pred_path, csv.str());
  out << "wrote " << pred.size() << " predictions to " << pred_path.string() << '\n';

  const auto label = bundle.scaler.label_name;
  if (test.has_labels(label)) {
    std::vector<double> y;
    for (double v : test.labels(label)) y.push_back(bundle.scaler.scale(v));
    out << "metrics (" << to_string(label) << ")\n";
    out << "  mse (scaled): " << fixed(mse(y, pred), 6) << '\n';
    auto tau = try_kendall_tau(y, pred);
    out << "  kendall tau-b: " << (tau ? fixed(*tau, 6) : std::string("undefined")) << '\n';
    out << "  rmse (raw):   " << fixed(rmse_raw(y, pred, bundle.scaler), 6) << '\n';
  }
  return kOk;
}

inline int cmd_report(const RunConfig& cfg, std::ostream& out) {
  bool any = false;
  for (const std::string stem : {"cv", "grid"}) {
    const auto path = out_path(cfg, stem + "_report.json");
    std::ifstream in(path);
    if (!in) continue;
    any = true;
    const auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorKind::BadFormat, path.string() + " is not valid JSON");
    GridResult grid;
    try {
      for (const auto& c : j.at("cells")) {
        GridCell cell;
        cell.c = c.at("c").get<double>();
        cell.nu = c.at("nu").get<double>();
        cell.feature_set = parse_feature_set(c.at("feature_set").get<std::string>());
        const auto status = c.at("status").get<std::string>();
        cell.status = status == "ok" ? CellStatus::Ok : status == "failed" ? CellStatus::Failed : CellStatus::NotConverged;
        if (c.contains("report")) {
          MetricReport r;
          r.mse_mean = c["report"].at("mse_mean").get<double>();
          r.mse_std = c["report"].at("mse_std").get<double>();
          r.tau_mean = c["report"].at("tau_mean").get<double>();
          r.tau_std = c["report"].at("tau_std").get<double>();
          cell.report = r;
        }
        grid.cells.push_back(std::move(cell));
      }
      if (!j.at("best").is_null()) grid.best = j["best"].get<std::size_t>();
      const auto& meta = j.at("metadata");
      const auto metric = parse_selection_metric(meta.at("selection_metric").get<std::string>());
      const auto label = parse_label_name(meta.at("label").get<std::string>());
      const auto kind = parse_featurizer(meta.at("featurizer").get<std::string>());
      write_grid_summary(out, grid, metric, path.string());
      out << '\n';
      write_reference_table(out, compare_with_reference(grid, label, kind, metric));
      out << '\n';
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::BadFormat, path.string() + ": " + e.what());
    }
  }
  if (!any) throw Error(ErrorKind::Io, "no cv_report.json or grid_report.json in " + cfg.output_dir);
  return kOk;
}

/// Parses `args` (args[0] is the program name) and runs one subcommand.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"itemforge: difficulty and response-time prediction for multiple-choice items"};
  app.require_subcommand(1);
  std::string config_path;
  Overrides o;
  TrainChoice choice;
  std::string model_path;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "JSON run configuration")->required();
    sub->add_option("--seed", o.seed, "override the fold seed");
    sub->add_option("--label", o.label, "difficulty | response_time");
    sub->add_option("--feature-set", o.feature_set, "all | q_answers | answers | q_a | llms_a | q_llms_a | q_llms_a_key");
    sub->add_option("--output-dir", o.output_dir, "override output_dir");
    sub->add_option("-j,--jobs", o.jobs, "worker threads for grid cells")->check(CLI::PositiveNumber);
  };
  auto* augment = app.add_subcommand("augment", "fetch LLM answers for every item into the cache");
  auto* features = app.add_subcommand("features", "dump merged texts and feature matrices");
  auto* correlate = app.add_subcommand("correlate", "Pearson r of EXAM / ItemType / AnswerKey codes vs labels");
  auto* cv = app.add_subcommand("cv", "k-fold CV over the C x nu grid for the configured feature set");
  auto* grid = app.add_subcommand("grid", "k-fold CV over C x nu x every grid feature set");
  auto* train = app.add_subcommand("train", "fit the final model on the full training set");
  auto* predict_cmd = app.add_subcommand("predict", "score the test set with a trained model");
  auto* report = app.add_subcommand("report", "summarize sweep reports and compare with reference figures");
  for (auto* sub : {augment, features, correlate, cv, grid, train, predict_cmd, report}) add_common(sub);
  train->add_option("-C,--cost", choice.c, "regularization C (default: best cell of cv_report.json)");
  train->add_option("--nu", choice.nu, "nu (default: best cell of cv_report.json)");
  train->add_option("--from-report", choice.from_report, "sweep report to take the best cell from");
  train->add_option("--model", choice.model_path, "output bundle path (default: <output_dir>/model.json)");
  predict_cmd->add_option("--model", model_path, "model bundle written by `train`")->required();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n' << app.help();
    return kIo;
  }

  try {
    const auto cfg = load_config(config_path, o);
    if (augment->parsed()) return cmd_augment(cfg, out, err);
    if (features->parsed()) return cmd_features(cfg, out);
    if (correlate->parsed()) return cmd_correlate(cfg, out);
    if (cv->parsed()) return run_sweep(cfg, o, false, out, err);
    if (grid->parsed()) return run_sweep(cfg, o, true, out, err);
    if (train->parsed()) return cmd_train(cfg, choice, out);
    if (predict_cmd->parsed()) return cmd_predict(cfg, model_path, out);
    if (report->parsed()) return cmd_report(cfg, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  }
  return kFailure;
}

}  // namespace itemforge::cli
