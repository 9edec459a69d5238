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

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "itemforge/augment.hpp"
#include "itemforge/dataset.hpp"
#include "itemforge/error.hpp"
#include "itemforge/features.hpp"
#include "itemforge/metrics.hpp"
#include "itemforge/svr.hpp"

namespace itemforge {

struct CvPlan {
  std::uint64_t seed = 0;
  std::size_t n_folds = 5;
  std::vector<std::size_t> assignments;

  std::vector<std::size_t> fold_indices(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignments.size(); ++i)
      if (assignments[i] == fold) out.push_back(i);
    return out;
  }
  std::vector<std::size_t> train_indices(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignments.size(); ++i)
      if (assignments[i] != fold) out.push_back(i);
    return out;
  }
};

/// Seeded Fisher-Yates shuffle, then indices are dealt round-robin into k
/// folds, so fold sizes differ by at most one.
inline CvPlan make_folds(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorKind::InvalidArgument, "need at least two folds");
  if (n < k) throw Error(ErrorKind::TooFewSamples, std::to_string(n) + " samples cannot fill " + std::to_string(k) + " folds");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng() % (i + 1)]);
  CvPlan plan;
  plan.seed = seed;
  plan.n_folds = k;
  plan.assignments.resize(n);
  for (std::size_t p = 0; p < n; ++p) plan.assignments[perm[p]] = p % k;
  return plan;
}

struct FoldMetrics {
  double mse = 0.0;
  /// 0 when the fold's tau is undefined.
  double tau = 0.0;
  bool tau_defined = true;
  bool converged = true;
};

/// Fold-level MSE / tau (scaled labels) with population std across folds.
struct MetricReport {
  double mse_mean = 0.0;
  double mse_std = 0.0;
  double tau_mean = 0.0;
  double tau_std = 0.0;
  std::vector<FoldMetrics> per_fold;
  /// Over the pooled out-of-fold predictions, in raw label units.
  std::optional<double> rmse_raw;
  std::size_t undefined_tau_folds = 0;
  std::size_t not_converged_folds = 0;
};

inline std::pair<double, double> mean_and_population_std(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / n)};
}

inline MetricReport summarize_folds(std::vector<FoldMetrics> folds) {
  MetricReport r;
  std::vector<double> mses, taus;
  for (const auto& f : folds) {
    mses.push_back(f.mse);
    taus.push_back(f.tau);
    if (!f.tau_defined) ++r.undefined_tau_folds;
    if (!f.converged) ++r.not_converged_folds;
  }
  std::tie(r.mse_mean, r.mse_std) = mean_and_population_std(mses);
  std::tie(r.tau_mean, r.tau_std) = mean_and_population_std(taus);
  r.per_fold = std::move(folds);
  return r;
}

/// Items, their globally scaled labels and featurizer settings shared by every
/// fold and grid cell.
struct CvInput {
  std::vector<AugmentedItem> items;
  std::vector<double> y_scaled;
  LabelScaler scaler;
  std::size_t pca_k = 100;
  const EmbeddingTable* embeddings = nullptr;
};

/// Fits the label scaler on all of `items` and scales their labels.
inline CvInput make_cv_input(std::vector<AugmentedItem> items, LabelName label, std::size_t pca_k = 100,
                             const EmbeddingTable* embeddings = nullptr) {
  CvInput in;
  std::vector<double> raw;
  raw.reserve(items.size());
  for (const auto& a : items) {
    auto v = a.item.label(label);
    if (!v) throw Error(ErrorKind::BadLabel, "item " + std::to_string(a.item.item_num) + " lacks a label");
    raw.push_back(*v);
  }
  in.scaler = fit_scaler(raw, label);
  for (double v : raw) in.y_scaled.push_back(in.scaler.scale(v));
  in.items = std::move(items);
  in.pca_k = pca_k;
  in.embeddings = embeddings;
  return in;
}

/// Features of one fold, fitted on the training part only.
struct FoldData {
  Eigen::MatrixXd x_train;
  Eigen::MatrixXd gram;
  Eigen::MatrixXd x_val;
  std::vector<double> y_train;
  std::vector<double> y_val;
  std::vector<std::size_t> val_indices;
};

inline FoldData prepare_fold(const CvInput& in, FeatureSetId fs, FeaturizerKind kind, const CvPlan& plan,
                             std::size_t fold) {
  FoldData d;
  std::vector<AugmentedItem> train, val;
  for (auto i : plan.train_indices(fold)) {
    train.push_back(in.items[i]);
    d.y_train.push_back(in.y_scaled[i]);
  }
  d.val_indices = plan.fold_indices(fold);
  for (auto i : d.val_indices) {
    val.push_back(in.items[i]);
    d.y_val.push_back(in.y_scaled[i]);
  }
  const auto featurizer = fit_featurizer(kind, fs, train, in.pca_k, in.embeddings);
  d.x_train = featurizer.transform(train).rows;
  d.x_val = featurizer.transform(val).rows;
  d.gram = linear_gram(d.x_train);
  return d;
}

inline std::vector<FoldData> prepare_folds(const CvInput& in, FeatureSetId fs, FeaturizerKind kind, const CvPlan& plan) {
  if (plan.assignments.size() != in.items.size())
    throw Error(ErrorKind::LengthMismatch, "CV plan covers " + std::to_string(plan.assignments.size()) +
                                               " items, input has " + std::to_string(in.items.size()));
  std::vector<FoldData> folds;
  for (std::size_t f = 0; f < plan.n_folds; ++f) {
    try {
      folds.push_back(prepare_fold(in, fs, kind, plan, f));
    } catch (const Error& e) {
      throw Error(e.kind(), "fold " + std::to_string(f) + ": " + e.what());
    }
  }
  return folds;
}

/// Trains one model per fold and scores it on the held-out part.
inline MetricReport evaluate_folds(const std::vector<FoldData>& folds, const SvrHyperparams& hp,
                                   const LabelScaler& scaler) {
  std::vector<FoldMetrics> metrics;
  std::vector<double> pooled_y, pooled_pred;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const auto& d = folds[f];
    try {
      const auto model = train_nu_svr_gram(d.x_train, d.gram, d.y_train, hp);
      const auto pred = predict_rows(model, d.x_val);
      FoldMetrics m;
      m.mse = mse(d.y_val, pred);
      auto tau = try_kendall_tau(d.y_val, pred);
      m.tau_defined = tau.has_value();
      m.tau = tau.value_or(0.0);
      m.converged = model.converged;
      metrics.push_back(m);
      pooled_y.insert(pooled_y.end(), d.y_val.begin(), d.y_val.end());
      pooled_pred.insert(pooled_pred.end(), pred.begin(), pred.end());
    } catch (const Error& e) {
      throw Error(e.kind(), "fold " + std::to_string(f) + ": " + e.what());
    }
  }
  auto report = summarize_folds(std::move(metrics));
  report.rmse_raw = rmse_raw(pooled_y, pooled_pred, scaler);
  return report;
}

inline MetricReport cross_validate(const CvInput& in, FeatureSetId fs, FeaturizerKind kind, const SvrHyperparams& hp,
                                   const CvPlan& plan) {
  return evaluate_folds(prepare_folds(in, fs, kind, plan), hp, in.scaler);
}

enum class SelectionMetric { TauMean, MseMean };

struct GridSpec {
  std::vector<double> c_values{0.01, 0.1, 0.5, 1, 5, 10, 50, 100};
  std::vector<double> nu_values{0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<FeatureSetId> feature_sets{FeatureSetId::QLlmsAKey};
  SelectionMetric selection_metric = SelectionMetric::TauMean;
};

enum class CellStatus { Ok, NotConverged, Failed };

inline std::string_view to_string(CellStatus s) {
  switch (s) {
    case CellStatus::Ok: return "ok";
    case CellStatus::NotConverged: return "not_converged";
    case CellStatus::Failed: return "failed";
  }
  return "";
}

struct GridCell {
  double c = 0.0;
  double nu = 0.0;
  FeatureSetId feature_set = FeatureSetId::QA;
  CellStatus status = CellStatus::Ok;
  std::optional<MetricReport> report;
  std::string error;
};

struct GridResult {
  std::vector<GridCell> cells;
  /// Index into `cells`; empty when every cell failed.
  std::optional<std::size_t> best;
};

namespace detail {

/// Runs fn(0..count-1) on up to `jobs` threads. The first exception is
/// rethrown after all workers stop.
inline void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < jobs; ++t) {
    threads.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < count;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

inline bool better(const MetricReport& a, const MetricReport& b, SelectionMetric metric) {
  return metric == SelectionMetric::TauMean ? a.tau_mean > b.tau_mean : a.mse_mean < b.mse_mean;
}

}  // namespace detail

/// Picks the best non-failed cell. Ties keep the lower C, then the lower nu,
/// then the earlier feature set.
inline std::optional<std::size_t> select_best(const std::vector<GridCell>& cells, SelectionMetric metric) {
  std::vector<std::size_t> order(cells.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = cells[a];
    const auto& y = cells[b];
    return std::tie(x.c, x.nu, x.feature_set) < std::tie(y.c, y.nu, y.feature_set);
  });
  std::optional<std::size_t> best;
  for (auto i : order) {
    if (cells[i].status == CellStatus::Failed || !cells[i].report) continue;
    if (!best || detail::better(*cells[i].report, *cells[*best].report, metric)) best = i;
  }
  return best;
}

/// Evaluates every (C, nu, feature set) cell on the same plan. Fold features
/// are built once per feature set and shared by its cells. A cell that throws
/// is recorded as failed and the sweep continues.
inline GridResult grid_search(const CvInput& in, const GridSpec& grid, FeaturizerKind kind, const CvPlan& plan,
                              const SvrHyperparams& base = {}, std::size_t jobs = 1) {
  if (grid.c_values.empty() || grid.nu_values.empty() || grid.feature_sets.empty())
    throw Error(ErrorKind::InvalidArgument, "grid lists must be non-empty");
  GridResult result;
  for (auto fs : grid.feature_sets)
    for (double c : grid.c_values)
      for (double nu : grid.nu_values) result.cells.push_back(GridCell{c, nu, fs, CellStatus::Ok, std::nullopt, {}});

  for (auto fs : grid.feature_sets) {
    std::vector<std::size_t> cell_ids;
    for (std::size_t i = 0; i < result.cells.size(); ++i)
      if (result.cells[i].feature_set == fs) cell_ids.push_back(i);

    std::vector<FoldData> folds;
    try {
      folds = prepare_folds(in, fs, kind, plan);
    } catch (const Error& e) {
      for (auto i : cell_ids) {
        result.cells[i].status = CellStatus::Failed;
        result.cells[i].error = e.what();
      }
      continue;
    }
    detail::parallel_for(cell_ids.size(), jobs, [&](std::size_t t) {
      auto& cell = result.cells[cell_ids[t]];
      SvrHyperparams hp = base;
      hp.c = cell.c;
      hp.nu = cell.nu;
      try {
        cell.report = evaluate_folds(folds, hp, in.scaler);
        cell.status = cell.report->not_converged_folds > 0 ? CellStatus::NotConverged : CellStatus::Ok;
      } catch (const std::exception& e) {
        cell.status = CellStatus::Failed;
        cell.error = e.what();
      }
    });
  }
  result.best = select_best(result.cells, grid.selection_metric);
  return result;
}

/// Pearson r of one encoded column against one raw label.
struct CorrelationEntry {
  std::string feature;
  LabelName label = LabelName::Difficulty;
  std::optional<double> r;
  std::size_t n = 0;
};

struct CorrelationReport {
  std::vector<CorrelationEntry> entries;

  const CorrelationEntry& at(std::string_view feature, LabelName label) const {
    for (const auto& e : entries)
      if (e.feature == feature && e.label == label) return e;
    throw Error(ErrorKind::InvalidArgument, "no correlation entry for " + std::string(feature));
  }
};

/// Items lacking a label are left out of that label's entries. An entry whose
/// feature or label is constant has no r.
inline CorrelationReport correlation_report(const ItemSet& items) {
  CorrelationReport report;
  const std::array<std::string, 3> names{"exam_code", "item_type_code", "answer_key_code"};
  for (std::size_t f = 0; f < names.size(); ++f) {
    for (auto label : {LabelName::Difficulty, LabelName::ResponseTime}) {
      std::vector<double> xs, ys;
      for (const auto& item : items.items) {
        auto y = item.label(label);
        if (!y) continue;
        const auto codes = encode_categoricals(item);
        const int code = f == 0 ? codes.exam_code : f == 1 ? codes.item_type_code : codes.answer_key_code;
        xs.push_back(code);
        ys.push_back(*y);
      }
      CorrelationEntry e{names[f], label, std::nullopt, xs.size()};
      if (xs.size() >= 2) {
        try {
          e.r = pearson_r(xs, ys);
        } catch (const Error& err) {
          if (err.kind() != ErrorKind::Undefined) throw;
        }
      }
      report.entries.push_back(std::move(e));
    }
  }
  return report;
}

// ---- report output ----

inline void write_grid_csv(std::ostream& out, const GridResult& grid) {
  out << "c,nu,feature_set,mse_mean,mse_std,tau_mean,tau_std,status\n";
  for (const auto& cell : grid.cells) {
    out << format_decimal(cell.c) << ',' << format_decimal(cell.nu) << ',' << to_string(cell.feature_set) << ',';
    if (cell.report) {
      out << format_decimal(cell.report->mse_mean) << ',' << format_decimal(cell.report->mse_std) << ','
          << format_decimal(cell.report->tau_mean) << ',' << format_decimal(cell.report->tau_std);
    } else {
      out << ",,,";
    }
    out << ',' << to_string(cell.status) << '\n';
  }
}

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.per_fold)
    folds.push_back({{"mse", f.mse}, {"tau", f.tau}, {"tau_defined", f.tau_defined}, {"converged", f.converged}});
  nlohmann::json j = {
      {"mse_mean", r.mse_mean}, {"mse_std", r.mse_std},       {"tau_mean", r.tau_mean},
      {"tau_std", r.tau_std},   {"per_fold", folds},          {"undefined_tau_folds", r.undefined_tau_folds},
      {"not_converged_folds", r.not_converged_folds},
  };
  j["rmse_raw"] = r.rmse_raw ? nlohmann::json(*r.rmse_raw) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json to_json(const GridResult& grid, SelectionMetric metric) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& cell : grid.cells) {
    nlohmann::json c = {{"c", cell.c},
                        {"nu", cell.nu},
                        {"feature_set", to_string(cell.feature_set)},
                        {"status", to_string(cell.status)}};
    if (cell.report) c["report"] = to_json(*cell.report);
    if (!cell.error.empty()) c["error"] = cell.error;
    cells.push_back(std::move(c));
  }
  nlohmann::json j = {
      {"metadata",
       {{"std", "population (divide by number of folds)"},
        {"kendall", "tau-b"},
        {"selection_metric", metric == SelectionMetric::TauMean ? "tau_mean" : "mse_mean"},
        {"label_space", "scaled [0,1] for mse/tau, raw for rmse_raw"},
        {"predictions_clamped", false}}},
      {"cells", cells},
  };
  j["best"] = grid.best ? nlohmann::json(*grid.best) : nlohmann::json(nullptr);
  return j;
}

/// Cell indices ranked by the selection metric, failed cells excluded.
inline std::vector<std::size_t> rank_cells(const GridResult& grid, SelectionMetric metric) {
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < grid.cells.size(); ++i)
    if (grid.cells[i].report && grid.cells[i].status != CellStatus::Failed) ids.push_back(i);
  std::stable_sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = grid.cells[a];
    const auto& y = grid.cells[b];
    if (detail::better(*x.report, *y.report, metric)) return true;
    if (detail::better(*y.report, *x.report, metric)) return false;
    return std::tie(x.c, x.nu, x.feature_set) < std::tie(y.c, y.nu, y.feature_set);
  });
  return ids;
}

inline std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline void write_grid_summary(std::ostream& out, const GridResult& grid, SelectionMetric metric,
                               std::string_view title) {
  std::size_t ok = 0, not_conv = 0, failed = 0;
  for (const auto& c : grid.cells) {
    if (c.status == CellStatus::Ok) ++ok;
    else if (c.status == CellStatus::NotConverged) ++not_conv;
    else ++failed;
  }
  out << title << '\n';
  out << "cells: " << grid.cells.size() << " (ok " << ok << ", not converged " << not_conv << ", failed " << failed
      << ")\n";
  out << "selection: " << (metric == SelectionMetric::TauMean ? "highest tau_mean" : "lowest mse_mean")
      << "; std is the population std across folds; tau is Kendall tau-b\n";
  const auto ranked = rank_cells(grid, metric);
  out << "rank  C         nu    features        MSE                 Kendall tau\n";
  for (std::size_t r = 0; r < std::min<std::size_t>(3, ranked.size()); ++r) {
    const auto& cell = grid.cells[ranked[r]];
    char line[256];
    std::snprintf(line, sizeof line, "%-5zu %-9s %-5s %-15s %s +- %s   %s +- %s\n", r + 1,
                  format_decimal(cell.c).c_str(), format_decimal(cell.nu).c_str(),
                  std::string(to_string(cell.feature_set)).c_str(), fixed(cell.report->mse_mean).c_str(),
                  fixed(cell.report->mse_std).c_str(), fixed(cell.report->tau_mean).c_str(),
                  fixed(cell.report->tau_std).c_str());
    out << line;
  }
}

inline void write_correlation_report(std::ostream& out, const CorrelationReport& report) {
  out << "feature,label,pearson_r,n\n";
  for (const auto& e : report.entries)
    out << e.feature << ',' << to_string(e.label) << ',' << (e.r ? format_decimal(*e.r) : "undefined") << ',' << e.n
        << '\n';
}

}  // namespace itemforge
