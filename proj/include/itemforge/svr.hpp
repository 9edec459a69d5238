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
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "itemforge/error.hpp"
#include "itemforge/features.hpp"

namespace itemforge {

struct SvrHyperparams {
  double c = 1.0;
  double nu = 0.5;
  /// Stop once the maximal KKT violation drops to this value.
  double tolerance = 1e-6;
  /// 0 selects 100 * n^2.
  std::int64_t max_iterations = 0;
};

inline void validate(const SvrHyperparams& hp) {
  if (!(hp.c > 0.0)) throw Error(ErrorKind::InvalidArgument, "C must be positive");
  if (!(hp.nu > 0.0 && hp.nu <= 1.0)) throw Error(ErrorKind::InvalidArgument, "nu must lie in (0, 1]");
  if (!(hp.tolerance > 0.0)) throw Error(ErrorKind::InvalidArgument, "tolerance must be positive");
  if (hp.max_iterations < 0) throw Error(ErrorKind::InvalidArgument, "max_iterations must be >= 0");
}

/// Dual coefficients plus the recovered offset and tube half-width.
struct NuSvrDualSolution {
  std::vector<double> alpha;
  std::vector<double> alpha_star;
  double bias = 0.0;
  double epsilon = 0.0;
  /// Value of the maximized dual objective.
  double objective = 0.0;
  double final_violation = 0.0;
  std::int64_t iterations = 0;
  bool converged = false;
};

/// Linear nu-SVR. The weight vector is materialized; alphas are kept when
/// the model comes from training and are empty after loading from disk.
struct SvrModel {
  std::vector<double> alpha;
  std::vector<double> alpha_star;
  double bias = 0.0;
  double epsilon = 0.0;
  Eigen::VectorXd weight;
  SvrHyperparams hyperparams;
  std::size_t n_train = 0;
  bool converged = false;
  double final_violation = 0.0;
  std::int64_t iterations = 0;
  double dual_objective = 0.0;
};

/// SMO solver for the nu-SVR dual over a precomputed Gram matrix.
///
/// Variables are laid out as beta = (alpha, alpha*) with signs z = (+1, -1).
/// The problem solved is
///   min 0.5 beta' Q beta + p' beta,  Q_kl = z_k z_l K_kl,  p = (-y, y)
///   s.t. sum_{z=+1} beta = sum_{z=-1} beta = C nu / 2,  0 <= beta <= C / n,
/// which has the same optimum as the form with sum(alpha + alpha*) <= C nu.
/// Each step updates one pair from the same sign class: i is the maximal
/// violator and j maximizes the second-order decrease. Ties go to the lowest
/// index. The returned coefficients are netted so that alpha_i * alpha*_i = 0.
///
/// When `objective_trace` is non-null the dual objective after every step is
/// appended to it.
inline NuSvrDualSolution solve_nu_svr_dual(const Eigen::MatrixXd& gram, std::span<const double> y,
                                           const SvrHyperparams& hp,
                                           std::vector<double>* objective_trace = nullptr) {
  validate(hp);
  const auto n = static_cast<std::size_t>(gram.rows());
  if (gram.cols() != gram.rows()) throw Error(ErrorKind::DimensionMismatch, "Gram matrix must be square");
  if (y.size() != n) throw Error(ErrorKind::LengthMismatch, "labels and Gram matrix differ in size");
  if (n < 2) throw Error(ErrorKind::TooFewSamples, "nu-SVR needs at least two samples");

  const std::size_t l = 2 * n;
  const double upper = hp.c / static_cast<double>(n);
  constexpr double kTau = 1e-12;
  // Values this close (relative to C/n) to a bound are set onto it, so that
  // rounding residue never masquerades as a free variable.
  constexpr double kSnap = 1e-12;
  const std::int64_t max_iter =
      hp.max_iterations > 0 ? hp.max_iterations : static_cast<std::int64_t>(100 * n * n);

  auto sign = [n](std::size_t k) { return k < n ? 1.0 : -1.0; };
  auto base = [n](std::size_t k) { return k < n ? k : k - n; };
  auto linear = [&](std::size_t k) { return k < n ? -y[k] : y[k - n]; };

  std::vector<double> beta(l, 0.0);
  for (std::size_t cls = 0; cls < 2; ++cls) {
    double remaining = hp.c * hp.nu / 2.0;
    for (std::size_t i = 0; i < n && remaining > upper * kSnap; ++i) {
      beta[cls * n + i] = std::min(remaining, upper);
      remaining -= beta[cls * n + i];
    }
  }

  std::vector<double> grad(l);
  {
    Eigen::VectorXd d(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) d[static_cast<Eigen::Index>(i)] = beta[i] - beta[i + n];
    const Eigen::VectorXd u = gram * d;
    for (std::size_t k = 0; k < l; ++k) grad[k] = sign(k) * u[static_cast<Eigen::Index>(base(k))] + linear(k);
  }

  auto at_upper = [&](std::size_t k) { return beta[k] >= upper; };
  auto at_lower = [&](std::size_t k) { return beta[k] <= 0.0; };
  auto objective = [&] {
    double f = 0.0;
    for (std::size_t k = 0; k < l; ++k) f += beta[k] * (grad[k] + linear(k));
    return -0.5 * f;
  };

  NuSvrDualSolution sol;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::int64_t iter = 0;
  double violation = kInf;
  while (true) {
    // Maximal violators in each sign class.
    double gmax_p = -kInf, gmax_n = -kInf;
    std::size_t ip = l, in = l;
    for (std::size_t k = 0; k < l; ++k) {
      if (k < n) {
        if (!at_upper(k) && -grad[k] > gmax_p) {
          gmax_p = -grad[k];
          ip = k;
        }
      } else if (!at_lower(k) && grad[k] > gmax_n) {
        gmax_n = grad[k];
        in = k;
      }
    }

    double gmax_p2 = -kInf, gmax_n2 = -kInf;
    double best_gain = kInf;
    std::size_t jbest = l;
    for (std::size_t k = 0; k < l; ++k) {
      if (k < n) {
        if (at_lower(k)) continue;
        gmax_p2 = std::max(gmax_p2, grad[k]);
        if (ip == l) continue;
        const double diff = gmax_p + grad[k];
        if (diff > 0.0) {
          double quad = gram(static_cast<Eigen::Index>(base(ip)), static_cast<Eigen::Index>(base(ip))) +
                        gram(static_cast<Eigen::Index>(base(k)), static_cast<Eigen::Index>(base(k))) -
                        2.0 * gram(static_cast<Eigen::Index>(base(ip)), static_cast<Eigen::Index>(base(k)));
          if (quad <= 0.0) quad = kTau;
          const double gain = -(diff * diff) / quad;
          if (gain < best_gain) {
            best_gain = gain;
            jbest = k;
          }
        }
      } else {
        if (at_upper(k)) continue;
        gmax_n2 = std::max(gmax_n2, -grad[k]);
        if (in == l) continue;
        const double diff = gmax_n - grad[k];
        if (diff > 0.0) {
          double quad = gram(static_cast<Eigen::Index>(base(in)), static_cast<Eigen::Index>(base(in))) +
                        gram(static_cast<Eigen::Index>(base(k)), static_cast<Eigen::Index>(base(k))) -
                        2.0 * gram(static_cast<Eigen::Index>(base(in)), static_cast<Eigen::Index>(base(k)));
          if (quad <= 0.0) quad = kTau;
          const double gain = -(diff * diff) / quad;
          if (gain < best_gain) {
            best_gain = gain;
            jbest = k;
          }
        }
      }
    }

    violation = std::max(gmax_p + gmax_p2, gmax_n + gmax_n2);
    if (violation <= hp.tolerance || jbest == l) {
      sol.converged = true;
      break;
    }
    if (iter >= max_iter) break;
    ++iter;

    const std::size_t i = jbest < n ? ip : in;
    const std::size_t j = jbest;
    const auto bi = static_cast<Eigen::Index>(base(i));
    const auto bj = static_cast<Eigen::Index>(base(j));
    double quad = gram(bi, bi) + gram(bj, bj) - 2.0 * gram(bi, bj);
    if (quad <= 0.0) quad = kTau;
    const double old_i = beta[i];
    const double old_j = beta[j];
    const double delta = (grad[i] - grad[j]) / quad;
    const double sum = old_i + old_j;
    double new_i = old_i - delta;
    double new_j = old_j + delta;
    if (sum > upper) {
      if (new_i > upper) {
        new_i = upper;
        new_j = sum - upper;
      }
    } else if (new_j < 0.0) {
      new_j = 0.0;
      new_i = sum;
    }
    if (sum > upper) {
      if (new_j > upper) {
        new_j = upper;
        new_i = sum - upper;
      }
    } else if (new_i < 0.0) {
      new_i = 0.0;
      new_j = sum;
    }
    auto snap = [&](double v) {
      if (v <= upper * kSnap) return 0.0;
      if (v >= upper * (1.0 - kSnap)) return upper;
      return v;
    };
    beta[i] = snap(new_i);
    beta[j] = snap(new_j);

    const double di = (beta[i] - old_i) * sign(i);
    const double dj = (beta[j] - old_j) * sign(j);
    for (std::size_t k = 0; k < n; ++k) {
      const auto bk = static_cast<Eigen::Index>(k);
      const double g = gram(bk, bi) * di + gram(bk, bj) * dj;
      grad[k] += g;
      grad[k + n] -= g;
    }
    if (objective_trace) objective_trace->push_back(objective());
  }
  sol.iterations = iter;
  sol.final_violation = violation;
  sol.objective = objective();

  // Offset and tube width from the two class multipliers. A class without
  // free variables uses the midpoint of its feasible interval.
  double r[2];
  for (std::size_t cls = 0; cls < 2; ++cls) {
    double ub = kInf, lb = -kInf, free_sum = 0.0;
    std::size_t n_free = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = cls * n + i;
      if (at_upper(k)) {
        lb = std::max(lb, grad[k]);
      } else if (at_lower(k)) {
        ub = std::min(ub, grad[k]);
      } else {
        ++n_free;
        free_sum += grad[k];
      }
    }
    r[cls] = n_free > 0 ? free_sum / static_cast<double>(n_free) : (ub + lb) / 2.0;
  }
  sol.bias = (r[1] - r[0]) / 2.0;
  sol.epsilon = std::max(0.0, -(r[0] + r[1]) / 2.0);

  sol.alpha.resize(n);
  sol.alpha_star.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = beta[i] - beta[i + n];
    sol.alpha[i] = std::max(d, 0.0);
    sol.alpha_star[i] = std::max(-d, 0.0);
  }
  return sol;
}

inline Eigen::MatrixXd linear_gram(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd g(x.rows(), x.rows());
  g.triangularView<Eigen::Lower>() = x * x.transpose();
  return g.selfadjointView<Eigen::Lower>();
}

/// Trains on rows of `x` against a Gram matrix already computed from them.
inline SvrModel train_nu_svr_gram(const Eigen::MatrixXd& x, const Eigen::MatrixXd& gram, std::span<const double> y,
                                  const SvrHyperparams& hp) {
  if (static_cast<std::size_t>(x.rows()) != y.size())
    throw Error(ErrorKind::LengthMismatch, "feature rows and labels differ in count");
  auto sol = solve_nu_svr_dual(gram, y, hp);
  SvrModel model;
  Eigen::VectorXd coef(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    coef[i] = sol.alpha[static_cast<std::size_t>(i)] - sol.alpha_star[static_cast<std::size_t>(i)];
  model.weight = x.transpose() * coef;
  model.alpha = std::move(sol.alpha);
  model.alpha_star = std::move(sol.alpha_star);
  model.bias = sol.bias;
  model.epsilon = sol.epsilon;
  model.hyperparams = hp;
  model.n_train = y.size();
  model.converged = sol.converged;
  model.final_violation = sol.final_violation;
  model.iterations = sol.iterations;
  model.dual_objective = sol.objective;
  return model;
}

inline SvrModel train_nu_svr(const Eigen::MatrixXd& x, std::span<const double> y, const SvrHyperparams& hp) {
  return train_nu_svr_gram(x, linear_gram(x), y, hp);
}

inline SvrModel train_nu_svr(const FeatureMatrix& x, std::span<const double> y, const SvrHyperparams& hp) {
  return train_nu_svr(x.rows, y, hp);
}

/// <w, x> + b, unclamped.
inline double predict(const SvrModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != model.weight.size())
    throw Error(ErrorKind::DimensionMismatch, "input has dimension " + std::to_string(x.size()) +
                                                  ", model expects " + std::to_string(model.weight.size()));
  return model.weight.dot(x) + model.bias;
}

inline std::vector<double> predict_rows(const SvrModel& model, const Eigen::MatrixXd& rows) {
  if (rows.cols() != model.weight.size())
    throw Error(ErrorKind::DimensionMismatch, "features have width " + std::to_string(rows.cols()) +
                                                  ", model expects " + std::to_string(model.weight.size()));
  std::vector<double> out(static_cast<std::size_t>(rows.rows()));
  for (Eigen::Index r = 0; r < rows.rows(); ++r) out[static_cast<std::size_t>(r)] = model.weight.dot(rows.row(r).transpose()) + model.bias;
  return out;
}

inline constexpr int kSvrFormatVersion = 1;

inline nlohmann::json to_json(const SvrModel& m) {
  return {
      {"format", "itemforge-nu-svr"},
      {"version", kSvrFormatVersion},
      {"hyperparams",
       {{"c", m.hyperparams.c},
        {"nu", m.hyperparams.nu},
        {"tolerance", m.hyperparams.tolerance},
        {"max_iterations", m.hyperparams.max_iterations}}},
      {"weight", std::vector<double>(m.weight.data(), m.weight.data() + m.weight.size())},
      {"bias", m.bias},
      {"epsilon", m.epsilon},
      {"n_train", m.n_train},
      {"converged", m.converged},
      {"final_violation", m.final_violation},
      {"iterations", m.iterations},
  };
}

inline SvrModel svr_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "itemforge-nu-svr")
      throw Error(ErrorKind::BadFormat, "not a nu-SVR model");
    const int version = j.at("version").get<int>();
    if (version != kSvrFormatVersion)
      throw Error(ErrorKind::BadFormat, "unsupported model format version " + std::to_string(version));
    SvrModel m;
    const auto& hp = j.at("hyperparams");
    m.hyperparams.c = hp.at("c").get<double>();
    m.hyperparams.nu = hp.at("nu").get<double>();
    m.hyperparams.tolerance = hp.at("tolerance").get<double>();
    m.hyperparams.max_iterations = hp.at("max_iterations").get<std::int64_t>();
    const auto w = j.at("weight").get<std::vector<double>>();
    m.weight = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    m.bias = j.at("bias").get<double>();
    m.epsilon = j.at("epsilon").get<double>();
    m.n_train = j.at("n_train").get<std::size_t>();
    m.converged = j.value("converged", true);
    m.final_violation = j.value("final_violation", 0.0);
    m.iterations = j.value("iterations", std::int64_t{0});
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::BadFormat, std::string("malformed model: ") + e.what());
  }
}

inline void save_model(const SvrModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out << to_json(m).dump(2) << '\n';
  if (!out) throw Error(ErrorKind::Io, "write failed on " + path);
}

inline SvrModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorKind::BadFormat, path + " is not valid JSON");
  return svr_from_json(j);
}

}  // namespace itemforge
