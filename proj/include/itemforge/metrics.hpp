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
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "itemforge/dataset.hpp"
#include "itemforge/error.hpp"

namespace itemforge {

namespace detail {

inline void check_pair(std::span<const double> a, std::span<const double> b, std::size_t min_len) {
  if (a.size() != b.size()) throw Error(ErrorKind::LengthMismatch, "inputs differ in length");
  if (a.size() < min_len) {
    if (a.empty()) throw Error(ErrorKind::Empty, "inputs are empty");
    throw Error(ErrorKind::TooFewSamples, "need at least " + std::to_string(min_len) + " values");
  }
}

}  // namespace detail

inline double mse(std::span<const double> y, std::span<const double> yhat) {
  detail::check_pair(y, yhat, 1);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  return s / static_cast<double>(y.size());
}

/// RMSE on raw labels: both sequences are unscaled first.
inline double rmse_raw(std::span<const double> y_scaled, std::span<const double> yhat_scaled, const LabelScaler& scaler) {
  detail::check_pair(y_scaled, yhat_scaled, 1);
  std::vector<double> y(y_scaled.size()), yhat(yhat_scaled.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = scaler.unscale(y_scaled[i]);
    yhat[i] = scaler.unscale(yhat_scaled[i]);
  }
  return std::sqrt(mse(y, yhat));
}

/// Kendall tau-b via Knight's O(n log n) method. Throws Undefined when
/// either sequence is constant.
inline double kendall_tau(std::span<const double> y, std::span<const double> yhat) {
  detail::check_pair(y, yhat, 2);
  const std::size_t n = y.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return y[a] < y[b] || (y[a] == y[b] && yhat[a] < yhat[b]);
  });

  auto pairs = [](std::int64_t t) { return t * (t - 1) / 2; };
  const std::int64_t n0 = pairs(static_cast<std::int64_t>(n));
  std::int64_t tied_y = 0, tied_both = 0;
  {
    std::int64_t run_y = 1, run_both = 1;
    for (std::size_t k = 1; k <= n; ++k) {
      const bool same_y = k < n && y[order[k]] == y[order[k - 1]];
      const bool same_both = same_y && yhat[order[k]] == yhat[order[k - 1]];
      if (same_both) {
        ++run_both;
      } else {
        tied_both += pairs(run_both);
        run_both = 1;
      }
      if (same_y) {
        ++run_y;
      } else {
        tied_y += pairs(run_y);
        run_y = 1;
      }
    }
  }

  // Discordant pairs are the inversions of yhat in this order.
  std::vector<double> seq(n), buf(n);
  for (std::size_t k = 0; k < n; ++k) seq[k] = yhat[order[k]];
  std::int64_t swaps = 0;
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t lo = 0; lo < n; lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, n), hi = std::min(lo + 2 * width, n);
      std::size_t a = lo, b = mid, out = lo;
      while (a < mid && b < hi) {
        if (seq[b] < seq[a]) {
          swaps += static_cast<std::int64_t>(mid - a);
          buf[out++] = seq[b++];
        } else {
          buf[out++] = seq[a++];
        }
      }
      while (a < mid) buf[out++] = seq[a++];
      while (b < hi) buf[out++] = seq[b++];
    }
    std::swap(seq, buf);
  }

  std::int64_t tied_yhat = 0;
  {
    std::int64_t run = 1;
    for (std::size_t k = 1; k <= n; ++k) {
      if (k < n && seq[k] == seq[k - 1]) {
        ++run;
      } else {
        tied_yhat += pairs(run);
        run = 1;
      }
    }
  }

  const std::int64_t not_tied_y = n0 - tied_y;
  const std::int64_t not_tied_yhat = n0 - tied_yhat;
  if (not_tied_y == 0 || not_tied_yhat == 0)
    throw Error(ErrorKind::Undefined, "Kendall tau is undefined for a constant sequence");
  const std::int64_t numerator = n0 - tied_y - tied_yhat + tied_both - 2 * swaps;
  return static_cast<double>(numerator) / std::sqrt(static_cast<double>(not_tied_y * not_tied_yhat));
}

inline std::optional<double> try_kendall_tau(std::span<const double> y, std::span<const double> yhat) {
  try {
    return kendall_tau(y, yhat);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Undefined) return std::nullopt;
    throw;
  }
}

/// Sample Pearson correlation. Throws Undefined on zero variance.
inline double pearson_r(std::span<const double> a, std::span<const double> b) {
  detail::check_pair(a, b, 2);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw Error(ErrorKind::Undefined, "Pearson r is undefined for a constant sequence");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

}  // namespace itemforge
