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

// Direct TF-IDF computation keyed by token string, written from the formula
// without sharing any code with the library's vectorizer.

#include <cmath>
#include <cctype>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace oracle {

inline std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : s + " ") {
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  return out;
}

/// Normalized weight per token for `doc` under the fitting `corpus`.
inline std::map<std::string, double> tfidf_weights(const std::vector<std::string>& corpus, const std::string& doc) {
  std::map<std::string, int> df;
  for (const auto& d : corpus) {
    const auto w = words(d);
    for (const auto& t : std::set<std::string>(w.begin(), w.end())) df[t] += 1;
  }
  std::map<std::string, double> out;
  for (const auto& t : words(doc)) {
    auto it = df.find(t);
    if (it == df.end()) continue;
    out[t] += 1.0;
  }
  const double n = static_cast<double>(corpus.size());
  double sq = 0.0;
  for (auto& [t, v] : out) {
    v *= std::log((1.0 + n) / (1.0 + df[t])) + 1.0;
    sq += v * v;
  }
  if (sq > 0.0)
    for (auto& [t, v] : out) v /= std::sqrt(sq);
  return out;
}

}  // namespace oracle
