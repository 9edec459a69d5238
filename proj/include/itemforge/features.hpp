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
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <json.hpp>

#include "itemforge/augment.hpp"
#include "itemforge/dataset.hpp"
#include "itemforge/error.hpp"
#include "itemforge/text.hpp"

namespace itemforge {

enum class FeatureSetId { All, QAnswers, Answers, QA, LlmsA, QLlmsA, QLlmsAKey };

inline constexpr std::array<FeatureSetId, 7> kAllFeatureSets{
    FeatureSetId::All,   FeatureSetId::QAnswers, FeatureSetId::Answers,  FeatureSetId::QA,
    FeatureSetId::LlmsA, FeatureSetId::QLlmsA,   FeatureSetId::QLlmsAKey};

inline std::string_view to_string(FeatureSetId fs) {
  switch (fs) {
    case FeatureSetId::All: return "all";
    case FeatureSetId::QAnswers: return "q_answers";
    case FeatureSetId::Answers: return "answers";
    case FeatureSetId::QA: return "q_a";
    case FeatureSetId::LlmsA: return "llms_a";
    case FeatureSetId::QLlmsA: return "q_llms_a";
    case FeatureSetId::QLlmsAKey: return "q_llms_a_key";
  }
  return "";
}

inline FeatureSetId parse_feature_set(std::string_view s) {
  const auto v = text::to_lower(s);
  for (auto fs : kAllFeatureSets)
    if (v == to_string(fs)) return fs;
  throw Error(ErrorKind::InvalidArgument, "unknown feature set '" + std::string(s) + "'");
}

inline bool needs_llm_answers(FeatureSetId fs) {
  return fs == FeatureSetId::LlmsA || fs == FeatureSetId::QLlmsA || fs == FeatureSetId::QLlmsAKey;
}

inline constexpr std::string_view kFieldSeparator = " [SEP] ";

/// Merges the fields named by `fs` into one text, joined by " [SEP] ".
inline std::string assemble_text(const AugmentedItem& aug, FeatureSetId fs) {
  const Item& item = aug.item;
  if (needs_llm_answers(fs) && aug.llm_answers.empty())
    throw Error(ErrorKind::MissingLlmAnswers,
                "item " + std::to_string(item.item_num) + " has no LLM answers for " + std::string(to_string(fs)));

  std::vector<std::string> parts;
  auto options = [&] {
    for (const auto& [_, option] : item.answers) parts.push_back(option);
  };
  auto llms = [&] {
    for (const auto& [_, answer] : aug.llm_answers) parts.push_back(answer);
  };
  switch (fs) {
    case FeatureSetId::All:
      parts.push_back("ItemNum=" + std::to_string(item.item_num));
      parts.push_back("ItemText=" + item.item_text);
      for (const auto& [letter, option] : item.answers) parts.push_back(std::string("Answer_") + letter + "=" + option);
      parts.push_back(std::string("Answer_Key=") + item.answer_key);
      parts.push_back("Answer_Text=" + item.answer_text);
      parts.push_back("ItemType=" + std::string(to_string(item.item_type)));
      parts.push_back("EXAM=" + std::string(to_string(item.exam_step)));
      break;
    case FeatureSetId::QAnswers:
      parts.push_back(item.item_text);
      options();
      parts.push_back(item.answer_text);
      break;
    case FeatureSetId::Answers:
      options();
      break;
    case FeatureSetId::QA:
      parts.push_back(item.item_text);
      parts.push_back(item.answer_text);
      break;
    case FeatureSetId::LlmsA:
      llms();
      parts.push_back(item.answer_text);
      break;
    case FeatureSetId::QLlmsA:
      parts.push_back(item.item_text);
      llms();
      parts.push_back(item.answer_text);
      break;
    case FeatureSetId::QLlmsAKey:
      parts.push_back(item.item_text);
      llms();
      parts.push_back(item.answer_text);
      parts.push_back(std::string(1, item.answer_key));
      break;
  }
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += kFieldSeparator;
    out += parts[i];
  }
  return out;
}

/// Lowercased maximal runs of ASCII alphanumerics.
inline std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

/// Row-per-item numeric features.
struct FeatureMatrix {
  std::vector<ItemNum> item_nums;
  Eigen::MatrixXd rows;

  std::size_t width() const { return static_cast<std::size_t>(rows.cols()); }
  std::size_t size() const { return item_nums.size(); }
};

inline void validate_feature_matrix(const FeatureMatrix& m) {
  if (static_cast<Eigen::Index>(m.item_nums.size()) != m.rows.rows())
    throw Error(ErrorKind::DimensionMismatch, "item_nums and rows differ in length");
  std::set<ItemNum> seen(m.item_nums.begin(), m.item_nums.end());
  if (seen.size() != m.item_nums.size()) throw Error(ErrorKind::DuplicateItem, "duplicated item_num in feature matrix");
}

/// Document frequencies over a fitting corpus. Columns follow lexicographic
/// token order, so the index is independent of corpus order.
struct TfidfModel {
  std::map<std::string, std::size_t> vocabulary;
  std::vector<std::int64_t> document_frequency;
  std::int64_t n_documents = 0;
  bool lowercase = true;

  std::size_t width() const { return vocabulary.size(); }

  double idf(std::size_t column) const {
    return std::log((1.0 + static_cast<double>(n_documents)) /
                    (1.0 + static_cast<double>(document_frequency[column]))) +
           1.0;
  }
};

inline TfidfModel fit_tfidf(std::span<const std::string> corpus) {
  if (corpus.empty()) throw Error(ErrorKind::EmptyCorpus, "cannot fit TF-IDF on an empty corpus");
  std::map<std::string, std::int64_t> df;
  for (const auto& doc : corpus) {
    auto tokens = tokenize(doc);
    std::set<std::string> unique(tokens.begin(), tokens.end());
    for (const auto& t : unique) ++df[t];
  }
  TfidfModel model;
  model.n_documents = static_cast<std::int64_t>(corpus.size());
  model.document_frequency.reserve(df.size());
  for (const auto& [token, count] : df) {
    model.vocabulary.emplace(token, model.document_frequency.size());
    model.document_frequency.push_back(count);
  }
  return model;
}

/// Raw count times smoothed idf, then L2 normalized. Unknown tokens are dropped.
inline Eigen::VectorXd transform_tfidf(const TfidfModel& model, std::string_view doc) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.width()));
  for (const auto& t : tokenize(doc)) {
    auto it = model.vocabulary.find(t);
    if (it != model.vocabulary.end()) v[static_cast<Eigen::Index>(it->second)] += 1.0;
  }
  for (Eigen::Index j = 0; j < v.size(); ++j)
    if (v[j] != 0.0) v[j] *= model.idf(static_cast<std::size_t>(j));
  const double norm = v.norm();
  if (norm > 0.0) v /= norm;
  return v;
}

struct PcaModel {
  Eigen::VectorXd mean;
  /// k x d, orthonormal rows ordered by decreasing singular value.
  Eigen::MatrixXd components;
  Eigen::VectorXd explained_variance;

  std::size_t input_dim() const { return static_cast<std::size_t>(mean.size()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(components.rows()); }
};

/// Top-k principal directions from a thin SVD of the centered data. Each
/// component's largest-magnitude entry is made positive.
inline PcaModel fit_pca(const Eigen::MatrixXd& x, std::size_t k) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto d = static_cast<std::size_t>(x.cols());
  if (n < 2) throw Error(ErrorKind::RankTooSmall, "PCA needs at least two rows");
  if (k < 1 || k > std::min(n - 1, d))
    throw Error(ErrorKind::RankTooSmall,
                "k=" + std::to_string(k) + " exceeds min(n-1, d)=" + std::to_string(std::min(n - 1, d)));

  PcaModel model;
  model.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - model.mean.transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const auto ki = static_cast<Eigen::Index>(k);
  model.components = svd.matrixV().leftCols(ki).transpose();
  for (Eigen::Index r = 0; r < ki; ++r) {
    Eigen::Index arg = 0;
    model.components.row(r).cwiseAbs().maxCoeff(&arg);
    if (model.components(r, arg) < 0.0) model.components.row(r) *= -1.0;
  }
  model.explained_variance =
      svd.singularValues().head(ki).array().square() / static_cast<double>(n - 1);
  return model;
}

inline Eigen::VectorXd transform_pca(const PcaModel& model, const Eigen::VectorXd& x) {
  if (static_cast<std::size_t>(x.size()) != model.input_dim())
    throw Error(ErrorKind::DimensionMismatch, "PCA input has dimension " + std::to_string(x.size()) + ", expected " +
                                                  std::to_string(model.input_dim()));
  return model.components * (x - model.mean);
}

/// Precomputed sentence vectors keyed by item number.
struct EmbeddingTable {
  std::map<ItemNum, Eigen::VectorXd> vectors;
  std::size_t dim = 0;

  const Eigen::VectorXd& at(ItemNum item_num) const {
    auto it = vectors.find(item_num);
    if (it == vectors.end())
      throw Error(ErrorKind::MissingVectorField, "no embedding for item " + std::to_string(item_num));
    return it->second;
  }
};

/// Reads JSON lines of {"item_num": int, "vector": [numbers]}.
inline EmbeddingTable load_embeddings(const std::string& path, std::optional<std::size_t> expected_dim = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  EmbeddingTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    const std::string where = path + " line " + std::to_string(lineno) + ": ";
    auto rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) throw Error(ErrorKind::BadFormat, where + "not a JSON object");
    if (!rec.contains("item_num") || !rec["item_num"].is_number_integer())
      throw Error(ErrorKind::MissingVectorField, where + "missing integer item_num");
    if (!rec.contains("vector") || !rec["vector"].is_array())
      throw Error(ErrorKind::MissingVectorField, where + "missing vector array");
    const auto item_num = rec["item_num"].get<ItemNum>();
    const auto& arr = rec["vector"];
    Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i) {
      if (!arr[i].is_number()) throw Error(ErrorKind::MissingVectorField, where + "non-numeric vector entry");
      v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
    }
    const auto dim = static_cast<std::size_t>(v.size());
    if (expected_dim && dim != *expected_dim)
      throw Error(ErrorKind::DimensionMismatch,
                  where + "vector has dimension " + std::to_string(dim) + ", expected " + std::to_string(*expected_dim));
    if (table.vectors.empty()) {
      table.dim = dim;
    } else if (dim != table.dim) {
      throw Error(ErrorKind::DimensionMismatch,
                  where + "vector has dimension " + std::to_string(dim) + ", file uses " + std::to_string(table.dim));
    }
    if (!table.vectors.emplace(item_num, std::move(v)).second)
      throw Error(ErrorKind::DuplicateItem, where + "duplicate item_num " + std::to_string(item_num));
  }
  return table;
}

enum class FeaturizerKind { Tfidf, TfidfPca, Embeddings };

inline std::string_view to_string(FeaturizerKind k) {
  switch (k) {
    case FeaturizerKind::Tfidf: return "tfidf";
    case FeaturizerKind::TfidfPca: return "tfidf_pca";
    case FeaturizerKind::Embeddings: return "embeddings";
  }
  return "";
}

inline FeaturizerKind parse_featurizer(std::string_view s) {
  const auto v = text::to_lower(s);
  if (v == "tfidf") return FeaturizerKind::Tfidf;
  if (v == "tfidf_pca" || v == "tfidf+pca") return FeaturizerKind::TfidfPca;
  if (v == "embeddings") return FeaturizerKind::Embeddings;
  throw Error(ErrorKind::InvalidArgument, "unknown featurizer '" + std::string(s) + "'");
}

/// A featurizer fitted on one set of items, reusable on any other items.
struct Featurizer {
  FeaturizerKind kind = FeaturizerKind::Tfidf;
  FeatureSetId feature_set = FeatureSetId::QA;
  std::optional<TfidfModel> tfidf;
  std::optional<PcaModel> pca;
  /// Borrowed; only set for the embeddings path.
  const EmbeddingTable* embeddings = nullptr;

  std::size_t width() const {
    switch (kind) {
      case FeaturizerKind::Tfidf: return tfidf->width();
      case FeaturizerKind::TfidfPca: return pca->output_dim();
      case FeaturizerKind::Embeddings: return embeddings->dim;
    }
    return 0;
  }

  FeatureMatrix transform(std::span<const AugmentedItem> items) const {
    FeatureMatrix m;
    m.item_nums.reserve(items.size());
    m.rows.resize(static_cast<Eigen::Index>(items.size()), static_cast<Eigen::Index>(width()));
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      m.item_nums.push_back(items[i].item.item_num);
      switch (kind) {
        case FeaturizerKind::Tfidf:
          m.rows.row(r) = transform_tfidf(*tfidf, assemble_text(items[i], feature_set)).transpose();
          break;
        case FeaturizerKind::TfidfPca:
          m.rows.row(r) =
              transform_pca(*pca, transform_tfidf(*tfidf, assemble_text(items[i], feature_set))).transpose();
          break;
        case FeaturizerKind::Embeddings: {
          const auto& v = embeddings->at(items[i].item.item_num);
          if (static_cast<std::size_t>(v.size()) != width())
            throw Error(ErrorKind::DimensionMismatch, "embedding width differs from the fitted width");
          m.rows.row(r) = v.transpose();
          break;
        }
      }
    }
    return m;
  }
};

/// Fits the featurizer on `items` only. For TF-IDF + PCA the target
/// dimension is clamped to min(n-1, vocabulary size).
inline Featurizer fit_featurizer(FeaturizerKind kind, FeatureSetId fs, std::span<const AugmentedItem> items,
                                 std::size_t pca_k = 100, const EmbeddingTable* embeddings = nullptr) {
  Featurizer f;
  f.kind = kind;
  f.feature_set = fs;
  if (kind == FeaturizerKind::Embeddings) {
    if (!embeddings) throw Error(ErrorKind::InvalidArgument, "embeddings featurizer needs an embedding table");
    if (embeddings->vectors.empty()) throw Error(ErrorKind::Empty, "embedding table is empty");
    f.embeddings = embeddings;
    return f;
  }
  std::vector<std::string> corpus;
  corpus.reserve(items.size());
  for (const auto& aug : items) corpus.push_back(assemble_text(aug, fs));
  f.tfidf = fit_tfidf(corpus);
  if (kind == FeaturizerKind::TfidfPca) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(corpus.size()), static_cast<Eigen::Index>(f.tfidf->width()));
    for (std::size_t i = 0; i < corpus.size(); ++i)
      x.row(static_cast<Eigen::Index>(i)) = transform_tfidf(*f.tfidf, corpus[i]).transpose();
    const auto bound = std::min<std::size_t>(corpus.size() - 1, f.tfidf->width());
    f.pca = fit_pca(x, std::max<std::size_t>(1, std::min(pca_k, bound)));
  }
  return f;
}

inline std::string format_decimal(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

/// Debug dump: header `item_num,c0,...`, one row per item.
inline void write_feature_matrix_csv(std::ostream& out, const FeatureMatrix& m) {
  out << "item_num";
  for (std::size_t c = 0; c < m.width(); ++c) out << ",c" << c;
  out << '\n';
  for (std::size_t r = 0; r < m.size(); ++r) {
    out << m.item_nums[r];
    for (Eigen::Index c = 0; c < m.rows.cols(); ++c) out << ',' << format_decimal(m.rows(static_cast<Eigen::Index>(r), c));
    out << '\n';
  }
}

}  // namespace itemforge
