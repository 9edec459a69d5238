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

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "itemforge/dataset.hpp"
#include "itemforge/error.hpp"
#include "itemforge/features.hpp"
#include "itemforge/svr.hpp"

namespace itemforge {

/// A trained regressor together with the label scaler and fitted featurizer
/// needed to score new items. Embedding vectors are not stored; the
/// embeddings path re-reads them at prediction time.
struct ModelBundle {
  SvrModel svr;
  LabelScaler scaler;
  Featurizer featurizer;
};

inline nlohmann::json to_json(const TfidfModel& m) {
  std::vector<std::string> tokens(m.vocabulary.size());
  for (const auto& [token, col] : m.vocabulary) tokens[col] = token;
  return {{"tokens", tokens},
          {"document_frequency", m.document_frequency},
          {"n_documents", m.n_documents},
          {"lowercase", m.lowercase}};
}

inline TfidfModel tfidf_from_json(const nlohmann::json& j) {
  TfidfModel m;
  const auto tokens = j.at("tokens").get<std::vector<std::string>>();
  for (std::size_t i = 0; i < tokens.size(); ++i) m.vocabulary.emplace(tokens[i], i);
  m.document_frequency = j.at("document_frequency").get<std::vector<std::int64_t>>();
  m.n_documents = j.at("n_documents").get<std::int64_t>();
  m.lowercase = j.value("lowercase", true);
  if (m.document_frequency.size() != tokens.size() || m.vocabulary.size() != tokens.size())
    throw Error(ErrorKind::BadFormat, "TF-IDF vocabulary and document frequencies disagree");
  return m;
}

inline nlohmann::json to_json(const PcaModel& m) {
  std::vector<double> components(static_cast<std::size_t>(m.components.size()));
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      components.data(), m.components.rows(), m.components.cols()) = m.components;
  return {{"mean", std::vector<double>(m.mean.data(), m.mean.data() + m.mean.size())},
          {"k", m.components.rows()},
          {"components", components},
          {"explained_variance",
           std::vector<double>(m.explained_variance.data(), m.explained_variance.data() + m.explained_variance.size())}};
}

inline PcaModel pca_from_json(const nlohmann::json& j) {
  PcaModel m;
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto k = j.at("k").get<Eigen::Index>();
  const auto comps = j.at("components").get<std::vector<double>>();
  const auto ev = j.at("explained_variance").get<std::vector<double>>();
  const auto d = static_cast<Eigen::Index>(mean.size());
  if (static_cast<Eigen::Index>(comps.size()) != k * d || static_cast<Eigen::Index>(ev.size()) != k)
    throw Error(ErrorKind::BadFormat, "PCA component block has the wrong size");
  m.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), d);
  m.components = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(comps.data(), k, d);
  m.explained_variance = Eigen::Map<const Eigen::VectorXd>(ev.data(), k);
  return m;
}

inline nlohmann::json to_json(const ModelBundle& b) {
  nlohmann::json feat = {{"kind", to_string(b.featurizer.kind)}, {"feature_set", to_string(b.featurizer.feature_set)}};
  if (b.featurizer.tfidf) feat["tfidf"] = to_json(*b.featurizer.tfidf);
  if (b.featurizer.pca) feat["pca"] = to_json(*b.featurizer.pca);
  if (b.featurizer.kind == FeaturizerKind::Embeddings) feat["dim"] = b.featurizer.width();
  return {
      {"format", "itemforge-bundle"},
      {"version", 1},
      {"svr", to_json(b.svr)},
      {"scaler", {{"label", to_string(b.scaler.label_name)}, {"min", b.scaler.min}, {"max", b.scaler.max}}},
      {"featurizer", feat},
  };
}

/// The embeddings featurizer of the returned bundle points at `embeddings`,
/// which must outlive it.
inline ModelBundle bundle_from_json(const nlohmann::json& j, const EmbeddingTable* embeddings = nullptr) {
  try {
    if (j.at("format").get<std::string>() != "itemforge-bundle") throw Error(ErrorKind::BadFormat, "not a model bundle");
    ModelBundle b;
    b.svr = svr_from_json(j.at("svr"));
    const auto& s = j.at("scaler");
    b.scaler = LabelScaler{parse_label_name(s.at("label").get<std::string>()), s.at("min").get<double>(),
                           s.at("max").get<double>()};
    const auto& f = j.at("featurizer");
    b.featurizer.kind = parse_featurizer(f.at("kind").get<std::string>());
    b.featurizer.feature_set = parse_feature_set(f.at("feature_set").get<std::string>());
    if (f.contains("tfidf")) b.featurizer.tfidf = tfidf_from_json(f["tfidf"]);
    if (f.contains("pca")) b.featurizer.pca = pca_from_json(f["pca"]);
    if (b.featurizer.kind == FeaturizerKind::Embeddings) {
      if (!embeddings) throw Error(ErrorKind::InvalidArgument, "bundle uses embeddings but none were supplied");
      if (f.contains("dim") && f["dim"].get<std::size_t>() != embeddings->dim)
        throw Error(ErrorKind::DimensionMismatch, "model was trained on " + std::to_string(f["dim"].get<std::size_t>()) +
                                                      "-d embeddings, the supplied file has " +
                                                      std::to_string(embeddings->dim) + "-d vectors");
      b.featurizer.embeddings = embeddings;
    } else if (!b.featurizer.tfidf || (b.featurizer.kind == FeaturizerKind::TfidfPca && !b.featurizer.pca)) {
      throw Error(ErrorKind::BadFormat, "bundle lacks its fitted featurizer");
    }
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::BadFormat, std::string("malformed bundle: ") + e.what());
  }
}

}  // namespace itemforge
