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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "itemforge/features.hpp"
#include "oracles/jacobi_eigen.hpp"
#include "oracles/tfidf_reference.hpp"
#include "test_support.hpp"

namespace itemforge {
namespace {

using testing::make_item;

AugmentedItem augmented(Item item, std::vector<std::pair<std::string, std::string>> llm = {}) {
  return AugmentedItem{std::move(item), std::move(llm)};
}

std::size_t count_separators(const std::string& s) {
  std::size_t count = 0;
  for (auto pos = s.find(kFieldSeparator); pos != std::string::npos; pos = s.find(kFieldSeparator, pos + 1)) ++count;
  return count;
}

TEST(AssembleText, FeatureSetLayouts) {
  auto item = make_item(12, "Q?", {"x", "y", "z"}, 'A');
  const auto plain = augmented(item);
  EXPECT_EQ(assemble_text(plain, FeatureSetId::QA), "Q? [SEP] x");
  EXPECT_EQ(assemble_text(plain, FeatureSetId::Answers), "x [SEP] y [SEP] z");
  EXPECT_EQ(assemble_text(plain, FeatureSetId::QAnswers), "Q? [SEP] x [SEP] y [SEP] z [SEP] x");

  const auto with_llms = augmented(item, {{"falcon", "A"}, {"llama", "B"}, {"mistral", "C"}});
  EXPECT_EQ(assemble_text(with_llms, FeatureSetId::LlmsA), "A [SEP] B [SEP] C [SEP] x");
  EXPECT_EQ(assemble_text(with_llms, FeatureSetId::QLlmsA), "Q? [SEP] A [SEP] B [SEP] C [SEP] x");
  EXPECT_EQ(assemble_text(with_llms, FeatureSetId::QLlmsAKey), "Q? [SEP] A [SEP] B [SEP] C [SEP] x [SEP] A");

  const auto all = assemble_text(plain, FeatureSetId::All);
  EXPECT_EQ(all.rfind("ItemNum=12 [SEP] ItemText=Q? [SEP] Answer_A=x", 0), 0u);
  EXPECT_NE(all.find("EXAM=Step_1"), std::string::npos);
  EXPECT_NE(all.find("ItemType=Text"), std::string::npos);
  EXPECT_NE(all.find("Answer_Key=A"), std::string::npos);
}

TEST(AssembleText, AnswersSegmentCount) {
  const auto five = augmented(make_item(1, "s", {"a", "b", "c", "d", "e"}, 'E'));
  EXPECT_EQ(count_separators(assemble_text(five, FeatureSetId::Answers)), 4u);
}

TEST(AssembleText, MissingLlmAnswers) {
  const auto plain = augmented(make_item(1, "s", {"a", "b"}, 'A'));
  for (auto fs : {FeatureSetId::LlmsA, FeatureSetId::QLlmsA, FeatureSetId::QLlmsAKey}) {
    try {
      assemble_text(plain, fs);
      FAIL() << to_string(fs);
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::MissingLlmAnswers);
    }
  }
}

TEST(AssembleText, StemAlwaysPresentWhenIncluded) {
  auto items = testing::random_items(30, 17);
  for (const auto& item : items) {
    const auto aug = augmented(item, {{"a", "one"}, {"b", "two"}, {"c", "three"}});
    for (auto fs : kAllFeatureSets) {
      const auto text = assemble_text(aug, fs);
      EXPECT_EQ(text, assemble_text(aug, fs));
      const bool has_stem = fs != FeatureSetId::Answers && fs != FeatureSetId::LlmsA;
      EXPECT_EQ(text.find(item.item_text) != std::string::npos, has_stem) << to_string(fs);
    }
  }
}

TEST(FeatureSetNames, RoundTrip) {
  for (auto fs : kAllFeatureSets) EXPECT_EQ(parse_feature_set(to_string(fs)), fs);
  EXPECT_EQ(parse_feature_set("q_llms_a_key"), FeatureSetId::QLlmsAKey);
  EXPECT_THROW(parse_feature_set("nope"), Error);
}

TEST(Tokenize, Examples) {
  using V = std::vector<std::string>;
  EXPECT_EQ(tokenize("The correct answer is D."), (V{"the", "correct", "answer", "is", "d"}));
  EXPECT_EQ(tokenize(""), V{});
  EXPECT_EQ(tokenize("A.x, B.y"), (V{"a", "x", "b", "y"}));
  EXPECT_EQ(tokenize("x [SEP] 42mg"), (V{"x", "sep", "42mg"}));
}

TEST(Tfidf, FitCounts) {
  const std::vector<std::string> corpus{"a b", "b c"};
  const auto model = fit_tfidf(corpus);
  EXPECT_EQ(model.n_documents, 2);
  ASSERT_EQ(model.width(), 3u);
  EXPECT_EQ(model.document_frequency[model.vocabulary.at("a")], 1);
  EXPECT_EQ(model.document_frequency[model.vocabulary.at("b")], 2);
  EXPECT_EQ(model.document_frequency[model.vocabulary.at("c")], 1);

  const std::vector<std::string> repeated{"x x x"};
  EXPECT_EQ(fit_tfidf(repeated).document_frequency[0], 1);
  EXPECT_THROW(fit_tfidf(std::vector<std::string>{}), Error);
}

TEST(Tfidf, HandExample) {
  const std::vector<std::string> corpus{"a b", "b c"};
  const auto model = fit_tfidf(corpus);
  const auto b = static_cast<Eigen::Index>(model.vocabulary.at("b"));
  EXPECT_NEAR(model.idf(static_cast<std::size_t>(b)), 1.0, 1e-12);
  const auto v = transform_tfidf(model, "b");
  EXPECT_NEAR(v[b], 1.0, 1e-12);
  EXPECT_NEAR(v.norm(), 1.0, 1e-12);

  // "a b": a has idf ln(3/2)+1, b has idf 1.
  const double ia = std::log(1.5) + 1.0;
  const auto ab = transform_tfidf(model, "a b");
  const double norm = std::sqrt(ia * ia + 1.0);
  EXPECT_NEAR(ab[static_cast<Eigen::Index>(model.vocabulary.at("a"))], ia / norm, 1e-12);
  EXPECT_NEAR(ab[b], 1.0 / norm, 1e-12);

  EXPECT_EQ(transform_tfidf(model, "z").norm(), 0.0);
  EXPECT_EQ(transform_tfidf(model, "").norm(), 0.0);
  const auto a1 = transform_tfidf(model, "a");
  const auto a2 = transform_tfidf(model, "a a");
  EXPECT_NEAR((a1 - a2).norm(), 0.0, 1e-15);
}

TEST(Tfidf, MatchesReferenceAndUnitNorm) {
  const auto items = testing::random_items(60, 3, 8);
  std::vector<std::string> corpus;
  for (const auto& item : items) corpus.push_back(assemble_text(augmented(item), FeatureSetId::QAnswers));
  const auto model = fit_tfidf(corpus);
  const auto extra = testing::random_items(10, 4, 8);
  std::vector<std::string> docs = corpus;
  for (const auto& item : extra) docs.push_back(assemble_text(augmented(item), FeatureSetId::QA));
  docs.push_back("nothing known here");
  for (const auto& doc : docs) {
    const auto v = transform_tfidf(model, doc);
    const double norm = v.norm();
    EXPECT_TRUE(std::abs(norm - 1.0) < 1e-12 || norm == 0.0);
    const auto ref = oracle::tfidf_weights(corpus, doc);
    for (const auto& [token, col] : model.vocabulary) {
      auto it = ref.find(token);
      EXPECT_NEAR(v[static_cast<Eigen::Index>(col)], it == ref.end() ? 0.0 : it->second, 1e-12);
    }
  }
}

TEST(Tfidf, CorpusOrderInvariance) {
  const auto items = testing::random_items(40, 8, 6);
  std::vector<std::string> corpus;
  for (const auto& item : items) corpus.push_back(item.item_text);
  auto shuffled = corpus;
  std::mt19937_64 rng(1);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto m1 = fit_tfidf(corpus);
  const auto m2 = fit_tfidf(shuffled);
  ASSERT_EQ(m1.vocabulary, m2.vocabulary);
  for (const auto& doc : corpus) {
    const auto a = transform_tfidf(m1, doc);
    const auto b = transform_tfidf(m2, doc);
    for (const auto& [token, col] : m1.vocabulary) {
      EXPECT_EQ(a[static_cast<Eigen::Index>(col)], b[static_cast<Eigen::Index>(m2.vocabulary.at(token))]);
    }
  }
}

TEST(Pca, TwoPointDiagonal) {
  Eigen::MatrixXd x(2, 2);
  x << 0, 0, 1, 1;
  const auto model = fit_pca(x, 1);
  EXPECT_NEAR(model.mean[0], 0.5, 1e-15);
  EXPECT_NEAR(model.mean[1], 0.5, 1e-15);
  EXPECT_NEAR(model.components(0, 0), std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(model.components(0, 1), std::sqrt(0.5), 1e-12);
  Eigen::VectorXd p(2);
  p << 1, 1;
  EXPECT_NEAR(transform_pca(model, p)[0], std::sqrt(2.0) / 2.0, 1e-12);
  EXPECT_NEAR(transform_pca(model, model.mean).norm(), 0.0, 1e-15);
}

TEST(Pca, Errors) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 3);
  try {
    fit_pca(x, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::RankTooSmall);
  }
  EXPECT_THROW(fit_pca(x, 0), Error);
  EXPECT_THROW(fit_pca(Eigen::MatrixXd::Random(1, 3), 1), Error);
  const auto model = fit_pca(x, 2);
  try {
    transform_pca(model, Eigen::VectorXd::Zero(4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DimensionMismatch);
  }
}

TEST(Pca, FullRankReconstruction) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  Eigen::MatrixXd x(12, 5);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
  const auto model = fit_pca(x, 5);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Eigen::VectorXd row = x.row(r).transpose();
    const Eigen::VectorXd rebuilt = model.mean + model.components.transpose() * transform_pca(model, row);
    EXPECT_LT((rebuilt - row).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Pca, AgreesWithCovarianceEigensolve) {
  std::mt19937_64 rng(20);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd x(20, 8);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng) * (1.0 + static_cast<double>(i % 8));
    const auto model = fit_pca(x, 3);
    const auto eig = oracle::jacobi_eigen(oracle::sample_covariance(x));
    for (int k = 0; k < 3; ++k) {
      EXPECT_NEAR(model.explained_variance[k], eig.values[k], 1e-8);
      // Same direction up to sign.
      const double dot = std::abs(model.components.row(k).dot(eig.vectors.col(k)));
      EXPECT_NEAR(dot, 1.0, 1e-8);
    }
    const Eigen::MatrixXd gram = model.components * model.components.transpose();
    EXPECT_LT((gram - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Pca, ProjectedVarianceAndResidualIdentity) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g;
  Eigen::MatrixXd x(30, 6);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng) * (1.0 + static_cast<double>(i % 6));
  const auto model = fit_pca(x, 3);
  const double n1 = static_cast<double>(x.rows() - 1);
  Eigen::MatrixXd proj(x.rows(), 3);
  double residual = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Eigen::VectorXd row = x.row(r).transpose();
    const Eigen::VectorXd p = transform_pca(model, row);
    proj.row(r) = p.transpose();
    residual += (model.mean + model.components.transpose() * p - row).squaredNorm();
  }
  for (int k = 0; k < 3; ++k) {
    const double var = proj.col(k).squaredNorm() / n1;
    EXPECT_NEAR(var / model.explained_variance[k], 1.0, 1e-6);
  }
  const double total = oracle::sample_covariance(x).trace();
  EXPECT_NEAR(residual / n1, total - model.explained_variance.sum(), 1e-8 * total);
}

TEST(Embeddings, LoadAndValidate) {
  testing::TempDir dir;
  std::string ok;
  for (int i = 0; i < 466; ++i) {
    nlohmann::json rec{{"item_num", i}, {"vector", std::vector<double>(768, 0.001 * i)}};
    ok += rec.dump() + "\n";
  }
  testing::write_text(dir.file("ok.jsonl"), ok);
  const auto table = load_embeddings(dir.file("ok.jsonl"), 768);
  EXPECT_EQ(table.vectors.size(), 466u);
  EXPECT_EQ(table.dim, 768u);
  EXPECT_DOUBLE_EQ(table.at(5)[0], 0.005);
  EXPECT_THROW(table.at(9999), Error);

  auto kind = [&](const std::string& content, std::optional<std::size_t> dim) {
    testing::write_text(dir.file("t.jsonl"), content);
    try {
      load_embeddings(dir.file("t.jsonl"), dim);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;
  };
  EXPECT_EQ(kind("{\"item_num\": 1, \"vector\": [1,2,3,4,5]}\n", 768), ErrorKind::DimensionMismatch);
  EXPECT_EQ(kind("{\"item_num\": 1, \"vector\": [1,2]}\n{\"item_num\": 2, \"vector\": [1]}\n", std::nullopt),
            ErrorKind::DimensionMismatch);
  EXPECT_EQ(kind("{\"item_num\": 1, \"vector\": [1]}\n{\"item_num\": 1, \"vector\": [2]}\n", std::nullopt),
            ErrorKind::DuplicateItem);
  EXPECT_EQ(kind("{\"item_num\": 1}\n", std::nullopt), ErrorKind::MissingVectorField);
  EXPECT_EQ(kind("{\"vector\": [1]}\n", std::nullopt), ErrorKind::MissingVectorField);
  EXPECT_EQ(kind("[1, 2]\n", std::nullopt), ErrorKind::BadFormat);
}

TEST(Featurizer, FitOnTrainApplyToOthers) {
  auto items = testing::random_items(25, 9);
  std::vector<AugmentedItem> train, test;
  for (std::size_t i = 0; i < items.size(); ++i) (i < 20 ? train : test).push_back(augmented(items[i]));

  const auto tf = fit_featurizer(FeaturizerKind::Tfidf, FeatureSetId::QA, train);
  const auto m = tf.transform(test);
  EXPECT_EQ(m.size(), 5u);
  EXPECT_EQ(m.width(), tf.tfidf->width());
  EXPECT_EQ(m.item_nums[0], items[20].item_num);
  validate_feature_matrix(m);

  const auto pca = fit_featurizer(FeaturizerKind::TfidfPca, FeatureSetId::QA, train, 100);
  EXPECT_EQ(pca.width(), 19u);
  EXPECT_EQ(pca.transform(test).width(), 19u);
  EXPECT_EQ(fit_featurizer(FeaturizerKind::TfidfPca, FeatureSetId::QA, train, 4).width(), 4u);

  EmbeddingTable table;
  table.dim = 3;
  for (const auto& item : items) table.vectors[item.item_num] = Eigen::Vector3d(1, 2, double(item.item_num));
  const auto emb = fit_featurizer(FeaturizerKind::Embeddings, FeatureSetId::QLlmsAKey, train, 100, &table);
  const auto em = emb.transform(test);
  EXPECT_EQ(em.rows(0, 2), static_cast<double>(items[20].item_num));
  EXPECT_THROW(fit_featurizer(FeaturizerKind::Embeddings, FeatureSetId::QA, train), Error);
}

TEST(Featurizer, MatrixCsvDump) {
  FeatureMatrix m;
  m.item_nums = {4, 9};
  m.rows.resize(2, 2);
  m.rows << 0.5, 0, -1.25, 1e-20;
  std::ostringstream out;
  write_feature_matrix_csv(out, m);
  EXPECT_EQ(out.str(), "item_num,c0,c1\n4,0.5,0\n9,-1.25,1e-20\n");
}

}  // namespace
}  // namespace itemforge
