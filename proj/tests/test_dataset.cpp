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

#include <random>
#include <set>
#include <sstream>

#include "itemforge/dataset.hpp"
#include "test_support.hpp"

namespace itemforge {
namespace {

using testing::items_csv;
using testing::make_item;

ItemSet parse(const std::string& csv, SetRole role = SetRole::Train) {
  std::istringstream in(csv);
  return parse_items(in, role);
}

Error parse_error(const std::string& csv, SetRole role = SetRole::Train) {
  try {
    parse(csv, role);
  } catch (const Error& e) {
    return e;
  }
  ADD_FAILURE() << "expected an error";
  return Error(ErrorKind::Io, "none");
}

TEST(Dataset, MinimalRow) {
  auto set = parse(items_csv({make_item(7, "Q?", {"x", "y"}, 'A', 0.2, 40.0)}));
  ASSERT_EQ(set.size(), 1u);
  const auto& item = set.items[0];
  EXPECT_EQ(item.item_num, 7);
  EXPECT_EQ(item.item_text, "Q?");
  EXPECT_EQ(item.answers.size(), 2u);
  EXPECT_EQ(item.answer_key, 'A');
  EXPECT_EQ(item.answer_text, "x");
  EXPECT_EQ(*item.difficulty, 0.2);
  EXPECT_EQ(*item.response_time, 40.0);
  EXPECT_EQ(set.role, SetRole::Train);
}

TEST(Dataset, FullSizeTrainingFile) {
  testing::TempDir dir;
  testing::write_text(dir.file("train.csv"), items_csv(testing::random_items(466, 2)));
  const auto set = load_items(dir.file("train.csv"), SetRole::Train);
  EXPECT_EQ(set.size(), 466u);
  EXPECT_EQ(set.role, SetRole::Train);
  const auto rt = set.labels(LabelName::ResponseTime);
  const auto s = fit_scaler(rt, LabelName::ResponseTime);
  for (double v : rt) {
    EXPECT_GE(s.scale(v), 0.0);
    EXPECT_LE(s.scale(v), 1.0);
  }
}

TEST(Dataset, QuotedFieldsAndTabs) {
  auto item = make_item(1, "A stem, with \"quotes\"\nand a newline", {"opt, one", "two"}, 'B');
  auto comma = parse(items_csv({item}));
  EXPECT_EQ(comma.items[0].item_text, item.item_text);
  EXPECT_EQ(comma.items[0].answers.at('A'), "opt, one");

  auto tab = parse(items_csv({item}, '\t'));
  EXPECT_EQ(tab.items[0].item_text, item.item_text);
  EXPECT_EQ(tab.items[0].answer_text, "two");
}

TEST(Dataset, HeaderIsCaseInsensitive) {
  const std::string csv =
      "itemnum,ITEMTEXT,answer_a,answer_b,answer_key,answer_text,itemtype,exam,difficulty,response_time\n"
      "3,stem,x,y,B,y,PIX,Step_3,-0.4,55\n";
  auto set = parse(csv);
  EXPECT_EQ(set.items[0].item_type, ItemType::Pix);
  EXPECT_EQ(set.items[0].exam_step, ExamStep::Step3);
  EXPECT_EQ(*set.items[0].difficulty, -0.4);
}

TEST(Dataset, MissingOptionCellsAreAbsent) {
  auto set = parse(items_csv({make_item(1, "s", {"a", "b", "c"}, 'C')}));
  EXPECT_EQ(set.items[0].answers.size(), 3u);
  EXPECT_FALSE(set.items[0].answers.contains('D'));
}

TEST(Dataset, PreservesOrderAndCount) {
  auto items = testing::random_items(37, 5);
  auto set = parse(items_csv(items));
  ASSERT_EQ(set.size(), items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    EXPECT_EQ(set.items[i].item_num, items[i].item_num);
    EXPECT_EQ(set.items[i].item_text, items[i].item_text);
  }
}

TEST(Dataset, Errors) {
  EXPECT_EQ(parse_error("").kind(), ErrorKind::EmptyFile);
  EXPECT_EQ(parse_error(items_csv({})).kind(), ErrorKind::EmptyFile);

  const auto no_exam = "ItemNum,ItemText,Answer_A,Answer_B,Answer_Key,Answer_Text,ItemType,Difficulty,Response_Time\n";
  auto e = parse_error(no_exam);
  EXPECT_EQ(e.kind(), ErrorKind::MissingColumn);
  EXPECT_NE(std::string(e.what()).find("EXAM"), std::string::npos);

  auto bad_key = make_item(1, "s", {"a", "b"}, 'A');
  auto csv = items_csv({bad_key});
  csv.replace(csv.find("\"A\",\"a\""), 7, "\"K\",\"a\"");
  EXPECT_EQ(parse_error(csv).kind(), ErrorKind::BadLabel);

  auto unkeyed = items_csv({make_item(1, "s", {"a", "b"}, 'A')});
  unkeyed.replace(unkeyed.find("\"A\",\"a\""), 7, "\"D\",\"a\"");
  EXPECT_EQ(parse_error(unkeyed).kind(), ErrorKind::InvalidItem);

  EXPECT_EQ(parse_error(items_csv({make_item(1, "s", {"a", "b"}, 'A'), make_item(1, "t", {"a", "b"}, 'B')})).kind(),
            ErrorKind::DuplicateItemNum);

  auto non_numeric = items_csv({make_item(1, "s", {"a", "b"}, 'A', 0.5, 30.0)});
  non_numeric.replace(non_numeric.rfind("\"30\""), 4, "\"fast\"");
  EXPECT_EQ(parse_error(non_numeric).kind(), ErrorKind::BadLabel);

  EXPECT_EQ(parse_error(items_csv({make_item(1, "s", {"a", "b"}, 'A', 0.5, std::nullopt)})).kind(), ErrorKind::BadLabel);
  EXPECT_EQ(parse_error(items_csv({make_item(1, "s", {"a", "b"}, 'A', 0.5, -3.0)})).kind(), ErrorKind::InvalidItem);

  auto mismatched = make_item(1, "s", {"a", "b"}, 'A');
  mismatched.answer_text = "b";
  EXPECT_EQ(parse_error(items_csv({mismatched})).kind(), ErrorKind::InvalidItem);
}

TEST(Dataset, AnswerTextComparedAfterWhitespaceNormalization) {
  auto item = make_item(1, "s", {"two  words", "b"}, 'A');
  item.answer_text = " two words\n";
  EXPECT_NO_THROW(parse(items_csv({item})));
}

TEST(Dataset, TestRoleAllowsMissingLabels) {
  auto set = parse(items_csv({make_item(1, "s", {"a", "b"}, 'A', std::nullopt, std::nullopt)}), SetRole::Test);
  EXPECT_FALSE(set.items[0].difficulty);
  EXPECT_FALSE(set.has_labels(LabelName::Difficulty));

  const std::string unlabeled_header =
      "ItemNum,ItemText,Answer_A,Answer_B,Answer_Key,Answer_Text,ItemType,EXAM\n9,s,a,b,A,a,Text,Step_1\n";
  EXPECT_EQ(parse(unlabeled_header, SetRole::Test).size(), 1u);
  EXPECT_EQ(parse_error(unlabeled_header, SetRole::Train).kind(), ErrorKind::MissingColumn);
}

TEST(Dataset, LoadItemsFromFile) {
  testing::TempDir dir;
  EXPECT_THROW(load_items(dir.file("absent.csv"), SetRole::Train), Error);
  testing::write_text(dir.file("train.csv"), items_csv(testing::random_items(12, 1)));
  EXPECT_EQ(load_items(dir.file("train.csv"), SetRole::Train).size(), 12u);
}

TEST(LabelScaler, FitScaleUnscale) {
  const std::vector<double> v{10, 20, 30};
  auto s = fit_scaler(v, LabelName::ResponseTime);
  EXPECT_EQ(s.min, 10.0);
  EXPECT_EQ(s.max, 30.0);
  EXPECT_EQ(scale(s, 10), 0.0);
  EXPECT_EQ(scale(s, 30), 1.0);
  EXPECT_DOUBLE_EQ(scale(s, 25), 0.75);
  EXPECT_DOUBLE_EQ(unscale(s, 0.75), 25.0);
  EXPECT_EQ(unscale(s, 0.0), 10.0);
  EXPECT_NEAR(unscale(s, scale(s, 17.3)), 17.3, 17.3 * 1e-12);
  // Values outside the fitted range are not clamped.
  EXPECT_DOUBLE_EQ(scale(s, 40), 1.5);
  EXPECT_DOUBLE_EQ(scale(s, 0), -0.5);

  const std::vector<double> flat{0.3, 0.3, 0.3};
  try {
    fit_scaler(flat, LabelName::Difficulty);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateRange);
  }
}

TEST(LabelScaler, TrainingLabelsSpanUnitInterval) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto items = testing::random_items(20 + rng() % 40, rng());
    ItemSet set{items, SetRole::Train};
    for (auto label : {LabelName::Difficulty, LabelName::ResponseTime}) {
      const auto y = set.labels(label);
      const auto s = fit_scaler(y, label);
      double lo = 1.0, hi = 0.0;
      for (double v : y) {
        const double t = s.scale(v);
        EXPECT_GE(t, 0.0);
        EXPECT_LE(t, 1.0);
        lo = std::min(lo, t);
        hi = std::max(hi, t);
        EXPECT_NEAR(s.unscale(t), v, std::abs(v) * 1e-12 + 1e-300);
      }
      EXPECT_EQ(lo, 0.0);
      EXPECT_EQ(hi, 1.0);
    }
  }
}

TEST(LabelScaler, RoundTripIsIdentity) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  for (int i = 0; i < 2000; ++i) {
    const double a = u(rng), b = u(rng);
    if (a == b) continue;
    const LabelScaler s{LabelName::Difficulty, std::min(a, b), std::max(a, b)};
    const double y = u(rng);
    EXPECT_NEAR(s.unscale(s.scale(y)), y, std::abs(y) * 1e-12 + 1e-9 * s.range() * 1e-3);
  }
}

TEST(Categoricals, Encoding) {
  auto item = make_item(1, "s", {"a", "b", "c", "d"}, 'D');
  item.exam_step = ExamStep::Step2;
  item.item_type = ItemType::Pix;
  const auto codes = encode_categoricals(item);
  EXPECT_EQ(codes.exam_code, 2);
  EXPECT_EQ(codes.item_type_code, 1);
  EXPECT_EQ(codes.answer_key_code, 3);

  std::set<int> keys;
  for (char k : kOptionLetters) {
    auto it = make_item(1, "s", {"a", "b", "c", "d", "e", "f", "g", "h", "i", "j"}, k);
    keys.insert(encode_categoricals(it).answer_key_code);
  }
  EXPECT_EQ(keys.size(), 10u);
  EXPECT_EQ(*keys.begin(), 0);
  EXPECT_EQ(*keys.rbegin(), 9);
}

}  // namespace
}  // namespace itemforge
