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

#include <array>
#include <cstdint>
#include <algorithm>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "itemforge/csv.hpp"
#include "itemforge/error.hpp"
#include "itemforge/text.hpp"

namespace itemforge {

using ItemNum = std::int64_t;

enum class ItemType { Text, Pix };
enum class ExamStep { Step1 = 1, Step2 = 2, Step3 = 3 };
enum class SetRole { Train, Test };
enum class LabelName { Difficulty, ResponseTime };

inline constexpr std::array<char, 10> kOptionLetters{'A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'J'};

inline bool is_option_letter(char c) { return c >= 'A' && c <= 'J'; }

inline std::string_view to_string(ItemType t) { return t == ItemType::Text ? "Text" : "PIX"; }

inline std::string_view to_string(ExamStep s) {
  switch (s) {
    case ExamStep::Step1: return "Step_1";
    case ExamStep::Step2: return "Step_2";
    case ExamStep::Step3: return "Step_3";
  }
  return "";
}

inline std::string_view to_string(LabelName l) {
  return l == LabelName::Difficulty ? "difficulty" : "response_time";
}

inline LabelName parse_label_name(std::string_view s) {
  const auto v = text::to_lower(s);
  if (v == "difficulty") return LabelName::Difficulty;
  if (v == "response_time" || v == "responsetime") return LabelName::ResponseTime;
  throw Error(ErrorKind::InvalidArgument, "unknown label '" + std::string(s) + "'");
}

/// One multiple-choice record. `answers` only holds options that are present.
struct Item {
  ItemNum item_num = 0;
  std::string item_text;
  std::map<char, std::string> answers;
  char answer_key = 'A';
  std::string answer_text;
  ItemType item_type = ItemType::Text;
  ExamStep exam_step = ExamStep::Step1;
  std::optional<double> difficulty;
  std::optional<double> response_time;

  std::optional<double> label(LabelName name) const {
    return name == LabelName::Difficulty ? difficulty : response_time;
  }
};

struct ItemSet {
  std::vector<Item> items;
  SetRole role = SetRole::Train;

  std::size_t size() const { return items.size(); }

  std::vector<double> labels(LabelName name) const {
    std::vector<double> out;
    out.reserve(items.size());
    for (const auto& item : items) {
      auto v = item.label(name);
      if (!v) {
        throw Error(ErrorKind::BadLabel,
                    "item " + std::to_string(item.item_num) + " has no " + std::string(to_string(name)) + " label");
      }
      out.push_back(*v);
    }
    return out;
  }

  bool has_labels(LabelName name) const {
    for (const auto& item : items)
      if (!item.label(name)) return false;
    return !items.empty();
  }
};

/// Throws InvalidItem when an Item invariant does not hold.
inline void validate_item(const Item& item) {
  const auto where = "item " + std::to_string(item.item_num) + ": ";
  if (item.answers.size() < 2) throw Error(ErrorKind::InvalidItem, where + "fewer than two answer options");
  for (const auto& [letter, _] : item.answers)
    if (!is_option_letter(letter)) throw Error(ErrorKind::InvalidItem, where + "option letter outside A..J");
  if (!is_option_letter(item.answer_key))
    throw Error(ErrorKind::InvalidItem, where + "answer key '" + std::string(1, item.answer_key) + "' outside A..J");
  auto it = item.answers.find(item.answer_key);
  if (it == item.answers.end())
    throw Error(ErrorKind::InvalidItem, where + "answer key '" + std::string(1, item.answer_key) + "' is not an option");
  if (text::collapse_whitespace(it->second) != text::collapse_whitespace(item.answer_text))
    throw Error(ErrorKind::InvalidItem, where + "Answer_Text does not match the keyed option");
  if (item.response_time && !(*item.response_time > 0.0))
    throw Error(ErrorKind::InvalidItem, where + "response time must be positive");
}

namespace detail {

inline ItemType parse_item_type(std::string_view raw, const std::string& where) {
  const auto v = text::to_lower(text::trim(raw));
  if (v == "text") return ItemType::Text;
  if (v == "pix") return ItemType::Pix;
  throw Error(ErrorKind::InvalidItem, where + "ItemType '" + std::string(raw) + "' is not Text or PIX");
}

inline ExamStep parse_exam(std::string_view raw, const std::string& where) {
  auto v = text::to_lower(text::trim(raw));
  std::erase_if(v, [](char c) { return c == '_' || c == ' '; });
  if (v == "step1") return ExamStep::Step1;
  if (v == "step2") return ExamStep::Step2;
  if (v == "step3") return ExamStep::Step3;
  throw Error(ErrorKind::InvalidItem, where + "EXAM '" + std::string(raw) + "' is not Step_1..Step_3");
}

}  // namespace detail

/// Parses a delimited item table from a stream. The delimiter is detected
/// from the header line.
inline ItemSet parse_items(std::istream& in, SetRole role, const std::string& source = "<stream>") {
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (text::trim(content).empty()) throw Error(ErrorKind::EmptyFile, source + " is empty");
  if (content.size() >= 3 && content.compare(0, 3, "\xEF\xBB\xBF") == 0) content.erase(0, 3);

  const auto first_line = content.substr(0, content.find('\n'));
  std::istringstream stream(content);
  csv::Reader reader(stream, csv::detect_delimiter(first_line));

  csv::Row header;
  reader.next(header);
  std::map<std::string, std::size_t> columns;
  for (std::size_t i = 0; i < header.size(); ++i) columns.emplace(text::to_lower(text::trim(header[i])), i);
  auto column = [&](std::string_view name) -> std::optional<std::size_t> {
    auto it = columns.find(text::to_lower(name));
    if (it == columns.end()) return std::nullopt;
    return it->second;
  };
  auto require = [&](std::string_view name) {
    auto c = column(name);
    if (!c) throw Error(ErrorKind::MissingColumn, source + ": missing column " + std::string(name));
    return *c;
  };

  const auto c_num = require("ItemNum");
  const auto c_text = require("ItemText");
  std::array<std::optional<std::size_t>, 10> c_answers;
  for (std::size_t i = 0; i < kOptionLetters.size(); ++i) {
    const std::string name = std::string("Answer_") + kOptionLetters[i];
    c_answers[i] = i < 2 ? std::optional<std::size_t>(require(name)) : column(name);
  }
  const auto c_key = require("Answer_Key");
  const auto c_answer_text = require("Answer_Text");
  const auto c_type = require("ItemType");
  const auto c_exam = require("EXAM");
  auto c_difficulty = column("Difficulty");
  auto c_rt = column("Response_Time");
  if (role == SetRole::Train) {
    c_difficulty = require("Difficulty");
    c_rt = require("Response_Time");
  }

  ItemSet set;
  set.role = role;
  std::set<ItemNum> seen;
  csv::Row row;
  std::size_t line = 1;
  while (reader.next(row)) {
    ++line;
    auto cell = [&](std::size_t c) -> std::string_view {
      return c < row.size() ? std::string_view(row[c]) : std::string_view();
    };
    const std::string where = source + " record " + std::to_string(line) + ": ";

    Item item;
    auto num = text::parse_int(cell(c_num));
    if (!num) throw Error(ErrorKind::InvalidItem, where + "ItemNum is not an integer");
    item.item_num = *num;
    if (!seen.insert(item.item_num).second)
      throw Error(ErrorKind::DuplicateItemNum, where + "duplicate ItemNum " + std::to_string(item.item_num));

    item.item_text = std::string(cell(c_text));
    for (std::size_t i = 0; i < kOptionLetters.size(); ++i) {
      if (!c_answers[i]) continue;
      auto v = cell(*c_answers[i]);
      if (text::trim(v).empty()) continue;
      item.answers.emplace(kOptionLetters[i], std::string(v));
    }
    const auto key = text::trim(cell(c_key));
    if (key.size() != 1 || !is_option_letter(static_cast<char>(std::toupper(static_cast<unsigned char>(key[0])))))
      throw Error(ErrorKind::BadLabel, where + "Answer_Key '" + std::string(key) + "' is not a letter in A..J");
    item.answer_key = static_cast<char>(std::toupper(static_cast<unsigned char>(key[0])));
    item.answer_text = std::string(cell(c_answer_text));
    item.item_type = detail::parse_item_type(cell(c_type), where);
    item.exam_step = detail::parse_exam(cell(c_exam), where);

    auto read_label = [&](std::optional<std::size_t> c, const char* name) -> std::optional<double> {
      if (!c) return std::nullopt;
      auto raw = cell(*c);
      if (text::trim(raw).empty()) {
        if (role == SetRole::Train) throw Error(ErrorKind::BadLabel, where + "missing " + name);
        return std::nullopt;
      }
      auto v = text::parse_double(raw);
      if (!v) {
        if (role == SetRole::Train)
          throw Error(ErrorKind::BadLabel, where + name + " '" + std::string(raw) + "' is not numeric");
        return std::nullopt;
      }
      return v;
    };
    item.difficulty = read_label(c_difficulty, "Difficulty");
    item.response_time = read_label(c_rt, "Response_Time");

    validate_item(item);
    set.items.push_back(std::move(item));
  }
  if (set.items.empty()) throw Error(ErrorKind::EmptyFile, source + " has a header but no records");
  return set;
}

inline ItemSet load_items(const std::string& path, SetRole role) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  return parse_items(in, role, path);
}

/// Min-max map of one label onto [0, 1]. Values outside the fitted range map
/// outside [0, 1]; nothing is clamped.
struct LabelScaler {
  LabelName label_name = LabelName::Difficulty;
  double min = 0.0;
  double max = 1.0;

  double scale(double y) const { return (y - min) / (max - min); }
  double unscale(double s) const { return s * (max - min) + min; }
  double range() const { return max - min; }
};

inline LabelScaler fit_scaler(std::span<const double> values, LabelName name) {
  if (values.empty()) throw Error(ErrorKind::DegenerateRange, "no values to fit a scaler");
  auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (!(*hi > *lo)) throw Error(ErrorKind::DegenerateRange, "all values are equal");
  return LabelScaler{name, *lo, *hi};
}

inline double scale(const LabelScaler& s, double y) { return s.scale(y); }
inline double unscale(const LabelScaler& s, double v) { return s.unscale(v); }

struct CategoricalCodes {
  int exam_code = 1;
  int item_type_code = 0;
  int answer_key_code = 0;
};

inline CategoricalCodes encode_categoricals(const Item& item) {
  return CategoricalCodes{
      static_cast<int>(item.exam_step),
      item.item_type == ItemType::Pix ? 1 : 0,
      item.answer_key - 'A',
  };
}

}  // namespace itemforge
