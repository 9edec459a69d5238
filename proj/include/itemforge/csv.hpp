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

#include <istream>
#include <string>
#include <vector>

namespace itemforge::csv {

using Row = std::vector<std::string>;

/// Picks tab when the header line holds one, comma otherwise.
inline char detect_delimiter(const std::string& header_line) {
  return header_line.find('\t') != std::string::npos ? '\t' : ',';
}

/// RFC 4180 style reader: quoted fields may hold delimiters, doubled quotes and
/// line breaks. CRLF line endings are accepted. Blank lines are skipped.
class Reader {
 public:
  Reader(std::istream& in, char delimiter) : in_(in), delim_(delimiter) {}

  bool next(Row& row) {
    row.clear();
    std::string field;
    bool in_quotes = false;
    bool any = false;
    bool field_started = false;
    int ch;
    while ((ch = in_.get()) != std::char_traits<char>::eof()) {
      any = true;
      const char c = static_cast<char>(ch);
      if (in_quotes) {
        if (c == '"') {
          if (in_.peek() == '"') {
            in_.get();
            field.push_back('"');
          } else {
            in_quotes = false;
          }
        } else {
          field.push_back(c);
        }
        continue;
      }
      if (c == '"' && !field_started) {
        in_quotes = true;
        field_started = true;
      } else if (c == delim_) {
        row.push_back(std::move(field));
        field.clear();
        field_started = false;
      } else if (c == '\n' || c == '\r') {
        if (c == '\r' && in_.peek() == '\n') in_.get();
        if (row.empty() && !field_started && field.empty()) {
          any = false;
          continue;
        }
        row.push_back(std::move(field));
        return true;
      } else {
        field.push_back(c);
        field_started = true;
      }
    }
    if (!any) return false;
    row.push_back(std::move(field));
    return true;
  }

 private:
  std::istream& in_;
  char delim_;
};

}  // namespace itemforge::csv
