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

#include <stdexcept>
#include <string>
#include <string_view>

namespace itemforge {

enum class ErrorKind {
  Io,
  EmptyFile,
  MissingColumn,
  BadLabel,
  InvalidItem,
  DuplicateItemNum,
  DegenerateRange,
  Timeout,
  Transport,
  HttpStatus,
  MalformedResponse,
  MissingLlmAnswers,
  EmptyCorpus,
  RankTooSmall,
  DimensionMismatch,
  DuplicateItem,
  MissingVectorField,
  LengthMismatch,
  Empty,
  Undefined,
  TooFewSamples,
  InvalidArgument,
  BadFormat,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io: return "Io";
    case ErrorKind::EmptyFile: return "EmptyFile";
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::BadLabel: return "BadLabel";
    case ErrorKind::InvalidItem: return "InvalidItem";
    case ErrorKind::DuplicateItemNum: return "DuplicateItemNum";
    case ErrorKind::DegenerateRange: return "DegenerateRange";
    case ErrorKind::Timeout: return "Timeout";
    case ErrorKind::Transport: return "Transport";
    case ErrorKind::HttpStatus: return "HttpStatus";
    case ErrorKind::MalformedResponse: return "MalformedResponse";
    case ErrorKind::MissingLlmAnswers: return "MissingLlmAnswers";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::RankTooSmall: return "RankTooSmall";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::DuplicateItem: return "DuplicateItem";
    case ErrorKind::MissingVectorField: return "MissingVectorField";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::Empty: return "Empty";
    case ErrorKind::Undefined: return "Undefined";
    case ErrorKind::TooFewSamples: return "TooFewSamples";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::BadFormat: return "BadFormat";
  }
  return "Unknown";
}

/// Library-wide exception. `kind()` is stable and is what callers branch on;
/// the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised by query_llm once retries are exhausted on a non-2xx status.
class HttpStatusError : public Error {
 public:
  HttpStatusError(int status, const std::string& message)
      : Error(ErrorKind::HttpStatus, message), status_(status) {}

  int status() const noexcept { return status_; }

 private:
  int status_;
};

}  // namespace itemforge
