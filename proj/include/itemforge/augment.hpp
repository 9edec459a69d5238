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
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include <httplib.h>
// <resolv.h> defines _res, which collides with Eigen parameter names.
#ifdef _res
#undef _res
#endif
#include <json.hpp>

#include "itemforge/dataset.hpp"
#include "itemforge/error.hpp"
#include "itemforge/text.hpp"

namespace itemforge {

/// One completion-over-HTTP endpoint.
struct LlmEndpointConfig {
  std::string name;
  std::string base_url;
  std::string model_id;
  int max_new_tokens = 64;
  double temperature = 0.0;
  std::chrono::milliseconds timeout{60000};
  int max_retries = 3;
  std::optional<std::string> auth_token;
  /// In-flight request bound for this endpoint.
  int concurrency = 4;
  /// First backoff delay; attempt k waits base * 2^k plus up to 50% jitter.
  std::chrono::milliseconds backoff_base{1000};
};

inline void validate_endpoints(const std::vector<LlmEndpointConfig>& cfgs) {
  std::set<std::string> names;
  for (const auto& c : cfgs) {
    if (c.name.empty()) throw Error(ErrorKind::InvalidArgument, "endpoint without a name");
    if (!names.insert(c.name).second) throw Error(ErrorKind::InvalidArgument, "duplicate endpoint name " + c.name);
    if (c.max_new_tokens < 1) throw Error(ErrorKind::InvalidArgument, c.name + ": max_new_tokens must be >= 1");
    if (c.temperature < 0.0) throw Error(ErrorKind::InvalidArgument, c.name + ": temperature must be >= 0");
    if (c.max_retries < 0) throw Error(ErrorKind::InvalidArgument, c.name + ": max_retries must be >= 0");
    if (c.concurrency < 1) throw Error(ErrorKind::InvalidArgument, c.name + ": concurrency must be >= 1");
  }
}

struct RawAnswer {
  ItemNum item_num = 0;
  std::string llm_name;
  std::string text;
  std::chrono::system_clock::time_point fetched_at;
  int attempt_count = 1;
};

/// An item plus one cleaned answer per configured endpoint, sorted by endpoint name.
struct AugmentedItem {
  Item item;
  std::vector<std::pair<std::string, std::string>> llm_answers;
};

inline std::string clean_answer(std::string_view raw) { return text::collapse_whitespace(raw); }

/// Zero-shot prompt: fixed instruction, the stem, then the present options in
/// letter order as "A.<text>, \nB.<text>".
inline std::string build_prompt(const Item& item) {
  std::string prompt =
      "You are a student taking the USMLE exam. Your task is to answer the following question with one of the "
      "multiple choices. \n\n";
  prompt += item.item_text;
  prompt += "\n\n";
  bool first = true;
  for (const auto& [letter, option] : item.answers) {
    if (!first) prompt += ", \n";
    first = false;
    prompt.push_back(letter);
    prompt.push_back('.');
    prompt += option;
  }
  while (!prompt.empty() && text::is_space(prompt.back())) prompt.pop_back();
  return prompt;
}

inline std::string format_timestamp(std::chrono::system_clock::time_point tp) {
  const std::time_t t = std::chrono::system_clock::to_time_t(tp);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace detail {

struct SplitUrl {
  std::string scheme_host_port;
  std::string path_prefix;
};

inline SplitUrl split_base_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos || url.compare(0, scheme_end, "http") != 0)
    throw Error(ErrorKind::InvalidArgument, "base_url must start with http:// : " + url);
  const auto path_begin = url.find('/', scheme_end + 3);
  SplitUrl out;
  out.scheme_host_port = url.substr(0, path_begin);
  out.path_prefix = path_begin == std::string::npos ? "" : url.substr(path_begin);
  while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
  return out;
}

}  // namespace detail

/// POSTs {model, prompt, max_tokens, temperature} to {base_url}/generate and
/// returns the `text` field of the reply. Transport failures and 5xx replies
/// are retried with exponential backoff; any other non-2xx status is final.
inline RawAnswer query_llm(const std::string& prompt, const LlmEndpointConfig& cfg, ItemNum item_num = 0) {
  const auto url = detail::split_base_url(cfg.base_url);
  httplib::Client client(url.scheme_host_port);
  const auto secs = cfg.timeout.count() / 1000;
  const auto usecs = (cfg.timeout.count() % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  httplib::Headers headers;
  if (cfg.auth_token && !cfg.auth_token->empty()) headers.emplace("Authorization", "Bearer " + *cfg.auth_token);

  const nlohmann::json request = {
      {"model", cfg.model_id},
      {"prompt", prompt},
      {"max_tokens", cfg.max_new_tokens},
      {"temperature", cfg.temperature},
  };
  const std::string body = request.dump();
  const std::string path = url.path_prefix + "/generate";

  std::minstd_rand jitter(static_cast<unsigned>(item_num * 31 + static_cast<ItemNum>(cfg.name.size())));
  const int max_attempts = cfg.max_retries + 1;
  for (int attempt = 1;; ++attempt) {
    const auto started = std::chrono::steady_clock::now();
    auto res = client.Post(path, headers, body, "application/json");
    std::optional<Error> failure;
    if (!res) {
      const auto err = res.error();
      const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                             (err == httplib::Error::Read && std::chrono::steady_clock::now() - started >= cfg.timeout);
      failure = Error(timed_out ? ErrorKind::Timeout : ErrorKind::Transport,
                      cfg.name + ": " + httplib::to_string(err) + " after " + std::to_string(attempt) + " attempt(s)");
    } else if (res->status >= 200 && res->status < 300) {
      auto parsed = nlohmann::json::parse(res->body, nullptr, false);
      if (parsed.is_discarded() || !parsed.is_object() || !parsed.contains("text") || !parsed["text"].is_string())
        throw Error(ErrorKind::MalformedResponse, cfg.name + ": response body lacks a string 'text' field");
      return RawAnswer{item_num, cfg.name, parsed["text"].get<std::string>(), std::chrono::system_clock::now(),
                       attempt};
    } else if (res->status < 500) {
      throw HttpStatusError(res->status, cfg.name + ": HTTP " + std::to_string(res->status));
    } else {
      failure = HttpStatusError(res->status, cfg.name + ": HTTP " + std::to_string(res->status) + " after " +
                                                 std::to_string(attempt) + " attempt(s)");
    }
    if (attempt >= max_attempts) {
      if (failure->kind() == ErrorKind::HttpStatus) throw HttpStatusError(res->status, failure->what());
      throw *failure;
    }
    const auto delay = cfg.backoff_base * (1LL << std::min(attempt - 1, 20));
    const auto extra = std::uniform_int_distribution<long long>(0, delay.count() / 2)(jitter);
    std::this_thread::sleep_for(delay + std::chrono::milliseconds(extra));
  }
}

/// Append-only JSON-lines store of raw answers. Lookups key on
/// (item_num, llm_name, model_id, max_tokens, temperature); the last record
/// for a key wins.
class AugmentCache {
 public:
  using Key = std::tuple<ItemNum, std::string, std::string, int, double>;

  explicit AugmentCache(std::string path) : path_(std::move(path)) {
    std::ifstream in(path_);
    if (!in) return;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (text::trim(line).empty()) continue;
      auto rec = nlohmann::json::parse(line, nullptr, false);
      // A torn final line from an interrupted writer is skipped.
      if (rec.is_discarded()) continue;
      try {
        Key key{rec.at("item_num").get<ItemNum>(), rec.at("llm_name").get<std::string>(),
                rec.at("model_id").get<std::string>(), rec.at("max_tokens").get<int>(),
                rec.at("temperature").get<double>()};
        entries_[key] = rec.at("raw_text").get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::BadFormat, path_ + " line " + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  static Key key_for(ItemNum item_num, const LlmEndpointConfig& cfg) {
    return Key{item_num, cfg.name, cfg.model_id, cfg.max_new_tokens, cfg.temperature};
  }

  std::optional<std::string> find(ItemNum item_num, const LlmEndpointConfig& cfg) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(key_for(item_num, cfg));
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  /// Writes one whole line and flushes before returning.
  void append(const RawAnswer& answer, const LlmEndpointConfig& cfg) {
    const nlohmann::json rec = {
        {"item_num", answer.item_num},     {"llm_name", cfg.name},
        {"model_id", cfg.model_id},        {"max_tokens", cfg.max_new_tokens},
        {"temperature", cfg.temperature},  {"raw_text", answer.text},
        {"fetched_at", format_timestamp(answer.fetched_at)},
    };
    const std::string line = rec.dump() + "\n";
    std::lock_guard lock(mu_);
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot append to " + path_);
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    out.flush();
    if (!out) throw Error(ErrorKind::Io, "write failed on " + path_);
    entries_[key_for(answer.item_num, cfg)] = answer.text;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  mutable std::mutex mu_;
  std::map<Key, std::string> entries_;
};

struct AugmentOptions {
  /// When false, a cache miss raises MissingLlmAnswers instead of a request.
  bool allow_network = true;
};

struct AugmentResult {
  std::vector<AugmentedItem> items;
  std::size_t fetched = 0;
  std::size_t cached = 0;
};

namespace detail {

/// Same error kind (and HTTP status) with a context prefix on the message.
[[noreturn]] inline void rethrow_annotated(const Error& e, const std::string& prefix) {
  if (auto* http = dynamic_cast<const HttpStatusError*>(&e)) throw HttpStatusError(http->status(), prefix + http->what());
  throw Error(e.kind(), prefix + e.what());
}

}  // namespace detail

/// Attaches one cleaned answer per endpoint to each item, serving cache hits
/// first and fetching misses concurrently (bounded per endpoint). Each fetched
/// answer is appended to the cache as soon as it arrives, so a failure leaves
/// every earlier success on disk.
inline AugmentResult augment_dataset(const std::vector<Item>& items, const std::vector<LlmEndpointConfig>& cfgs,
                                     const std::string& cache_path, const AugmentOptions& options = {}) {
  validate_endpoints(cfgs);
  AugmentCache cache(cache_path);
  AugmentResult result;

  // raw[i][e] holds the uncleaned answer of item i from endpoint e.
  std::vector<std::vector<std::optional<std::string>>> raw(items.size(),
                                                           std::vector<std::optional<std::string>>(cfgs.size()));
  std::vector<std::vector<std::size_t>> misses(cfgs.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (std::size_t e = 0; e < cfgs.size(); ++e) {
      if (auto hit = cache.find(items[i].item_num, cfgs[e])) {
        raw[i][e] = std::move(*hit);
        ++result.cached;
      } else {
        misses[e].push_back(i);
      }
    }
  }

  std::size_t total_misses = 0;
  for (const auto& m : misses) total_misses += m.size();
  if (total_misses > 0 && !options.allow_network) {
    for (std::size_t e = 0; e < cfgs.size(); ++e)
      if (!misses[e].empty())
        throw Error(ErrorKind::MissingLlmAnswers, std::to_string(total_misses) + " answer(s) missing from cache " +
                                                      cache_path + ", first: item " +
                                                      std::to_string(items[misses[e].front()].item_num) + " / " +
                                                      cfgs[e].name);
  }

  std::mutex error_mu;
  std::exception_ptr first_error;
  std::atomic<bool> failed{false};
  std::atomic<std::size_t> fetched{0};
  std::vector<std::atomic<std::size_t>> cursor(cfgs.size());
  std::vector<std::thread> workers;
  for (std::size_t e = 0; e < cfgs.size(); ++e) {
    if (misses[e].empty()) continue;
    const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(cfgs[e].concurrency), misses[e].size());
    for (std::size_t w = 0; w < n_workers; ++w) {
      workers.emplace_back([&, e] {
        while (!failed.load()) {
          const auto slot = cursor[e].fetch_add(1);
          if (slot >= misses[e].size()) return;
          const auto i = misses[e][slot];
          const auto& item = items[i];
          try {
            auto answer = query_llm(build_prompt(item), cfgs[e], item.item_num);
            cache.append(answer, cfgs[e]);
            raw[i][e] = std::move(answer.text);
            fetched.fetch_add(1);
          } catch (const Error& err) {
            std::lock_guard lock(error_mu);
            if (!first_error) {
              try {
                detail::rethrow_annotated(err, "item " + std::to_string(item.item_num) + ", llm " + cfgs[e].name + ": ");
              } catch (...) {
                first_error = std::current_exception();
              }
            }
            failed.store(true);
          } catch (...) {
            std::lock_guard lock(error_mu);
            if (!first_error) first_error = std::current_exception();
            failed.store(true);
          }
        }
      });
    }
  }
  for (auto& t : workers) t.join();
  if (first_error) std::rethrow_exception(first_error);
  result.fetched = fetched.load();

  std::vector<std::size_t> by_name(cfgs.size());
  std::iota(by_name.begin(), by_name.end(), std::size_t{0});
  std::sort(by_name.begin(), by_name.end(), [&](std::size_t a, std::size_t b) { return cfgs[a].name < cfgs[b].name; });
  result.items.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    AugmentedItem aug{items[i], {}};
    for (std::size_t e : by_name) aug.llm_answers.emplace_back(cfgs[e].name, clean_answer(*raw[i][e]));
    result.items.push_back(std::move(aug));
  }
  return result;
}

/// Items paired with no LLM answers, for feature sets that do not use them.
inline std::vector<AugmentedItem> without_llm_answers(const std::vector<Item>& items) {
  std::vector<AugmentedItem> out;
  out.reserve(items.size());
  for (const auto& item : items) out.push_back(AugmentedItem{item, {}});
  return out;
}

}  // namespace itemforge
