#pragma once

// Per-token conditional log-probabilities for label continuations, served
// either by a remote inference endpoint or by a deterministic mock table.
//
// Wire protocol (POST, default path /v1/score):
//   request:  {"model": str, "prompt": str, "continuation": str}
//   response: {"tokens": [str...], "logprobs": [number...]}
// where tokens is the backend's tokenization of the continuation and
// logprobs[i] = ln P(tokens[i] | prompt, tokens[0..i)).

#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "ncc/core_types.hpp"
#include "ncc/detail/parallel.hpp"

namespace ncc {

class BackendUnreachable : public BackendError {
 public:
  explicit BackendUnreachable(const std::string& what) : BackendError("BackendUnreachable", what) {}
};
class ProtocolError : public BackendError {
 public:
  explicit ProtocolError(const std::string& what) : BackendError("ProtocolError", what) {}
};
class TokenMismatch : public BackendError {
 public:
  explicit TokenMismatch(const std::string& what) : BackendError("TokenMismatch", what) {}
};

// ---------------------------------------------------------------------------
// Prompt hashing
// ---------------------------------------------------------------------------

/// 64-bit FNV-1a over the UTF-8 bytes. Stable across processes and platforms.
constexpr std::uint64_t prompt_hash(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hash_to_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::uint64_t hash_from_hex(const std::string& s) {
  if (s.empty() || s.size() > 16) throw InvalidArgument("bad prompt_hash '" + s + "'");
  std::uint64_t v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (ec != std::errc{} || end != s.data() + s.size()) throw InvalidArgument("bad prompt_hash '" + s + "'");
  return v;
}

// ---------------------------------------------------------------------------
// Mock score table
// ---------------------------------------------------------------------------

/// Offline score oracle keyed by (prompt hash, token sequence).
class MockScoreTable {
 public:
  using Key = std::pair<std::uint64_t, std::vector<std::string>>;

  explicit MockScoreTable(double default_logprob = -20.0) : default_logprob_(default_logprob) {
    if (!(default_logprob <= 0.0)) throw InvalidArgument("default_logprob must be <= 0");
  }

  double default_logprob() const noexcept { return default_logprob_; }
  std::size_t size() const noexcept { return entries_.size(); }

  void add(std::uint64_t hash, std::vector<std::string> tokens, std::vector<double> logprobs) {
    if (tokens.size() != logprobs.size())
      throw LengthMismatch("mock entry has " + std::to_string(tokens.size()) + " tokens but " +
                           std::to_string(logprobs.size()) + " logprobs");
    for (double lp : logprobs)
      if (!(lp <= 0.0)) throw InvalidArgument("mock logprob must be <= 0");
    entries_[Key{hash, std::move(tokens)}] = std::move(logprobs);
  }

  void add(std::string_view prompt, std::vector<std::string> tokens, std::vector<double> logprobs) {
    add(prompt_hash(prompt), std::move(tokens), std::move(logprobs));
  }

  /// Copies every entry and tokenization of `other`; its values win on overlap.
  void merge(const MockScoreTable& other) {
    for (const auto& [key, lps] : other.entries_) entries_[key] = lps;
    for (const auto& [text, toks] : other.tokenizations_) tokenizations_[text] = toks;
  }

  /// Overrides the default whitespace tokenization for one continuation text.
  void set_tokenization(std::string text, std::vector<std::string> tokens) {
    tokenizations_[std::move(text)] = std::move(tokens);
  }

  const std::vector<double>* find(std::uint64_t hash, const std::vector<std::string>& tokens) const {
    auto it = entries_.find(Key{hash, tokens});
    return it == entries_.end() ? nullptr : &it->second;
  }

  /// Mock tokenizer: explicit override if present, otherwise split on spaces
  /// keeping each word's leading space (" very positive" -> " very", " positive").
  std::vector<std::string> tokenize(std::string_view text) const {
    if (auto it = tokenizations_.find(std::string(text)); it != tokenizations_.end())
      return it->second;
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
      std::size_t start = i;
      while (i < text.size() && text[i] == ' ') ++i;
      while (i < text.size() && text[i] != ' ') ++i;
      if (i > start && text.find_first_not_of(' ', start) < i) out.emplace_back(text.substr(start, i - start));
    }
    return out;
  }

  friend void to_json(nlohmann::json& j, const MockScoreTable& t) {
    j = nlohmann::json::object();
    j["default_logprob"] = t.default_logprob_;
    j["tokenizations"] = t.tokenizations_;
    auto& entries = j["entries"] = nlohmann::json::array();
    for (const auto& [key, lps] : t.entries_)
      entries.push_back({{"prompt_hash", hash_to_hex(key.first)}, {"tokens", key.second}, {"logprobs", lps}});
  }

  /// Accepts either the object form written by to_json or a bare array of
  /// {prompt_hash | prompt, tokens, logprobs} records.
  friend void from_json(const nlohmann::json& j, MockScoreTable& t) {
    const nlohmann::json* records = &j;
    if (j.is_object()) {
      t = MockScoreTable(j.value("default_logprob", -20.0));
      if (j.contains("tokenizations"))
        for (const auto& [text, toks] : j.at("tokenizations").items())
          t.set_tokenization(text, toks.get<std::vector<std::string>>());
      records = &j.at("entries");
    } else {
      t = MockScoreTable();
    }
    for (const auto& r : *records) {
      std::uint64_t h = r.contains("prompt_hash") ? hash_from_hex(r.at("prompt_hash").get<std::string>())
                                                  : prompt_hash(r.at("prompt").get<std::string>());
      t.add(h, r.at("tokens").get<std::vector<std::string>>(), r.at("logprobs").get<std::vector<double>>());
    }
  }

  static MockScoreTable load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open mock table '" + path + "'");
    return nlohmann::json::parse(in).get<MockScoreTable>();
  }

 private:
  double default_logprob_;
  std::map<Key, std::vector<double>> entries_;
  std::map<std::string, std::vector<std::string>> tokenizations_;
};

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

struct ScorerBackend {
  enum class Kind { REMOTE, MOCK };
  Kind kind = Kind::MOCK;
  std::string endpoint;           // REMOTE: scheme://host[:port][/path]
  std::string path = "/v1/score"; // used when endpoint has no path
  std::string model_id;
  std::chrono::milliseconds timeout{30000};
  int max_retries = 3;            // total attempts
  std::chrono::milliseconds initial_backoff{500};
  std::size_t max_in_flight = 8;
  std::string bearer_token;
  std::shared_ptr<const MockScoreTable> mock_table;

  void validate() const {
    if (kind == Kind::REMOTE && endpoint.empty()) throw InvalidArgument("remote backend requires an endpoint");
    if (kind == Kind::MOCK && !mock_table) throw InvalidArgument("mock backend requires a score table");
    if (max_retries < 1) throw InvalidArgument("max_retries must be >= 1");
    if (max_in_flight < 1) throw InvalidArgument("max_in_flight must be >= 1");
  }
};

struct ContinuationScore {
  std::vector<double> logprobs;
  bool imputed = false;
};

/// A scoring client. Implementations must be safe for concurrent use.
class Scorer {
 public:
  virtual ~Scorer() = default;

  /// Backend tokenization of `text` when it directly follows `prompt`.
  virtual std::vector<std::string> tokenize(std::string_view prompt, std::string_view text) = 0;

  /// One conditional logprob per continuation token.
  virtual ContinuationScore score(std::string_view prompt, std::span<const std::string> tokens) = 0;

  virtual std::size_t max_in_flight() const { return 1; }
};

class MockScorer final : public Scorer {
 public:
  explicit MockScorer(std::shared_ptr<const MockScoreTable> table) : table_(std::move(table)) {
    if (!table_) throw InvalidArgument("mock backend requires a score table");
  }

  std::vector<std::string> tokenize(std::string_view, std::string_view text) override {
    return table_->tokenize(text);
  }

  ContinuationScore score(std::string_view prompt, std::span<const std::string> tokens) override {
    if (prompt.empty()) throw InvalidArgument("prompt is empty");
    if (tokens.empty()) throw InvalidArgument("continuation has no tokens");
    const auto h = prompt_hash(prompt);
    {
      std::lock_guard lock(mu_);
      ++calls_[h];
    }
    ++total_calls_;
    std::vector<std::string> key(tokens.begin(), tokens.end());
    if (const auto* lps = table_->find(h, key)) return {*lps, false};
    return {std::vector<double>(tokens.size(), table_->default_logprob()), true};
  }

  std::size_t total_calls() const noexcept { return total_calls_; }
  std::size_t calls_for(std::string_view prompt) const {
    std::lock_guard lock(mu_);
    auto it = calls_.find(prompt_hash(prompt));
    return it == calls_.end() ? 0 : it->second;
  }

  const MockScoreTable& table() const noexcept { return *table_; }

 private:
  std::shared_ptr<const MockScoreTable> table_;
  mutable std::mutex mu_;
  std::unordered_map<std::uint64_t, std::size_t> calls_;
  std::atomic<std::size_t> total_calls_{0};
};

namespace detail {

struct ParsedEndpoint {
  std::string base;  // scheme://host[:port]
  std::string path;
};

inline ParsedEndpoint parse_endpoint(const std::string& endpoint, const std::string& default_path) {
  auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos) throw InvalidArgument("endpoint needs a scheme: '" + endpoint + "'");
  auto path_start = endpoint.find('/', scheme_end + 3);
  if (path_start == std::string::npos || path_start + 1 == endpoint.size())
    return {endpoint.substr(0, path_start), default_path};
  return {endpoint.substr(0, path_start), endpoint.substr(path_start)};
}

}  // namespace detail

class RemoteScorer final : public Scorer {
 public:
  explicit RemoteScorer(ScorerBackend cfg)
      : cfg_(std::move(cfg)),
        ep_(detail::parse_endpoint(cfg_.endpoint, cfg_.path)),
        slots_(static_cast<std::ptrdiff_t>(std::min<std::size_t>(cfg_.max_in_flight, 1024))) {
    cfg_.validate();
  }

  std::vector<std::string> tokenize(std::string_view prompt, std::string_view text) override {
    auto [tokens, logprobs] = post(prompt, text);
    (void)logprobs;
    return tokens;
  }

  ContinuationScore score(std::string_view prompt, std::span<const std::string> tokens) override {
    if (prompt.empty()) throw InvalidArgument("prompt is empty");
    if (tokens.empty()) throw InvalidArgument("continuation has no tokens");
    std::string text;
    for (const auto& t : tokens) text += t;
    auto [got, logprobs] = post(prompt, text);
    if (!std::equal(got.begin(), got.end(), tokens.begin(), tokens.end()))
      throw TokenMismatch("backend tokenized '" + text + "' into " + std::to_string(got.size()) +
                          " tokens that differ from the requested " + std::to_string(tokens.size()));
    return {std::move(logprobs), false};
  }

  std::size_t max_in_flight() const override { return cfg_.max_in_flight; }

 private:
  std::pair<std::vector<std::string>, std::vector<double>> post(std::string_view prompt, std::string_view text) {
    nlohmann::json req{{"model", cfg_.model_id}, {"prompt", prompt}, {"continuation", text}};
    const std::string body = req.dump();

    std::string last_error;
    auto backoff = cfg_.initial_backoff;
    for (int attempt = 0; attempt < cfg_.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
      httplib::Result res;
      {
        slots_.acquire();
        httplib::Client cli(ep_.base);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg_.timeout - secs);
        cli.set_connection_timeout(secs.count(), usecs.count());
        cli.set_read_timeout(secs.count(), usecs.count());
        cli.set_write_timeout(secs.count(), usecs.count());
        if (!cfg_.bearer_token.empty()) cli.set_bearer_token_auth(cfg_.bearer_token);
        res = cli.Post(ep_.path, body, "application/json");
        slots_.release();
      }
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) throw ProtocolError("HTTP " + std::to_string(res->status) + ": " + res->body);
      return parse_response(res->body);
    }
    throw BackendUnreachable(cfg_.endpoint + " failed after " + std::to_string(cfg_.max_retries) +
                             " attempts: " + last_error);
  }

  static std::pair<std::vector<std::string>, std::vector<double>> parse_response(const std::string& body) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw ProtocolError(std::string("response is not JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("tokens") || !j.contains("logprobs") || !j["tokens"].is_array() ||
        !j["logprobs"].is_array())
      throw ProtocolError("response lacks per-token 'tokens' and 'logprobs'");
    std::vector<std::string> tokens;
    std::vector<double> logprobs;
    for (const auto& t : j["tokens"]) {
      if (!t.is_string()) throw ProtocolError("non-string token in response");
      tokens.push_back(t.get<std::string>());
    }
    for (const auto& lp : j["logprobs"]) {
      if (!lp.is_number()) throw ProtocolError("missing logprob in response");
      double v = lp.get<double>();
      if (!(v <= 0.0) || std::isnan(v)) throw ProtocolError("logprob " + lp.dump() + " is not <= 0");
      logprobs.push_back(v);
    }
    if (tokens.size() != logprobs.size())
      throw ProtocolError("response has " + std::to_string(tokens.size()) + " tokens but " +
                          std::to_string(logprobs.size()) + " logprobs");
    return {std::move(tokens), std::move(logprobs)};
  }

  ScorerBackend cfg_;
  detail::ParsedEndpoint ep_;
  std::counting_semaphore<1024> slots_;
};

inline std::unique_ptr<Scorer> make_scorer(const ScorerBackend& backend) {
  backend.validate();
  if (backend.kind == ScorerBackend::Kind::MOCK) return std::make_unique<MockScorer>(backend.mock_table);
  return std::make_unique<RemoteScorer>(backend);
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

inline std::vector<double> score_continuation(Scorer& scorer, std::string_view prompt,
                                              std::span<const std::string> continuation_tokens) {
  return scorer.score(prompt, continuation_tokens).logprobs;
}

/// Log of the product of token probabilities.
inline double raw_label_logprob(const ScoredLabel& scored) {
  return std::accumulate(scored.token_logprobs.begin(), scored.token_logprobs.end(), 0.0);
}

namespace detail {

template <typename E>
[[noreturn]] void rethrow_as(const E&, const std::string& msg) {
  throw E(msg);
}

[[noreturn]] inline void rethrow_annotated(std::size_t label_index) {
  const std::string where = "label " + std::to_string(label_index) + ": ";
  try {
    throw;
  } catch (const BackendUnreachable& e) {
    rethrow_as(e, where + e.what());
  } catch (const ProtocolError& e) {
    rethrow_as(e, where + e.what());
  } catch (const TokenMismatch& e) {
    rethrow_as(e, where + e.what());
  }
}

}  // namespace detail

/// One ScoredLabel per label in LabelSet order. Requests may run
/// concurrently up to `parallelism`; output order is always label order.
inline std::vector<ScoredLabel> score_label_set(Scorer& scorer, std::string_view prompt, const LabelSet& labels,
                                                std::size_t parallelism = 1) {
  std::vector<ScoredLabel> out(labels.size());
  detail::parallel_for(labels.size(), parallelism, [&](std::size_t i) {
    const Label& label = labels[i];
    try {
      auto res = scorer.score(prompt, label.tokens);
      if (res.logprobs.size() != label.n_tokens())
        throw ProtocolError("expected " + std::to_string(label.n_tokens()) + " logprobs, got " +
                            std::to_string(res.logprobs.size()));
      out[i] = ScoredLabel{label.index, std::move(res.logprobs), res.imputed};
    } catch (const BackendError&) {
      detail::rethrow_annotated(label.index);
    }
  });
  return out;
}

inline std::size_t count_imputed(const std::vector<ScoredLabel>& scored) {
  std::size_t n = 0;
  for (const auto& s : scored) n += s.imputed ? 1 : 0;
  return n;
}

}  // namespace ncc
