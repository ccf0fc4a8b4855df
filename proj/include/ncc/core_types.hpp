#pragma once

// Shared data model: labels, label sets, examples, per-token scores and
// calibration state. Everything here is immutable after construction.

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

namespace ncc {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Base of every error raised by the library. `kind()` is a stable
/// machine-readable name used in reports and CLI diagnostics.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define NCC_DEFINE_ERROR(Name)                                     \
  class Name : public Error {                                      \
   public:                                                         \
    explicit Name(const std::string& what) : Error(#Name, what) {} \
  }

NCC_DEFINE_ERROR(DuplicateLabel);
NCC_DEFINE_ERROR(EmptyTokenization);
NCC_DEFINE_ERROR(InvalidArgument);
NCC_DEFINE_ERROR(LengthMismatch);

/// Family of errors that mean "the scoring backend could not deliver".
class BackendError : public Error {
 public:
  using Error::Error;
};

#undef NCC_DEFINE_ERROR

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

struct Label {
  std::string text;
  /// Backend tokenization of " " + text, in backend order.
  std::vector<std::string> tokens;
  std::size_t index = 0;

  std::size_t n_tokens() const noexcept { return tokens.size(); }
  bool operator==(const Label&) const = default;
};

class LabelSet {
 public:
  LabelSet() = default;

  const std::string& name() const noexcept { return name_; }
  const std::vector<Label>& labels() const noexcept { return labels_; }
  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }
  const Label& operator[](std::size_t i) const { return labels_.at(i); }

  auto begin() const noexcept { return labels_.begin(); }
  auto end() const noexcept { return labels_.end(); }

  /// Index of the label with the given text, if any.
  std::optional<std::size_t> find(std::string_view text) const {
    for (const auto& l : labels_)
      if (l.text == text) return l.index;
    return std::nullopt;
  }

  double mean_token_count() const {
    if (labels_.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& l : labels_) sum += static_cast<double>(l.n_tokens());
    return sum / static_cast<double>(labels_.size());
  }

  bool operator==(const LabelSet&) const = default;

 private:
  friend LabelSet validate_label_set(const std::vector<std::string>&,
                                     const std::vector<std::vector<std::string>>&,
                                     std::string);
  std::string name_;
  std::vector<Label> labels_;
};

/// Builds a LabelSet from label texts and the backend's token report for
/// each. Indices follow input order.
inline LabelSet validate_label_set(const std::vector<std::string>& texts,
                                   const std::vector<std::vector<std::string>>& tokenizer_report,
                                   std::string name = {}) {
  if (texts.empty()) throw InvalidArgument("label set is empty");
  if (texts.size() != tokenizer_report.size())
    throw LengthMismatch("got " + std::to_string(texts.size()) + " labels but " +
                         std::to_string(tokenizer_report.size()) + " tokenizations");

  std::unordered_set<std::string> seen;
  LabelSet set;
  set.name_ = std::move(name);
  set.labels_.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (!seen.insert(texts[i]).second) throw DuplicateLabel("duplicate label '" + texts[i] + "'");
    if (tokenizer_report[i].empty())
      throw EmptyTokenization("backend returned no tokens for label '" + texts[i] + "'");
    set.labels_.push_back(Label{texts[i], tokenizer_report[i], i});
  }
  return set;
}

inline void to_json(nlohmann::json& j, const LabelSet& s) {
  j = nlohmann::json{{"name", s.name()}, {"labels", nlohmann::json::array()}};
  for (const auto& l : s) j["labels"].push_back({{"text", l.text}, {"tokens", l.tokens}});
}

inline void from_json(const nlohmann::json& j, LabelSet& s) {
  std::vector<std::string> texts;
  std::vector<std::vector<std::string>> tokens;
  for (const auto& l : j.at("labels")) {
    texts.push_back(l.at("text").get<std::string>());
    tokens.push_back(l.at("tokens").get<std::vector<std::string>>());
  }
  s = validate_label_set(texts, tokens, j.value("name", std::string{}));
}

// ---------------------------------------------------------------------------
// Examples and scores
// ---------------------------------------------------------------------------

struct Example {
  std::string input;
  std::optional<std::size_t> gold;
  /// Per-example candidate texts (MCQA). Empty for classification, where
  /// the run-wide LabelSet applies.
  std::vector<std::string> choices;

  bool operator==(const Example&) const = default;
};

/// Per-token conditional log-probabilities (natural log) for one label.
struct ScoredLabel {
  std::size_t label_index = 0;
  std::vector<double> token_logprobs;
  /// Set when a mock backend had no entry and substituted its default.
  bool imputed = false;

  std::size_t n_tokens() const noexcept { return token_logprobs.size(); }
  bool operator==(const ScoredLabel&) const = default;
};

enum class Method { RAW, NORM, CC, NCC, DC, NDC, BC, NBC };

inline constexpr Method kAllMethods[] = {Method::RAW, Method::NORM, Method::CC, Method::NCC,
                                         Method::DC,  Method::NDC,  Method::BC, Method::NBC};

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::RAW: return "raw";
    case Method::NORM: return "norm";
    case Method::CC: return "cc";
    case Method::NCC: return "ncc";
    case Method::DC: return "dc";
    case Method::NDC: return "ndc";
    case Method::BC: return "bc";
    case Method::NBC: return "nbc";
  }
  return "?";
}

inline Method parse_method(std::string_view name) {
  for (Method m : kAllMethods)
    if (method_name(m) == name) return m;
  throw InvalidArgument("unknown method '" + std::string(name) + "'");
}

/// True for methods whose scores are length-normalized geometric means.
inline bool is_normalized(Method m) {
  return m == Method::NORM || m == Method::NCC || m == Method::NDC || m == Method::NBC;
}

inline bool needs_baseline(Method m) { return m != Method::RAW && m != Method::NORM; }

/// Per-label state of one calibrated prediction.
struct CalibrationRecord {
  double raw_logprob = 0.0;
  double norm_logprob = 0.0;
  double baseline_prob = 1.0;
  double calibrated_score = 0.0;
  double confidence = 0.0;
};

struct Prediction {
  std::size_t label_index = 0;
  Method method = Method::RAW;
  double confidence = 0.0;

  bool operator==(const Prediction&) const = default;
};

}  // namespace ncc
