#pragma once

// The method family: raw and length-normalized label scores, baseline
// estimation (content-free ensemble, domain context, batch), calibration by
// baseline division, and argmax prediction.
//
// All scoring is carried in natural-log space. Probabilities are
// materialized only for baselines and reported scores/confidences.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ncc/core_types.hpp"
#include "ncc/prompting.hpp"
#include "ncc/scoring.hpp"

namespace ncc {

class InvalidTokenCount : public Error {
 public:
  explicit InvalidTokenCount(const std::string& what) : Error("InvalidTokenCount", what) {}
};
class ZeroBaseline : public Error {
 public:
  explicit ZeroBaseline(const std::string& what) : Error("ZeroBaseline", what) {}
};
class MissingBaseline : public Error {
 public:
  explicit MissingBaseline(const std::string& what) : Error("MissingBaseline", what) {}
};
class BaselineSpaceMismatch : public Error {
 public:
  explicit BaselineSpaceMismatch(const std::string& what) : Error("BaselineSpaceMismatch", what) {}
};
class EmptyCorpus : public Error {
 public:
  explicit EmptyCorpus(const std::string& what) : Error("EmptyCorpus", what) {}
};
class EmptyBatch : public Error {
 public:
  explicit EmptyBatch(const std::string& what) : Error("EmptyBatch", what) {}
};

/// Floor for length-normalized baselines.
inline constexpr double kBaselineFloor = 1e-10;
/// Raw-space baselines are products over many tokens and legitimately fall
/// far below 1e-10, so they are only kept away from underflow zero.
inline constexpr double kRawBaselineFloor = std::numeric_limits<double>::min();

inline constexpr double baseline_floor(bool normalized_space) {
  return normalized_space ? kBaselineFloor : kRawBaselineFloor;
}

// ---------------------------------------------------------------------------
// Scalar operations
// ---------------------------------------------------------------------------

/// Log of the geometric mean of the token probabilities.
inline double normalize_logprob(double raw_logprob, long n_tokens) {
  if (n_tokens < 1) throw InvalidTokenCount("n_tokens must be >= 1, got " + std::to_string(n_tokens));
  return raw_logprob / static_cast<double>(n_tokens);
}

inline double calibrate(double norm_prob, double baseline_prob) {
  if (!(baseline_prob > 0.0)) throw ZeroBaseline("baseline probability must be > 0");
  return norm_prob / baseline_prob;
}

/// Per-label logprobs in the requested space.
inline std::vector<double> label_logprobs(std::span<const ScoredLabel> scored, bool normalized_space) {
  std::vector<double> out;
  out.reserve(scored.size());
  for (const auto& s : scored) {
    const double raw = raw_label_logprob(s);
    out.push_back(normalized_space ? normalize_logprob(raw, static_cast<long>(s.n_tokens())) : raw);
  }
  return out;
}

namespace detail {

inline double log_sum_exp(std::span<const double> xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

/// exp(x_i - logsumexp(x)); sums to 1 up to rounding.
inline std::vector<double> softmax(std::span<const double> xs) {
  const double lse = log_sum_exp(xs);
  std::vector<double> out;
  out.reserve(xs.size());
  for (double x : xs) out.push_back(std::exp(x - lse));
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

enum class BaselineKind { CF_ENSEMBLE, DOMAIN_CONTEXT, BATCH };

inline std::string_view baseline_kind_name(BaselineKind k) {
  switch (k) {
    case BaselineKind::CF_ENSEMBLE: return "cf_ensemble";
    case BaselineKind::DOMAIN_CONTEXT: return "domain_context";
    case BaselineKind::BATCH: return "batch";
  }
  return "?";
}

struct BaselineVector {
  BaselineKind method = BaselineKind::CF_ENSEMBLE;
  std::vector<double> probs;
  bool normalized_space = true;

  BaselineVector scaled(double c) const {
    BaselineVector out = *this;
    for (double& p : out.probs) p *= c;
    return out;
  }
};

/// Averages per-probe label probabilities. Each row holds one probe's
/// per-label logprobs in the chosen space. With `renormalize`, each row is
/// turned into a distribution over labels before averaging.
inline BaselineVector average_baseline(std::span<const std::vector<double>> probe_logprobs, bool normalized_space,
                                       BaselineKind kind, bool renormalize = true) {
  if (probe_logprobs.empty()) throw InvalidArgument("no probe scores to average");
  const std::size_t k = probe_logprobs.front().size();
  if (k == 0) throw InvalidArgument("probe score list is empty");
  std::vector<double> sum(k, 0.0);
  for (const auto& row : probe_logprobs) {
    if (row.size() != k) throw LengthMismatch("probe score lists differ in length");
    const std::vector<double> probs = renormalize ? detail::softmax(row) : [&] {
      std::vector<double> p;
      for (double lp : row) p.push_back(std::exp(lp));
      return p;
    }();
    for (std::size_t i = 0; i < k; ++i) sum[i] += probs[i];
  }
  BaselineVector out{kind, {}, normalized_space};
  const double floor = baseline_floor(normalized_space);
  for (double s : sum) out.probs.push_back(std::max(s / static_cast<double>(probe_logprobs.size()), floor));
  return out;
}

/// Content-free baseline from the five-probe ensemble.
inline BaselineVector ensemble_baseline(std::span<const std::vector<double>> content_free_scores,
                                        bool normalized_space, bool renormalize = true) {
  if (content_free_scores.size() != kContentFreeInputs.size())
    throw LengthMismatch("expected " + std::to_string(kContentFreeInputs.size()) + " content-free score lists, got " +
                         std::to_string(content_free_scores.size()));
  return average_baseline(content_free_scores, normalized_space, BaselineKind::CF_ENSEMBLE, renormalize);
}

/// Streaming per-label mean for batch calibration.
class BatchMean {
 public:
  explicit BatchMean(std::size_t n_labels) : sum_(n_labels, 0.0) {}

  void add(std::span<const double> probs) {
    if (probs.size() != sum_.size()) throw LengthMismatch("batch row has wrong label count");
    for (std::size_t i = 0; i < sum_.size(); ++i) sum_[i] += probs[i];
    ++count_;
  }

  std::size_t count() const noexcept { return count_; }

  BaselineVector finish(bool normalized_space) const {
    if (count_ == 0) throw EmptyBatch("batch calibration needs at least one example");
    BaselineVector out{BaselineKind::BATCH, {}, normalized_space};
    const double floor = baseline_floor(normalized_space);
    for (double s : sum_) out.probs.push_back(std::max(s / static_cast<double>(count_), floor));
    return out;
  }

 private:
  std::vector<double> sum_;
  std::size_t count_ = 0;
};

/// Per-label mean of the batch's probabilities.
inline BaselineVector batch_baseline(std::span<const std::vector<double>> all_probs, bool normalized_space) {
  if (all_probs.empty()) throw EmptyBatch("batch calibration needs at least one example");
  BatchMean acc(all_probs.front().size());
  for (const auto& row : all_probs) acc.add(row);
  return acc.finish(normalized_space);
}

struct DomainContextOptions {
  std::size_t n_inputs = 20;
  std::size_t min_words = 5;
  std::size_t max_words = 30;
  bool renormalize = true;
};

/// Pseudo-inputs of words drawn uniformly from the concatenated corpus.
inline std::vector<std::string> domain_pseudo_inputs(std::span<const std::string> train_texts,
                                                     const DomainContextOptions& opt, std::uint64_t seed) {
  if (opt.n_inputs < 1) throw InvalidArgument("domain-context L must be >= 1");
  if (opt.min_words < 1 || opt.max_words < opt.min_words) throw InvalidArgument("bad domain-context length range");
  std::vector<std::string> words;
  for (const auto& t : train_texts) {
    std::istringstream in(t);
    for (std::string w; in >> w;) words.push_back(std::move(w));
  }
  if (words.empty()) throw EmptyCorpus("training corpus has no words");

  std::mt19937_64 rng(seed);
  std::vector<std::string> out;
  out.reserve(opt.n_inputs);
  for (std::size_t l = 0; l < opt.n_inputs; ++l) {
    const std::size_t len = opt.min_words + detail::uniform_below(rng, opt.max_words - opt.min_words + 1);
    std::string s;
    for (std::size_t w = 0; w < len; ++w) {
      if (w) s += ' ';
      s += words[detail::uniform_below(rng, words.size())];
    }
    out.push_back(std::move(s));
  }
  return out;
}

struct DomainBaselines {
  BaselineVector raw;
  BaselineVector normalized;
};

/// Scores the label set against each pseudo-input and averages as for the
/// content-free ensemble. Returns both raw-space and normalized-space vectors.
inline DomainBaselines domain_context_baseline(Scorer& scorer, std::span<const std::string> train_texts,
                                               const PromptTemplate& tpl, const DemonstrationSet& demos,
                                               const LabelSet& labels, const DomainContextOptions& opt,
                                               std::uint64_t seed, std::size_t parallelism = 1) {
  const auto inputs = domain_pseudo_inputs(train_texts, opt, seed);
  std::vector<std::vector<ScoredLabel>> scored(inputs.size());
  detail::parallel_for(inputs.size(), parallelism, [&](std::size_t i) {
    scored[i] = score_label_set(scorer, build_prompt(tpl, demos, inputs[i]), labels);
  });
  std::vector<std::vector<double>> raw, norm;
  for (const auto& s : scored) {
    raw.push_back(label_logprobs(s, false));
    norm.push_back(label_logprobs(s, true));
  }
  return {average_baseline(raw, false, BaselineKind::DOMAIN_CONTEXT, opt.renormalize),
          average_baseline(norm, true, BaselineKind::DOMAIN_CONTEXT, opt.renormalize)};
}

// ---------------------------------------------------------------------------
// Methods and prediction
// ---------------------------------------------------------------------------

struct MethodScores {
  Method method = Method::RAW;
  std::vector<double> log_scores;  // canonical; scores = exp(log_scores)
  std::vector<double> scores;
  std::vector<double> confidence;  // scores renormalized to sum to 1
};

inline BaselineKind baseline_kind_for(Method m) {
  switch (m) {
    case Method::DC:
    case Method::NDC: return BaselineKind::DOMAIN_CONTEXT;
    case Method::BC:
    case Method::NBC: return BaselineKind::BATCH;
    default: return BaselineKind::CF_ENSEMBLE;
  }
}

inline MethodScores compute_method(Method method, std::span<const ScoredLabel> scored,
                                   const BaselineVector* baseline = nullptr) {
  if (scored.empty()) throw InvalidArgument("no scored labels");
  MethodScores out;
  out.method = method;
  out.log_scores = label_logprobs(scored, is_normalized(method));
  if (needs_baseline(method)) {
    if (!baseline) throw MissingBaseline(std::string(method_name(method)) + " needs a baseline");
    if (baseline->normalized_space != is_normalized(method))
      throw BaselineSpaceMismatch(std::string(method_name(method)) + " needs a " +
                                  (is_normalized(method) ? "normalized" : "raw") + "-space baseline");
    if (baseline->probs.size() != scored.size()) throw LengthMismatch("baseline length differs from label count");
    for (std::size_t i = 0; i < scored.size(); ++i) {
      if (!(baseline->probs[i] > 0.0)) throw ZeroBaseline("baseline entry " + std::to_string(i) + " is not > 0");
      out.log_scores[i] -= std::log(baseline->probs[i]);
    }
  }
  out.scores.reserve(scored.size());
  for (double ls : out.log_scores) out.scores.push_back(std::exp(ls));
  out.confidence = detail::softmax(out.log_scores);
  return out;
}

inline MethodScores compute_method(Method method, std::span<const ScoredLabel> scored,
                                   const std::optional<BaselineVector>& baseline) {
  return compute_method(method, scored, baseline ? &*baseline : nullptr);
}

/// Argmax with ties to the lowest label index.
inline Prediction predict(const MethodScores& s) {
  if (s.log_scores.empty()) throw InvalidArgument("cannot predict from empty scores");
  std::size_t best = 0;
  for (std::size_t i = 1; i < s.log_scores.size(); ++i)
    if (s.log_scores[i] > s.log_scores[best]) best = i;
  return {best, s.method, s.confidence[best]};
}

/// Per-label record of the normalized-calibration pipeline.
inline std::vector<CalibrationRecord> calibration_records(std::span<const ScoredLabel> scored,
                                                          const BaselineVector& baseline) {
  const auto ms = compute_method(Method::NCC, scored, &baseline);
  std::vector<CalibrationRecord> out;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    const double raw = raw_label_logprob(scored[i]);
    out.push_back({raw, normalize_logprob(raw, static_cast<long>(scored[i].n_tokens())), baseline.probs[i],
                   ms.scores[i], ms.confidence[i]});
  }
  return out;
}

}  // namespace ncc
