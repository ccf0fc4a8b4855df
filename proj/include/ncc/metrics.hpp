#pragma once

// Evaluation and analysis statistics: macro-F1, ECE and reliability bins,
// KL divergence, the Wilcoxon signed-rank test, seed sensitivity,
// enrichment factors and label-length diagnostics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ncc/core_types.hpp"

namespace ncc {

class EmptyInput : public Error {
 public:
  explicit EmptyInput(const std::string& what) : Error("EmptyInput", what) {}
};
class UndefinedMetric : public Error {
 public:
  explicit UndefinedMetric(const std::string& what) : Error("UndefinedMetric", what) {}
};
class NotNormalized : public Error {
 public:
  explicit NotNormalized(const std::string& what) : Error("NotNormalized", what) {}
};
class TooFewPairs : public Error {
 public:
  explicit TooFewPairs(const std::string& what) : Error("TooFewPairs", what) {}
};
class InsufficientSeeds : public Error {
 public:
  explicit InsufficientSeeds(const std::string& what) : Error("InsufficientSeeds", what) {}
};

// ---------------------------------------------------------------------------
// Macro-F1
// ---------------------------------------------------------------------------

/// Unweighted mean of per-class F1 over all K classes. A class that is
/// neither predicted nor present in the golds contributes 0.
inline double macro_f1(std::span<const std::size_t> predictions, std::span<const std::size_t> golds, std::size_t K) {
  if (predictions.size() != golds.size()) throw LengthMismatch("predictions and golds differ in length");
  if (predictions.empty()) throw UndefinedMetric("macro-F1 of an empty prediction list");
  if (K == 0) throw InvalidArgument("K must be >= 1");
  std::vector<std::size_t> tp(K, 0), fp(K, 0), fn(K, 0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto p = predictions[i], g = golds[i];
    if (p >= K || g >= K) throw InvalidArgument("label index out of range");
    if (p == g) {
      ++tp[p];
    } else {
      ++fp[p];
      ++fn[g];
    }
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < K; ++c) {
    const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
    if (denom) sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
  }
  return sum / static_cast<double>(K);
}

// ---------------------------------------------------------------------------
// Calibration of confidences
// ---------------------------------------------------------------------------

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  std::optional<double> mean_confidence;  // empty for an empty bin
  std::optional<double> accuracy;
};

struct ReliabilityBins {
  std::size_t n_bins = 0;
  std::size_t total = 0;
  std::vector<ReliabilityBin> bins;

  /// ECE recomputed from the table.
  double ece() const {
    double e = 0.0;
    for (const auto& b : bins)
      if (b.count)
        e += static_cast<double>(b.count) / static_cast<double>(total) * std::abs(*b.accuracy - *b.mean_confidence);
    return e;
  }
};

/// Bin of a confidence under equal-width, right-inclusive edges: bin 0 is
/// [0, 1/n], bin b > 0 is (b/n, (b+1)/n].
inline std::size_t confidence_bin(double c, std::size_t n_bins) {
  const double scaled = c * static_cast<double>(n_bins);
  auto b = static_cast<std::ptrdiff_t>(std::ceil(scaled)) - 1;
  if (b > 0 && c <= static_cast<double>(b) / static_cast<double>(n_bins)) --b;
  return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(n_bins) - 1));
}

inline ReliabilityBins reliability_diagram(std::span<const double> confidences, const std::vector<bool>& correct,
                                           std::size_t n_bins = 10) {
  if (confidences.size() != correct.size()) throw LengthMismatch("confidences and correctness differ in length");
  if (confidences.empty()) throw EmptyInput("no predictions");
  if (n_bins == 0) throw InvalidArgument("n_bins must be >= 1");
  std::vector<double> conf_sum(n_bins, 0.0);
  std::vector<std::size_t> hits(n_bins, 0), count(n_bins, 0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    if (!(c >= 0.0 && c <= 1.0)) throw InvalidArgument("confidence outside [0, 1]");
    const auto b = confidence_bin(c, n_bins);
    conf_sum[b] += c;
    hits[b] += correct[i] ? 1 : 0;
    ++count[b];
  }
  ReliabilityBins out{n_bins, confidences.size(), {}};
  for (std::size_t b = 0; b < n_bins; ++b) {
    ReliabilityBin bin;
    bin.lower = static_cast<double>(b) / static_cast<double>(n_bins);
    bin.upper = static_cast<double>(b + 1) / static_cast<double>(n_bins);
    bin.count = count[b];
    if (count[b]) {
      bin.mean_confidence = conf_sum[b] / static_cast<double>(count[b]);
      bin.accuracy = static_cast<double>(hits[b]) / static_cast<double>(count[b]);
    }
    out.bins.push_back(bin);
  }
  return out;
}

inline double expected_calibration_error(std::span<const double> confidences, const std::vector<bool>& correct,
                                         std::size_t n_bins = 10) {
  return reliability_diagram(confidences, correct, n_bins).ece();
}

// ---------------------------------------------------------------------------
// KL divergence
// ---------------------------------------------------------------------------

inline constexpr double kKlFloor = 1e-10;

/// KL(p || q) in nats; q is floored at 1e-10 and 0 ln(0/q) = 0.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw LengthMismatch("distributions differ in length");
  if (p.empty()) throw EmptyInput("empty distribution");
  auto check = [](std::span<const double> d, const char* name) {
    double s = 0.0;
    for (double v : d) {
      if (!(v >= 0.0)) throw NotNormalized(std::string(name) + " has a negative or NaN entry");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) throw NotNormalized(std::string(name) + " sums to " + std::to_string(s));
  };
  check(p, "p");
  check(q, "q");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) kl += p[i] * std::log(p[i] / std::max(q[i], kKlFloor));
  return std::max(kl, 0.0);
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank test
// ---------------------------------------------------------------------------

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double w_plus = 0.0;
  double w_minus = 0.0;
  double p_value = 1.0;
  bool significant = false;
  std::size_t n = 0;  // non-zero differences
  bool exact = true;
};

inline constexpr std::size_t kWilcoxonExactMax = 12;
inline constexpr std::size_t kWilcoxonMinPairs = 5;

/// Average (1-based) ranks of |d|, doubled so ties stay integral.
inline std::vector<std::int64_t> doubled_abs_ranks(std::span<const double> d) {
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<std::int64_t> ranks(d.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    // positions i..j share rank ((i+1)+(j+1))/2; doubled: i+j+2
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = static_cast<std::int64_t>(i + j + 2);
    i = j + 1;
  }
  return ranks;
}

/// Two-sided test on paired samples (a_i, b_i), d_i = a_i - b_i. Zero
/// differences are dropped; tied |d| share average ranks. The null
/// distribution is exact (over all sign patterns) for n <= 12 and normal
/// with tie correction above.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b, double alpha = 0.05) {
  if (a.size() != b.size()) throw LengthMismatch("paired samples differ in length");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] - b[i] != 0.0) d.push_back(a[i] - b[i]);
  if (d.size() < kWilcoxonMinPairs)
    throw TooFewPairs("need at least " + std::to_string(kWilcoxonMinPairs) + " non-zero differences, got " +
                      std::to_string(d.size()));

  const auto ranks = doubled_abs_ranks(d);
  std::int64_t total2 = 0, plus2 = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    total2 += ranks[i];
    if (d[i] > 0) plus2 += ranks[i];
  }
  const std::int64_t minus2 = total2 - plus2;
  const std::int64_t stat2 = std::min(plus2, minus2);

  WilcoxonResult r;
  r.n = d.size();
  r.w_plus = static_cast<double>(plus2) / 2.0;
  r.w_minus = static_cast<double>(minus2) / 2.0;
  r.statistic = static_cast<double>(stat2) / 2.0;

  if (d.size() <= kWilcoxonExactMax) {
    // counts[s] = number of sign patterns whose doubled W+ equals s
    std::vector<double> counts(static_cast<std::size_t>(total2) + 1, 0.0);
    counts[0] = 1.0;
    std::int64_t reach = 0;
    for (auto rk : ranks) {
      for (std::int64_t s = reach; s >= 0; --s)
        if (counts[static_cast<std::size_t>(s)] != 0.0) counts[static_cast<std::size_t>(s + rk)] += counts[static_cast<std::size_t>(s)];
      reach += rk;
    }
    double extreme = 0.0;
    for (std::int64_t s = 0; s <= total2; ++s)
      if (std::min(s, total2 - s) <= stat2) extreme += counts[static_cast<std::size_t>(s)];
    r.p_value = std::min(1.0, extreme / std::ldexp(1.0, static_cast<int>(d.size())));
    r.exact = true;
  } else {
    const double n = static_cast<double>(d.size());
    double tie_term = 0.0;
    std::vector<std::int64_t> sorted = ranks;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size();) {
      std::size_t j = i;
      while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i);
      tie_term += t * t * t - t;
      i = j;
    }
    const double mean = n * (n + 1.0) / 4.0;
    const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    const double z = var > 0.0 ? (r.w_plus - mean) / std::sqrt(var) : 0.0;
    r.p_value = std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
    r.exact = false;
  }
  r.significant = r.p_value < alpha;
  return r;
}

/// Paired F1 values for two methods, one entry per (dataset, seed) cell.
struct PairedRuns {
  std::vector<double> first;
  std::vector<double> second;

  void add(double a, double b) {
    first.push_back(a);
    second.push_back(b);
  }
};

inline WilcoxonResult wilcoxon_signed_rank(const PairedRuns& pairs, double alpha = 0.05) {
  return wilcoxon_signed_rank(pairs.first, pairs.second, alpha);
}

// ---------------------------------------------------------------------------
// Seed sensitivity
// ---------------------------------------------------------------------------

struct SensitivityStats {
  double mean_std = 0.0;
  double mean_cv = 0.0;
};

inline double sample_std(std::span<const double> xs) {
  if (xs.size() < 2) throw InsufficientSeeds("standard deviation needs at least 2 values");
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

/// Mean over cells of the per-cell sample std and coefficient of variation.
inline SensitivityStats sensitivity_stats(const std::vector<std::vector<double>>& f1_by_seed) {
  if (f1_by_seed.empty()) throw EmptyInput("no cells");
  SensitivityStats s;
  for (const auto& cell : f1_by_seed) {
    const double sd = sample_std(cell);
    const double mean = std::accumulate(cell.begin(), cell.end(), 0.0) / static_cast<double>(cell.size());
    s.mean_std += sd;
    s.mean_cv += sd == 0.0 ? 0.0 : sd / mean;
  }
  s.mean_std /= static_cast<double>(f1_by_seed.size());
  s.mean_cv /= static_cast<double>(f1_by_seed.size());
  return s;
}

// ---------------------------------------------------------------------------
// Label frequency and length diagnostics
// ---------------------------------------------------------------------------

/// Predicted share over gold share per label; empty where the label never
/// occurs in the golds.
inline std::vector<std::optional<double>> enrichment_factor(std::span<const std::size_t> pred_counts,
                                                            std::span<const std::size_t> gold_counts) {
  if (pred_counts.size() != gold_counts.size()) throw LengthMismatch("count vectors differ in length");
  const auto gold_total = std::accumulate(gold_counts.begin(), gold_counts.end(), std::size_t{0});
  const auto pred_total = std::accumulate(pred_counts.begin(), pred_counts.end(), std::size_t{0});
  if (gold_total == 0) throw EmptyInput("no gold labels");
  std::vector<std::optional<double>> out;
  for (std::size_t i = 0; i < gold_counts.size(); ++i) {
    if (gold_counts[i] == 0) {
      out.emplace_back();
      continue;
    }
    const double pred_share = pred_total ? static_cast<double>(pred_counts[i]) / static_cast<double>(pred_total) : 0.0;
    out.emplace_back(pred_share / (static_cast<double>(gold_counts[i]) / static_cast<double>(gold_total)));
  }
  return out;
}

/// Token count rescaled so the set's shortest label is 0 and longest is 1.
inline double normalized_label_length(const Label& label, const LabelSet& set) {
  std::size_t lo = std::numeric_limits<std::size_t>::max(), hi = 0;
  for (const auto& l : set) {
    lo = std::min(lo, l.n_tokens());
    hi = std::max(hi, l.n_tokens());
  }
  if (hi == lo) return 0.0;
  return static_cast<double>(label.n_tokens() - lo) / static_cast<double>(hi - lo);
}

}  // namespace ncc
