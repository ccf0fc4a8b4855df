#pragma once

// RunReport: everything one (method set, dataset, model) run produced, its
// JSON schema, and the plot-ready tables emitted next to it.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ncc/core_types.hpp"
#include "ncc/detail/json_optional.hpp"
#include "ncc/metrics.hpp"
#include "ncc/prompting.hpp"

namespace ncc {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("IoError", what) {}
};

struct MethodOutcome {
  std::size_t label = 0;
  double confidence = 0.0;
  double kl_from_raw = 0.0;  // KL(raw confidences || method confidences)
  bool operator==(const MethodOutcome&) const = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(MethodOutcome, label, confidence, kl_from_raw)

struct ExampleRecord {
  std::size_t index = 0;
  std::size_t gold = 0;
  std::vector<std::size_t> label_tokens;  // token count per candidate
  std::map<std::string, MethodOutcome> methods;
  bool operator==(const ExampleRecord&) const = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ExampleRecord, index, gold, label_tokens, methods)

struct SeedMetrics {
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  double ece = 0.0;
  double kl_raw_vs_method = 0.0;
  bool operator==(const SeedMetrics&) const = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SeedMetrics, macro_f1, accuracy, ece, kl_raw_vs_method)

struct SeedBlock {
  std::uint64_t seed = 0;
  std::string status = "ok";  // "ok" | "failed"
  std::string error;
  std::vector<Demonstration> demonstrations;
  /// Run-wide baselines (classification only), keyed e.g. "cf_raw", "dc_norm".
  std::map<std::string, std::vector<double>> baselines;
  std::size_t imputed_scores = 0;
  std::vector<ExampleRecord> examples;
  std::map<std::string, SeedMetrics> metrics;
  bool operator==(const SeedBlock&) const = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SeedBlock, seed, status, error, demonstrations, baselines, imputed_scores, examples,
                                   metrics)

struct LengthRow {
  std::string key;  // label text, or a length bucket for per-example label sets
  std::size_t n_tokens = 0;
  double normalized_length = 0.0;
  std::size_t pred_count = 0;
  std::size_t gold_count = 0;
  std::optional<double> enrichment;
  bool operator==(const LengthRow&) const = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LengthRow, key, n_tokens, normalized_length, pred_count, gold_count, enrichment)

inline bool operator==(const ReliabilityBin& a, const ReliabilityBin& b) {
  return a.lower == b.lower && a.upper == b.upper && a.count == b.count && a.mean_confidence == b.mean_confidence &&
         a.accuracy == b.accuracy;
}
inline bool operator==(const ReliabilityBins& a, const ReliabilityBins& b) {
  return a.n_bins == b.n_bins && a.total == b.total && a.bins == b.bins;
}
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ReliabilityBin, lower, upper, count, mean_confidence, accuracy)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ReliabilityBins, n_bins, total, bins)

inline bool operator==(const SensitivityStats& a, const SensitivityStats& b) {
  return a.mean_std == b.mean_std && a.mean_cv == b.mean_cv;
}
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SensitivityStats, mean_std, mean_cv)

struct MethodAggregate {
  std::size_t n_seeds = 0;
  double macro_f1_mean = 0.0;
  std::optional<double> macro_f1_std;  // needs >= 2 seeds
  double accuracy_mean = 0.0;
  double ece = 0.0;               // pooled over all predictions of all ok seeds
  double kl_raw_vs_method = 0.0;  // mean over all examples of all ok seeds
  ReliabilityBins reliability;
  std::vector<LengthRow> by_length;
  std::optional<SensitivityStats> sensitivity;
  bool operator==(const MethodAggregate&) const = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(MethodAggregate, n_seeds, macro_f1_mean, macro_f1_std, accuracy_mean, ece,
                                   kl_raw_vs_method, reliability, by_length, sensitivity)

inline bool operator==(const WilcoxonResult& a, const WilcoxonResult& b) {
  return a.statistic == b.statistic && a.w_plus == b.w_plus && a.w_minus == b.w_minus && a.p_value == b.p_value &&
         a.significant == b.significant && a.n == b.n && a.exact == b.exact;
}
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(WilcoxonResult, statistic, w_plus, w_minus, p_value, significant, n, exact)

struct SignificanceEntry {
  std::string a;
  std::string b;
  std::optional<WilcoxonResult> test;
  std::string note;  // why no test was run
  bool operator==(const SignificanceEntry&) const = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SignificanceEntry, a, b, test, note)

struct RunReport {
  int schema_version = kSchemaVersion;
  std::string tool_version = kToolVersion;
  std::string timestamp;
  nlohmann::json config;
  std::size_t k = 0;
  std::string status = "ok";  // "ok" | "partial" | "failed"
  std::vector<std::string> methods;
  std::optional<LabelSet> labels;  // absent for per-example label sets
  std::vector<SeedBlock> seeds;
  std::map<std::string, MethodAggregate> aggregates;
  std::vector<SignificanceEntry> significance;
  std::vector<std::string> notes;
  bool operator==(const RunReport&) const = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RunReport, schema_version, tool_version, timestamp, config, k, status, methods,
                                   labels, seeds, aggregates, significance, notes)

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_num(*v) : std::string{}; }

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace detail

inline std::string report_json_text(const RunReport& r) { return nlohmann::json(r).dump(2) + "\n"; }

inline RunReport load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report '" + path + "'");
  return nlohmann::json::parse(in).get<RunReport>();
}

inline std::string summary_csv(const RunReport& r) {
  std::string out = "method,macro_f1_mean,macro_f1_std,ece,kl_raw_vs_method\n";
  for (const auto& m : r.methods) {
    auto it = r.aggregates.find(m);
    if (it == r.aggregates.end()) continue;
    const auto& a = it->second;
    out += m + "," + detail::fmt_num(a.macro_f1_mean) + "," + detail::fmt_opt(a.macro_f1_std) + "," +
           detail::fmt_num(a.ece) + "," + detail::fmt_num(a.kl_raw_vs_method) + "\n";
  }
  return out;
}

inline std::string reliability_tsv(const RunReport& r) {
  std::string out = "method\tbin\tlower\tupper\tcount\tmean_confidence\taccuracy\n";
  for (const auto& m : r.methods) {
    auto it = r.aggregates.find(m);
    if (it == r.aggregates.end()) continue;
    const auto& bins = it->second.reliability.bins;
    for (std::size_t b = 0; b < bins.size(); ++b)
      out += m + "\t" + std::to_string(b) + "\t" + detail::fmt_num(bins[b].lower) + "\t" +
             detail::fmt_num(bins[b].upper) + "\t" + std::to_string(bins[b].count) + "\t" +
             detail::fmt_opt(bins[b].mean_confidence) + "\t" + detail::fmt_opt(bins[b].accuracy) + "\n";
  }
  return out;
}

inline std::string pred_by_length_tsv(const RunReport& r) {
  std::string out = "method\tlabel\tn_tokens\tnormalized_length\tpred_count\tgold_count\tenrichment\n";
  for (const auto& m : r.methods) {
    auto it = r.aggregates.find(m);
    if (it == r.aggregates.end()) continue;
    for (const auto& row : it->second.by_length)
      out += m + "\t" + row.key + "\t" + std::to_string(row.n_tokens) + "\t" +
             detail::fmt_num(row.normalized_length) + "\t" + std::to_string(row.pred_count) + "\t" +
             std::to_string(row.gold_count) + "\t" + detail::fmt_opt(row.enrichment) + "\n";
  }
  return out;
}

/// One row per (k, method) across a k-sweep.
inline std::string kl_vs_k_tsv(const std::vector<RunReport>& reports) {
  std::string out = "k\tmethod\tmacro_f1_mean\tkl_raw_vs_method\n";
  for (const auto& r : reports)
    for (const auto& m : r.methods) {
      auto it = r.aggregates.find(m);
      if (it == r.aggregates.end() || m == "raw") continue;
      out += std::to_string(r.k) + "\t" + m + "\t" + detail::fmt_num(it->second.macro_f1_mean) + "\t" +
             detail::fmt_num(it->second.kl_raw_vs_method) + "\n";
    }
  return out;
}

/// Writes report.json, summary.csv, reliability_bins.tsv and
/// pred_by_length.tsv into `dir`. Returns the paths written.
inline std::vector<std::filesystem::path> emit_report(const RunReport& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  std::vector<std::filesystem::path> written;
  auto put = [&](const char* name, const std::string& content) {
    detail::write_file(dir / name, content);
    written.push_back(dir / name);
  };
  put("report.json", report_json_text(r));
  put("summary.csv", summary_csv(r));
  put("reliability_bins.tsv", reliability_tsv(r));
  put("pred_by_length.tsv", pred_by_length_tsv(r));
  return written;
}

}  // namespace ncc
