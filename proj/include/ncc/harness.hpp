#pragma once

// Experiment configuration, seeded multi-run execution, k-sweeps and
// cross-report pooling.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ncc/calibration.hpp"
#include "ncc/core_types.hpp"
#include "ncc/dataset.hpp"
#include "ncc/metrics.hpp"
#include "ncc/prompting.hpp"
#include "ncc/report.hpp"
#include "ncc/scoring.hpp"

namespace ncc {

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("ConfigError", what) {}
};

inline constexpr std::uint64_t kDomainSeedSalt = 0xD0C0'4E1E'5EED'0001ULL;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct BackendSettings {
  std::string kind = "mock";  // "mock" | "remote"
  std::string endpoint;
  std::string path = "/v1/score";
  std::string model;
  long timeout_ms = 30000;
  int max_retries = 3;
  long backoff_ms = 500;
  std::size_t max_in_flight = 8;
  std::string mock_table;
  std::string bearer_token_env = "CALIB_TOKEN";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BackendSettings, kind, endpoint, path, model, timeout_ms, max_retries,
                                                backoff_ms, max_in_flight, mock_table, bearer_token_env)

struct MetricSettings {
  std::size_t bins = 10;
  double alpha = 0.05;
  bool baseline_renorm = true;
  std::size_t dc_inputs = 20;
  std::size_t dc_min_words = 5;
  std::size_t dc_max_words = 30;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MetricSettings, bins, alpha, baseline_renorm, dc_inputs, dc_min_words,
                                                dc_max_words)

struct ExperimentConfig {
  std::string dataset;
  std::string train;
  std::string labels;
  std::string label_map;
  nlohmann::json prompt_template = "classification";
  std::vector<std::string> methods{"raw", "norm", "cc", "ncc"};
  std::size_t k = 5;
  std::vector<std::size_t> ks;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  BackendSettings backend;
  MetricSettings metrics;
  std::string output = "out";
  /// Directory relative paths are resolved against (not serialized).
  std::filesystem::path base_dir;

  std::string resolve(const std::string& p) const {
    if (p.empty()) return p;
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? p : (base_dir / path).string();
  }

  void validate() const {
    if (dataset.empty()) throw ConfigError("config: 'dataset' is required");
    if (seeds.empty()) throw ConfigError("config: 'seeds' must be non-empty");
    if (methods.empty()) throw ConfigError("config: 'methods' must be non-empty");
    std::set<std::string> seen;
    for (const auto& m : methods) {
      try {
        parse_method(m);
      } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("config: ") + e.what());
      }
      if (!seen.insert(m).second) throw ConfigError("config: method '" + m + "' listed twice");
    }
    for (std::size_t i = 1; i < ks.size(); ++i)
      if (ks[i] <= ks[i - 1]) throw ConfigError("config: 'ks' must be strictly ascending");
    if (backend.kind != "mock" && backend.kind != "remote")
      throw ConfigError("config: backend.kind must be 'mock' or 'remote'");
    if (metrics.bins < 1) throw ConfigError("config: metrics.bins must be >= 1");
    if (!(metrics.alpha > 0.0 && metrics.alpha < 1.0)) throw ConfigError("config: metrics.alpha must be in (0, 1)");
    try {
      prompt().validate();
    } catch (const Error& e) {
      throw ConfigError(std::string("config: template: ") + e.what());
    }
  }

  /// Template by built-in name, inline object, or file path relative to the config.
  PromptTemplate prompt() const {
    if (prompt_template.is_string()) {
      const auto name = prompt_template.get<std::string>();
      if (name != "classification" && name != "mcqa") return resolve_template(resolve(name));
    }
    return resolve_template(prompt_template);
  }

  bool uses(std::string_view m) const { return std::find(methods.begin(), methods.end(), m) != methods.end(); }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"dataset", c.dataset},   {"train", c.train}, {"labels", c.labels},   {"label_map", c.label_map},
       {"template", c.prompt_template}, {"methods", c.methods}, {"k", c.k}, {"ks", c.ks},
       {"seeds", c.seeds},       {"backend", c.backend}, {"metrics", c.metrics}, {"output", c.output}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  ExperimentConfig d;
  c.dataset = j.value("dataset", d.dataset);
  c.train = j.value("train", d.train);
  c.labels = j.value("labels", d.labels);
  c.label_map = j.value("label_map", d.label_map);
  c.prompt_template = j.value("template", d.prompt_template);
  c.methods = j.value("methods", d.methods);
  c.k = j.value("k", d.k);
  c.ks = j.value("ks", d.ks);
  c.seeds = j.value("seeds", d.seeds);
  c.backend = j.value("backend", d.backend);
  c.metrics = j.value("metrics", d.metrics);
  c.output = j.value("output", d.output);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  ExperimentConfig cfg;
  try {
    cfg = nlohmann::json::parse(in).get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  cfg.base_dir = std::filesystem::path(path).parent_path();
  return cfg;
}

/// Backend description with env overrides applied (CALIB_ENDPOINT replaces
/// the configured endpoint; the bearer token is read from the named env var).
inline ScorerBackend resolve_backend(const ExperimentConfig& cfg) {
  const auto& b = cfg.backend;
  ScorerBackend out;
  out.kind = b.kind == "remote" ? ScorerBackend::Kind::REMOTE : ScorerBackend::Kind::MOCK;
  out.endpoint = b.endpoint;
  if (const char* env = std::getenv("CALIB_ENDPOINT"); env && *env) out.endpoint = env;
  out.path = b.path;
  out.model_id = b.model;
  out.timeout = std::chrono::milliseconds(b.timeout_ms);
  out.max_retries = b.max_retries;
  out.initial_backoff = std::chrono::milliseconds(b.backoff_ms);
  out.max_in_flight = b.max_in_flight;
  if (!b.bearer_token_env.empty())
    if (const char* tok = std::getenv(b.bearer_token_env.c_str())) out.bearer_token = tok;
  if (out.kind == ScorerBackend::Kind::MOCK) {
    if (b.mock_table.empty()) throw ConfigError("config: mock backend needs backend.mock_table");
    try {
      out.mock_table = std::make_shared<const MockScoreTable>(MockScoreTable::load(cfg.resolve(b.mock_table)));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("mock table: " + std::string(e.what()));
    }
  }
  try {
    out.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

struct ExperimentData {
  IngestedDataset test;
  IngestedDataset train;  // demonstration pool and domain corpus
  bool mcqa = false;

  std::vector<std::string> train_texts() const {
    std::vector<std::string> out;
    for (const auto& e : train.examples) out.push_back(e.input);
    return out;
  }
};

inline ExperimentData load_data(const ExperimentConfig& cfg) {
  IngestOptions opt;
  if (!cfg.label_map.empty()) opt.label_map = load_label_map(cfg.resolve(cfg.label_map));
  if (!cfg.labels.empty()) opt.labels = load_label_file(cfg.resolve(cfg.labels), opt.label_map);

  ExperimentData d;
  d.test = ingest_dataset(cfg.resolve(cfg.dataset), opt);
  d.mcqa = d.test.mcqa;
  if (d.test.examples.empty()) throw ConfigError("dataset '" + cfg.dataset + "' has no records");
  for (const auto& e : d.test.examples)
    if (!e.gold) throw ConfigError("dataset '" + cfg.dataset + "' has records without a gold label");

  if (!cfg.train.empty()) {
    IngestOptions topt = opt;
    if (!d.mcqa) {
      topt.labels = d.test.label_texts;
      topt.extend_labels = cfg.labels.empty();
    }
    d.train = ingest_dataset(cfg.resolve(cfg.train), topt);
    if (d.train.mcqa != d.mcqa) throw ConfigError("train and test sets use different record formats");
    if (!d.mcqa) d.test.label_texts = d.train.label_texts;
  }
  const std::size_t max_k = cfg.ks.empty() ? cfg.k : std::max(cfg.k, cfg.ks.back());
  if (max_k > 0 && cfg.train.empty()) throw ConfigError("config: k > 0 needs a 'train' demonstration pool");
  if ((cfg.uses("dc") || cfg.uses("ndc")) && cfg.train.empty())
    throw ConfigError("config: domain-context calibration needs a 'train' corpus");
  if (d.mcqa && (cfg.uses("bc") || cfg.uses("nbc")))
    throw ConfigError("config: batch calibration needs a shared label set; not available for MCQA");
  if (!d.mcqa && d.test.label_texts.size() < 2) throw ConfigError("need at least two labels");
  return d;
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

struct Baselines {
  std::optional<BaselineVector> cf_raw, cf_norm, dc_raw, dc_norm, bc_raw, bc_norm;

  const std::optional<BaselineVector>& for_method(Method m) const {
    static const std::optional<BaselineVector> none;
    switch (m) {
      case Method::CC: return cf_raw;
      case Method::NCC: return cf_norm;
      case Method::DC: return dc_raw;
      case Method::NDC: return dc_norm;
      case Method::BC: return bc_raw;
      case Method::NBC: return bc_norm;
      default: return none;
    }
  }
};

namespace detail {

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::vector<double> space_probs(const std::vector<ScoredLabel>& scored, bool normalized, bool renorm) {
  const auto lps = label_logprobs(scored, normalized);
  if (renorm) return softmax(lps);
  std::vector<double> out;
  for (double lp : lps) out.push_back(std::exp(lp));
  return out;
}

struct Runner {
  const ExperimentConfig& cfg;
  const ExperimentData& data;
  Scorer& scorer;
  PromptTemplate tpl;
  std::vector<Method> methods;
  std::optional<LabelSet> labels;  // classification only
  std::size_t workers;

  Runner(const ExperimentConfig& c, const ExperimentData& d, Scorer& s)
      : cfg(c), data(d), scorer(s), tpl(c.prompt()), workers(c.backend.max_in_flight) {
    for (const auto& m : cfg.methods) methods.push_back(parse_method(m));
    if (!data.mcqa) labels = tokenize_label_set(scorer, tpl.answer_prefix, data.test.label_texts);
  }

  bool wants(std::initializer_list<Method> ms) const {
    for (Method m : ms)
      if (std::find(methods.begin(), methods.end(), m) != methods.end()) return true;
    return false;
  }

  DomainContextOptions dc_options() const {
    return {cfg.metrics.dc_inputs, cfg.metrics.dc_min_words, cfg.metrics.dc_max_words, cfg.metrics.baseline_renorm};
  }

  Baselines content_free_and_domain(const DemonstrationSet& demos, const LabelSet& ls, std::uint64_t seed,
                                    std::size_t par) const {
    Baselines b;
    const auto probes = content_free_prompts(tpl, demos);
    std::vector<std::vector<ScoredLabel>> scored(probes.size());
    parallel_for(probes.size(), par, [&](std::size_t i) { scored[i] = score_label_set(scorer, probes[i], ls); });
    std::vector<std::vector<double>> raw, norm;
    for (const auto& s : scored) {
      raw.push_back(label_logprobs(s, false));
      norm.push_back(label_logprobs(s, true));
    }
    b.cf_raw = ensemble_baseline(raw, false, cfg.metrics.baseline_renorm);
    b.cf_norm = ensemble_baseline(norm, true, cfg.metrics.baseline_renorm);
    if (wants({Method::DC, Method::NDC})) {
      const auto texts = data.train_texts();
      auto dc = domain_context_baseline(scorer, texts, tpl, demos, ls, dc_options(), seed ^ kDomainSeedSalt, par);
      b.dc_raw = std::move(dc.raw);
      b.dc_norm = std::move(dc.normalized);
    }
    return b;
  }

  ExampleRecord evaluate(std::size_t index, const std::vector<ScoredLabel>& scored, const Baselines& b) const {
    ExampleRecord rec;
    rec.index = index;
    rec.gold = *data.test.examples[index].gold;
    for (const auto& s : scored) rec.label_tokens.push_back(s.n_tokens());
    const auto raw = compute_method(Method::RAW, scored, nullptr);
    for (Method m : methods) {
      const auto ms = m == Method::RAW ? raw : compute_method(m, scored, b.for_method(m));
      const auto p = predict(ms);
      rec.methods[std::string(method_name(m))] = {p.label_index, p.confidence,
                                                  kl_divergence(raw.confidence, ms.confidence)};
    }
    return rec;
  }

  SeedBlock run_seed(std::uint64_t seed, const DemonstrationSet& demos) const {
    SeedBlock block;
    block.seed = seed;
    block.demonstrations = demos.examples;
    const auto& test = data.test.examples;
    std::vector<std::vector<ScoredLabel>> scored(test.size());

    if (!data.mcqa) {
      Baselines b = content_free_and_domain(demos, *labels, seed, workers);
      parallel_for(test.size(), workers, [&](std::size_t i) {
        scored[i] = score_label_set(scorer, build_prompt(tpl, demos, test[i].input), *labels);
      });
      if (wants({Method::BC, Method::NBC})) {
        BatchMean raw(labels->size()), norm(labels->size());
        for (const auto& s : scored) {
          raw.add(space_probs(s, false, cfg.metrics.baseline_renorm));
          norm.add(space_probs(s, true, cfg.metrics.baseline_renorm));
        }
        b.bc_raw = raw.finish(false);
        b.bc_norm = norm.finish(true);
      }
      for (auto [name, vec] : {std::pair{"cf_raw", &b.cf_raw}, std::pair{"cf_norm", &b.cf_norm},
                               std::pair{"dc_raw", &b.dc_raw}, std::pair{"dc_norm", &b.dc_norm},
                               std::pair{"bc_raw", &b.bc_raw}, std::pair{"bc_norm", &b.bc_norm}})
        if (*vec) block.baselines[name] = (*vec)->probs;
      block.examples.resize(test.size());
      for (std::size_t i = 0; i < test.size(); ++i) block.examples[i] = evaluate(i, scored[i], b);
    } else {
      block.examples.resize(test.size());
      parallel_for(test.size(), workers, [&](std::size_t i) {
        const auto ls = tokenize_label_set(scorer, tpl.answer_prefix, test[i].choices);
        const Baselines b = content_free_and_domain(demos, ls, seed, 1);
        scored[i] = score_label_set(scorer, build_prompt(tpl, demos, test[i].input), ls);
        block.examples[i] = evaluate(i, scored[i], b);
      });
    }
    for (const auto& s : scored) block.imputed_scores += count_imputed(s);

    const std::size_t K = n_classes();
    for (Method m : methods) {
      const std::string name(method_name(m));
      std::vector<std::size_t> preds, golds;
      std::vector<double> conf;
      std::vector<bool> correct;
      double kl = 0.0;
      for (const auto& r : block.examples) {
        const auto& o = r.methods.at(name);
        preds.push_back(o.label);
        golds.push_back(r.gold);
        conf.push_back(o.confidence);
        correct.push_back(o.label == r.gold);
        kl += o.kl_from_raw;
      }
      SeedMetrics sm;
      sm.macro_f1 = macro_f1(preds, golds, K);
      sm.accuracy = static_cast<double>(std::count(correct.begin(), correct.end(), true)) /
                    static_cast<double>(correct.size());
      sm.ece = expected_calibration_error(conf, correct, cfg.metrics.bins);
      sm.kl_raw_vs_method = kl / static_cast<double>(block.examples.size());
      block.metrics[name] = sm;
    }
    return block;
  }

  std::size_t n_classes() const {
    if (labels) return labels->size();
    std::size_t K = 0;
    for (const auto& e : data.test.examples) K = std::max(K, e.choices.size());
    return K;
  }
};

inline std::vector<LengthRow> length_rows(const RunReport& r, const std::string& method) {
  std::vector<LengthRow> rows;
  if (r.labels) {
    const auto& ls = *r.labels;
    std::vector<std::size_t> pred(ls.size(), 0), gold(ls.size(), 0);
    for (const auto& s : r.seeds) {
      if (s.status != "ok") continue;
      for (const auto& e : s.examples) {
        ++pred[e.methods.at(method).label];
        ++gold[e.gold];
      }
    }
    const auto enr = enrichment_factor(pred, gold);
    for (const auto& l : ls)
      rows.push_back({l.text, l.n_tokens(), normalized_label_length(l, ls), pred[l.index], gold[l.index], enr[l.index]});
    return rows;
  }
  // Per-example candidate sets: bucket by normalized length (tenths).
  constexpr std::size_t kBuckets = 11;
  std::vector<std::size_t> pred(kBuckets, 0), gold(kBuckets, 0);
  auto bucket = [](const std::vector<std::size_t>& toks, std::size_t i) {
    const auto [lo, hi] = std::minmax_element(toks.begin(), toks.end());
    if (*hi == *lo) return std::size_t{0};
    const double nl = static_cast<double>(toks[i] - *lo) / static_cast<double>(*hi - *lo);
    return static_cast<std::size_t>(std::lround(nl * 10.0));
  };
  for (const auto& s : r.seeds) {
    if (s.status != "ok") continue;
    for (const auto& e : s.examples) {
      ++pred[bucket(e.label_tokens, e.methods.at(method).label)];
      ++gold[bucket(e.label_tokens, e.gold)];
    }
  }
  const auto enr = enrichment_factor(pred, gold);
  for (std::size_t b = 0; b < kBuckets; ++b)
    rows.push_back({"len" + std::to_string(b * 10) + "%", 0, static_cast<double>(b) / 10.0, pred[b], gold[b], enr[b]});
  return rows;
}

/// Fills aggregates, significance and status from the seed blocks.
inline void aggregate(RunReport& r, const MetricSettings& ms) {
  std::vector<const SeedBlock*> ok;
  for (const auto& s : r.seeds)
    if (s.status == "ok") ok.push_back(&s);
  r.status = ok.size() == r.seeds.size() ? "ok" : ok.empty() ? "failed" : "partial";
  r.aggregates.clear();
  r.significance.clear();
  if (ok.empty()) return;

  std::map<std::string, std::vector<double>> f1s;
  for (const auto& m : r.methods) {
    MethodAggregate a;
    a.n_seeds = ok.size();
    std::vector<double> f1, conf;
    std::vector<bool> correct;
    double acc = 0.0, kl = 0.0;
    std::size_t n_ex = 0;
    for (const auto* s : ok) {
      f1.push_back(s->metrics.at(m).macro_f1);
      acc += s->metrics.at(m).accuracy;
      for (const auto& e : s->examples) {
        const auto& o = e.methods.at(m);
        conf.push_back(o.confidence);
        correct.push_back(o.label == e.gold);
        kl += o.kl_from_raw;
        ++n_ex;
      }
    }
    a.macro_f1_mean = std::accumulate(f1.begin(), f1.end(), 0.0) / static_cast<double>(f1.size());
    a.accuracy_mean = acc / static_cast<double>(ok.size());
    if (f1.size() >= 2) {
      a.macro_f1_std = sample_std(f1);
      a.sensitivity = sensitivity_stats({f1});
    }
    a.reliability = reliability_diagram(conf, correct, ms.bins);
    a.ece = a.reliability.ece();
    a.kl_raw_vs_method = kl / static_cast<double>(n_ex);
    a.by_length = length_rows(r, m);
    r.aggregates[m] = std::move(a);
    f1s[m] = std::move(f1);
  }
  for (std::size_t i = 0; i < r.methods.size(); ++i)
    for (std::size_t j = i + 1; j < r.methods.size(); ++j) {
      SignificanceEntry e{r.methods[i], r.methods[j], std::nullopt, {}};
      try {
        e.test = wilcoxon_signed_rank(f1s[r.methods[i]], f1s[r.methods[j]], ms.alpha);
      } catch (const TooFewPairs& ex) {
        e.note = ex.what();
      }
      r.significance.push_back(std::move(e));
    }
}

inline RunReport run_with_demos(const ExperimentConfig& cfg, const ExperimentData& data, Runner& runner,
                                std::size_t k, const std::vector<DemonstrationSet>& demos_by_seed) {
  RunReport r;
  r.timestamp = utc_timestamp();
  r.config = cfg;
  r.k = k;
  r.methods = cfg.methods;
  r.labels = runner.labels;
  for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
    const auto seed = cfg.seeds[si];
    try {
      r.seeds.push_back(runner.run_seed(seed, demos_by_seed[si]));
    } catch (const BackendError& e) {
      SeedBlock failed;
      failed.seed = seed;
      failed.status = "failed";
      failed.error = e.kind() + ": " + e.what();
      failed.demonstrations = demos_by_seed[si].examples;
      r.seeds.push_back(std::move(failed));
      r.notes.push_back("seed " + std::to_string(seed) + " failed (" + e.kind() + "); excluded from aggregates");
    }
  }
  std::size_t imputed = 0;
  for (const auto& s : r.seeds) imputed += s.imputed_scores;
  if (imputed)
    r.notes.push_back(std::to_string(imputed) + " label scores were missing from the mock table and imputed");
  aggregate(r, cfg.metrics);
  (void)data;
  return r;
}

inline std::vector<std::string> demo_label_texts(const ExperimentData& d) { return d.train.label_texts; }

}  // namespace detail

/// One report per seed set at a single k.
inline RunReport run_experiment(const ExperimentConfig& cfg, const ExperimentData& data, Scorer& scorer) {
  cfg.validate();
  detail::Runner runner(cfg, data, scorer);
  std::vector<DemonstrationSet> demos;
  for (auto seed : cfg.seeds)
    demos.push_back(select_balanced_fewshot(data.train.examples, cfg.k, detail::demo_label_texts(data), seed));
  return detail::run_with_demos(cfg, data, runner, cfg.k, demos);
}

/// One report per k, with demonstration sets nested across ks for each seed.
inline std::vector<RunReport> sweep_k(const ExperimentConfig& cfg, const std::vector<std::size_t>& ks,
                                      const ExperimentData& data, Scorer& scorer) {
  cfg.validate();
  if (ks.empty()) throw ConfigError("sweep needs at least one k");
  for (std::size_t i = 1; i < ks.size(); ++i)
    if (ks[i] <= ks[i - 1]) throw ConfigError("ks must be strictly ascending");
  detail::Runner runner(cfg, data, scorer);
  std::vector<std::vector<DemonstrationSet>> series;  // [seed][k]
  for (auto seed : cfg.seeds)
    series.push_back(nested_fewshot_series(data.train.examples, ks, detail::demo_label_texts(data), seed));
  std::vector<RunReport> out;
  for (std::size_t ki = 0; ki < ks.size(); ++ki) {
    ExperimentConfig at_k = cfg;
    at_k.k = ks[ki];
    std::vector<DemonstrationSet> demos;
    for (const auto& s : series) demos.push_back(s[ki]);
    out.push_back(detail::run_with_demos(at_k, data, runner, ks[ki], demos));
  }
  return out;
}

/// Writes each report under dir/k<k>/ and the KL-vs-k table at dir/kl_vs_k.tsv.
inline void emit_sweep(const std::vector<RunReport>& reports, const std::filesystem::path& dir) {
  for (const auto& r : reports) emit_report(r, dir / ("k" + std::to_string(r.k)));
  std::filesystem::create_directories(dir);
  detail::write_file(dir / "kl_vs_k.tsv", kl_vs_k_tsv(reports));
}

// ---------------------------------------------------------------------------
// Prompt plan (what a run will score)
// ---------------------------------------------------------------------------

enum class PromptRole { QUERY, CONTENT_FREE, DOMAIN };

struct PlannedPrompt {
  PromptRole role;
  std::uint64_t seed;
  std::size_t k;
  std::string prompt;
  std::string query;                    // the text in the query slot
  std::optional<std::size_t> example;   // test index for QUERY prompts
  std::vector<std::string> label_texts; // candidates scored against this prompt
};

/// Every prompt a run (or sweep, when cfg.ks is set) will score, in
/// deterministic order. Used to author mock tables.
inline std::vector<PlannedPrompt> plan_prompts(const ExperimentConfig& cfg, const ExperimentData& data) {
  const auto tpl = cfg.prompt();
  const std::vector<std::size_t> ks = cfg.ks.empty() ? std::vector<std::size_t>{cfg.k} : cfg.ks;
  const bool dc = cfg.uses("dc") || cfg.uses("ndc");
  DomainContextOptions dco{cfg.metrics.dc_inputs, cfg.metrics.dc_min_words, cfg.metrics.dc_max_words,
                           cfg.metrics.baseline_renorm};
  std::vector<PlannedPrompt> out;
  for (auto seed : cfg.seeds) {
    const auto series = nested_fewshot_series(data.train.examples, ks, detail::demo_label_texts(data), seed);
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      const auto& demos = series[ki];
      std::vector<std::string> pseudo;
      if (dc) pseudo = domain_pseudo_inputs(data.train_texts(), dco, seed ^ kDomainSeedSalt);
      auto add_context = [&](const std::vector<std::string>& labels) {
        for (auto q : kContentFreeInputs)
          out.push_back({PromptRole::CONTENT_FREE, seed, ks[ki], build_prompt(tpl, demos, q), std::string(q), {},
                         labels});
        for (const auto& q : pseudo)
          out.push_back({PromptRole::DOMAIN, seed, ks[ki], build_prompt(tpl, demos, q), q, {}, labels});
      };
      if (!data.mcqa) add_context(data.test.label_texts);
      for (std::size_t i = 0; i < data.test.examples.size(); ++i) {
        const auto& ex = data.test.examples[i];
        const auto& labels = data.mcqa ? ex.choices : data.test.label_texts;
        if (data.mcqa) add_context(labels);
        out.push_back({PromptRole::QUERY, seed, ks[ki], build_prompt(tpl, demos, ex.input), ex.input, i, labels});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross-report pooling
// ---------------------------------------------------------------------------

struct CrossReport {
  std::vector<std::string> sources;
  std::vector<std::string> methods;
  std::map<std::string, double> macro_f1_mean;
  std::map<std::string, SensitivityStats> sensitivity;  // one cell per report
  std::vector<SignificanceEntry> significance;          // pairs pooled over (report x seed)
  double alpha = 0.05;
};

inline void to_json(nlohmann::json& j, const CrossReport& c) {
  j = {{"schema_version", kSchemaVersion}, {"sources", c.sources}, {"methods", c.methods},
       {"macro_f1_mean", c.macro_f1_mean}, {"sensitivity", c.sensitivity}, {"significance", c.significance},
       {"alpha", c.alpha}};
}

/// Pools per-seed macro-F1 across reports (e.g. several datasets for one
/// model). Seeds are paired by position within each report; only seeds that
/// succeeded for both methods contribute.
inline CrossReport pool_reports(const std::vector<RunReport>& reports, const std::vector<std::string>& sources,
                                double alpha = 0.05) {
  if (reports.empty()) throw InvalidArgument("no reports to pool");
  CrossReport c;
  c.sources = sources;
  c.alpha = alpha;
  for (const auto& m : reports.front().methods) {
    bool everywhere = true;
    for (const auto& r : reports)
      everywhere = everywhere && std::find(r.methods.begin(), r.methods.end(), m) != r.methods.end();
    if (everywhere) c.methods.push_back(m);
  }
  std::map<std::string, std::vector<std::vector<double>>> cells;
  for (const auto& m : c.methods) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : reports) {
      std::vector<double> cell;
      for (const auto& s : r.seeds)
        if (s.status == "ok") cell.push_back(s.metrics.at(m).macro_f1);
      for (double v : cell) sum += v;
      n += cell.size();
      if (cell.size() >= 2) cells[m].push_back(std::move(cell));
    }
    c.macro_f1_mean[m] = n ? sum / static_cast<double>(n) : 0.0;
    if (!cells[m].empty()) c.sensitivity[m] = sensitivity_stats(cells[m]);
  }
  for (std::size_t i = 0; i < c.methods.size(); ++i)
    for (std::size_t j = i + 1; j < c.methods.size(); ++j) {
      std::vector<double> a, b;
      for (const auto& r : reports)
        for (const auto& s : r.seeds)
          if (s.status == "ok") {
            a.push_back(s.metrics.at(c.methods[i]).macro_f1);
            b.push_back(s.metrics.at(c.methods[j]).macro_f1);
          }
      SignificanceEntry e{c.methods[i], c.methods[j], std::nullopt, {}};
      try {
        e.test = wilcoxon_signed_rank(a, b, alpha);
      } catch (const TooFewPairs& ex) {
        e.note = ex.what();
      }
      c.significance.push_back(std::move(e));
    }
  return c;
}

inline std::string significance_tsv(const CrossReport& c) {
  std::string out = "a\tb\tn\tstatistic\tp_value\tsignificant\tnote\n";
  for (const auto& e : c.significance) {
    out += e.a + "\t" + e.b + "\t";
    if (e.test)
      out += std::to_string(e.test->n) + "\t" + detail::fmt_num(e.test->statistic) + "\t" +
             detail::fmt_num(e.test->p_value) + "\t" + (e.test->significant ? "1" : "0") + "\t";
    else
      out += "\t\t\t\t";
    out += e.note + "\n";
  }
  return out;
}

}  // namespace ncc
