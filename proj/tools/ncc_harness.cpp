// ncc-harness: run calibration experiments against a scoring backend.
//
//   ncc-harness run     --config exp.json [--method ncc]... [--k 5] [--seed 0]... [--backend mock] [--out DIR]
//   ncc-harness sweep-k --config exp.json --ks 0,2,5 [...]
//   ncc-harness report  --in a/report.json --in b/report.json [--out DIR]
//
// Exit codes: 0 success, 2 config error, 3 backend error, 4 partial failure.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ncc/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitBackend = 3;
constexpr int kExitPartial = 4;

struct RunFlags {
  std::string config;
  std::vector<std::string> methods;
  std::optional<std::size_t> k;
  std::vector<std::uint64_t> seeds;
  std::string backend;
  std::string out;
  std::vector<std::size_t> ks;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--config", f.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--method", f.methods, "Method to evaluate (repeatable): raw norm cc ncc dc ndc bc nbc");
  cmd->add_option("--k", f.k, "Number of demonstrations");
  cmd->add_option("--seed", f.seeds, "Seed (repeatable)");
  cmd->add_option("--backend", f.backend, "Backend kind")->check(CLI::IsMember({"mock", "remote"}));
  cmd->add_option("--out", f.out, "Output directory");
}

ncc::ExperimentConfig apply_flags(const RunFlags& f) {
  auto cfg = ncc::load_config(f.config);
  if (!f.methods.empty()) cfg.methods = f.methods;
  if (f.k) cfg.k = *f.k;
  if (!f.seeds.empty()) cfg.seeds = f.seeds;
  if (!f.backend.empty()) cfg.backend.kind = f.backend;
  if (!f.out.empty()) cfg.output = f.out;
  if (!f.ks.empty()) cfg.ks = f.ks;
  cfg.validate();
  return cfg;
}

std::filesystem::path output_dir(const ncc::ExperimentConfig& cfg, const RunFlags& f) {
  // --out is relative to the working directory; config "output" to the config file
  return f.out.empty() ? std::filesystem::path(cfg.resolve(cfg.output)) : std::filesystem::path(f.out);
}

void print_summary(const ncc::RunReport& r) {
  std::cout << "k=" << r.k << " status=" << r.status << "\n" << ncc::summary_csv(r);
  for (const auto& n : r.notes) std::cout << "note: " << n << "\n";
}

int status_code(const std::vector<ncc::RunReport>& reports) {
  bool any_failed = false, any_partial = false;
  for (const auto& r : reports) {
    any_failed = any_failed || r.status == "failed";
    any_partial = any_partial || r.status == "partial";
  }
  if (any_failed) return kExitBackend;
  if (any_partial) return kExitPartial;
  return kExitOk;
}

int cmd_run(const RunFlags& f) {
  const auto cfg = apply_flags(f);
  const auto data = ncc::load_data(cfg);
  auto scorer = ncc::make_scorer(ncc::resolve_backend(cfg));
  const auto report = ncc::run_experiment(cfg, data, *scorer);
  ncc::emit_report(report, output_dir(cfg, f));
  print_summary(report);
  return status_code({report});
}

int cmd_sweep(const RunFlags& f) {
  const auto cfg = apply_flags(f);
  if (cfg.ks.empty()) throw ncc::ConfigError("sweep-k needs --ks or a 'ks' config entry");
  const auto data = ncc::load_data(cfg);
  auto scorer = ncc::make_scorer(ncc::resolve_backend(cfg));
  const auto reports = ncc::sweep_k(cfg, cfg.ks, data, *scorer);
  ncc::emit_sweep(reports, output_dir(cfg, f));
  for (const auto& r : reports) print_summary(r);
  std::cout << ncc::kl_vs_k_tsv(reports);
  return status_code(reports);
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out, double alpha) {
  std::vector<ncc::RunReport> reports;
  for (const auto& p : inputs) reports.push_back(ncc::load_report(p));
  const auto pooled = ncc::pool_reports(reports, inputs, alpha);
  const std::string tsv = ncc::significance_tsv(pooled);
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    ncc::detail::write_file(std::filesystem::path(out) / "pooled.json", nlohmann::json(pooled).dump(2) + "\n");
    ncc::detail::write_file(std::filesystem::path(out) / "significance.tsv", tsv);
  }
  for (const auto& [m, f1] : pooled.macro_f1_mean) {
    std::cout << m << "\tmacro_f1_mean=" << ncc::detail::fmt_num(f1);
    if (auto it = pooled.sensitivity.find(m); it != pooled.sensitivity.end())
      std::cout << "\tmean_std=" << ncc::detail::fmt_num(it->second.mean_std)
                << "\tmean_cv=" << ncc::detail::fmt_num(it->second.mean_cv);
    std::cout << "\n";
  }
  std::cout << tsv;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Label-length-aware calibration harness for LM classification"};
  app.require_subcommand(1);

  RunFlags run_flags, sweep_flags;
  auto* run = app.add_subcommand("run", "Evaluate methods at one k over all seeds");
  add_run_flags(run, run_flags);
  auto* sweep = app.add_subcommand("sweep-k", "Evaluate over nested demonstration sets for several k");
  add_run_flags(sweep, sweep_flags);
  sweep->add_option("--ks", sweep_flags.ks, "Ascending k values")->delimiter(',');

  std::vector<std::string> report_inputs;
  std::string report_out;
  double alpha = 0.05;
  auto* report = app.add_subcommand("report", "Pool run reports: significance and seed sensitivity");
  report->add_option("--in", report_inputs, "report.json (repeatable)")->required()->check(CLI::ExistingFile);
  report->add_option("--out", report_out, "Directory for pooled.json and significance.tsv");
  report->add_option("--alpha", alpha, "Significance level");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_flags);
    if (*sweep) return cmd_sweep(sweep_flags);
    if (*report) return cmd_report(report_inputs, report_out, alpha);
  } catch (const ncc::BackendError& e) {
    std::cerr << "backend error: " << e.kind() << ": " << e.what() << "\n";
    return kExitBackend;
  } catch (const ncc::Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}
