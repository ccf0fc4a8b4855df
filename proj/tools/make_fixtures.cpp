// ncc-make-fixtures: regenerate the bundled test fixtures.
//
//   ncc-make-fixtures [DIR]     (default: tests/fixtures)
//
// Writes the synthetic datasets, their mock score tables and the golden
// summary for the bias fixture. Output is deterministic.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "ncc/harness.hpp"
#include "synthetic.hpp"

namespace fs = std::filesystem;
using namespace ncc;
using ncc::testing::write_json;
using ncc::testing::write_jsonl;

namespace {

void write_table(const fs::path& path, const MockScoreTable& table) {
  std::ofstream out(path);
  out << nlohmann::json(table).dump() << "\n";
}

ExperimentConfig base_config(const std::vector<std::string>& methods) {
  ExperimentConfig c;
  c.dataset = "test.jsonl";
  c.train = "train.jsonl";
  c.methods = methods;
  c.backend.kind = "mock";
  c.backend.mock_table = "mock_table.json";
  c.output = "out";
  return c;
}

/// Writes data files, config and a table covering the single-k run plus the
/// sweep, and returns the config as written.
ExperimentConfig write_classification(const fs::path& dir, const ExperimentConfig& cfg, const ExperimentData& data,
                                      const testing::TokenRule& rule) {
  fs::create_directories(dir);
  write_jsonl(dir / "test.jsonl", data.test.examples, data.test.label_texts);
  write_jsonl(dir / "train.jsonl", data.train.examples, data.train.label_texts);
  if (!data.mcqa) write_json(dir / "labels.json", data.test.label_texts);
  write_json(dir / "config.json", cfg);

  ExperimentConfig single = cfg;
  single.ks.clear();
  std::vector<ExperimentConfig> plans{single};
  if (!cfg.ks.empty()) plans.push_back(cfg);
  write_table(dir / "mock_table.json", testing::build_mock_table(plans, data, rule));
  return cfg;
}

void write_label_map(const fs::path& dir) {
  fs::create_directories(dir);
  write_json(dir / "20newsgroups.json", {{"alt.atheism", "Atheism & Secularism"},
                                         {"comp.graphics", "Computer Graphics"},
                                         {"comp.os.ms-windows.misc", "Windows OS"},
                                         {"comp.sys.ibm.pc.hardware", "IBM PC Hardware"},
                                         {"comp.sys.mac.hardware", "Macintosh Hardware"},
                                         {"comp.windows.x", "X Window System"},
                                         {"misc.forsale", "Classified Ads"},
                                         {"rec.autos", "Automobiles"},
                                         {"rec.motorcycles", "Motorcycles"},
                                         {"rec.sport.baseball", "Baseball"},
                                         {"rec.sport.hockey", "Hockey"},
                                         {"sci.crypt", "Cryptography"},
                                         {"sci.electronics", "Electronics"},
                                         {"sci.med", "Medicine"},
                                         {"sci.space", "Space & Astronomy"},
                                         {"soc.religion.christian", "Christianity"},
                                         {"talk.politics.guns", "Gun Politics"},
                                         {"talk.politics.mideast", "Middle East Politics"},
                                         {"talk.politics.misc", "General Politics"},
                                         {"talk.religion.misc", "General Religion"}});
}

/// 100 short news snippets whose text mentions the first word of the gold
/// label, for end-to-end runs against a live or in-process endpoint.
void write_smoke(const fs::path& dir) {
  fs::create_directories(dir);
  const std::vector<std::string> labels{"World", "Sports", "Business and Finance", "Science and Technology"};
  const char* fillers[] = {"officials said on Monday", "according to a new report", "in a statement released today",
                           "after weeks of speculation", "as analysts expected"};
  auto make = [&](std::size_t n, std::size_t offset) {
    std::vector<Example> out;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t g = (i + offset) % labels.size();
      std::string first = labels[g].substr(0, labels[g].find(' '));
      std::string text = "Item " + std::to_string(i) + ": " + first + " desk update, " + fillers[(i * 3) % 5] + ".";
      out.push_back({text, g, {}});
    }
    return out;
  };
  write_jsonl(dir / "test.jsonl", make(100, 0), labels);
  write_jsonl(dir / "train.jsonl", make(20, 1), labels);
  write_json(dir / "labels.json", labels);
  ExperimentConfig c = base_config({"raw", "norm", "cc", "ncc"});
  c.labels = "labels.json";
  c.k = 5;
  c.ks = {0, 5};
  c.seeds = {0};
  c.backend = {};
  c.backend.kind = "remote";
  c.backend.endpoint = "http://127.0.0.1:8000";
  c.backend.model = "any";
  write_json(dir / "config.json", c);
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::path("tests/fixtures");

  auto bias = base_config({"raw", "norm", "cc", "ncc", "dc", "ndc", "bc", "nbc"});
  bias.labels = "labels.json";
  bias.ks = {0, 2, 5};
  write_classification(root / "bias", bias, testing::bias_data(60, 40), testing::bias_rule);

  auto length = base_config({"raw", "norm", "cc", "ncc"});
  length.labels = "labels.json";
  length.seeds = {0, 1, 2};
  write_classification(root / "length_bias", length, testing::length_bias_data(200, 40),
                       testing::length_bias_rule);

  auto mcqa = base_config({"raw", "norm", "cc", "ncc"});
  mcqa.prompt_template = "mcqa";
  mcqa.k = 3;
  mcqa.seeds = {0, 1};
  write_classification(root / "mcqa", mcqa, testing::mcqa_data(), testing::mcqa_rule);

  write_smoke(root / "smoke");
  write_label_map(root / "label_maps");

  // golden summary: the bias fixture run through the file-based path
  const auto cfg = load_config((root / "bias" / "config.json").string());
  const auto data = load_data(cfg);
  auto scorer = make_scorer(resolve_backend(cfg));
  const auto report = run_experiment(cfg, data, *scorer);
  detail::write_file(root / "bias" / "golden_summary.csv", summary_csv(report));

  std::cout << "fixtures written to " << root.string() << "\n" << summary_csv(report);
  return 0;
}
