#pragma once

// Line-delimited JSON dataset ingestion.
//
//   classification: {"text": "...", "label": "positive"}   (label may also be
//                   an integer index into the label file, or absent)
//   MCQA:           {"question": "...", "choices": ["...", ...], "answer": 2}

#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ncc/core_types.hpp"

namespace ncc {

class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : Error("ParseError", path + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};
class UnknownLabel : public Error {
 public:
  explicit UnknownLabel(const std::string& what) : Error("UnknownLabel", what) {}
};
class BadChoiceIndex : public Error {
 public:
  explicit BadChoiceIndex(const std::string& what) : Error("BadChoiceIndex", what) {}
};

struct IngestOptions {
  /// Fixed label texts (from a label file). When absent, labels are
  /// inferred in order of first appearance.
  std::optional<std::vector<std::string>> labels;
  /// Allow labels not yet in `labels` to be appended.
  bool extend_labels = false;
  /// original text -> replacement, applied to every string label
  std::map<std::string, std::string> label_map;
};

struct IngestedDataset {
  std::vector<Example> examples;
  std::vector<std::string> label_texts;  // empty for MCQA
  bool mcqa = false;
};

inline std::map<std::string, std::string> load_label_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open label map '" + path + "'");
  return nlohmann::json::parse(in).get<std::map<std::string, std::string>>();
}

/// Accepts a bare JSON array of label texts or {"labels": [...]} where each
/// entry is a string or {"text": ...}.
inline std::vector<std::string> load_label_file(const std::string& path,
                                                const std::map<std::string, std::string>& label_map = {}) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open label file '" + path + "'");
  const auto j = nlohmann::json::parse(in);
  const auto& arr = j.is_array() ? j : j.at("labels");
  std::vector<std::string> out;
  for (const auto& e : arr) {
    std::string t = e.is_string() ? e.get<std::string>() : e.at("text").get<std::string>();
    if (auto it = label_map.find(t); it != label_map.end()) t = it->second;
    out.push_back(std::move(t));
  }
  return out;
}

inline IngestedDataset ingest_dataset(const std::string& path, const IngestOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open dataset '" + path + "'");

  IngestedDataset out;
  const bool fixed = opt.labels.has_value();
  if (fixed) out.label_texts = *opt.labels;
  const bool may_extend = !fixed || opt.extend_labels;
  std::optional<bool> mcqa;

  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path, lineno, e.what());
    }
    if (!rec.is_object()) throw ParseError(path, lineno, "record is not a JSON object");
    const bool is_mcqa = rec.contains("question");
    if (mcqa && *mcqa != is_mcqa) throw ParseError(path, lineno, "mixes classification and MCQA records");
    mcqa = is_mcqa;

    try {
      Example ex;
      if (is_mcqa) {
        ex.input = rec.at("question").get<std::string>();
        ex.choices = rec.at("choices").get<std::vector<std::string>>();
        if (ex.choices.empty()) throw ParseError(path, lineno, "no choices");
        if (rec.contains("answer") && !rec["answer"].is_null()) {
          const auto a = rec["answer"].get<long long>();
          if (a < 0 || static_cast<std::size_t>(a) >= ex.choices.size())
            throw BadChoiceIndex(path + ":" + std::to_string(lineno) + ": answer " + std::to_string(a) +
                                 " out of range for " + std::to_string(ex.choices.size()) + " choices");
          ex.gold = static_cast<std::size_t>(a);
        }
      } else {
        ex.input = rec.at("text").get<std::string>();
        if (rec.contains("label") && !rec["label"].is_null()) {
          const auto& lab = rec["label"];
          if (lab.is_number_integer()) {
            const auto idx = lab.get<long long>();
            if (!fixed || idx < 0 || static_cast<std::size_t>(idx) >= out.label_texts.size())
              throw UnknownLabel(path + ":" + std::to_string(lineno) + ": label index " + std::to_string(idx) +
                                 " has no entry in the label file");
            ex.gold = static_cast<std::size_t>(idx);
          } else {
            std::string text = lab.get<std::string>();
            if (auto it = opt.label_map.find(text); it != opt.label_map.end()) text = it->second;
            std::size_t idx = 0;
            while (idx < out.label_texts.size() && out.label_texts[idx] != text) ++idx;
            if (idx == out.label_texts.size()) {
              if (!may_extend)
                throw UnknownLabel(path + ":" + std::to_string(lineno) + ": label '" + text +
                                   "' is not in the label file");
              out.label_texts.push_back(text);
            }
            ex.gold = idx;
          }
        }
      }
      out.examples.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path, lineno, e.what());
    }
  }
  out.mcqa = mcqa.value_or(false);
  if (out.mcqa) out.label_texts.clear();
  return out;
}

}  // namespace ncc
