#pragma once

// Prompt rendering, class-balanced demonstration sampling and the
// content-free probe ensemble.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ncc/core_types.hpp"
#include "ncc/scoring.hpp"

namespace ncc {

class InsufficientExamples : public Error {
 public:
  explicit InsufficientExamples(const std::string& what) : Error("InsufficientExamples", what) {}
};

struct PromptTemplate {
  std::string input_prefix = "Text: ";
  std::string answer_prefix = "Label:";
  std::string separator = "\n\n";

  static PromptTemplate classification() { return {}; }
  static PromptTemplate mcqa() { return {"Question: ", "Answer:", "\n\n"}; }

  void validate() const {
    if (answer_prefix.empty()) throw InvalidArgument("answer_prefix is empty");
    if (answer_prefix.back() == ' ')
      throw InvalidArgument("answer_prefix must not end with a space; labels carry their own");
  }

  bool operator==(const PromptTemplate&) const = default;
};

inline void to_json(nlohmann::json& j, const PromptTemplate& t) {
  j = {{"input_prefix", t.input_prefix}, {"answer_prefix", t.answer_prefix}, {"separator", t.separator}};
}

inline void from_json(const nlohmann::json& j, PromptTemplate& t) {
  PromptTemplate d;
  t.input_prefix = j.value("input_prefix", d.input_prefix);
  t.answer_prefix = j.value("answer_prefix", d.answer_prefix);
  t.separator = j.value("separator", d.separator);
  t.validate();
}

/// "classification", "mcqa", a path to a JSON template file, or an inline object.
inline PromptTemplate resolve_template(const nlohmann::json& source) {
  if (source.is_object()) return source.get<PromptTemplate>();
  const auto name = source.get<std::string>();
  if (name == "classification") return PromptTemplate::classification();
  if (name == "mcqa") return PromptTemplate::mcqa();
  std::ifstream in(name);
  if (!in) throw InvalidArgument("unknown template '" + name + "'");
  return nlohmann::json::parse(in).get<PromptTemplate>();
}

struct Demonstration {
  std::string input;
  std::string label;

  bool operator==(const Demonstration&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Demonstration, input, label)

/// An ordered context of k labeled examples.
struct DemonstrationSet {
  std::vector<Demonstration> examples;
  /// Dataset positions of the chosen examples, in presentation order.
  std::vector<std::size_t> source_indices;
  std::uint64_t seed = 0;

  std::size_t k() const noexcept { return examples.size(); }
  bool operator==(const DemonstrationSet&) const = default;
};

inline std::string build_prompt(const PromptTemplate& tpl, const DemonstrationSet& demos, std::string_view query) {
  std::string out;
  for (const auto& d : demos.examples) {
    out += tpl.input_prefix;
    out += d.input;
    out += '\n';
    out += tpl.answer_prefix;
    out += ' ';
    out += d.label;
    out += tpl.separator;
  }
  out += tpl.input_prefix;
  out += query;
  out += '\n';
  out += tpl.answer_prefix;
  return out;
}

/// Continuation text for a label: the label with one leading space.
inline std::string label_continuation_text(std::string_view label_text) { return " " + std::string(label_text); }

/// Token list the backend produced for " " + label.text.
inline const std::vector<std::string>& label_continuation_tokens(const Label& label) {
  if (label.tokens.empty()) throw EmptyTokenization("label '" + label.text + "' has no tokens");
  return label.tokens;
}

/// Asks the backend to tokenize " " + text for each label and validates the
/// result. `context` is the text the label follows (the answer prefix).
inline LabelSet tokenize_label_set(Scorer& scorer, std::string_view context, const std::vector<std::string>& texts,
                                   std::string name = {}) {
  std::vector<std::vector<std::string>> report;
  report.reserve(texts.size());
  for (const auto& t : texts) {
    if (t.empty()) throw EmptyTokenization("label text is empty");
    report.push_back(scorer.tokenize(context, label_continuation_text(t)));
  }
  return validate_label_set(texts, report, std::move(name));
}

// ---------------------------------------------------------------------------
// Seeded sampling
// ---------------------------------------------------------------------------

namespace detail {

// std::uniform_int_distribution and std::shuffle are implementation-defined;
// these are not, so seeded draws reproduce across standard libraries.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do x = rng();
  while (x >= limit);
  return x % bound;
}

template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_below(rng, i)]);
}

struct FewshotPool {
  std::vector<std::size_t> classes;                  // class ids, ascending
  std::map<std::size_t, std::vector<std::size_t>> remaining;  // class -> dataset indices
  std::map<std::size_t, std::size_t> taken;
  std::vector<std::size_t> priority;                 // seeded class order for tie-breaks
  std::size_t available = 0;
};

inline FewshotPool make_pool(const std::vector<Example>& dataset, std::mt19937_64& rng) {
  FewshotPool pool;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    if (dataset[i].gold) pool.remaining[*dataset[i].gold].push_back(i);
  for (const auto& [c, idx] : pool.remaining) {
    pool.classes.push_back(c);
    pool.taken[c] = 0;
    pool.available += idx.size();
  }
  pool.priority = pool.classes;
  shuffle(pool.priority, rng);
  return pool;
}

// Draws n more examples, always topping up the least-represented class that
// still has examples left (ties resolved by the seeded class priority).
inline std::vector<std::size_t> draw_balanced(FewshotPool& pool, std::size_t n, std::mt19937_64& rng) {
  std::map<std::size_t, std::size_t> quota;
  for (std::size_t step = 0; step < n; ++step) {
    std::size_t best = 0;
    bool found = false;
    for (std::size_t c : pool.priority) {
      const std::size_t have = pool.taken[c] + quota[c];
      if (have >= pool.taken[c] + pool.remaining[c].size()) continue;
      if (!found || have < pool.taken[best] + quota[best]) {
        best = c;
        found = true;
      }
    }
    if (!found) throw InsufficientExamples("ran out of labeled examples");
    ++quota[best];
  }
  std::vector<std::size_t> picked;
  for (std::size_t c : pool.classes) {
    auto& rem = pool.remaining[c];
    const std::size_t q = quota[c];
    // partial Fisher-Yates: move q uniform draws to the back
    for (std::size_t j = 0; j < q; ++j) {
      const std::size_t live = rem.size() - j;
      std::swap(rem[uniform_below(rng, live)], rem[live - 1]);
    }
    picked.insert(picked.end(), rem.end() - static_cast<std::ptrdiff_t>(q), rem.end());
    rem.resize(rem.size() - q);
    pool.taken[c] += q;
  }
  shuffle(picked, rng);
  return picked;
}

inline DemonstrationSet materialize(const std::vector<Example>& dataset, const std::vector<std::size_t>& idx,
                                    const std::vector<std::string>& label_texts, std::uint64_t seed) {
  DemonstrationSet out;
  out.seed = seed;
  out.source_indices = idx;
  for (std::size_t i : idx) {
    const auto& ex = dataset[i];
    const std::size_t g = *ex.gold;
    // MCQA records carry their own candidate texts
    const auto& texts = ex.choices.empty() ? label_texts : ex.choices;
    if (g >= texts.size()) throw InvalidArgument("gold index out of range in demonstration pool");
    out.examples.push_back({ex.input, texts[g]});
  }
  return out;
}

}  // namespace detail

/// Nested demonstration sets for ascending ks: each set extends the previous
/// one, so the k'-set is exactly the first k' entries of every larger set.
/// Within each extension, counts stay as balanced across classes as the
/// data allow.
inline std::vector<DemonstrationSet> nested_fewshot_series(const std::vector<Example>& dataset,
                                                           const std::vector<std::size_t>& ks,
                                                           const std::vector<std::string>& label_texts,
                                                           std::uint64_t seed) {
  for (std::size_t i = 1; i < ks.size(); ++i)
    if (ks[i] <= ks[i - 1]) throw InvalidArgument("ks must be strictly ascending");
  std::vector<DemonstrationSet> out;
  if (ks.empty()) return out;
  if (ks.back() > 0 && dataset.empty()) throw InvalidArgument("demonstration pool is empty");

  std::mt19937_64 rng(seed);
  auto pool = detail::make_pool(dataset, rng);
  if (ks.back() > pool.available)
    throw InsufficientExamples("need " + std::to_string(ks.back()) + " demonstrations but only " +
                               std::to_string(pool.available) + " labeled examples exist");

  std::vector<std::size_t> order;
  for (std::size_t k : ks) {
    auto more = detail::draw_balanced(pool, k - order.size(), rng);
    order.insert(order.end(), more.begin(), more.end());
    out.push_back(detail::materialize(dataset, order, label_texts, seed));
  }
  return out;
}

/// k demonstrations with per-class counts differing by at most one (when
/// every class has enough examples). Extra slots go to classes in seeded
/// order; presentation order is a seeded shuffle.
inline DemonstrationSet select_balanced_fewshot(const std::vector<Example>& dataset, std::size_t k,
                                                const std::vector<std::string>& label_texts, std::uint64_t seed) {
  return nested_fewshot_series(dataset, {k}, label_texts, seed).front();
}

// ---------------------------------------------------------------------------
// Content-free probes
// ---------------------------------------------------------------------------

inline constexpr std::array<std::string_view, 5> kContentFreeInputs = {"", " ", "N/A", "[MASK]", "Lorem ipsum"};

inline std::vector<std::string> content_free_prompts(const PromptTemplate& tpl, const DemonstrationSet& demos) {
  std::vector<std::string> out;
  out.reserve(kContentFreeInputs.size());
  for (auto q : kContentFreeInputs) out.push_back(build_prompt(tpl, demos, q));
  return out;
}

}  // namespace ncc
