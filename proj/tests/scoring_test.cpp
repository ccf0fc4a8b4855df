#include "ncc/scoring.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "score_server.hpp"

namespace ncc {
namespace {

std::shared_ptr<const MockScoreTable> table_with(std::string_view prompt, std::vector<std::string> toks,
                                                 std::vector<double> lps) {
  auto t = std::make_shared<MockScoreTable>(-15.0);
  t->add(prompt, std::move(toks), std::move(lps));
  return t;
}

ScorerBackend remote(const std::string& endpoint) {
  ScorerBackend b;
  b.kind = ScorerBackend::Kind::REMOTE;
  b.endpoint = endpoint;
  b.model_id = "toy";
  b.timeout = std::chrono::milliseconds(2000);
  b.initial_backoff = std::chrono::milliseconds(5);
  return b;
}

TEST(PromptHash, IsStableFnv1a) {
  // FNV-1a 64 reference values
  EXPECT_EQ(prompt_hash(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(prompt_hash("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hash_from_hex(hash_to_hex(prompt_hash("Text: x\nLabel:"))), prompt_hash("Text: x\nLabel:"));
  EXPECT_THROW(hash_from_hex("xyz"), InvalidArgument);
}

TEST(MockScorer, TableLookup) {
  MockScorer s(table_with("Text: fine\nLabel:", {" good"}, {-0.105}));
  const std::vector<std::string> toks{" good"};
  EXPECT_EQ(score_continuation(s, "Text: fine\nLabel:", toks), std::vector<double>{-0.105});
}

TEST(MockScorer, RepeatedScoringIsBitIdentical) {
  MockScorer s(table_with("p", {" very", " positive"}, {-1.25, -0.03125}));
  const std::vector<std::string> toks{" very", " positive"};
  const auto a = s.score("p", toks);
  const auto b = s.score("p", toks);
  EXPECT_EQ(a.logprobs, b.logprobs);
  EXPECT_FALSE(a.imputed);
  EXPECT_EQ(s.calls_for("p"), 2u);
}

TEST(MockScorer, MissingEntryUsesDefaultAndFlags) {
  MockScorer s(table_with("p", {" a"}, {-0.5}));
  const std::vector<std::string> toks{" b", " c"};
  const auto r = s.score("p", toks);
  EXPECT_TRUE(r.imputed);
  EXPECT_EQ(r.logprobs, (std::vector<double>{-15.0, -15.0}));
}

TEST(MockScorer, RejectsEmptyInputs) {
  MockScorer s(table_with("p", {" a"}, {-0.5}));
  const std::vector<std::string> toks{" a"};
  EXPECT_THROW(s.score("", toks), InvalidArgument);
  EXPECT_THROW(s.score("p", {}), InvalidArgument);
}

TEST(MockScoreTable, RejectsPositiveLogprobs) {
  MockScoreTable t;
  EXPECT_THROW(t.add("p", {" a"}, {0.1}), InvalidArgument);
  EXPECT_THROW(t.add("p", {" a"}, {-0.1, -0.2}), LengthMismatch);
  EXPECT_THROW(MockScoreTable(0.5), InvalidArgument);
}

TEST(MockScoreTable, WhitespaceTokenizerKeepsLeadingSpaces) {
  MockScoreTable t;
  EXPECT_EQ(t.tokenize(" very positive"), (std::vector<std::string>{" very", " positive"}));
  EXPECT_EQ(t.tokenize(" Health"), (std::vector<std::string>{" Health"}));
  EXPECT_TRUE(t.tokenize(" ").empty());
  EXPECT_TRUE(t.tokenize("").empty());
  t.set_tokenization(" Computers", {" Comp", "uters"});
  EXPECT_EQ(t.tokenize(" Computers"), (std::vector<std::string>{" Comp", "uters"}));
}

TEST(MockScoreTable, LoadsObjectAndArrayForms) {
  const auto obj = nlohmann::json::parse(R"({
    "default_logprob": -9.5,
    "tokenizations": {" very positive": [" very", " positive"]},
    "entries": [
      {"prompt_hash": ")" + hash_to_hex(prompt_hash("P")) + R"(", "tokens": [" x"], "logprobs": [-0.25]},
      {"prompt": "Q", "tokens": [" y", " z"], "logprobs": [-1.0, -2.0]}
    ]})");
  const auto t = obj.get<MockScoreTable>();
  EXPECT_EQ(t.default_logprob(), -9.5);
  ASSERT_NE(t.find(prompt_hash("P"), {" x"}), nullptr);
  EXPECT_EQ(*t.find(prompt_hash("Q"), {" y", " z"}), (std::vector<double>{-1.0, -2.0}));
  EXPECT_EQ(t.tokenize(" very positive").size(), 2u);

  const auto arr = nlohmann::json::parse(R"([{"prompt": "Q", "tokens": [" y"], "logprobs": [-3.0]}])");
  EXPECT_EQ(*arr.get<MockScoreTable>().find(prompt_hash("Q"), {" y"}), std::vector<double>{-3.0});

  // write -> read preserves every entry
  const nlohmann::json again = t;
  const auto back = again.get<MockScoreTable>();
  EXPECT_EQ(back.size(), t.size());
  EXPECT_EQ(*back.find(prompt_hash("Q"), {" y", " z"}), *t.find(prompt_hash("Q"), {" y", " z"}));
}

TEST(RawLabelLogprob, SumsTokenLogprobs) {
  EXPECT_DOUBLE_EQ(raw_label_logprob({0, {-0.5, -0.5}}), -1.0);
  EXPECT_DOUBLE_EQ(raw_label_logprob({0, {-2.3}}), -2.3);
}

TEST(RawLabelLogprob, SumOfLogsIsLogOfProduct) {
  // oracle: multiply the probabilities directly, then take the log
  const double oracle = std::log(0.2 * 0.65);
  EXPECT_NEAR(raw_label_logprob({0, {std::log(0.2), std::log(0.65)}}), oracle, 1e-15);
  EXPECT_NEAR(oracle, std::log(0.13), 1e-15);
}

TEST(RawLabelLogprob, SingleTokenProbabilityIsExact) {
  const double lp = std::log(0.37);
  EXPECT_EQ(std::exp(raw_label_logprob({0, {lp}})), std::exp(lp));
}

TEST(ScoreLabelSet, ReturnsOneScorePerLabelInOrder) {
  auto t = std::make_shared<MockScoreTable>();
  t->add("p", {" positive"}, {-0.2});
  t->add("p", {" negative"}, {-1.7});
  MockScorer s(t);
  const auto set = validate_label_set({"positive", "negative"}, {{" positive"}, {" negative"}});
  const auto scored = score_label_set(s, "p", set);
  ASSERT_EQ(scored.size(), 2u);
  EXPECT_EQ(scored[0].label_index, 0u);
  EXPECT_EQ(scored[1].token_logprobs, std::vector<double>{-1.7});
}

TEST(ScoreLabelSet, PreservesBackendTokenOrder) {
  auto t = std::make_shared<MockScoreTable>();
  t->add("p", {" very", " positive"}, {-2.0, -0.1});
  MockScorer s(t);
  const auto set = validate_label_set({"very positive"}, {{" very", " positive"}});
  const auto scored = score_label_set(s, "p", set);
  EXPECT_EQ(scored[0].token_logprobs, (std::vector<double>{-2.0, -0.1}));
}

// Yahoo Answers topics with a Llama-3.1-like split: 29 tokens over 10 labels.
TEST(ScoreLabelSet, YahooTokenTotals) {
  const std::vector<std::string> texts{"Society & Culture",     "Science & Mathematics", "Health",
                                       "Education & Reference", "Computers & Internet",  "Sports",
                                       "Business & Finance",    "Entertainment & Music", "Family & Relationships",
                                       "Politics & Government"};
  const std::vector<std::vector<std::string>> toks{{" Society", " &", " Culture"},
                                                   {" Science", " &", " Mathematics"},
                                                   {" Health"},
                                                   {" Education", " &", " Reference"},
                                                   {" Comp", "uters", " &", " Internet"},
                                                   {" Sports"},
                                                   {" Business", " &", " Finance"},
                                                   {" Entertainment", " &", " Music"},
                                                   {" Family", " &", " Relations", "hips"},
                                                   {" Polit", "ics", " &", " Government"}};
  const auto set = validate_label_set(texts, toks, "yahoo");
  EXPECT_NEAR(set.mean_token_count(), 2.90, 1e-12);
  MockScorer s(std::make_shared<MockScoreTable>());
  const auto scored = score_label_set(s, "Text: q\nLabel:", set, 4);
  ASSERT_EQ(scored.size(), 10u);
  std::size_t total = 0;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    EXPECT_EQ(scored[i].label_index, i);
    total += scored[i].n_tokens();
  }
  EXPECT_EQ(total, 29u);
}

TEST(ScoreLabelSet, ImputedFlagsMatchMissingEntries) {
  auto t = std::make_shared<MockScoreTable>(-12.0);
  t->add("p", {" a"}, {-0.1});
  t->add("p", {" c"}, {-0.3});
  const auto set = validate_label_set({"a", "b", "c", "d"}, {{" a"}, {" b"}, {" c"}, {" d"}});
  // oracle: inspect the table directly
  std::size_t missing = 0;
  for (const auto& l : set) missing += t->find(prompt_hash("p"), l.tokens) ? 0 : 1;
  MockScorer s(t);
  const auto scored = score_label_set(s, "p", set);
  EXPECT_EQ(count_imputed(scored), missing);
  EXPECT_EQ(missing, 2u);
  EXPECT_TRUE(scored[1].imputed);
  EXPECT_EQ(scored[1].token_logprobs, std::vector<double>{-12.0});
}

TEST(ParseEndpoint, SplitsBaseAndPath) {
  auto e = detail::parse_endpoint("http://localhost:8080", "/v1/score");
  EXPECT_EQ(e.base, "http://localhost:8080");
  EXPECT_EQ(e.path, "/v1/score");
  e = detail::parse_endpoint("https://api.example.com/custom/score", "/v1/score");
  EXPECT_EQ(e.base, "https://api.example.com");
  EXPECT_EQ(e.path, "/custom/score");
  EXPECT_THROW(detail::parse_endpoint("localhost:8080", "/v1/score"), InvalidArgument);
}

TEST(ScorerBackend, Validation) {
  ScorerBackend b;
  EXPECT_THROW(b.validate(), InvalidArgument);  // MOCK without table
  b.kind = ScorerBackend::Kind::REMOTE;
  EXPECT_THROW(b.validate(), InvalidArgument);  // REMOTE without endpoint
  b.endpoint = "http://x";
  EXPECT_NO_THROW(b.validate());
}

TEST(RemoteScorer, ScoresEachTokenOfTheContinuation) {
  testing::ScoreServer server;
  RemoteScorer s(remote(server.endpoint()));
  const std::string prompt = "Text: a very good film\nLabel:";
  const auto toks = s.tokenize("Label:", " very positive");
  ASSERT_EQ(toks, (std::vector<std::string>{" very", " positive"}));
  const auto lps = score_continuation(s, prompt, toks);
  ASSERT_EQ(lps.size(), 2u);
  EXPECT_EQ(lps[0], testing::ScoreServer::token_logprob(prompt, " very", 0));
  EXPECT_EQ(lps[1], testing::ScoreServer::token_logprob(prompt, " positive", 1));
}

TEST(RemoteScorer, ConcurrentLabelScoringKeepsOrder) {
  testing::ScoreServer server;
  auto cfg = remote(server.endpoint());
  cfg.max_in_flight = 4;
  RemoteScorer s(cfg);
  std::vector<std::string> texts;
  std::vector<std::vector<std::string>> toks;
  for (int i = 0; i < 12; ++i) {
    texts.push_back("label" + std::to_string(i));
    toks.push_back({" label" + std::to_string(i)});
  }
  const auto set = validate_label_set(texts, toks);
  const auto a = score_label_set(s, "Text: q\nLabel:", set, 4);
  const auto b = score_label_set(s, "Text: q\nLabel:", set, 1);
  EXPECT_EQ(a, b);
  EXPECT_EQ(server.requests(), 24u);
}

TEST(RemoteScorer, MissingLogprobsIsProtocolError) {
  testing::ScoreServer server;
  server.set_mode(testing::ScoreServer::Mode::MISSING_LOGPROBS);
  RemoteScorer s(remote(server.endpoint()));
  const std::vector<std::string> toks{" x"};
  EXPECT_THROW(s.score("p", toks), ProtocolError);
}

TEST(RemoteScorer, RetokenizationIsTokenMismatch) {
  testing::ScoreServer server;
  server.set_mode(testing::ScoreServer::Mode::RETOKENIZE);
  RemoteScorer s(remote(server.endpoint()));
  const std::vector<std::string> toks{" x", " y"};
  EXPECT_THROW(s.score("p", toks), TokenMismatch);
}

TEST(RemoteScorer, ServerErrorsAreRetriedThenUnreachable) {
  testing::ScoreServer server;
  server.set_mode(testing::ScoreServer::Mode::SERVER_ERROR);
  RemoteScorer s(remote(server.endpoint()));
  const std::vector<std::string> toks{" x"};
  EXPECT_THROW(s.score("p", toks), BackendUnreachable);
  EXPECT_EQ(server.requests(), 3u);
}

TEST(RemoteScorer, DownEndpointIsUnreachable) {
  int port;
  {
    testing::ScoreServer server;  // grab a free port, then release it
    port = std::stoi(server.endpoint().substr(server.endpoint().rfind(':') + 1));
  }
  RemoteScorer s(remote("http://127.0.0.1:" + std::to_string(port)));
  const std::vector<std::string> toks{" x"};
  const auto t0 = std::chrono::steady_clock::now();
  EXPECT_THROW(s.score("p", toks), BackendUnreachable);
  // two backoffs: 5 ms then 10 ms
  EXPECT_GE(std::chrono::steady_clock::now() - t0, std::chrono::milliseconds(15));
}

TEST(RemoteScorer, ForwardsBearerToken) {
  testing::ScoreServer server;
  auto cfg = remote(server.endpoint());
  cfg.bearer_token = "sekrit";
  RemoteScorer s(cfg);
  const std::vector<std::string> toks{" x"};
  s.score("p", toks);
  EXPECT_EQ(server.last_auth(), "Bearer sekrit");
}

TEST(ScoreLabelSet, AnnotatesErrorsWithLabelIndex) {
  testing::ScoreServer server;
  server.set_mode(testing::ScoreServer::Mode::MISSING_LOGPROBS);
  RemoteScorer s(remote(server.endpoint()));
  const auto set = validate_label_set({"a", "b"}, {{" a"}, {" b"}});
  try {
    score_label_set(s, "p", set);
    FAIL() << "expected ProtocolError";
  } catch (const ProtocolError& e) {
    EXPECT_NE(std::string(e.what()).find("label 0"), std::string::npos);
  }
}

}  // namespace
}  // namespace ncc
