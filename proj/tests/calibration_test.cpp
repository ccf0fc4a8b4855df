#include "ncc/calibration.hpp"

#include <cmath>
#include <random>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <gtest/gtest.h>

#include "toy_sentiment.hpp"

namespace ncc {
namespace {

using big = boost::multiprecision::cpp_bin_float_50;

std::vector<ScoredLabel> scored_from(const std::vector<std::vector<double>>& lps) {
  std::vector<ScoredLabel> out;
  for (std::size_t i = 0; i < lps.size(); ++i) out.push_back({i, lps[i]});
  return out;
}

/// Random label scores with 1..5 tokens, per-token probability in (0.01, 1).
std::vector<ScoredLabel> random_scored(std::mt19937_64& rng, std::size_t K, std::size_t max_tokens = 5) {
  std::uniform_int_distribution<std::size_t> n(1, max_tokens);
  std::uniform_real_distribution<double> lp(std::log(0.01), 0.0);
  std::vector<ScoredLabel> out;
  for (std::size_t i = 0; i < K; ++i) {
    ScoredLabel s{i, {}};
    for (std::size_t t = n(rng); t > 0; --t) s.token_logprobs.push_back(std::min(lp(rng), -1e-12));
    out.push_back(std::move(s));
  }
  return out;
}

BaselineVector random_baseline(std::mt19937_64& rng, std::size_t K, bool normalized) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  BaselineVector b{BaselineKind::CF_ENSEMBLE, {}, normalized};
  double sum = 0;
  for (std::size_t i = 0; i < K; ++i) sum += b.probs.emplace_back(u(rng));
  for (double& p : b.probs) p /= sum;
  return b;
}

TEST(NormalizeLogprob, SquareRoot) { EXPECT_NEAR(normalize_logprob(std::log(0.01), 2), std::log(0.1), 1e-15); }

TEST(NormalizeLogprob, SingleTokenIdentity) {
  const double lp = std::log(0.42);
  EXPECT_EQ(normalize_logprob(lp, 1), lp);
}

TEST(NormalizeLogprob, CubeRootAgainstHighPrecision) {
  const double raw = std::log(0.5) + 2 * std::log(0.9);
  // oracle: (0.5 * 0.9 * 0.9)^(1/3) in 50-digit arithmetic
  const big root = boost::multiprecision::cbrt(big("0.5") * big("0.9") * big("0.9"));
  EXPECT_NEAR(std::exp(normalize_logprob(raw, 3)), root.convert_to<double>(), 1e-15);
  EXPECT_NEAR(root.convert_to<double>(), 0.7399, 1e-4);
}

TEST(NormalizeLogprob, RejectsNonPositiveCounts) {
  EXPECT_THROW(normalize_logprob(-1.0, 0), InvalidTokenCount);
  EXPECT_THROW(normalize_logprob(-1.0, -3), InvalidTokenCount);
}

TEST(Calibrate, DividesByBaseline) {
  EXPECT_DOUBLE_EQ(calibrate(0.2, 0.5), 0.4);
  EXPECT_EQ(calibrate(0.37, 1.0), 0.37);
  EXPECT_THROW(calibrate(0.3, 0.0), ZeroBaseline);
  EXPECT_THROW(calibrate(0.3, -1.0), ZeroBaseline);
}

TEST(EnsembleBaseline, IdenticalListsGiveThatList) {
  const std::vector<double> lps{std::log(0.7), std::log(0.2), std::log(0.1)};
  const std::vector<std::vector<double>> lists(5, lps);
  const auto b = ensemble_baseline(lists, true);
  EXPECT_NEAR(b.probs[0], 0.7, 1e-15);
  EXPECT_NEAR(b.probs[1], 0.2, 1e-15);
  EXPECT_NEAR(b.probs[2], 0.1, 1e-15);
  EXPECT_TRUE(b.normalized_space);
  EXPECT_EQ(b.method, BaselineKind::CF_ENSEMBLE);
}

TEST(EnsembleBaseline, ArithmeticMeanAcrossProbes) {
  const std::vector<std::vector<double>> rows{{std::log(0.2), std::log(0.8)}, {std::log(0.4), std::log(0.6)}};
  const auto b = average_baseline(rows, true, BaselineKind::CF_ENSEMBLE, true);
  EXPECT_NEAR(b.probs[0], 0.3, 1e-15);
  EXPECT_NEAR(b.probs[1], 0.7, 1e-15);
}

TEST(EnsembleBaseline, WithoutRenormalizationAveragesRawProbabilities) {
  const std::vector<std::vector<double>> rows{{std::log(0.2), std::log(0.1)}, {std::log(0.4), std::log(0.1)}};
  const auto b = average_baseline(rows, false, BaselineKind::CF_ENSEMBLE, false);
  EXPECT_NEAR(b.probs[0], 0.3, 1e-15);
  EXPECT_NEAR(b.probs[1], 0.1, 1e-15);
}

TEST(EnsembleBaseline, VanishingLabelIsFloored) {
  const std::vector<std::vector<double>> lists(5, std::vector<double>{std::log(0.5), -800.0});
  const auto b = ensemble_baseline(lists, true);
  // oracle: the unfloored mean underflows to 0, below the floor
  EXPECT_EQ(std::exp(-800.0), 0.0);
  EXPECT_EQ(b.probs[1], kBaselineFloor);
  EXPECT_EQ(b.probs[1], 1e-10);
}

TEST(EnsembleBaseline, RawSpaceKeepsTinyProbabilities) {
  const std::vector<std::vector<double>> lists(5, std::vector<double>{0.0, std::log(1e-20)});
  const auto b = ensemble_baseline(lists, false, false);
  EXPECT_NEAR(b.probs[1] / 1e-20, 1.0, 1e-12);
  const std::vector<std::vector<double>> zero(5, std::vector<double>{0.0, -1e6});
  EXPECT_EQ(ensemble_baseline(zero, false, false).probs[1], kRawBaselineFloor);
}

TEST(EnsembleBaseline, RejectsWrongShapes) {
  const std::vector<std::vector<double>> four(4, std::vector<double>{-1.0, -2.0});
  EXPECT_THROW(ensemble_baseline(four, true), LengthMismatch);
  std::vector<std::vector<double>> ragged(5, std::vector<double>{-1.0, -2.0});
  ragged[3].pop_back();
  EXPECT_THROW(ensemble_baseline(ragged, true), LengthMismatch);
}

TEST(Predict, Argmax) {
  MethodScores s{Method::NCC, {std::log(0.1), std::log(0.7), std::log(0.2)}, {0.1, 0.7, 0.2}, {0.1, 0.7, 0.2}};
  const auto p = predict(s);
  EXPECT_EQ(p.label_index, 1u);
  EXPECT_DOUBLE_EQ(p.confidence, 0.7);
  EXPECT_EQ(p.method, Method::NCC);
}

TEST(Predict, TiesGoToLowestIndex) {
  MethodScores s{Method::RAW, {std::log(0.5), std::log(0.5)}, {0.5, 0.5}, {0.5, 0.5}};
  EXPECT_EQ(predict(s).label_index, 0u);
  MethodScores three{Method::RAW, {-2.0, -1.0, -1.0}, {}, {0.2, 0.4, 0.4}};
  EXPECT_EQ(predict(three).label_index, 1u);
}

TEST(ComputeMethod, RawAndNormScores) {
  const auto scored = scored_from({{std::log(0.5), std::log(0.5)}, {std::log(0.3)}});
  const auto raw = compute_method(Method::RAW, scored, nullptr);
  EXPECT_NEAR(raw.scores[0], 0.25, 1e-15);
  EXPECT_NEAR(raw.scores[1], 0.3, 1e-15);
  EXPECT_EQ(predict(raw).label_index, 1u);
  const auto norm = compute_method(Method::NORM, scored, nullptr);
  EXPECT_NEAR(norm.scores[0], 0.5, 1e-15);
  EXPECT_EQ(predict(norm).label_index, 0u);
  EXPECT_NEAR(norm.confidence[0] + norm.confidence[1], 1.0, 1e-15);
}

TEST(ComputeMethod, BaselineChecks) {
  const auto scored = scored_from({{-1.0}, {-2.0}});
  EXPECT_THROW(compute_method(Method::NCC, scored, nullptr), MissingBaseline);
  const BaselineVector raw_space{BaselineKind::CF_ENSEMBLE, {0.5, 0.5}, false};
  const BaselineVector norm_space{BaselineKind::CF_ENSEMBLE, {0.5, 0.5}, true};
  EXPECT_THROW(compute_method(Method::NCC, scored, &raw_space), BaselineSpaceMismatch);
  EXPECT_THROW(compute_method(Method::CC, scored, &norm_space), BaselineSpaceMismatch);
  EXPECT_NO_THROW(compute_method(Method::NDC, scored, &norm_space));
  const BaselineVector short_b{BaselineKind::CF_ENSEMBLE, {1.0}, true};
  EXPECT_THROW(compute_method(Method::NCC, scored, &short_b), LengthMismatch);
  const BaselineVector zero{BaselineKind::CF_ENSEMBLE, {0.0, 1.0}, true};
  EXPECT_THROW(compute_method(Method::NCC, scored, &zero), ZeroBaseline);
}

TEST(ComputeMethod, UniformBaselineArgmaxMatchesNormalized) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t K = 2 + trial % 9;
    const auto scored = random_scored(rng, K);
    const BaselineVector uniform{BaselineKind::CF_ENSEMBLE, std::vector<double>(K, 1.0 / K), true};
    const auto norm = compute_method(Method::NORM, scored, nullptr);
    const auto ncc = compute_method(Method::NCC, scored, &uniform);
    ASSERT_EQ(predict(ncc).label_index, predict(norm).label_index);
    for (std::size_t i = 0; i < K; ++i) {
      ASSERT_NEAR(ncc.confidence[i], norm.confidence[i], 1e-12);
      // calibrated score equals p / b through the scalar route
      ASSERT_NEAR(ncc.scores[i], calibrate(norm.scores[i], 1.0 / K), 1e-12 * ncc.scores[i]);
    }
  }
}

TEST(ComputeMethod, SingleTokenLabelsMakeNormalizationANoOp) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto scored = random_scored(rng, 5, 1);
    EXPECT_EQ(compute_method(Method::NORM, scored, nullptr).confidence,
              compute_method(Method::RAW, scored, nullptr).confidence);
    std::vector<std::vector<double>> probes;
    for (int p = 0; p < 5; ++p) probes.push_back(label_logprobs(random_scored(rng, 5, 1), false));
    const auto raw_b = ensemble_baseline(probes, false);
    const auto norm_b = ensemble_baseline(probes, true);
    EXPECT_EQ(compute_method(Method::NCC, scored, &norm_b).confidence,
              compute_method(Method::CC, scored, &raw_b).confidence);
  }
}

TEST(ComputeMethod, BaselineScaleInvariance) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  for (int trial = 0; trial < 500; ++trial) {
    const auto scored = random_scored(rng, 6);
    const auto b = random_baseline(rng, 6, true);
    const auto scaled = b.scaled(scale(rng));
    const auto x = compute_method(Method::NCC, scored, &b);
    const auto y = compute_method(Method::NCC, scored, &scaled);
    ASSERT_EQ(predict(x).label_index, predict(y).label_index);
    for (std::size_t i = 0; i < 6; ++i) ASSERT_NEAR(x.confidence[i], y.confidence[i], 1e-12);
  }
}

TEST(ComputeMethod, LengthBiasDirection) {
  for (double p : {0.9, 0.5, 0.1}) {
    // same per-token probability, one vs three tokens
    const auto scored = scored_from({{std::log(p), std::log(p), std::log(p)}, {std::log(p)}});
    const auto raw = compute_method(Method::RAW, scored, nullptr);
    EXPECT_GT(raw.scores[1], raw.scores[0]);
    EXPECT_EQ(predict(raw).label_index, 1u);
    const auto norm = compute_method(Method::NORM, scored, nullptr);
    EXPECT_NEAR(norm.scores[0], norm.scores[1], 1e-15);
  }
}

TEST(ComputeMethod, CalibratedScoresArePositiveAndDeterministic) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const auto scored = random_scored(rng, 4, 40);
    const auto b = random_baseline(rng, 4, false);
    const auto a = compute_method(Method::CC, scored, &b);
    for (double s : a.scores) EXPECT_GT(s, 0.0);
    EXPECT_EQ(a.log_scores, compute_method(Method::CC, scored, &b).log_scores);
  }
}

TEST(CalibrationRecords, Invariants) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto scored = random_scored(rng, 5);
    const auto b = random_baseline(rng, 5, true);
    const auto recs = calibration_records(scored, b);
    double sum = 0;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      EXPECT_EQ(recs[i].norm_logprob, recs[i].raw_logprob / static_cast<double>(scored[i].n_tokens()));
      const double direct = std::exp(recs[i].norm_logprob) / recs[i].baseline_prob;
      EXPECT_NEAR(recs[i].calibrated_score / direct, 1.0, 1e-12);
      sum += recs[i].confidence;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(ToySentiment, WinnersPerMethod) {
  const auto out = testing::run_toy_pipeline();
  EXPECT_EQ(out.labels[5].n_tokens(), 60u);
  EXPECT_EQ(out.predictions.at(Method::RAW).label_index, 1u);  // positive
  EXPECT_NEAR(out.predictions.at(Method::RAW).confidence, 0.86 / (0.13 + 0.86 + 2e-3 + 3e-3 + 5e-5 + 1e-14), 1e-12);
  EXPECT_EQ(out.predictions.at(Method::CC).label_index, 5u);   // long distractor
  EXPECT_GT(out.predictions.at(Method::CC).confidence, 0.99);
  EXPECT_EQ(out.predictions.at(Method::NCC).label_index, 0u);  // very positive
}

TEST(BatchBaseline, SingleExampleFlattensScores) {
  const auto scored = scored_from({{std::log(0.2)}, {std::log(0.5)}, {std::log(0.3)}});
  const auto probs = compute_method(Method::NORM, scored, nullptr).confidence;
  const std::vector<std::vector<double>> batch{probs};
  const auto b = batch_baseline(batch, true);
  EXPECT_EQ(b.method, BaselineKind::BATCH);
  const auto nbc = compute_method(Method::NBC, scored, &b);
  for (double c : nbc.confidence) EXPECT_NEAR(c, 1.0 / 3.0, 1e-12);
  EXPECT_EQ(predict(nbc).label_index, 0u);
}

TEST(BatchBaseline, PerLabelMean) {
  const std::vector<std::vector<double>> batch{{0.2, 0.8}, {0.6, 0.4}};
  const auto b = batch_baseline(batch, false);
  EXPECT_NEAR(b.probs[0], 0.4, 1e-15);
  EXPECT_NEAR(b.probs[1], 0.6, 1e-15);
  EXPECT_THROW(batch_baseline(std::vector<std::vector<double>>{}, true), EmptyBatch);
  EXPECT_THROW(BatchMean(2).finish(true), EmptyBatch);
}

TEST(BatchBaseline, StreamingMatchesTwoPass) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<double>> batch(300, std::vector<double>(7));
  for (auto& row : batch)
    for (double& v : row) v = u(rng);
  // two-pass oracle: sum everything, divide once
  std::vector<double> oracle(7, 0.0);
  for (const auto& row : batch)
    for (std::size_t i = 0; i < 7; ++i) oracle[i] += row[i];
  for (double& v : oracle) v = std::max(v / 300.0, kBaselineFloor);
  BatchMean stream(7);
  for (const auto& row : batch) stream.add(row);
  EXPECT_EQ(stream.finish(true).probs, oracle);
  EXPECT_EQ(batch_baseline(batch, true).probs, oracle);
}

TEST(DomainContext, DegenerateCorpus) {
  const std::vector<std::string> corpus{"foo"};
  const auto inputs = domain_pseudo_inputs(corpus, {1, 3, 3, true}, 9);
  ASSERT_EQ(inputs.size(), 1u);
  EXPECT_EQ(inputs[0], "foo foo foo");
}

TEST(DomainContext, PseudoInputsRespectLengthRange) {
  const std::vector<std::string> corpus{"alpha beta gamma", "delta epsilon"};
  const auto inputs = domain_pseudo_inputs(corpus, {50, 5, 30, true}, 1);
  ASSERT_EQ(inputs.size(), 50u);
  for (const auto& s : inputs) {
    const auto words = static_cast<std::size_t>(std::count(s.begin(), s.end(), ' ')) + 1;
    EXPECT_GE(words, 5u);
    EXPECT_LE(words, 30u);
  }
  EXPECT_THROW(domain_pseudo_inputs(std::vector<std::string>{"  "}, {}, 0), EmptyCorpus);
  EXPECT_THROW(domain_pseudo_inputs(corpus, {0, 5, 30, true}, 0), InvalidArgument);
}

TEST(DomainContext, DeterministicBaselineOfLabelSetLength) {
  auto table = std::make_shared<MockScoreTable>(-3.0);
  MockScorer scorer(table);
  const auto labels = tokenize_label_set(scorer, "Label:", {"good", "bad", "so so"});
  const std::vector<std::string> corpus{"the film was long", "a quiet and moving story"};
  const DomainContextOptions opt{20, 5, 30, true};
  const auto a = domain_context_baseline(scorer, corpus, PromptTemplate::classification(), {}, labels, opt, 77);
  const auto b = domain_context_baseline(scorer, corpus, PromptTemplate::classification(), {}, labels, opt, 77, 4);
  EXPECT_EQ(a.raw.probs, b.raw.probs);
  EXPECT_EQ(a.normalized.probs, b.normalized.probs);
  EXPECT_EQ(a.raw.probs.size(), labels.size());
  EXPECT_EQ(a.raw.method, BaselineKind::DOMAIN_CONTEXT);
  EXPECT_FALSE(a.raw.normalized_space);
  EXPECT_TRUE(a.normalized.normalized_space);
  EXPECT_EQ(scorer.total_calls(), 2u * 20u * labels.size());
  EXPECT_THROW(domain_context_baseline(scorer, std::vector<std::string>{}, PromptTemplate::classification(), {},
                                       labels, opt, 77),
               EmptyCorpus);
}

}  // namespace
}  // namespace ncc
