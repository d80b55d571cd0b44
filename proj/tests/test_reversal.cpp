#include <algorithm>
#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "ikerev/error.hpp"
#include "ikerev/lm/checkpoint.hpp"
#include "ikerev/reversal.hpp"
#include "toy.hpp"

namespace {

namespace rv = ikerev::reversal;

std::vector<double> random_distribution(ikerev::Rng& rng, std::size_t n, bool with_zeros) {
  std::vector<double> p(n);
  double sum = 0.0;
  for (auto& v : p) {
    v = with_zeros && ikerev::uniform_unit(rng) < 0.2 ? 0.0 : -std::log(ikerev::uniform_unit(rng) + 1e-300);
    sum += v;
  }
  if (sum == 0.0) p[0] = sum = 1.0;
  for (auto& v : p) v /= sum;
  return p;
}

// Direct summation in extended precision.
long double kl_oracle(const std::vector<double>& p, const std::vector<double>& q) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    const long double qi = std::max<long double>(q[i], 1e-12L);
    s += static_cast<long double>(p[i]) * std::log(static_cast<long double>(p[i]) / qi);
  }
  return s;
}

TEST(KlDivergence, KnownValueAndIdentity) {
  const std::vector<double> p{0.5, 0.5}, q{0.25, 0.75};
  EXPECT_NEAR(rv::kl_divergence(p, q), 0.143841, 1e-6);
  EXPECT_EQ(rv::kl_divergence(p, p), 0.0);
}

TEST(KlDivergence, MatchesDirectSummationOnRandomPairs) {
  ikerev::Rng rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const auto n = 2 + ikerev::uniform_index(rng, 60);
    const auto p = random_distribution(rng, n, true);
    const auto q = random_distribution(rng, n, i % 3 == 0);
    const double kl = rv::kl_divergence(p, q);
    EXPECT_NEAR(kl, static_cast<double>(kl_oracle(p, q)), 1e-9) << "pair " << i;
    EXPECT_GE(kl, 0.0);
  }
}

TEST(KlDivergence, RejectsBadInput) {
  const std::vector<double> a{0.5, 0.5}, b{0.2, 0.3, 0.5}, bad{0.6, 0.6};
  EXPECT_THROW(rv::kl_divergence(a, b), ikerev::ValidationError);
  EXPECT_THROW(rv::kl_divergence(a, bad), ikerev::ValidationError);
}

TEST(KlTarget, LossMatchesKlAndGradientMatchesDifferences) {
  ikerev::Rng rng(3);
  const auto q = random_distribution(rng, 7, false);
  const auto p = random_distribution(rng, 7, false);
  const rv::KlTarget target(q);
  std::vector<double> lp(7), grad(7, 0.0);
  for (std::size_t i = 0; i < 7; ++i) lp[i] = std::log(p[i]);
  EXPECT_NEAR(target.loss(p, lp, grad, 1.0), rv::kl_divergence(p, q), 1e-12);
  // d/dp_i sum p ln(p/q) = ln(p_i/q_i) + 1
  for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(grad[i], std::log(p[i] / q[i]) + 1.0, 1e-12);
}

TEST(DimensionWeights, HandFormulas) {
  const std::vector<double> init{0.0, 0.0, 0.0}, tuned{0.3, -0.1, 0.6};
  const auto w = rv::dimension_weights(init, tuned);
  const double w_expected[] = {0.3, 0.1, 0.6};
  // 1/w = {10/3, 10, 10/6}; their sum is 15, so w_bar = {2/9, 2/3, 1/9}.
  const double wbar_expected[] = {2.0 / 9.0, 2.0 / 3.0, 1.0 / 9.0};
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(w.w[i], w_expected[i], 1e-9);
    EXPECT_NEAR(w.w_bar[i], wbar_expected[i], 1e-9);
  }
  EXPECT_NEAR(w.w_bar[0], 0.2222, 1e-4);
  EXPECT_NEAR(w.w_bar[1], 0.6667, 1e-4);
  EXPECT_NEAR(w.w_bar[2], 0.1111, 1e-4);
}

TEST(DimensionWeights, NormalizedUniformAndZeroDelta) {
  ikerev::Rng rng(8);
  std::vector<double> a(16), b(16);
  for (std::size_t i = 0; i < 16; ++i) {
    a[i] = ikerev::standard_normal(rng);
    b[i] = a[i] + ikerev::standard_normal(rng);
  }
  const auto w = rv::dimension_weights(a, b);
  double sw = 0.0, sb = 0.0;
  for (std::size_t i = 0; i < 16; ++i) {
    sw += w.w[i];
    sb += w.w_bar[i];
  }
  EXPECT_NEAR(sw, 1.0, 1e-12);
  EXPECT_NEAR(sb, 1.0, 1e-12);

  const std::vector<double> zero(4, 0.0), flat(4, 0.5);
  const auto u = rv::dimension_weights(zero, flat);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(u.w[i], 0.25);
    EXPECT_DOUBLE_EQ(u.w_bar[i], 0.25);
  }
  EXPECT_THROW(rv::dimension_weights(flat, flat), ikerev::ValidationError);
}

TEST(MatchingAccuracy, CountsExactMatches) {
  const std::vector<int> a{1, 2, 3, 4}, b{1, 9, 3, 8};
  EXPECT_EQ(rv::matching_accuracy(a, a), 1.0);
  EXPECT_EQ(rv::matching_accuracy(b, a), 0.5);
  const std::vector<int> c{1};
  EXPECT_THROW(rv::matching_accuracy(a, c), ikerev::ValidationError);
}

TEST(Summarize, PopulationStd) {
  const std::vector<double> v{0.2, 0.4, 0.6};
  const auto s = rv::summarize(v);
  EXPECT_DOUBLE_EQ(s.max, 0.6);
  EXPECT_NEAR(s.mean, 0.4, 1e-15);
  EXPECT_NEAR(s.std, std::sqrt(0.08 / 3.0), 1e-15);
}

class ToyReversal : public ::testing::Test {
 protected:
  // 20 ids: pad, bos, eos, 2 reserved slots, 15 regular tokens; 16 natural tokens.
  ToyReversal()
      : config(toy::config(20, 2)), model(toy::model<double>(config, 31, 0.4)), train(toy::examples(model, 24, 1)),
        validation(toy::examples(model, 8, 2)) {}

  ikerev::lm::LMConfig config;
  ikerev::lm::Transformer<double> model;
  std::vector<rv::ReversalExample> train;
  std::vector<rv::ReversalExample> validation;
};

TEST_F(ToyReversal, CandidateRankOneForExactEmbedding) {
  const auto e = model.token_embedding(12);
  const std::vector<double> r(e.data(), e.data() + e.size());
  const std::vector<double> w(static_cast<std::size_t>(config.model_dim), 1.0 / config.model_dim);
  EXPECT_EQ(rv::candidate_tokens(model, r, w, 3).front(), 12);
}

TEST_F(ToyReversal, SelectWithFullCandidateSetIsExhaustiveArgmin) {
  ikerev::Rng rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    rv::Embeddings r(1);
    std::vector<double> a(8), b(8);
    for (std::size_t d = 0; d < 8; ++d) {
      r[0].push_back(ikerev::standard_normal(rng));
      a[d] = ikerev::standard_normal(rng);
      b[d] = a[d] + ikerev::standard_normal(rng);
    }
    const auto weights = rv::dimension_weights(a, b);
    rv::SelectOptions options;
    options.k = static_cast<std::size_t>(config.vocab_size);
    const auto chosen = rv::select_discrete(model, r, weights, validation, options);

    rv::Objective obj;
    int best = -1;
    double best_loss = std::numeric_limits<double>::infinity();
    for (int id = 0; id < config.vocab_size; ++id) {
      if (!config.specials.is_natural(id)) continue;
      const auto rev = rv::discrete_tokens(std::vector<int>{id});
      const double loss = rv::objective_value(model, validation, std::span<const rv::RevToken>(rev), obj);
      if (loss < best_loss) {
        best_loss = loss;
        best = id;
      }
    }
    ASSERT_EQ(chosen.size(), 1u);
    EXPECT_EQ(chosen[0], best) << "trial " << trial;
  }
}

TEST_F(ToyReversal, SelectRejectsEmptyValidationAndOversizedK) {
  rv::Embeddings r{std::vector<double>(8, 0.1)};
  const auto weights = rv::dimension_weights(std::vector<double>(8, 0.0), std::vector<double>(8, 1.0));
  rv::SelectOptions options;
  EXPECT_THROW(rv::select_discrete(model, r, weights, {}, options), ikerev::ValidationError);
  options.k = 21;
  EXPECT_THROW(rv::select_discrete(model, r, weights, validation, options), ikerev::ValidationError);
}

TEST_F(ToyReversal, ContinuousTuningLowersLossAndFreezesModel) {
  const auto before = ikerev::lm::make_checkpoint(model, {}).hash();
  rv::TuneOptions options;
  options.learning_rate = 5e-2;
  const auto set = rv::tune_continuous(model, train, 2, options, 4);
  ASSERT_EQ(set.loss_curve.size(), 4u);
  EXPECT_LE(set.loss_curve.back(), set.loss_curve.front());
  EXPECT_EQ(ikerev::lm::make_checkpoint(model, {}).hash(), before);
  EXPECT_EQ(set.embeddings.size(), 2u);
}

TEST_F(ToyReversal, ZeroEpochsFromTokenEmbeddingEqualsPlainInsertion) {
  const auto e = model.token_embedding(14);
  rv::Embeddings init{std::vector<double>(e.data(), e.data() + e.size())};
  rv::TuneOptions options;
  options.epochs = 0;
  const auto result = rv::tune_embeddings(model, std::span<const rv::ReversalExample>(train), init, rv::Objective{},
                                          options, 1);
  const auto cont = rv::continuous_tokens(result.r);
  const auto disc = rv::discrete_tokens(std::vector<int>{14});
  EXPECT_EQ(rv::reversed_top1(model, std::span<const rv::ReversalExample>(train), std::span<const rv::RevToken>(cont), true),
            rv::reversed_top1(model, std::span<const rv::ReversalExample>(train), std::span<const rv::RevToken>(disc), true));
  const auto& ex = train.front();
  const auto pc = rv::assemble<double>(ex.edit, true, std::span<const rv::RevToken>(cont), config.specials);
  const auto pd = rv::assemble<double>(ex.edit, true, std::span<const rv::RevToken>(disc), config.specials);
  const auto dc = ikerev::lm::next_token_distribution(model, std::span<const int>(pc.tokens),
                                                      std::span<const ikerev::lm::EmbeddingOverride<double>>(pc.overrides));
  const auto dd = ikerev::lm::next_token_distribution(model, std::span<const int>(pd.tokens));
  for (std::size_t i = 0; i < dc.size(); ++i) EXPECT_NEAR(dc.probabilities[i], dd.probabilities[i], 1e-12);
}

TEST_F(ToyReversal, JointWithZeroLambdaIsContinuousObjective) {
  rv::TuneOptions options;
  options.epochs = 1;
  const auto weights = rv::dimension_weights(std::vector<double>(8, 0.0), std::vector<double>(8, 1.0));
  const auto joint = rv::tune_discrete_joint(model, std::span<const rv::ReversalExample>(train), weights, 0.0, 1,
                                             rv::Ablation::kNone, options, 6);
  const auto cont = rv::tune_continuous(model, std::span<const rv::ReversalExample>(train), 1, options, 6);
  EXPECT_EQ(joint.r, cont.embeddings);
}

TEST_F(ToyReversal, JointWithUnitLambdaConvergesToWeightedCentroid) {
  // 5 natural tokens: bos plus ids 5..8.
  auto small = toy::config(9, 2);
  const auto m = toy::model<double>(small, 41, 0.4);
  const auto examples = toy::examples(m, 400, 3);
  ikerev::Rng rng(9);
  std::vector<double> a(8), b(8);
  for (std::size_t d = 0; d < 8; ++d) {
    a[d] = ikerev::standard_normal(rng);
    b[d] = a[d] + ikerev::standard_normal(rng);
  }
  const auto weights = rv::dimension_weights(a, b);
  rv::TuneOptions options;
  options.learning_rate = 1e-2;
  const auto result = rv::tune_discrete_joint(m, std::span<const rv::ReversalExample>(examples), weights, 1.0, 1,
                                              rv::Ablation::kNone, options, 2);

  // argmax_u mean_i cos(u, a_i) is the direction of sum_i a_i / |a_i|.
  std::vector<double> target(8, 0.0);
  for (int id = 0; id < small.vocab_size; ++id) {
    if (!small.specials.is_natural(id)) continue;
    const auto e = m.token_embedding(id);
    double n = 0.0;
    for (std::size_t d = 0; d < 8; ++d) n += std::pow(e[static_cast<Eigen::Index>(d)] * weights.w_bar[d], 2);
    n = std::sqrt(n);
    for (std::size_t d = 0; d < 8; ++d) target[d] += e[static_cast<Eigen::Index>(d)] * weights.w_bar[d] / n;
  }
  std::vector<double> u(8);
  for (std::size_t d = 0; d < 8; ++d) u[d] = result.r[0][d] * weights.w_bar[d];
  EXPECT_GT(rv::cosine_similarity(u, target), 1.0 - 1e-6);
  EXPECT_LT(result.loss_curve.back(), result.loss_curve.front());
}

TEST_F(ToyReversal, JointRejectsDegenerateAblations) {
  const auto weights = rv::dimension_weights(std::vector<double>(8, 0.0), std::vector<double>(8, 1.0));
  rv::TuneOptions options;
  EXPECT_THROW(rv::tune_discrete_joint(model, std::span<const rv::ReversalExample>(train), weights, 1.0, 1,
                                       rv::Ablation::kNoKl, options, 1),
               ikerev::ValidationError);
  EXPECT_THROW(rv::tune_discrete_joint(model, std::span<const rv::ReversalExample>(train), weights, 1.5, 1,
                                       rv::Ablation::kNone, options, 1),
               ikerev::ValidationError);
}

TEST_F(ToyReversal, ContextOverflowIsReported) {
  rv::TuneOptions options;
  try {
    rv::tune_continuous(model, std::span<const rv::ReversalExample>(train), 16, options, 1);
    FAIL() << "expected an overflow error";
  } catch (const ikerev::ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("context overflow"), std::string::npos);
  }
}

TEST_F(ToyReversal, ProbeKeepsLowerMedianSeed) {
  rv::TuneOptions options;
  options.epochs = 1;
  options.learning_rate = 5e-2;
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4};
  const auto probe = rv::probe_dimensions(model, std::span<const rv::ReversalExample>(train),
                                          std::span<const rv::ReversalExample>(validation), 10, 0.5, seeds, options);
  auto accs = probe.seed_accuracy;
  std::stable_sort(accs.begin(), accs.end(), [](const auto& x, const auto& y) { return x.second < y.second; });
  EXPECT_EQ(probe.chosen_seed, accs[1].first);
  double sw = 0.0;
  for (double v : probe.weights.w) sw += v;
  EXPECT_NEAR(sw, 1.0, 1e-12);
}

TEST_F(ToyReversal, TokenSetFileRoundTrip) {
  rv::TuneOptions options;
  options.epochs = 1;
  auto set = rv::tune_continuous(model, std::span<const rv::ReversalExample>(train), 2, options, 4);
  const auto path = (toy::temp_dir("tokens") / "set.json").string();
  rv::save_token_set(set, path);
  const auto back = rv::load_token_set(path);
  EXPECT_EQ(back.embeddings, set.embeddings);
  EXPECT_EQ(back.m, 2);
  EXPECT_EQ(back.loss_curve, set.loss_curve);

  rv::ReversalTokenSet disc;
  disc.mode = rv::Mode::kDiscrete;
  disc.m = 2;
  disc.token_ids = {1, 12};
  rv::save_token_set(disc, path);
  EXPECT_EQ(rv::load_token_set(path).token_ids, disc.token_ids);
  disc.token_ids = {3, 12};  // a reserved slot is not a natural token
  EXPECT_THROW(rv::validate(disc, 8, config.specials, config.vocab_size), ikerev::ValidationError);
}

TEST_F(ToyReversal, EvalReportsPerSeedRowsAndSummary) {
  std::vector<rv::ReversalTokenSet> sets(2);
  sets[0].mode = sets[1].mode = rv::Mode::kDiscrete;
  sets[0].m = sets[1].m = 1;
  sets[0].token_ids = {1};
  sets[1].token_ids = {10};
  sets[0].seed = 1;
  sets[1].seed = 2;
  const auto baseline = rv::compute_baseline(model, std::span<const rv::ReversalExample>(validation));
  const auto report = rv::eval_reversal(model, std::span<const rv::ReversalTokenSet>(sets),
                                        std::span<const rv::ReversalExample>(validation), baseline, "discrete");
  ASSERT_EQ(report.seeds.size(), 2u);
  const std::vector<rv::ReversalEvalReport> reports{report};
  const auto csv = rv::reversal_csv(reports);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "setting,#rt,seed,edited-acc,normal-acc,baseline-acc,edited-acc-successful");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

}  // namespace
