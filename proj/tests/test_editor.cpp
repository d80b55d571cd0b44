#include <algorithm>
#include <cmath>
#include <functional>
#include <set>

#include <gtest/gtest.h>

#include "ikerev/corpus.hpp"
#include "ikerev/editor.hpp"
#include "ikerev/error.hpp"
#include "ikerev/tokenizer.hpp"
#include "toy.hpp"

namespace {

TEST(ApplyEdit, RandomModelsSucceedAtChanceRate) {
  // Token ids are exchangeable under random init, so P(argmax = counterfact) = 1 / vocab.
  auto c = toy::config(8, 1);
  c.context_length = 12;
  const int trials = 400;
  int hits = 0;
  for (int s = 0; s < trials; ++s) {
    const auto model = toy::model<float>(c, 1000 + static_cast<std::uint64_t>(s), 1.0);
    hits += ikerev::apply_edit(model, toy::edits(c, 1, static_cast<std::uint64_t>(s))[0]).success ? 1 : 0;
  }
  const double p = 1.0 / c.vocab_size;
  EXPECT_NEAR(static_cast<double>(hits) / trials, p, 3.5 * std::sqrt(p * (1 - p) / trials));
}

TEST(ApplyEdit, RejectsContextOverflowButSummarySkips) {
  auto c = toy::config(16);
  c.context_length = 6;
  const auto model = toy::model<float>(c, 2);
  auto e = toy::edits(c, 1, 3)[0];
  EXPECT_THROW(ikerev::apply_edit(model, e), ikerev::ValidationError);
  const auto summary = ikerev::edit_success(model, {e});
  EXPECT_EQ(summary.skipped, 1u);
  EXPECT_EQ(summary.success_rate(), 0.0);
}

TEST(Top10Features, MatchFullSortOracle) {
  ikerev::Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    ikerev::lm::NextTokenDistribution d;
    double sum = 0.0;
    for (int i = 0; i < 40; ++i) {
      d.probabilities.push_back(ikerev::uniform_unit(rng));
      sum += d.probabilities.back();
    }
    for (auto& p : d.probabilities) p /= sum;
    auto sorted = d.probabilities;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const auto f = ikerev::top10_features(d);
    for (std::size_t k = 0; k < 10; ++k) EXPECT_EQ(f[k], sorted[k]);
  }
  ikerev::lm::NextTokenDistribution tiny;
  tiny.probabilities = {0.5, 0.5};
  EXPECT_THROW(ikerev::top10_features(tiny), ikerev::ValidationError);
}

class DetectionDatasetTest : public ::testing::Test {
 protected:
  void SetUp() override {
    ikerev::CorpusConfig cc;
    cc.subjects = 12;
    cc.relations = 2;
    corpus = ikerev::generate_corpus(cc, 2);
    tokenizer = ikerev::Tokenizer::from_corpus(corpus);
    auto lc = toy::config(tokenizer.size(), 16);
    lc.context_length = 256;
    model = std::make_unique<ikerev::lm::Transformer<float>>(toy::model<float>(lc, 5, 0.1));
  }

  ikerev::Corpus corpus;
  ikerev::Tokenizer tokenizer;
  std::unique_ptr<ikerev::lm::Transformer<float>> model;
};

TEST_F(DetectionDatasetTest, BalancedDisjointAndDeterministic) {
  ikerev::DetectionDataConfig config{20, 20, 4};
  const auto ds = ikerev::build_detection_dataset(*model, tokenizer, corpus.facts, config, 11);
  for (const auto* split : {&ds.train, &ds.test}) {
    ASSERT_EQ(split->size(), 20u);
    EXPECT_EQ(std::count_if(split->begin(), split->end(), [](const auto& d) { return d.edited; }), 10);
  }
  std::set<int> train_ids;
  for (const auto& d : ds.train) train_ids.insert(d.fact_id);
  for (const auto& d : ds.test) EXPECT_FALSE(train_ids.contains(d.fact_id));

  const auto again = ikerev::build_detection_dataset(*model, tokenizer, corpus.facts, config, 11);
  ASSERT_EQ(again.train.size(), ds.train.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) EXPECT_EQ(again.train[i].features, ds.train[i].features);
}

TEST_F(DetectionDatasetTest, TooFewFactsIsAnError) {
  ikerev::DetectionDataConfig config{400, 400, 4};
  EXPECT_THROW(ikerev::build_detection_dataset(*model, tokenizer, corpus.facts, config, 1), ikerev::ValidationError);
  EXPECT_THROW(ikerev::build_detection_dataset(*model, tokenizer, {corpus.facts[0]}, config, 1),
               ikerev::ValidationError);
}

TEST_F(DetectionDatasetTest, FileRoundTrip) {
  const auto ds = ikerev::build_detection_dataset(*model, tokenizer, corpus.facts, {10, 10, 4}, 3);
  const auto path = (toy::temp_dir("detdata") / "train.jsonl").string();
  ikerev::write_detection_instances(ds.train, path);
  const auto back = ikerev::read_detection_instances(path);
  ASSERT_EQ(back.size(), ds.train.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].fact_id, ds.train[i].fact_id);
    EXPECT_EQ(back[i].edited, ds.train[i].edited);
    EXPECT_EQ(back[i].features, ds.train[i].features);
  }
}

}  // namespace
