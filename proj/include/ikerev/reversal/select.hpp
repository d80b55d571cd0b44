#pragma once

// Projection of tuned embeddings onto natural vocabulary tokens, and the probe that
// produces dimension weights.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "ikerev/error.hpp"
#include "ikerev/lm/inference.hpp"
#include "ikerev/reversal/tokens.hpp"
#include "ikerev/reversal/tune.hpp"

namespace ikerev::reversal {

inline double matching_accuracy(std::span<const int> reversed, std::span<const int> original) {
  require(reversed.size() == original.size(), "matching_accuracy: length mismatch (", reversed.size(), " vs ",
          original.size(), ")");
  require(!original.empty(), "matching_accuracy: empty lists");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < original.size(); ++i) hits += reversed[i] == original[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(original.size());
}

// Top-1 next tokens for BOS p_edit r p (with_edit) or BOS r p.
template <typename T>
std::vector<int> reversed_top1(const lm::Transformer<T>& model, std::span<const ReversalExample> examples,
                               std::span<const RevToken> rev, bool with_edit) {
  std::vector<int> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    detail::check_fits(model.config(), ex.edit, rev.size());
    const auto prompt = assemble<T>(ex.edit, with_edit, rev, model.config().specials);
    out.push_back(lm::next_token_distribution(model, std::span<const int>(prompt.tokens),
                                              std::span<const lm::EmbeddingOverride<T>>(prompt.overrides))
                      .argmax());
  }
  return out;
}

inline std::vector<int> original_top1(std::span<const ReversalExample> examples) {
  std::vector<int> out;
  for (const auto& ex : examples) out.push_back(ex.original_top1);
  return out;
}

template <typename T>
double edited_matching_accuracy(const lm::Transformer<T>& model, std::span<const ReversalExample> examples,
                                std::span<const RevToken> rev) {
  return matching_accuracy(reversed_top1(model, examples, rev, true), original_top1(examples));
}

// Natural tokens ranked by cos(r (.) w, V_i (.) w), best first (ties by lower id).
template <typename T>
std::vector<int> candidate_tokens(const lm::Transformer<T>& model, std::span<const double> r,
                                  std::span<const double> w, std::size_t k) {
  const auto dim = static_cast<std::size_t>(model.config().model_dim);
  require(r.size() == dim && w.size() == dim, "candidate_tokens: dimension mismatch");
  std::vector<double> rw(dim), vw(dim);
  for (std::size_t d = 0; d < dim; ++d) rw[d] = r[d] * w[d];
  std::vector<std::pair<double, int>> scored;
  for (int id = 0; id < model.config().vocab_size; ++id) {
    if (!model.config().specials.is_natural(id)) continue;
    const auto e = model.token_embedding(id);
    for (std::size_t d = 0; d < dim; ++d) vw[d] = static_cast<double>(e[static_cast<Eigen::Index>(d)]) * w[d];
    scored.emplace_back(cosine_similarity(rw, vw), id);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<int> out;
  for (std::size_t i = 0; i < std::min(k, scored.size()); ++i) out.push_back(scored[i].second);
  return out;
}

inline std::size_t natural_vocab_size(const lm::LMConfig& config) {
  std::size_t n = 0;
  for (int id = 0; id < config.vocab_size; ++id) n += config.specials.is_natural(id) ? 1 : 0;
  return n;
}

struct SelectOptions {
  std::size_t k = 10;
  double normal_weight = 1.0;
};

// Position by position: take the top-k candidates for r_j, score each by
// KL[P_r||P_o] + KL[P_n||P_o] on the validation set (earlier positions already discrete,
// later ones still continuous), keep the minimizer.
template <typename T>
std::vector<int> select_discrete(const lm::Transformer<T>& model, const Embeddings& r, const DimensionWeights& weights,
                                 std::span<const ReversalExample> validation, const SelectOptions& options) {
  require(!validation.empty(), "select_discrete: empty validation set");
  require(!r.empty(), "select_discrete: no reversal embeddings");
  require(options.k >= 1 && options.k <= static_cast<std::size_t>(model.config().vocab_size), "select_discrete: k = ",
          options.k, " must be in [1, vocab size ", model.config().vocab_size, "]");
  Objective obj;
  obj.normal_kl = options.normal_weight;
  auto rev = continuous_tokens(r);
  std::vector<int> chosen;
  for (std::size_t j = 0; j < r.size(); ++j) {
    const auto candidates = candidate_tokens(model, r[j], weights.w, options.k);
    double best = std::numeric_limits<double>::infinity();
    int best_id = candidates.front();
    for (int id : candidates) {
      rev[j] = RevToken{id, {}};
      const double loss = objective_value(model, validation, std::span<const RevToken>(rev), obj);
      if (loss < best) {
        best = loss;
        best_id = id;
      }
    }
    rev[j] = RevToken{best_id, {}};
    chosen.push_back(best_id);
  }
  return chosen;
}

struct ProbeResult {
  std::vector<double> r_init;
  std::vector<double> r_tuned;
  DimensionWeights weights;
  std::uint64_t chosen_seed = 0;
  std::vector<std::pair<std::uint64_t, double>> seed_accuracy;  // validation edited matching accuracy
};

// Tunes one token from `init_token` under each seed, keeps the run whose validation
// accuracy is the median (lower median for even counts), and derives w / w_bar from it.
template <typename T>
ProbeResult probe_dimensions(const lm::Transformer<T>& model, std::span<const ReversalExample> train,
                             std::span<const ReversalExample> validation, int init_token, double lambda,
                             std::span<const std::uint64_t> seeds, const TuneOptions& options) {
  require(!seeds.empty(), "probe_dimensions: no seeds");
  require(init_token >= 0 && init_token < model.config().vocab_size &&
              model.config().specials.is_natural(init_token),
          "probe_dimensions: init token ", init_token, " is not a natural token");
  ProbeResult out;
  const auto e = model.token_embedding(init_token);
  out.r_init.assign(e.data(), e.data() + e.size());
  std::vector<std::vector<double>> tuned;
  for (auto seed : seeds) {
    auto result = tune_probe(model, train, out.r_init, lambda, options, seed);
    const auto rev = continuous_tokens(result.r);
    out.seed_accuracy.emplace_back(seed, edited_matching_accuracy(model, validation, std::span<const RevToken>(rev)));
    tuned.push_back(std::move(result.r.front()));
  }
  std::vector<std::size_t> order(seeds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return out.seed_accuracy[a].second < out.seed_accuracy[b].second;
  });
  const std::size_t median = order[(order.size() - 1) / 2];
  out.chosen_seed = seeds[median];
  out.r_tuned = tuned[median];
  out.weights = dimension_weights(out.r_init, out.r_tuned);
  return out;
}

struct DiscreteOptions {
  TuneOptions tune;
  SelectOptions select;
  double lambda = 0.5;
  Ablation ablation = Ablation::kNone;
};

template <typename T>
ReversalTokenSet tune_discrete(const lm::Transformer<T>& model, std::span<const ReversalExample> train,
                               std::span<const ReversalExample> validation, const DimensionWeights& weights, int m,
                               const DiscreteOptions& options, std::uint64_t seed) {
  auto result = tune_discrete_joint(model, train, weights, options.lambda, m, options.ablation, options.tune, seed);
  ReversalTokenSet set;
  set.mode = Mode::kDiscrete;
  set.ablation = options.ablation;
  set.m = m;
  set.token_ids = select_discrete(model, result.r, weights, validation, options.select);
  set.seed = seed;
  set.epochs = options.tune.epochs;
  set.lambda = options.lambda;
  set.loss_curve = std::move(result.loss_curve);
  return set;
}

}  // namespace ikerev::reversal
