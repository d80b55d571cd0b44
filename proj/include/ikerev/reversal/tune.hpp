#pragma once

// Gradient tuning of reversal embeddings against a frozen model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ikerev/editor.hpp"
#include "ikerev/error.hpp"
#include "ikerev/lm/inference.hpp"
#include "ikerev/optim.hpp"
#include "ikerev/reversal/kl.hpp"
#include "ikerev/reversal/tokens.hpp"
#include "ikerev/seed.hpp"

namespace ikerev::reversal {

// An edit plus its cached unedited next-token distribution P_o = M(BOS p).
struct ReversalExample {
  EncodedEdit edit;
  KlTarget target;
  int original_top1 = 0;
};

template <typename T>
std::vector<ReversalExample> prepare_examples(const lm::Transformer<T>& model, const std::vector<EncodedEdit>& edits) {
  const int bos = model.config().specials.bos;
  std::vector<ReversalExample> out;
  out.reserve(edits.size());
  for (const auto& e : edits) {
    auto dist = lm::next_token_distribution(model, std::span<const int>(e.unedited(bos)));
    const int top1 = dist.argmax();
    out.push_back({e, KlTarget(std::move(dist.probabilities)), top1});
  }
  return out;
}

struct TuneOptions {
  int epochs = 3;
  double learning_rate = 1e-3;
  double normal_weight = 1.0;        // weight of KL[P_n || P_o] relative to KL[P_r || P_o]
  double init_noise = 0.01;          // std of the Gaussian added to the mean-embedding init
  std::size_t loss_eval_limit = 64;  // examples used for the recorded loss curve
};

// Per-step objective: edited_kl * KL[P_r||P_o] + normal_kl * KL[P_n||P_o] + reg_weight * R(r).
struct Objective {
  double edited_kl = 1.0;
  double normal_kl = 1.0;
  double reg_weight = 0.0;
  // Returns R(r) and writes dR/dr into `grad` (pre-sized, zeroed).
  std::function<double(const Embeddings& r, Embeddings& grad)> regularizer;

  bool uses_model() const { return edited_kl != 0.0 || normal_kl != 0.0; }
};

struct TuneResult {
  Embeddings r;
  std::vector<double> loss_curve;
};

namespace detail {

inline void check_fits(const lm::LMConfig& config, const EncodedEdit& e, std::size_t m) {
  const auto len = e.prefix.size() + m + e.query.size();
  require(static_cast<int>(len) <= config.context_length, "context overflow after inserting ", m,
          " reversal tokens: ", len, " > ", config.context_length, " (fact ", e.fact_id, ")");
}

// One KL term. Accumulates scale * dKL/dr_j into grad for every free embedding.
template <typename T>
double kl_term(const lm::Transformer<T>& model, const ReversalExample& ex, bool with_edit,
               std::span<const RevToken> rev, double scale, Embeddings* grad) {
  const auto prompt = assemble<T>(ex.edit, with_edit, rev, model.config().specials);
  if (grad == nullptr) {
    const auto dist = lm::next_token_distribution(model, std::span<const int>(prompt.tokens),
                                                  std::span<const lm::EmbeddingOverride<T>>(prompt.overrides));
    std::vector<double> scratch(dist.size(), 0.0);
    return ex.target.loss(dist.probabilities, dist.log_probabilities, scratch, 1.0);
  }
  const auto result = lm::embedding_gradients(
      model, std::span<const int>(prompt.tokens), std::span<const lm::EmbeddingOverride<T>>(prompt.overrides),
      [&](std::span<const double> p, std::span<const double> lp, std::span<double> g) {
        return ex.target.loss(p, lp, g, 1.0);
      });
  std::size_t k = 0;
  for (std::size_t j = 0; j < rev.size(); ++j) {
    if (rev[j].discrete()) continue;
    const auto& g = result.gradients[k++].gradient;
    for (std::size_t d = 0; d < g.size(); ++d) (*grad)[j][d] += scale * static_cast<double>(g[d]);
  }
  return result.loss;
}

template <typename T>
double example_loss(const lm::Transformer<T>& model, const ReversalExample& ex, std::span<const RevToken> rev,
                    const Objective& obj, Embeddings* grad) {
  double loss = 0.0;
  if (obj.edited_kl != 0.0) loss += obj.edited_kl * kl_term(model, ex, true, rev, obj.edited_kl, grad);
  if (obj.normal_kl != 0.0) loss += obj.normal_kl * kl_term(model, ex, false, rev, obj.normal_kl, grad);
  return loss;
}

inline Embeddings zeros_like(const Embeddings& r) {
  Embeddings z(r.size());
  for (std::size_t j = 0; j < r.size(); ++j) z[j].assign(r[j].size(), 0.0);
  return z;
}

inline double regularizer_value(const Objective& obj, const Embeddings& r, Embeddings& grad) {
  if (obj.reg_weight == 0.0 || !obj.regularizer) return 0.0;
  return obj.regularizer(r, grad);
}

}  // namespace detail

// Mean objective over `examples` (KL terms averaged, regularizer added once).
template <typename T>
double objective_value(const lm::Transformer<T>& model, std::span<const ReversalExample> examples,
                       std::span<const RevToken> rev, const Objective& obj) {
  double sum = 0.0;
  if (obj.uses_model()) {
    for (const auto& ex : examples) sum += detail::example_loss(model, ex, rev, obj, nullptr);
    sum /= static_cast<double>(std::max<std::size_t>(1, examples.size()));
  }
  if (obj.reg_weight != 0.0 && obj.regularizer) {
    Embeddings r;
    for (const auto& t : rev) r.push_back(t.embedding);
    auto scratch = detail::zeros_like(r);
    sum += obj.reg_weight * obj.regularizer(r, scratch);
  }
  return sum;
}

// Adam on the reversal embeddings only, one example per step, `epochs` passes in a
// seeded order. Model parameters are never written.
template <typename T>
TuneResult tune_embeddings(const lm::Transformer<T>& model, std::span<const ReversalExample> examples,
                           Embeddings init, const Objective& obj, const TuneOptions& options, std::uint64_t seed) {
  require(!examples.empty(), "reversal tuning: empty training set");
  require(!init.empty(), "reversal tuning: m must be >= 1");
  require(options.epochs >= 0, "reversal tuning: epochs must be >= 0");
  for (const auto& ex : examples) detail::check_fits(model.config(), ex.edit, init.size());
  const auto m = init.size();
  const auto dim = init.front().size();

  TuneResult out;
  out.r = std::move(init);
  const std::span<const ReversalExample> curve_set = examples.first(std::min(options.loss_eval_limit, examples.size()));
  auto record = [&] { out.loss_curve.push_back(objective_value(model, curve_set, continuous_tokens(out.r), obj)); };
  record();

  Adam adam(m * dim, AdamOptions{options.learning_rate});
  std::vector<double> flat(m * dim), flat_grad(m * dim);
  std::vector<std::size_t> order(examples.size());
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(stage_seed(seed, "reversal-order", static_cast<std::uint64_t>(epoch)));
    shuffle_range(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      auto grad = detail::zeros_like(out.r);
      if (obj.uses_model()) {
        const auto rev = continuous_tokens(out.r);
        detail::example_loss(model, examples[idx], std::span<const RevToken>(rev), obj, &grad);
      }
      if (obj.reg_weight != 0.0 && obj.regularizer) {
        auto reg_grad = detail::zeros_like(out.r);
        obj.regularizer(out.r, reg_grad);
        for (std::size_t j = 0; j < m; ++j) {
          for (std::size_t d = 0; d < dim; ++d) grad[j][d] += obj.reg_weight * reg_grad[j][d];
        }
      }
      for (std::size_t j = 0; j < m; ++j) {
        std::copy(out.r[j].begin(), out.r[j].end(), flat.begin() + static_cast<std::ptrdiff_t>(j * dim));
        std::copy(grad[j].begin(), grad[j].end(), flat_grad.begin() + static_cast<std::ptrdiff_t>(j * dim));
      }
      adam.step(std::span<double>(flat), std::span<const double>(flat_grad), options.learning_rate);
      for (std::size_t j = 0; j < m; ++j) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(j * dim), dim, out.r[j].begin());
      }
    }
    record();
  }
  return out;
}

template <typename T>
std::vector<double> mean_natural_embedding(const lm::Transformer<T>& model) {
  const auto& specials = model.config().specials;
  const auto dim = static_cast<std::size_t>(model.config().model_dim);
  std::vector<double> mean(dim, 0.0);
  int count = 0;
  for (int id = 0; id < model.config().vocab_size; ++id) {
    if (!specials.is_natural(id)) continue;
    const auto e = model.token_embedding(id);
    for (std::size_t d = 0; d < dim; ++d) mean[d] += static_cast<double>(e[static_cast<Eigen::Index>(d)]);
    ++count;
  }
  for (auto& v : mean) v /= std::max(1, count);
  return mean;
}

template <typename T>
Embeddings initial_embeddings(const lm::Transformer<T>& model, int m, double noise, std::uint64_t seed) {
  const auto mean = mean_natural_embedding(model);
  Rng rng(stage_seed(seed, "reversal-init"));
  Embeddings r(static_cast<std::size_t>(m), mean);
  for (auto& v : r) {
    for (auto& x : v) x += noise * standard_normal(rng);
  }
  return r;
}

// 1 - cos(a, b) and its gradient with respect to a.
inline double cosine_loss(std::span<const double> a, std::span<const double> b, std::span<double> grad_a) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  const double na = std::sqrt(std::max(aa, 1e-300)), nb = std::sqrt(std::max(bb, 1e-300));
  const double cos = ab / (na * nb);
  for (std::size_t i = 0; i < a.size(); ++i) grad_a[i] = -(b[i] / (na * nb) - cos * a[i] / (na * na));
  return 1.0 - cos;
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  std::vector<double> scratch(a.size());
  return 1.0 - cosine_loss(a, b, scratch);
}

// Continuous reversal: KL[P_r||P_o] + normal_weight * KL[P_n||P_o] from the mean-embedding init.
template <typename T>
ReversalTokenSet tune_continuous(const lm::Transformer<T>& model, std::span<const ReversalExample> train, int m,
                                 const TuneOptions& options, std::uint64_t seed) {
  require(m >= 1, "tune_continuous: m must be >= 1");
  Objective obj;
  obj.normal_kl = options.normal_weight;
  auto result = tune_embeddings(model, train, initial_embeddings(model, m, options.init_noise, seed), obj, options, seed);
  ReversalTokenSet set;
  set.mode = Mode::kContinuous;
  set.m = m;
  set.embeddings = std::move(result.r);
  set.seed = seed;
  set.epochs = options.epochs;
  set.loss_curve = std::move(result.loss_curve);
  return set;
}

// (1 - lambda) KL[P_r||P_o] + lambda (1 - cos(r_init, r)), starting from r = r_init.
template <typename T>
TuneResult tune_probe(const lm::Transformer<T>& model, std::span<const ReversalExample> train,
                      const std::vector<double>& r_init, double lambda, const TuneOptions& options,
                      std::uint64_t seed) {
  require(lambda >= 0.0 && lambda <= 1.0, "probe: lambda must be in [0, 1]");
  Objective obj;
  obj.edited_kl = 1.0 - lambda;
  obj.normal_kl = 0.0;
  obj.reg_weight = lambda;
  obj.regularizer = [&r_init](const Embeddings& r, Embeddings& grad) {
    double sum = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) sum += cosine_loss(r[j], r_init, grad[j]);
    const double inv = 1.0 / static_cast<double>(r.size());
    for (auto& g : grad) for (auto& v : g) v *= inv;
    return sum * inv;
  };
  return tune_embeddings(model, train, Embeddings{r_init}, obj, options, seed);
}

// Mean over natural tokens i of the unit vectors (V_i (.) w_bar) / |V_i (.) w_bar|.
// The average cosine of u against all of them is exactly u_hat . centroid.
template <typename T>
std::vector<double> weighted_unit_centroid(const lm::Transformer<T>& model, std::span<const double> weights) {
  const auto dim = static_cast<std::size_t>(model.config().model_dim);
  require(weights.size() == dim, "weighted centroid: weight dim ", weights.size(), " vs model dim ", dim);
  std::vector<double> c(dim, 0.0), v(dim);
  int count = 0;
  for (int id = 0; id < model.config().vocab_size; ++id) {
    if (!model.config().specials.is_natural(id)) continue;
    const auto e = model.token_embedding(id);
    double norm = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      v[d] = static_cast<double>(e[static_cast<Eigen::Index>(d)]) * weights[d];
      norm += v[d] * v[d];
    }
    norm = std::sqrt(std::max(norm, 1e-300));
    for (std::size_t d = 0; d < dim; ++d) c[d] += v[d] / norm;
    ++count;
  }
  for (auto& x : c) x /= std::max(1, count);
  return c;
}

// mean_j mean_i (1 - cos(r_j (.) w_bar, V_i (.) w_bar)) over natural tokens i.
inline std::function<double(const Embeddings&, Embeddings&)> vocab_cosine_regularizer(std::vector<double> w_bar,
                                                                                      std::vector<double> centroid) {
  return [w_bar = std::move(w_bar), centroid = std::move(centroid)](const Embeddings& r, Embeddings& grad) {
    const std::size_t dim = w_bar.size();
    std::vector<double> u(dim), gu(dim);
    double sum = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) {
      double uu = 0.0, uc = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        u[d] = r[j][d] * w_bar[d];
        uu += u[d] * u[d];
        uc += u[d] * centroid[d];
      }
      const double nu = std::sqrt(std::max(uu, 1e-300));
      const double mean_cos = uc / nu;
      sum += 1.0 - mean_cos;
      for (std::size_t d = 0; d < dim; ++d) {
        gu[d] = -(centroid[d] / nu - mean_cos * u[d] / (nu * nu));
        grad[j][d] = gu[d] * w_bar[d] / static_cast<double>(r.size());
      }
    }
    return sum / static_cast<double>(r.size());
  };
}

// (1 - lambda) L_cont + lambda * vocab cosine term. kNoCos keeps only L_cont, kNoKl only the
// cosine term.
template <typename T>
TuneResult tune_discrete_joint(const lm::Transformer<T>& model, std::span<const ReversalExample> train,
                               const DimensionWeights& weights, double lambda, int m, Ablation ablation,
                               const TuneOptions& options, std::uint64_t seed) {
  require(lambda >= 0.0 && lambda <= 1.0, "discrete tuning: lambda must be in [0, 1]");
  require(m >= 1, "discrete tuning: m must be >= 1");
  require(!(ablation == Ablation::kNoKl && lambda == 1.0),
          "discrete tuning: lambda = 1 together with the no-kl ablation is degenerate");
  require(!(ablation == Ablation::kNoKl && lambda == 0.0),
          "discrete tuning: lambda = 0 together with the no-kl ablation leaves no objective");
  double kl_coef = 1.0 - lambda, cos_coef = lambda;
  if (ablation == Ablation::kNoCos) cos_coef = 0.0;
  if (ablation == Ablation::kNoKl) kl_coef = 0.0;
  Objective obj;
  obj.edited_kl = kl_coef;
  obj.normal_kl = kl_coef * options.normal_weight;
  obj.reg_weight = cos_coef;
  if (cos_coef != 0.0) obj.regularizer = vocab_cosine_regularizer(weights.w_bar, weighted_unit_centroid(model, weights.w_bar));
  return tune_embeddings(model, train, initial_embeddings(model, m, options.init_noise, seed), obj, options, seed);
}

}  // namespace ikerev::reversal
