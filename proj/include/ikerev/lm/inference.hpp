#pragma once

// Read-only model queries: next-token distributions, embedding gradients with frozen
// parameters, per-layer logit lens, and attention weights.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "ikerev/error.hpp"
#include "ikerev/lm/transformer.hpp"

namespace ikerev::lm {

struct NextTokenDistribution {
  std::vector<double> probabilities;
  std::vector<double> log_probabilities;

  int argmax() const {
    return static_cast<int>(std::max_element(probabilities.begin(), probabilities.end()) -
                            probabilities.begin());
  }
  std::size_t size() const { return probabilities.size(); }

  // 1-based rank; ties share the better rank.
  int rank_of(int token) const {
    const double p = probabilities.at(static_cast<std::size_t>(token));
    int greater = 0;
    for (double q : probabilities) greater += q > p ? 1 : 0;
    return greater + 1;
  }

  // Indices of the k largest probabilities, most probable first (ties by lower id).
  std::vector<int> top_k(std::size_t k) const {
    std::vector<int> ids(probabilities.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    k = std::min(k, ids.size());
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                      [&](int a, int b) {
                        const double pa = probabilities[static_cast<std::size_t>(a)];
                        const double pb = probabilities[static_cast<std::size_t>(b)];
                        return pa != pb ? pa > pb : a < b;
                      });
    ids.resize(k);
    return ids;
  }
};

template <typename T>
NextTokenDistribution distribution_from_cache(const ForwardCache<T>& cache) {
  NextTokenDistribution dist;
  const RowVector<T> last = cache.logits.bottomRows(1);
  softmax_row(last, dist.probabilities, dist.log_probabilities);
  return dist;
}

template <typename T>
NextTokenDistribution next_token_distribution(const Transformer<T>& model, std::span<const int> prompt,
                                              std::span<const EmbeddingOverride<T>> overrides = {}) {
  return distribution_from_cache(model.forward(prompt, overrides, LogitRows::kLast));
}

// Scalar loss of a next-token distribution. Must write d(loss)/d(probability_i) into `grad`.
using DistributionLoss = std::function<double(std::span<const double> probs,
                                              std::span<const double> log_probs,
                                              std::span<double> grad)>;

// d(loss)/d(logit_i) = p_i * (g_i - sum_j p_j g_j)
inline std::vector<double> softmax_backward(std::span<const double> probs, std::span<const double> grad) {
  double dot = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) dot += probs[i] * grad[i];
  std::vector<double> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] * (grad[i] - dot);
  return out;
}

template <typename T>
struct EmbeddingGradient {
  std::size_t position = 0;
  std::vector<T> gradient;
};

template <typename T>
struct LossAndGradients {
  double loss = 0.0;
  NextTokenDistribution distribution;
  std::vector<EmbeddingGradient<T>> gradients;
};

// Gradient of `loss` with respect to the embedding vectors at the override positions.
// Model parameters are read-only; nothing outside the returned value is modified.
template <typename T>
LossAndGradients<T> embedding_gradients(const Transformer<T>& model, std::span<const int> prompt,
                                        std::span<const EmbeddingOverride<T>> overrides,
                                        const DistributionLoss& loss) {
  const auto cache = model.forward(prompt, overrides, LogitRows::kLast);
  LossAndGradients<T> out;
  out.distribution = distribution_from_cache(cache);
  std::vector<double> grad_probs(out.distribution.size(), 0.0);
  out.loss = loss(out.distribution.probabilities, out.distribution.log_probabilities, grad_probs);
  const auto dlogit = softmax_backward(out.distribution.probabilities, grad_probs);
  Matrix<T> dlogits(1, static_cast<Eigen::Index>(dlogit.size()));
  for (std::size_t i = 0; i < dlogit.size(); ++i) dlogits(0, static_cast<Eigen::Index>(i)) = static_cast<T>(dlogit[i]);
  const Matrix<T> dx = model.backward(cache, dlogits, nullptr);
  for (const auto& o : overrides) {
    const auto row = dx.row(static_cast<Eigen::Index>(o.position));
    out.gradients.push_back({o.position, std::vector<T>(row.data(), row.data() + row.size())});
  }
  return out;
}

struct LensEntry {
  int layer = 0;  // 1-based
  int rank = 0;   // 1 = most probable
  double probability = 0.0;
};

// Projects the final-position residual after every layer through the final LayerNorm and
// the unembedding, and reports the rank/probability of `target`.
template <typename T>
std::vector<LensEntry> logit_lens(const Transformer<T>& model, std::span<const int> prompt, int target,
                                  std::span<const EmbeddingOverride<T>> overrides = {}) {
  require(target >= 0 && target < model.config().vocab_size, "logit_lens: target ", target,
          " out of range");
  const auto cache = model.forward(prompt, overrides, LogitRows::kLast);
  std::vector<LensEntry> out;
  for (std::size_t l = 0; l < cache.layers.size(); ++l) {
    const RowVector<T> residual = cache.residual_after(l).bottomRows(1);
    NextTokenDistribution dist;
    softmax_row(RowVector<T>(model.project_residual(residual)), dist.probabilities, dist.log_probabilities);
    out.push_back({static_cast<int>(l) + 1, dist.rank_of(target),
                   dist.probabilities[static_cast<std::size_t>(target)]});
  }
  return out;
}

struct AttentionTensor {
  int layers = 0;
  int heads = 0;
  int length = 0;
  std::vector<double> data;  // [layer][head][query][key]

  double at(int layer, int head, int query, int key) const {
    return data[((static_cast<std::size_t>(layer) * heads + head) * length + query) * length + key];
  }
};

template <typename T>
AttentionTensor attention_weights(const Transformer<T>& model, std::span<const int> prompt,
                                  std::span<const EmbeddingOverride<T>> overrides = {}) {
  const auto cache = model.forward(prompt, overrides, LogitRows::kLast);
  AttentionTensor out;
  out.layers = model.config().layers;
  out.heads = model.config().heads;
  out.length = static_cast<int>(prompt.size());
  out.data.reserve(static_cast<std::size_t>(out.layers * out.heads * out.length * out.length));
  for (const auto& layer : cache.layers) {
    for (const auto& p : layer.probs) {
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        for (Eigen::Index j = 0; j < p.cols(); ++j) out.data.push_back(static_cast<double>(p(i, j)));
      }
    }
  }
  return out;
}

}  // namespace ikerev::lm
