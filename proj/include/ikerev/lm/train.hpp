#pragma once

// Next-token cross-entropy training. Documents are packed into fixed-length rows, each
// document introduced by BOS, GPT style; a BOS in the middle of a row therefore marks the
// start of an unrelated context.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "ikerev/error.hpp"
#include "ikerev/lm/checkpoint.hpp"
#include "ikerev/lm/transformer.hpp"
#include "ikerev/optim.hpp"
#include "ikerev/seed.hpp"

namespace ikerev::lm {

struct TrainConfig {
  int steps = 3500;
  int batch_rows = 8;
  double learning_rate = 2e-3;
  double min_learning_rate_ratio = 0.1;
  int warmup_steps = 100;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  int pack_attempts = 8;
};

struct TrainProgress {
  int step = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
};

using ProgressCallback = std::function<void(const TrainProgress&)>;

namespace detail {

inline double scheduled_lr(const TrainConfig& config, int step) {
  if (step < config.warmup_steps) {
    return config.learning_rate * static_cast<double>(step + 1) / config.warmup_steps;
  }
  const double span = std::max(1, config.steps - config.warmup_steps);
  const double progress = std::min(1.0, (step - config.warmup_steps) / span);
  const double floor = config.learning_rate * config.min_learning_rate_ratio;
  return floor + 0.5 * (config.learning_rate - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace detail

// One packed row of `context_length + 1` tokens (inputs are the first context_length,
// targets the last context_length). Unused tail is PAD.
inline std::vector<int> pack_row(const std::vector<std::vector<int>>& documents, const LMConfig& config,
                                 int attempts, Rng& rng) {
  const auto width = static_cast<std::size_t>(config.context_length) + 1;
  std::vector<int> row;
  row.reserve(width);
  int misses = 0;
  while (misses < attempts) {
    const auto& doc = documents[uniform_index(rng, documents.size())];
    if (row.size() + doc.size() + 1 > width) {
      ++misses;
      continue;
    }
    row.push_back(config.specials.bos);
    row.insert(row.end(), doc.begin(), doc.end());
  }
  row.resize(width, config.specials.pad);
  return row;
}

// Trains from `init` (or fresh weights) for `config.steps` more steps. The batch stream
// depends only on (seed, absolute step), so resuming continues the same stream.
inline Checkpoint train_lm(const std::vector<std::vector<int>>& documents, const LMConfig& lm_config,
                           const TrainConfig& config, std::uint64_t seed,
                           const std::optional<Checkpoint>& init = std::nullopt,
                           const ProgressCallback& progress = {}) {
  lm_config.validate();
  require(!documents.empty(), "train_lm: empty training mixture");
  require(config.steps >= 0 && config.batch_rows >= 1, "train_lm: bad step/batch configuration");
  for (const auto& doc : documents) {
    require(!doc.empty(), "train_lm: empty training sequence");
    require(static_cast<int>(doc.size()) + 1 <= lm_config.context_length,
            "train_lm: sequence of ", doc.size(), " tokens (plus BOS) exceeds context length ",
            lm_config.context_length);
    for (int t : doc) {
      require(t >= 0 && t < lm_config.vocab_size, "train_lm: token id ", t, " >= vocab size ",
              lm_config.vocab_size);
    }
  }

  Transformer<float> model = init ? init->model<float>() : Transformer<float>::initialized(lm_config, seed);
  if (init) {
    require(init->config == lm_config, "train_lm: checkpoint config does not match (vocab ",
            init->config.vocab_size, " vs ", lm_config.vocab_size, ")");
  }
  const std::int64_t start = init ? init->metadata.steps : 0;
  const auto n_params = model.parameters().size();

  std::vector<unsigned char> decay_mask(n_params, 0);
  for (const auto& block : model.layout().blocks()) {
    if (block.shape.size() == 2 && block.name != "pos_emb") {
      std::fill_n(decay_mask.begin() + static_cast<std::ptrdiff_t>(block.offset), block.size(), 1);
    }
  }

  Adam adam(n_params, AdamOptions{config.learning_rate, 0.9, 0.95, 1e-8, config.weight_decay});
  ParamBuffer<float> grads(n_params);
  const auto ctx = static_cast<std::size_t>(lm_config.context_length);
  const auto vocab = static_cast<Eigen::Index>(lm_config.vocab_size);
  double last_loss = 0.0;

  TrainConfig schedule = config;
  schedule.steps = static_cast<int>(start) + config.steps;

  for (int s = 0; s < config.steps; ++s) {
    const auto step = static_cast<int>(start) + s;
    std::fill(grads.begin(), grads.end(), 0.0f);
    Rng rng(stage_seed(seed, "train-batch", static_cast<std::uint64_t>(step)));
    std::vector<std::vector<int>> rows;
    std::size_t n_targets = 0;
    for (int b = 0; b < config.batch_rows; ++b) {
      rows.push_back(pack_row(documents, lm_config, config.pack_attempts, rng));
      for (std::size_t t = 1; t < rows.back().size(); ++t) {
        const int target = rows.back()[t];
        if (target != lm_config.specials.pad && target != lm_config.specials.bos) ++n_targets;
      }
    }
    if (n_targets == 0) continue;
    double loss_sum = 0.0;
    for (const auto& row : rows) {
      std::size_t used = row.size();
      while (used > 1 && row[used - 1] == lm_config.specials.pad) --used;
      const std::size_t len = std::min(ctx, used - 1);
      if (len == 0) continue;
      const std::span<const int> inputs(row.data(), len);
      const auto cache = model.forward(inputs, {}, LogitRows::kAll);
      Matrix<float> dlogits(static_cast<Eigen::Index>(len), vocab);
      for (std::size_t t = 0; t < len; ++t) {
        const auto r = static_cast<Eigen::Index>(t);
        const int target = row[t + 1];
        if (target == lm_config.specials.pad || target == lm_config.specials.bos) {
          dlogits.row(r).setZero();
          continue;
        }
        const float max_logit = cache.logits.row(r).maxCoeff();
        const RowVector<float> e = (cache.logits.row(r).array() - max_logit).exp().matrix();
        const float z = e.sum();
        loss_sum += std::log(static_cast<double>(z)) - (cache.logits(r, target) - max_logit);
        dlogits.row(r) = e / (z * static_cast<float>(n_targets));
        dlogits(r, target) -= 1.0f / static_cast<float>(n_targets);
      }
      const auto dx = model.backward(cache, dlogits, &grads);
      model.accumulate_token_embedding_grads(cache, dx, {}, grads);
    }
    last_loss = loss_sum / static_cast<double>(n_targets);

    double norm_sq = 0.0;
    for (float g : grads) norm_sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(norm_sq);
    if (config.grad_clip > 0.0 && norm > config.grad_clip) {
      const auto factor = static_cast<float>(config.grad_clip / norm);
      for (auto& g : grads) g *= factor;
    }
    const double lr = detail::scheduled_lr(schedule, step);
    adam.step(model.mutable_parameters(), std::span<const float>(grads), lr, decay_mask);
    if (progress) progress({step + 1, last_loss, lr});
  }
  return make_checkpoint(model, TrainingMetadata{start + config.steps, seed, last_loss});
}

}  // namespace ikerev::lm
