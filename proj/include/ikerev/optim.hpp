#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "ikerev/error.hpp"

namespace ikerev {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW)
};

// Adam over a flat parameter vector. Moments are kept in double.
class Adam {
 public:
  Adam(std::size_t size, AdamOptions options) : options_(options), m_(size, 0.0), v_(size, 0.0) {}

  template <typename T, typename G>
  void step(std::span<T> params, std::span<const G> grads, double learning_rate,
            std::span<const unsigned char> decay_mask = {}) {
    require(params.size() == m_.size() && grads.size() == m_.size(), "adam: size mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = static_cast<double>(grads[i]);
      m_[i] = options_.beta1 * m_[i] + (1.0 - options_.beta1) * g;
      v_[i] = options_.beta2 * v_[i] + (1.0 - options_.beta2) * g * g;
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      double p = static_cast<double>(params[i]);
      if (options_.weight_decay > 0.0 && (decay_mask.empty() || decay_mask[i] != 0)) {
        p -= learning_rate * options_.weight_decay * p;
      }
      p -= learning_rate * mhat / (std::sqrt(vhat) + options_.epsilon);
      params[i] = static_cast<T>(p);
    }
  }

  template <typename T, typename G>
  void step(std::span<T> params, std::span<const G> grads) {
    step(params, grads, options_.learning_rate);
  }

  long steps() const { return t_; }

 private:
  AdamOptions options_;
  std::vector<double> m_;
  std::vector<double> v_;
  long t_ = 0;
};

}  // namespace ikerev
