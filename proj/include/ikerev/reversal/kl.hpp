#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "ikerev/error.hpp"

namespace ikerev::reversal {

inline constexpr double kKlFloor = 1e-12;

// KL[P || Q] = sum_i P_i ln(P_i / Q_i), Q floored at 1e-12, 0 ln(0/q) = 0.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size(), "kl_divergence: length mismatch (", p.size(), " vs ", q.size(), ")");
  require(!p.empty(), "kl_divergence: empty distributions");
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    require(p[i] >= 0.0 && q[i] >= 0.0, "kl_divergence: negative probability at ", i);
    sp += p[i];
    sq += q[i];
  }
  require(std::abs(sp - 1.0) <= 1e-6 && std::abs(sq - 1.0) <= 1e-6,
          "kl_divergence: inputs not normalized (sums ", sp, ", ", sq, ")");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) kl += p[i] * (std::log(p[i]) - std::log(std::max(q[i], kKlFloor)));
  }
  return kl;
}

// Fixed target for repeated KL[P || target] evaluations.
struct KlTarget {
  std::vector<double> probabilities;
  std::vector<double> log_floored;

  explicit KlTarget(std::vector<double> q) : probabilities(std::move(q)), log_floored(probabilities.size()) {
    for (std::size_t i = 0; i < probabilities.size(); ++i) {
      log_floored[i] = std::log(std::max(probabilities[i], kKlFloor));
    }
  }

  // Returns KL[P || target] given P and ln P; adds scale * dKL/dP into `grad`.
  double loss(std::span<const double> p, std::span<const double> log_p, std::span<double> grad, double scale) const {
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] <= 0.0) continue;
      const double diff = log_p[i] - log_floored[i];
      kl += p[i] * diff;
      grad[i] += scale * (diff + 1.0);
    }
    return kl;
  }
};

}  // namespace ikerev::reversal
