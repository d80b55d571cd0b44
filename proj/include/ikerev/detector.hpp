#pragma once

// L1-regularized logistic regression over sorted top-10 probabilities.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ikerev/editor.hpp"
#include "ikerev/error.hpp"
#include "ikerev/seed.hpp"

namespace ikerev {

struct DetectorModel {
  DetectionFeatures weights{};
  double bias = 0.0;
  double reg_strength = 0.0;
  std::uint64_t seed = 0;
  bool log_features = false;
};

struct DetectorOptions {
  int max_iterations = 200000;
  double tolerance = 1e-9;  // on the norm of the proximal gradient mapping
  bool log_features = false;
};

inline double log_feature(double p) { return std::log(std::max(p, 1e-12)); }

inline DetectionFeatures transform_features(const DetectionFeatures& f, bool log_features) {
  if (!log_features) return f;
  DetectionFeatures out{};
  for (std::size_t k = 0; k < f.size(); ++k) out[k] = log_feature(f[k]);
  return out;
}

namespace detail {

inline double log1p_exp(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct LogisticProblem {
  Eigen::MatrixXd x;  // N x 10
  Eigen::VectorXd y;  // 0/1
  double reg = 0.0;

  double smooth(const Eigen::VectorXd& w, double b) const {
    const Eigen::VectorXd z = (x * w).array() + b;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) loss += log1p_exp(z[i]) - y[i] * z[i];
    return loss / static_cast<double>(z.size());
  }

  double objective(const Eigen::VectorXd& w, double b) const { return smooth(w, b) + reg * w.lpNorm<1>(); }

  void gradient(const Eigen::VectorXd& w, double b, Eigen::VectorXd& gw, double& gb) const {
    Eigen::VectorXd r = (x * w).array() + b;
    for (Eigen::Index i = 0; i < r.size(); ++i) r[i] = sigmoid(r[i]) - y[i];
    const double n = static_cast<double>(r.size());
    gw = x.transpose() * r / n;
    gb = r.sum() / n;
  }

  // Largest eigenvalue of [X 1]^T [X 1] / (4N) bounds the Hessian of the mean logistic loss.
  double lipschitz() const {
    Eigen::MatrixXd a(x.rows(), x.cols() + 1);
    a << x, Eigen::VectorXd::Ones(x.rows());
    const Eigen::MatrixXd gram = a.transpose() * a;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
    return std::max(eig.eigenvalues().maxCoeff() / (4.0 * static_cast<double>(x.rows())), 1e-12);
  }
};

inline LogisticProblem make_problem(std::span<const DetectionInstance> data, double reg, bool log_features) {
  LogisticProblem p;
  p.reg = reg;
  p.x.resize(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(kDetectionFeatures));
  p.y.resize(static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto f = transform_features(data[i].features, log_features);
    for (std::size_t k = 0; k < kDetectionFeatures; ++k) {
      p.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = f[k];
    }
    p.y[static_cast<Eigen::Index>(i)] = data[i].edited ? 1.0 : 0.0;
  }
  return p;
}

inline Eigen::VectorXd soft_threshold(const Eigen::VectorXd& v, double t) {
  return v.unaryExpr([t](double a) { return a > t ? a - t : (a < -t ? a + t : 0.0); });
}

}  // namespace detail

// Objective used by train_detector: mean logistic loss + reg * ||w||_1 (bias unpenalized).
inline double detector_objective(std::span<const DetectionInstance> data, const DetectorModel& model) {
  const auto p = detail::make_problem(data, model.reg_strength, model.log_features);
  return p.objective(Eigen::Map<const Eigen::VectorXd>(model.weights.data(), kDetectionFeatures), model.bias);
}

// Accelerated proximal gradient with soft-thresholding, a fixed 1/L step and
// function-value restarts. The result depends only on the data; `seed` is recorded.
inline DetectorModel train_detector(std::span<const DetectionInstance> train, double reg_strength,
                                    std::uint64_t seed, const DetectorOptions& options = {}) {
  require(!train.empty(), "train_detector: empty training set");
  require(reg_strength >= 0.0 && std::isfinite(reg_strength), "train_detector: reg-strength must be finite and >= 0");
  std::size_t positives = 0;
  for (const auto& inst : train) {
    positives += inst.edited ? 1 : 0;
    for (double v : inst.features) require(std::isfinite(v), "train_detector: non-finite feature (fact ", inst.fact_id, ")");
  }
  require(positives > 0 && positives < train.size(), "train_detector: training data has a single class");

  const auto problem = detail::make_problem(train, reg_strength, options.log_features);
  const double step = 1.0 / problem.lipschitz();
  const auto dim = static_cast<Eigen::Index>(kDetectionFeatures);

  Eigen::VectorXd w = Eigen::VectorXd::Zero(dim), w_prev = w, v = w;
  const double prior = static_cast<double>(positives) / static_cast<double>(train.size());
  double b = std::log(prior / (1.0 - prior)), b_prev = b, vb = b;
  double t = 1.0;
  double f_prev = problem.objective(w, b);
  Eigen::VectorXd gw;
  double gb = 0.0;
  for (int it = 0; it < options.max_iterations; ++it) {
    problem.gradient(v, vb, gw, gb);
    Eigen::VectorXd w_next = detail::soft_threshold(v - step * gw, step * reg_strength);
    const double b_next = vb - step * gb;
    const double f_next = problem.objective(w_next, b_next);
    const double mapping_sq = (w_next - v).squaredNorm() + (b_next - vb) * (b_next - vb);
    if (f_next > f_prev) {
      // restart momentum from the last iterate
      t = 1.0;
      v = w;
      vb = b;
      continue;
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    w_prev = w;
    b_prev = b;
    w = std::move(w_next);
    b = b_next;
    v = w + ((t - 1.0) / t_next) * (w - w_prev);
    vb = b + ((t - 1.0) / t_next) * (b - b_prev);
    t = t_next;
    f_prev = f_next;
    if (std::sqrt(mapping_sq) / step < options.tolerance) break;
  }

  DetectorModel model;
  for (std::size_t k = 0; k < kDetectionFeatures; ++k) model.weights[k] = w[static_cast<Eigen::Index>(k)];
  model.bias = b;
  model.reg_strength = reg_strength;
  model.seed = seed;
  model.log_features = options.log_features;
  return model;
}

struct Classification {
  bool edited = false;
  double score = 0.5;
};

inline Classification classify(const DetectorModel& model, std::span<const double> features) {
  require(features.size() == kDetectionFeatures, "classify: expected ", kDetectionFeatures,
          " features, got ", features.size());
  double z = model.bias;
  for (std::size_t k = 0; k < kDetectionFeatures; ++k) {
    require(std::isfinite(features[k]), "classify: non-finite feature");
    z += model.weights[k] * (model.log_features ? log_feature(features[k]) : features[k]);
  }
  const double score = detail::sigmoid(z);
  return {score > 0.5, score};
}

struct DetectionMetrics {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::optional<double> precision;  // undefined without predicted positives
  std::optional<double> recall;     // undefined without actual positives
  std::optional<double> f1;
  double accuracy = 0.0;
};

inline DetectionMetrics score_predictions(std::span<const bool> predicted, std::span<const bool> actual) {
  require(!actual.empty() && predicted.size() == actual.size(), "score_predictions: bad input sizes");
  DetectionMetrics m;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (predicted[i] && actual[i]) ++m.tp;
    else if (predicted[i]) ++m.fp;
    else if (actual[i]) ++m.fn;
    else ++m.tn;
  }
  if (m.tp + m.fp > 0) m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  if (m.tp + m.fn > 0) m.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  if (m.precision && m.recall) {
    const double s = *m.precision + *m.recall;
    m.f1 = s > 0.0 ? 2.0 * *m.precision * *m.recall / s : 0.0;
  }
  m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(actual.size());
  return m;
}

inline DetectionMetrics evaluate_detector(const DetectorModel& model, std::span<const DetectionInstance> test) {
  require(!test.empty(), "evaluate_detector: empty test set");
  const auto n = test.size();
  std::unique_ptr<bool[]> predicted(new bool[n]), actual(new bool[n]);
  for (std::size_t i = 0; i < n; ++i) {
    predicted[i] = classify(model, test[i].features).edited;
    actual[i] = test[i].edited;
  }
  return score_predictions(std::span<const bool>(predicted.get(), n), std::span<const bool>(actual.get(), n));
}

inline const std::vector<double>& default_reg_grid() {
  static const std::vector<double> grid{0.001, 0.01, 0.1, 1.0};
  return grid;
}

struct RegSelection {
  double reg_strength = 0.0;
  std::vector<std::pair<double, double>> validation_f1;  // (reg, F1; 0 when undefined)
  DetectorModel model;                                   // refit on the full training set
};

// Holds out `validation_fraction` of training facts (by fact-id), picks the reg-strength
// with best validation F1 (first in grid order on ties), then refits on all of `train`.
inline RegSelection select_reg_strength(std::span<const DetectionInstance> train, std::span<const double> grid,
                                        std::uint64_t seed, double validation_fraction = 0.2,
                                        const DetectorOptions& options = {}) {
  require(!grid.empty(), "select_reg_strength: empty grid");
  require(validation_fraction > 0.0 && validation_fraction < 1.0, "select_reg_strength: bad validation fraction");
  std::vector<int> ids;
  for (const auto& inst : train) ids.push_back(inst.fact_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  require(ids.size() >= 2, "select_reg_strength: need at least 2 distinct facts");
  Rng rng(stage_seed(seed, "detector-validation"));
  shuffle_range(ids.begin(), ids.end(), rng);
  const auto n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(validation_fraction * static_cast<double>(ids.size()))), 1, ids.size() - 1);
  const std::vector<int> held(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<DetectionInstance> fit, val;
  for (const auto& inst : train) {
    (std::find(held.begin(), held.end(), inst.fact_id) != held.end() ? val : fit).push_back(inst);
  }

  RegSelection out;
  double best = -1.0;
  for (double reg : grid) {
    const auto model = train_detector(fit, reg, seed, options);
    const double f1 = evaluate_detector(model, val).f1.value_or(0.0);
    out.validation_f1.emplace_back(reg, f1);
    if (f1 > best) {
      best = f1;
      out.reg_strength = reg;
    }
  }
  out.model = train_detector(train, out.reg_strength, seed, options);
  return out;
}

inline nlohmann::ordered_json to_json(const DetectorModel& model) {
  nlohmann::ordered_json j;
  j["weights"] = std::vector<double>(model.weights.begin(), model.weights.end());
  j["bias"] = model.bias;
  j["reg-strength"] = model.reg_strength;
  j["seed"] = model.seed;
  j["log-features"] = model.log_features;
  return j;
}

inline DetectorModel detector_from_json(const nlohmann::json& j) {
  DetectorModel m;
  const auto w = j.at("weights").get<std::vector<double>>();
  require(w.size() == kDetectionFeatures, "detector model: expected ", kDetectionFeatures, " weights");
  std::copy(w.begin(), w.end(), m.weights.begin());
  m.bias = j.at("bias").get<double>();
  m.reg_strength = j.at("reg-strength").get<double>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.log_features = j.value("log-features", false);
  for (double v : m.weights) require(std::isfinite(v), "detector model: non-finite weight");
  require(std::isfinite(m.bias), "detector model: non-finite bias");
  return m;
}

inline void save_detector(const DetectorModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail_runtime("cannot write detector model ", path);
  out << to_json(model).dump(2) << '\n';
}

inline DetectorModel load_detector(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_validation("cannot open detector model ", path);
  try {
    return detector_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    fail_validation("malformed detector model ", path, ": ", e.what());
  }
}

}  // namespace ikerev
