#pragma once

// Decoder-only pre-LayerNorm transformer (GPT-2 layout) with hand-written backward pass.
// Templated on the scalar so gradient checks can run the exact same code in double.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ikerev/error.hpp"
#include "ikerev/lm/config.hpp"
#include "ikerev/seed.hpp"

namespace ikerev::lm {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

// Parameter and gradient storage. A fixed base alignment keeps Eigen's vectorized
// reductions over sub-blocks independent of where malloc happens to place the buffer.
template <typename T>
using ParamBuffer = std::vector<T, Eigen::aligned_allocator<T>>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Replaces the token-embedding lookup at `position` (position embeddings are still added).
template <typename T>
struct EmbeddingOverride {
  std::size_t position = 0;
  std::vector<T> vector;
};

template <typename T>
struct LayerCache {
  Matrix<T> x_in;
  Matrix<T> ln1_xhat;
  Vector<T> ln1_rstd;
  Matrix<T> h1;
  Matrix<T> qkv;
  std::vector<Matrix<T>> probs;  // one L x L matrix per head
  Matrix<T> attn_concat;
  Matrix<T> x_mid;
  Matrix<T> ln2_xhat;
  Vector<T> ln2_rstd;
  Matrix<T> h2;
  Matrix<T> fc_pre;
  Matrix<T> fc_act;
};

enum class LogitRows { kLast, kAll };

template <typename T>
struct ForwardCache {
  std::vector<int> tokens;
  std::vector<LayerCache<T>> layers;
  Matrix<T> x_final;
  Matrix<T> lnf_xhat;
  Vector<T> lnf_rstd;
  Matrix<T> hf;
  Matrix<T> logits;  // 1 x V for kLast, L x V for kAll
  LogitRows rows = LogitRows::kLast;

  std::size_t length() const { return tokens.size(); }
  // Residual stream after layer `l` (0-based), all positions.
  const Matrix<T>& residual_after(std::size_t l) const {
    return l + 1 < layers.size() ? layers[l + 1].x_in : x_final;
  }
};

namespace detail {

template <typename T>
constexpr T kLayerNormEps = T(1e-5);

template <typename T>
void layer_norm_forward(const Matrix<T>& x, const T* gain, const T* bias, Matrix<T>& xhat,
                        Vector<T>& rstd, Matrix<T>& out) {
  const auto rows = x.rows();
  const auto d = x.cols();
  xhat.resize(rows, d);
  rstd.resize(rows);
  out.resize(rows, d);
  const Eigen::Map<const RowVector<T>> g(gain, d);
  const Eigen::Map<const RowVector<T>> b(bias, d);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const T mean = x.row(r).mean();
    const T var = (x.row(r).array() - mean).square().mean();
    const T inv = T(1) / std::sqrt(var + kLayerNormEps<T>);
    rstd(r) = inv;
    xhat.row(r) = (x.row(r).array() - mean) * inv;
    out.row(r) = xhat.row(r).cwiseProduct(g) + b;
  }
}

// Returns dx; accumulates into dgain/dbias when they are non-null.
template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dout, const Matrix<T>& xhat, const Vector<T>& rstd,
                              const T* gain, T* dgain, T* dbias) {
  const auto rows = dout.rows();
  const auto d = dout.cols();
  const Eigen::Map<const RowVector<T>> g(gain, d);
  if (dgain != nullptr) {
    Eigen::Map<RowVector<T>> dg(dgain, d);
    Eigen::Map<RowVector<T>> db(dbias, d);
    dg += dout.cwiseProduct(xhat).colwise().sum();
    db += dout.colwise().sum();
  }
  Matrix<T> dx(rows, d);
  const T n = static_cast<T>(d);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const RowVector<T> dxhat = dout.row(r).cwiseProduct(g);
    const T sum_dxhat = dxhat.sum();
    const T sum_dxhat_xhat = dxhat.dot(xhat.row(r));
    dx.row(r) = (rstd(r) / n) *
                (n * dxhat.array() - sum_dxhat - xhat.row(r).array() * sum_dxhat_xhat).matrix();
  }
  return dx;
}

template <typename T>
constexpr T kGeluC = T(0.7978845608028654);  // sqrt(2/pi)

// tanh-approximated GELU, elementwise.
template <typename T>
Matrix<T> gelu(const Matrix<T>& x) {
  const auto a = x.array();
  const auto t = (kGeluC<T> * (a + T(0.044715) * a.cube())).tanh();
  return (T(0.5) * a * (T(1) + t)).matrix();
}

template <typename T>
Matrix<T> gelu_grad(const Matrix<T>& x) {
  const auto a = x.array();
  const Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> t =
      (kGeluC<T> * (a + T(0.044715) * a.cube())).tanh();
  return (T(0.5) * (T(1) + t) +
          T(0.5) * a * (T(1) - t.square()) * kGeluC<T> * (T(1) + T(3 * 0.044715) * a.square()))
      .matrix();
}

}  // namespace detail

template <typename T>
class Transformer {
 public:
  using Scalar = T;

  Transformer(const LMConfig& config, std::span<const T> params)
      : config_(config), layout_(config), params_(params.begin(), params.end()) {
    config_.validate();
    require(params_.size() == layout_.total(), "lm: parameter count ", params_.size(),
            " does not match config (expected ", layout_.total(), ")");
  }

  static Transformer initialized(const LMConfig& config, std::uint64_t seed) {
    config.validate();
    const ParamLayout layout(config);
    ParamBuffer<T> params(layout.total(), T(0));
    Rng rng(seed);
    const double residual_scale = 1.0 / std::sqrt(2.0 * config.layers);
    for (const auto& block : layout.blocks()) {
      const auto& name = block.name;
      const bool is_gain = name.ends_with(".g");
      const bool is_matrix = block.shape.size() == 2;
      for (std::size_t i = 0; i < block.size(); ++i) {
        T value = T(0);
        if (is_gain) {
          value = T(1);
        } else if (is_matrix) {
          double std = 0.02;
          if (name.ends_with("attn.w_out") || name.ends_with("mlp.w_proj")) std *= residual_scale;
          value = static_cast<T>(std * standard_normal(rng));
        }
        params[block.offset + i] = value;
      }
    }
    return Transformer(config, std::span<const T>(params));
  }

  const LMConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  std::span<const T> parameters() const { return params_; }
  std::span<T> mutable_parameters() { return params_; }

  Eigen::Map<const RowVector<T>> token_embedding(int id) const {
    return {params_.data() + layout_.tok_emb() + static_cast<std::size_t>(id) * dim(), dim()};
  }
  Eigen::Map<const Matrix<T>> token_embeddings() const {
    return {params_.data() + layout_.tok_emb(), config_.vocab_size, config_.model_dim};
  }

  void validate_input(std::span<const int> tokens,
                      std::span<const EmbeddingOverride<T>> overrides) const {
    require(!tokens.empty(), "lm: empty prompt");
    require(static_cast<int>(tokens.size()) <= config_.context_length, "lm: prompt length ",
            tokens.size(), " exceeds context length ", config_.context_length);
    for (int t : tokens) {
      require(t >= 0 && t < config_.vocab_size, "lm: unknown token id ", t);
    }
    for (const auto& o : overrides) {
      require(o.position < tokens.size(), "lm: embedding override position ", o.position,
              " out of range for prompt of length ", tokens.size());
      require(o.vector.size() == static_cast<std::size_t>(config_.model_dim),
              "lm: embedding override has dimension ", o.vector.size(), ", expected ",
              config_.model_dim);
    }
  }

  ForwardCache<T> forward(std::span<const int> tokens,
                          std::span<const EmbeddingOverride<T>> overrides = {},
                          LogitRows rows = LogitRows::kLast) const {
    validate_input(tokens, overrides);
    const auto len = static_cast<Eigen::Index>(tokens.size());
    const Eigen::Index d = dim();
    const int heads = config_.heads;
    const Eigen::Index hd = config_.head_dim();
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));

    ForwardCache<T> cache;
    cache.tokens.assign(tokens.begin(), tokens.end());
    cache.rows = rows;
    cache.layers.resize(static_cast<std::size_t>(config_.layers));

    Matrix<T> x(len, d);
    const auto pos = mat(layout_.pos_emb(), config_.context_length, d);
    for (Eigen::Index t = 0; t < len; ++t) {
      x.row(t) = token_embedding(tokens[static_cast<std::size_t>(t)]) + pos.row(t);
    }
    for (const auto& o : overrides) {
      const auto t = static_cast<Eigen::Index>(o.position);
      x.row(t) = Eigen::Map<const RowVector<T>>(o.vector.data(), d) + pos.row(t);
    }

    for (int l = 0; l < config_.layers; ++l) {
      const auto& off = layout_.layer(l);
      auto& c = cache.layers[static_cast<std::size_t>(l)];
      c.x_in = std::move(x);
      detail::layer_norm_forward(c.x_in, ptr(off.ln1_g), ptr(off.ln1_b), c.ln1_xhat, c.ln1_rstd, c.h1);
      c.qkv = c.h1 * mat(off.w_qkv, d, 3 * d);
      c.qkv.rowwise() += vec(off.b_qkv, 3 * d);
      c.attn_concat.resize(len, d);
      c.probs.resize(static_cast<std::size_t>(heads));
      for (int h = 0; h < heads; ++h) {
        const auto q = c.qkv.middleCols(h * hd, hd);
        const auto k = c.qkv.middleCols(d + h * hd, hd);
        const auto v = c.qkv.middleCols(2 * d + h * hd, hd);
        Matrix<T>& p = c.probs[static_cast<std::size_t>(h)];
        p.noalias() = (q * k.transpose()) * scale;
        for (Eigen::Index i = 0; i < len; ++i) {
          auto visible = p.row(i).head(i + 1).array();
          visible = (visible - visible.maxCoeff()).exp();
          visible /= visible.sum();
          p.row(i).tail(len - i - 1).setZero();
        }
        c.attn_concat.middleCols(h * hd, hd).noalias() = p * v;
      }
      c.x_mid = c.x_in + c.attn_concat * mat(off.w_attn_out, d, d);
      c.x_mid.rowwise() += vec(off.b_attn_out, d);
      detail::layer_norm_forward(c.x_mid, ptr(off.ln2_g), ptr(off.ln2_b), c.ln2_xhat, c.ln2_rstd, c.h2);
      const Eigen::Index f = d * config_.mlp_ratio;
      c.fc_pre = c.h2 * mat(off.w_fc, d, f);
      c.fc_pre.rowwise() += vec(off.b_fc, f);
      c.fc_act = detail::gelu(c.fc_pre);
      x = c.x_mid + c.fc_act * mat(off.w_proj, f, d);
      x.rowwise() += vec(off.b_proj, d);
    }
    cache.x_final = std::move(x);
    detail::layer_norm_forward(cache.x_final, ptr(layout_.lnf_g()), ptr(layout_.lnf_b()),
                               cache.lnf_xhat, cache.lnf_rstd, cache.hf);
    const auto unembed = mat(layout_.unembed(), d, config_.vocab_size);
    if (rows == LogitRows::kAll) {
      cache.logits = cache.hf * unembed;
    } else {
      cache.logits = cache.hf.bottomRows(1) * unembed;
    }
    return cache;
  }

  // Logits obtained by sending an arbitrary residual row through the final norm and the
  // unembedding (used by the logit lens).
  RowVector<T> project_residual(const RowVector<T>& residual) const {
    const Eigen::Index d = dim();
    Matrix<T> in = residual;
    Matrix<T> xhat, out;
    Vector<T> rstd;
    detail::layer_norm_forward(in, ptr(layout_.lnf_g()), ptr(layout_.lnf_b()), xhat, rstd, out);
    return out * mat(layout_.unembed(), d, config_.vocab_size);
  }

  // Backpropagates d(loss)/d(logits). `param_grads` (flat, same layout as parameters) is
  // accumulated when non-null; the return value is d(loss)/d(input embedding row) for every
  // position, which is also the gradient for any overridden embedding vector.
  Matrix<T> backward(const ForwardCache<T>& cache, const Matrix<T>& dlogits,
                     ParamBuffer<T>* param_grads) const {
    const auto len = static_cast<Eigen::Index>(cache.length());
    const Eigen::Index d = dim();
    const int heads = config_.heads;
    const Eigen::Index hd = config_.head_dim();
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    const bool want = param_grads != nullptr;
    if (want) {
      require(param_grads->size() == params_.size(), "lm: gradient buffer has wrong size");
    }
    auto gmat = [&](std::size_t off, Eigen::Index r, Eigen::Index cdim) {
      return Eigen::Map<Matrix<T>>(param_grads->data() + off, r, cdim);
    };
    auto gvec = [&](std::size_t off, Eigen::Index n) {
      return Eigen::Map<RowVector<T>>(param_grads->data() + off, n);
    };
    auto gptr = [&](std::size_t off) -> T* { return want ? param_grads->data() + off : nullptr; };

    const auto unembed = mat(layout_.unembed(), d, config_.vocab_size);
    Matrix<T> dhf = Matrix<T>::Zero(len, d);
    if (cache.rows == LogitRows::kAll) {
      require(dlogits.rows() == len, "lm: dlogits rows mismatch");
      dhf.noalias() = dlogits * unembed.transpose();
      if (want) gmat(layout_.unembed(), d, config_.vocab_size).noalias() += cache.hf.transpose() * dlogits;
    } else {
      require(dlogits.rows() == 1, "lm: dlogits must have one row");
      dhf.bottomRows(1).noalias() = dlogits * unembed.transpose();
      if (want) {
        gmat(layout_.unembed(), d, config_.vocab_size).noalias() +=
            cache.hf.bottomRows(1).transpose() * dlogits;
      }
    }
    Matrix<T> dx = detail::layer_norm_backward(dhf, cache.lnf_xhat, cache.lnf_rstd,
                                               ptr(layout_.lnf_g()), gptr(layout_.lnf_g()),
                                               gptr(layout_.lnf_b()));

    for (int l = config_.layers - 1; l >= 0; --l) {
      const auto& off = layout_.layer(l);
      const auto& c = cache.layers[static_cast<std::size_t>(l)];
      const Eigen::Index f = d * config_.mlp_ratio;

      if (want) {
        gmat(off.w_proj, f, d).noalias() += c.fc_act.transpose() * dx;
        gvec(off.b_proj, d) += dx.colwise().sum();
      }
      Matrix<T> dfc = dx * mat(off.w_proj, f, d).transpose();
      dfc.array() *= detail::gelu_grad(c.fc_pre).array();
      if (want) {
        gmat(off.w_fc, d, f).noalias() += c.h2.transpose() * dfc;
        gvec(off.b_fc, f) += dfc.colwise().sum();
      }
      const Matrix<T> dh2 = dfc * mat(off.w_fc, d, f).transpose();
      Matrix<T> dx_mid = dx + detail::layer_norm_backward(dh2, c.ln2_xhat, c.ln2_rstd, ptr(off.ln2_g),
                                                          gptr(off.ln2_g), gptr(off.ln2_b));

      if (want) {
        gmat(off.w_attn_out, d, d).noalias() += c.attn_concat.transpose() * dx_mid;
        gvec(off.b_attn_out, d) += dx_mid.colwise().sum();
      }
      const Matrix<T> dconcat = dx_mid * mat(off.w_attn_out, d, d).transpose();
      Matrix<T> dqkv(len, 3 * d);
      for (int h = 0; h < heads; ++h) {
        const auto q = c.qkv.middleCols(h * hd, hd);
        const auto k = c.qkv.middleCols(d + h * hd, hd);
        const auto v = c.qkv.middleCols(2 * d + h * hd, hd);
        const Matrix<T>& p = c.probs[static_cast<std::size_t>(h)];
        const auto dout = dconcat.middleCols(h * hd, hd);
        Matrix<T> dp = dout * v.transpose();
        dqkv.middleCols(2 * d + h * hd, hd).noalias() = p.transpose() * dout;
        // Masked entries have p == 0, so the product zeroes them.
        const Vector<T> row_dot = dp.cwiseProduct(p).rowwise().sum();
        dp = p.cwiseProduct(dp.colwise() - row_dot);
        dqkv.middleCols(h * hd, hd).noalias() = (dp * k) * scale;
        dqkv.middleCols(d + h * hd, hd).noalias() = (dp.transpose() * q) * scale;
      }
      if (want) {
        gmat(off.w_qkv, d, 3 * d).noalias() += c.h1.transpose() * dqkv;
        gvec(off.b_qkv, 3 * d) += dqkv.colwise().sum();
      }
      const Matrix<T> dh1 = dqkv * mat(off.w_qkv, d, 3 * d).transpose();
      dx = dx_mid + detail::layer_norm_backward(dh1, c.ln1_xhat, c.ln1_rstd, ptr(off.ln1_g),
                                                gptr(off.ln1_g), gptr(off.ln1_b));
    }

    if (want) {
      for (Eigen::Index t = 0; t < len; ++t) {
        gvec(layout_.pos_emb() + static_cast<std::size_t>(t * d), d) += dx.row(t);
      }
    }
    return dx;
  }

  // Adds d(loss)/d(token embedding) for the looked-up rows, skipping overridden positions.
  void accumulate_token_embedding_grads(const ForwardCache<T>& cache, const Matrix<T>& dx,
                                        std::span<const EmbeddingOverride<T>> overrides,
                                        ParamBuffer<T>& param_grads) const {
    const Eigen::Index d = dim();
    for (std::size_t t = 0; t < cache.length(); ++t) {
      bool overridden = false;
      for (const auto& o : overrides) overridden = overridden || o.position == t;
      if (overridden) continue;
      const auto off = layout_.tok_emb() + static_cast<std::size_t>(cache.tokens[t]) * static_cast<std::size_t>(d);
      Eigen::Map<RowVector<T>>(param_grads.data() + off, d) += dx.row(static_cast<Eigen::Index>(t));
    }
  }

 private:
  Eigen::Index dim() const { return config_.model_dim; }
  const T* ptr(std::size_t off) const { return params_.data() + off; }
  Eigen::Map<const Matrix<T>> mat(std::size_t off, Eigen::Index r, Eigen::Index c) const {
    return {params_.data() + off, r, c};
  }
  Eigen::Map<const RowVector<T>> vec(std::size_t off, Eigen::Index n) const {
    return {params_.data() + off, n};
  }

  LMConfig config_;
  ParamLayout layout_;
  ParamBuffer<T> params_;
};

// Numerically stable softmax / log-softmax of one logit row, in double.
template <typename T>
void softmax_row(const RowVector<T>& logits, std::vector<double>& probs, std::vector<double>& log_probs) {
  const auto n = static_cast<std::size_t>(logits.size());
  probs.resize(n);
  log_probs.resize(n);
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) max_logit = std::max(max_logit, static_cast<double>(logits(static_cast<Eigen::Index>(i))));
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += std::exp(static_cast<double>(logits(static_cast<Eigen::Index>(i))) - max_logit);
  const double log_sum = std::log(sum) + max_logit;
  for (std::size_t i = 0; i < n; ++i) {
    log_probs[i] = static_cast<double>(logits(static_cast<Eigen::Index>(i))) - log_sum;
    probs[i] = std::exp(log_probs[i]);
  }
}

}  // namespace ikerev::lm
