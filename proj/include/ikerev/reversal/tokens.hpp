#pragma once

// Reversal token sets, dimension weights, and how reversal tokens are spliced into prompts.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ikerev/editor.hpp"
#include "ikerev/error.hpp"
#include "ikerev/lm/transformer.hpp"
#include "ikerev/tokenizer.hpp"

namespace ikerev::reversal {

enum class Mode { kContinuous, kDiscrete };
enum class Ablation { kNone, kNoCos, kNoKl };

inline std::string to_string(Mode m) { return m == Mode::kContinuous ? "continuous" : "discrete"; }
inline std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::kNoCos: return "no-cos";
    case Ablation::kNoKl: return "no-kl";
    default: return "none";
  }
}

inline Mode parse_mode(const std::string& s) {
  if (s == "continuous") return Mode::kContinuous;
  if (s == "discrete") return Mode::kDiscrete;
  fail_validation("unknown reversal mode '", s, "' (expected continuous|discrete)");
}

inline Ablation parse_ablation(const std::string& s) {
  if (s == "none") return Ablation::kNone;
  if (s == "no-cos") return Ablation::kNoCos;
  if (s == "no-kl") return Ablation::kNoKl;
  fail_validation("unknown ablation '", s, "' (expected none|no-cos|no-kl)");
}

// One inserted position: a vocabulary id, or (id < 0) a free embedding.
struct RevToken {
  int id = -1;
  std::vector<double> embedding;
  bool discrete() const { return id >= 0; }
};

using Embeddings = std::vector<std::vector<double>>;

inline std::vector<RevToken> continuous_tokens(const Embeddings& r) {
  std::vector<RevToken> out;
  for (const auto& v : r) out.push_back({-1, v});
  return out;
}

inline std::vector<RevToken> discrete_tokens(std::span<const int> ids) {
  std::vector<RevToken> out;
  for (int id : ids) out.push_back({id, {}});
  return out;
}

template <typename T>
struct AssembledPrompt {
  std::vector<int> tokens;
  std::vector<lm::EmbeddingOverride<T>> overrides;
  std::vector<std::size_t> reversal_positions;
};

// BOS p_edit r p when `with_edit`, else BOS r p. Free embeddings occupy reserved slot ids
// and are supplied as overrides.
template <typename T>
AssembledPrompt<T> assemble(const EncodedEdit& edit, bool with_edit, std::span<const RevToken> rev,
                            const SpecialTokens& specials) {
  require(rev.size() <= static_cast<std::size_t>(specials.reserved_count), "at most ",
          specials.reserved_count, " reversal tokens are supported");
  AssembledPrompt<T> out;
  if (with_edit) {
    out.tokens = edit.prefix;
  } else {
    out.tokens.push_back(specials.bos);
  }
  for (std::size_t j = 0; j < rev.size(); ++j) {
    const std::size_t pos = out.tokens.size();
    out.reversal_positions.push_back(pos);
    if (rev[j].discrete()) {
      out.tokens.push_back(rev[j].id);
    } else {
      out.tokens.push_back(specials.reserved(static_cast<int>(j)));
      out.overrides.push_back({pos, std::vector<T>(rev[j].embedding.begin(), rev[j].embedding.end())});
    }
  }
  out.tokens.insert(out.tokens.end(), edit.query.begin(), edit.query.end());
  return out;
}

struct DimensionWeights {
  std::vector<double> w;
  std::vector<double> w_bar;
};

inline constexpr double kInversionFloor = 1e-8;

// w = |delta| / ||delta||_1 and w_bar = (1/w) / ||1/w||_1, with |delta| floored before inversion.
inline DimensionWeights dimension_weights(std::span<const double> r_init, std::span<const double> r_tuned) {
  require(r_init.size() == r_tuned.size() && !r_init.empty(), "dimension_weights: size mismatch");
  std::vector<double> delta(r_init.size());
  double l1 = 0.0;
  for (std::size_t i = 0; i < delta.size(); ++i) {
    delta[i] = std::abs(r_tuned[i] - r_init[i]);
    l1 += delta[i];
  }
  require(l1 > 0.0, "dimension_weights: tuned token equals its initialization; use a different lambda or init token");
  DimensionWeights out;
  out.w.resize(delta.size());
  for (std::size_t i = 0; i < delta.size(); ++i) out.w[i] = delta[i] / l1;
  std::vector<double> inv(delta.size());
  double inv_l1 = 0.0;
  for (std::size_t i = 0; i < delta.size(); ++i) {
    inv[i] = l1 / std::max(delta[i], kInversionFloor);
    inv_l1 += inv[i];
  }
  out.w_bar.resize(delta.size());
  for (std::size_t i = 0; i < delta.size(); ++i) out.w_bar[i] = inv[i] / inv_l1;
  return out;
}

struct ReversalTokenSet {
  Mode mode = Mode::kContinuous;
  Ablation ablation = Ablation::kNone;
  int m = 1;
  Embeddings embeddings;  // continuous
  std::vector<int> token_ids;  // discrete
  std::uint64_t seed = 0;
  int epochs = 0;
  double lambda = 0.0;
  std::vector<double> loss_curve;  // training loss at init and after each epoch

  std::vector<RevToken> tokens() const {
    return mode == Mode::kContinuous ? continuous_tokens(embeddings) : discrete_tokens(token_ids);
  }
};

inline void validate(const ReversalTokenSet& set, int model_dim, const SpecialTokens& specials, int vocab_size) {
  require(set.m >= 1, "reversal token set: m must be >= 1");
  if (set.mode == Mode::kContinuous) {
    require(static_cast<int>(set.embeddings.size()) == set.m, "reversal token set: expected ", set.m, " embeddings");
    for (const auto& e : set.embeddings) {
      require(static_cast<int>(e.size()) == model_dim, "reversal token set: embedding dim ", e.size(),
              " does not match model dim ", model_dim);
      for (double v : e) require(std::isfinite(v), "reversal token set: non-finite embedding");
    }
  } else {
    require(static_cast<int>(set.token_ids.size()) == set.m, "reversal token set: expected ", set.m, " token ids");
    for (int id : set.token_ids) {
      require(id >= 0 && id < vocab_size && specials.is_natural(id), "reversal token set: id ", id,
              " is not a natural vocabulary token");
    }
  }
}

inline nlohmann::ordered_json to_json(const ReversalTokenSet& set) {
  nlohmann::ordered_json j;
  j["mode"] = to_string(set.mode);
  j["m"] = set.m;
  j["lambda"] = set.lambda;
  j["seed"] = set.seed;
  j["epochs"] = set.epochs;
  j["ablation"] = to_string(set.ablation);
  if (set.mode == Mode::kContinuous) {
    j["embeddings"] = set.embeddings;
  } else {
    j["token-ids"] = set.token_ids;
  }
  j["loss-curve"] = set.loss_curve;
  return j;
}

inline ReversalTokenSet token_set_from_json(const nlohmann::json& j) {
  ReversalTokenSet set;
  set.mode = parse_mode(j.at("mode").get<std::string>());
  set.m = j.at("m").get<int>();
  set.lambda = j.at("lambda").get<double>();
  set.seed = j.at("seed").get<std::uint64_t>();
  set.epochs = j.value("epochs", 0);
  set.ablation = parse_ablation(j.value("ablation", std::string("none")));
  if (set.mode == Mode::kContinuous) {
    set.embeddings = j.at("embeddings").get<Embeddings>();
  } else {
    set.token_ids = j.at("token-ids").get<std::vector<int>>();
  }
  set.loss_curve = j.value("loss-curve", std::vector<double>{});
  return set;
}

inline void save_token_set(const ReversalTokenSet& set, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail_runtime("cannot write reversal tokens ", path);
  out << to_json(set).dump() << '\n';
  if (!out) fail_runtime("I/O error writing ", path);
}

inline ReversalTokenSet load_token_set(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_validation("cannot open reversal tokens ", path);
  try {
    return token_set_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    fail_validation("malformed reversal tokens ", path, ": ", e.what());
  }
}

}  // namespace ikerev::reversal
