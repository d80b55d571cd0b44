#pragma once

// Diagnostics: how far an edit moves the original answer, per-layer ranks of that answer,
// and how much final-position attention lands on the query.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ikerev/error.hpp"
#include "ikerev/lm/inference.hpp"
#include "ikerev/reversal/tokens.hpp"
#include "ikerev/reversal/tune.hpp"

namespace ikerev::analysis {

using reversal::RevToken;
using reversal::ReversalExample;

inline constexpr int kShiftBins = 10;

// fractions[k-1] = share of prompts whose pre-edit top-1 is among the post-edit top-k.
struct ShiftHistogram {
  std::array<double, kShiftBins> fractions{};
  std::size_t count = 0;
};

inline ShiftHistogram shift_histogram(std::span<const lm::NextTokenDistribution> before,
                                      std::span<const lm::NextTokenDistribution> after) {
  require(before.size() == after.size(), "output_shift: mismatched distribution lists");
  require(!before.empty(), "output_shift: empty fact list");
  ShiftHistogram h;
  h.count = before.size();
  std::array<std::size_t, kShiftBins> hits{};
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto top = after[i].top_k(kShiftBins);
    const auto it = std::find(top.begin(), top.end(), before[i].argmax());
    if (it == top.end()) continue;
    for (auto k = static_cast<std::size_t>(it - top.begin()); k < kShiftBins; ++k) ++hits[k];
  }
  for (int k = 0; k < kShiftBins; ++k) {
    h.fractions[static_cast<std::size_t>(k)] = static_cast<double>(hits[static_cast<std::size_t>(k)]) / static_cast<double>(h.count);
  }
  return h;
}

template <typename T>
ShiftHistogram output_shift(const lm::Transformer<T>& model, std::span<const EncodedEdit> edits) {
  require(!edits.empty(), "output_shift: empty fact list");
  const int bos = model.config().specials.bos;
  std::vector<lm::NextTokenDistribution> before, after;
  for (const auto& e : edits) {
    before.push_back(lm::next_token_distribution(model, std::span<const int>(e.unedited(bos))));
    after.push_back(lm::next_token_distribution(model, std::span<const int>(e.edited())));
  }
  return shift_histogram(before, after);
}

enum class Setting { kNoIke, kIke, kIkeReversal };

inline std::string to_string(Setting s) {
  switch (s) {
    case Setting::kNoIke: return "no-IKE";
    case Setting::kIke: return "IKE";
    default: return "IKE+reversal";
  }
}

struct RankTrajectory {
  std::string setting;
  std::vector<double> mean_rank;         // per layer, 1-based layer index = position + 1
  std::vector<double> mean_probability;  // per layer
};

template <typename T>
reversal::AssembledPrompt<T> setting_prompt(const EncodedEdit& e, Setting s, std::span<const RevToken> rev,
                                            const SpecialTokens& specials) {
  switch (s) {
    case Setting::kNoIke: return reversal::assemble<T>(e, false, {}, specials);
    case Setting::kIke: return reversal::assemble<T>(e, true, {}, specials);
    default: return reversal::assemble<T>(e, true, rev, specials);
  }
}

// Per-layer logit-lens rank of each prompt's original answer (the unedited top-1),
// averaged over prompts as real numbers.
template <typename T>
RankTrajectory rank_trajectory(const lm::Transformer<T>& model, std::span<const ReversalExample> examples,
                               Setting setting, std::span<const RevToken> rev = {}) {
  require(!examples.empty(), "rank_trajectories: empty prompt set");
  const auto layers = static_cast<std::size_t>(model.config().layers);
  RankTrajectory out;
  out.setting = to_string(setting);
  out.mean_rank.assign(layers, 0.0);
  out.mean_probability.assign(layers, 0.0);
  for (const auto& ex : examples) {
    reversal::detail::check_fits(model.config(), ex.edit, rev.size());
    const auto prompt = setting_prompt<T>(ex.edit, setting, rev, model.config().specials);
    const auto lens = lm::logit_lens(model, std::span<const int>(prompt.tokens), ex.original_top1,
                                     std::span<const lm::EmbeddingOverride<T>>(prompt.overrides));
    for (std::size_t l = 0; l < layers; ++l) {
      out.mean_rank[l] += lens[l].rank;
      out.mean_probability[l] += lens[l].probability;
    }
  }
  for (std::size_t l = 0; l < layers; ++l) {
    out.mean_rank[l] /= static_cast<double>(examples.size());
    out.mean_probability[l] /= static_cast<double>(examples.size());
  }
  return out;
}

template <typename T>
std::vector<RankTrajectory> rank_trajectories(const lm::Transformer<T>& model, std::span<const ReversalExample> examples,
                                              std::span<const RevToken> rev) {
  return {rank_trajectory(model, examples, Setting::kNoIke), rank_trajectory(model, examples, Setting::kIke),
          rank_trajectory(model, examples, Setting::kIkeReversal, rev)};
}

inline double trajectory_l1(const RankTrajectory& a, const RankTrajectory& b) {
  require(a.mean_rank.size() == b.mean_rank.size(), "trajectory_l1: layer count mismatch");
  double d = 0.0;
  for (std::size_t l = 0; l < a.mean_rank.size(); ++l) d += std::abs(a.mean_rank[l] - b.mean_rank[l]);
  return d;
}

struct SpanMass {
  double final_position = 0.0;       // mean over layers and heads, final query row
  double query_positions = 0.0;      // same, averaged over every row inside the span
  std::vector<double> per_layer;     // final row, mean over heads
};

// Attention mass on key positions [begin, end).
inline SpanMass span_mass(const lm::AttentionTensor& att, std::size_t begin, std::size_t end) {
  require(begin < end && end <= static_cast<std::size_t>(att.length), "attention span [", begin, ", ", end,
          ") outside prompt of length ", att.length);
  SpanMass out;
  out.per_layer.assign(static_cast<std::size_t>(att.layers), 0.0);
  const int last = att.length - 1;
  double rows_total = 0.0;
  for (int l = 0; l < att.layers; ++l) {
    for (int h = 0; h < att.heads; ++h) {
      double final_row = 0.0;
      for (auto k = begin; k < end; ++k) final_row += att.at(l, h, last, static_cast<int>(k));
      out.per_layer[static_cast<std::size_t>(l)] += final_row / att.heads;
      out.final_position += final_row;
      double span_rows = 0.0;
      for (auto q = begin; q < end; ++q) {
        for (auto k = begin; k <= q; ++k) span_rows += att.at(l, h, static_cast<int>(q), static_cast<int>(k));
      }
      rows_total += span_rows / static_cast<double>(end - begin);
    }
  }
  const double n = static_cast<double>(att.layers * att.heads);
  out.final_position /= n;
  out.query_positions = rows_total / n;
  return out;
}

struct AttentionReport {
  std::string setting;
  double mean_mass = 0.0;
  double mean_mass_query_positions = 0.0;
  double mean_length = 0.0;
  std::vector<double> per_layer;
  std::size_t count = 0;
};

inline std::string attention_setting_name(Setting s) {
  switch (s) {
    case Setting::kNoIke: return "unedited";
    case Setting::kIke: return "edited";
    default: return "edited+reversal";
  }
}

// Attention mass on the query p for one prompt in the given setting.
template <typename T>
SpanMass attention_mass(const lm::Transformer<T>& model, const EncodedEdit& edit, Setting setting,
                        std::span<const RevToken> rev = {}) {
  const auto prompt = setting_prompt<T>(edit, setting, rev, model.config().specials);
  require(static_cast<int>(prompt.tokens.size()) <= model.config().context_length, "attention_mass: prompt overflows context");
  const auto att = lm::attention_weights(model, std::span<const int>(prompt.tokens),
                                         std::span<const lm::EmbeddingOverride<T>>(prompt.overrides));
  const auto end = prompt.tokens.size();
  return span_mass(att, end - edit.query.size(), end);
}

template <typename T>
AttentionReport attention_report(const lm::Transformer<T>& model, std::span<const ReversalExample> examples,
                                 Setting setting, std::span<const RevToken> rev = {}) {
  require(!examples.empty(), "attention_mass: empty prompt set");
  AttentionReport r;
  r.setting = attention_setting_name(setting);
  r.per_layer.assign(static_cast<std::size_t>(model.config().layers), 0.0);
  for (const auto& ex : examples) {
    const auto m = attention_mass(model, ex.edit, setting, rev);
    r.mean_mass += m.final_position;
    r.mean_mass_query_positions += m.query_positions;
    for (std::size_t l = 0; l < r.per_layer.size(); ++l) r.per_layer[l] += m.per_layer[l];
    std::size_t len = ex.edit.query.size() + 1;
    if (setting != Setting::kNoIke) len = ex.edit.prefix.size() + ex.edit.query.size();
    if (setting == Setting::kIkeReversal) len += rev.size();
    r.mean_length += static_cast<double>(len);
  }
  const double n = static_cast<double>(examples.size());
  r.count = examples.size();
  r.mean_mass /= n;
  r.mean_mass_query_positions /= n;
  r.mean_length /= n;
  for (auto& v : r.per_layer) v /= n;
  return r;
}

// ---- report output -------------------------------------------------------------------

inline std::string fixed(double v, int digits = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

inline std::string shift_csv(const std::optional<ShiftHistogram>& h) {
  std::string out = "k,fraction\n";
  if (!h) return out;
  for (int k = 0; k < kShiftBins; ++k) out += std::to_string(k + 1) + "," + fixed(h->fractions[static_cast<std::size_t>(k)]) + "\n";
  return out;
}

inline std::string trajectory_csv(std::span<const RankTrajectory> ts) {
  std::string out = "setting,layer,mean-rank\n";
  for (const auto& t : ts) {
    for (std::size_t l = 0; l < t.mean_rank.size(); ++l) {
      out += t.setting + "," + std::to_string(l + 1) + "," + fixed(t.mean_rank[l]) + "\n";
    }
  }
  return out;
}

inline std::string attention_csv(std::span<const AttentionReport> rs) {
  std::string out = "setting,mean-mass,mean-length\n";
  for (const auto& r : rs) out += r.setting + "," + fixed(r.mean_mass) + "," + fixed(r.mean_length, 2) + "\n";
  return out;
}

inline std::string attention_layers_csv(std::span<const AttentionReport> rs) {
  std::string out = "setting,layer,mean-mass,mean-mass-query-positions\n";
  for (const auto& r : rs) {
    for (std::size_t l = 0; l < r.per_layer.size(); ++l) {
      out += r.setting + "," + std::to_string(l + 1) + "," + fixed(r.per_layer[l]) + "," +
             fixed(r.mean_mass_query_positions) + "\n";
    }
  }
  return out;
}

inline nlohmann::ordered_json to_json(const ShiftHistogram& h) {
  nlohmann::ordered_json j;
  j["count"] = h.count;
  j["fractions"] = std::vector<double>(h.fractions.begin(), h.fractions.end());
  return j;
}

inline nlohmann::ordered_json to_json(const RankTrajectory& t) {
  nlohmann::ordered_json j;
  j["setting"] = t.setting;
  j["mean-rank"] = t.mean_rank;
  j["mean-probability"] = t.mean_probability;
  return j;
}

inline nlohmann::ordered_json to_json(const AttentionReport& r) {
  nlohmann::ordered_json j;
  j["setting"] = r.setting;
  j["mean-mass"] = r.mean_mass;
  j["mean-mass-query-positions"] = r.mean_mass_query_positions;
  j["mean-length"] = r.mean_length;
  j["per-layer"] = r.per_layer;
  j["count"] = r.count;
  return j;
}

inline std::string shift_svg(const ShiftHistogram& h) {
  constexpr int width = 420, height = 260, left = 40, bottom = 30, top = 20;
  const double plot_h = height - bottom - top;
  const double bar_w = (width - left - 20) / static_cast<double>(kShiftBins);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  os << "<text x=\"" << left << "\" y=\"14\" font-size=\"12\">pre-edit top-1 within post-edit top-k</text>\n";
  for (int k = 0; k < kShiftBins; ++k) {
    const double f = h.fractions[static_cast<std::size_t>(k)];
    const double bh = f * plot_h;
    os << "<rect class=\"bar\" x=\"" << fixed(left + k * bar_w + 2, 2) << "\" y=\"" << fixed(top + plot_h - bh, 2)
       << "\" width=\"" << fixed(bar_w - 4, 2) << "\" height=\"" << fixed(bh, 2) << "\" fill=\"#4a78b0\"/>\n";
    os << "<text x=\"" << fixed(left + (k + 0.5) * bar_w, 2) << "\" y=\"" << height - 12
       << "\" font-size=\"10\" text-anchor=\"middle\">" << k + 1 << "</text>\n";
  }
  os << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << width - 20 << "\" y2=\"" << top + plot_h
     << "\" stroke=\"black\"/>\n";
  os << "</svg>\n";
  return os.str();
}

inline std::string trajectory_svg(std::span<const RankTrajectory> ts) {
  constexpr int width = 420, height = 260, left = 50, bottom = 30, top = 20, right = 110;
  static const char* colors[] = {"#2b8a3e", "#c92a2a", "#1864ab", "#862e9c"};
  double max_rank = 1.0;
  std::size_t layers = 1;
  for (const auto& t : ts) {
    for (double r : t.mean_rank) max_rank = std::max(max_rank, r);
    layers = std::max(layers, t.mean_rank.size());
  }
  const double plot_w = width - left - right, plot_h = height - bottom - top;
  const double log_max = std::log(max_rank) > 0 ? std::log(max_rank) : 1.0;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  os << "<text x=\"" << left << "\" y=\"14\" font-size=\"12\">mean rank of original answer (log scale)</text>\n";
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const char* color = colors[i % 4];
    os << "<polyline class=\"trajectory\" fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (std::size_t l = 0; l < ts[i].mean_rank.size(); ++l) {
      const double x = left + (layers == 1 ? 0.0 : plot_w * static_cast<double>(l) / static_cast<double>(layers - 1));
      const double y = top + plot_h * std::log(std::max(1.0, ts[i].mean_rank[l])) / log_max;
      os << (l ? " " : "") << fixed(x, 2) << "," << fixed(y, 2);
    }
    os << "\"/>\n";
    os << "<text x=\"" << width - right + 8 << "\" y=\"" << top + 14 * (i + 1) << "\" font-size=\"10\" fill=\"" << color
       << "\">" << ts[i].setting << "</text>\n";
  }
  for (std::size_t l = 0; l < layers; ++l) {
    const double x = left + (layers == 1 ? 0.0 : plot_w * static_cast<double>(l) / static_cast<double>(layers - 1));
    os << "<text x=\"" << fixed(x, 2) << "\" y=\"" << height - 12 << "\" font-size=\"10\" text-anchor=\"middle\">"
       << l + 1 << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_runtime("cannot write ", path);
  out << content;
  if (!out) fail_runtime("I/O error writing ", path);
}

}  // namespace ikerev::analysis
