#pragma once

// In-context edits: token-level prompt assembly, edit outcomes, and the paired
// edited/unedited detection dataset.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ikerev/corpus.hpp"
#include "ikerev/error.hpp"
#include "ikerev/lm/inference.hpp"
#include "ikerev/seed.hpp"
#include "ikerev/tokenizer.hpp"

namespace ikerev {

// Token form of an edit. Every model input starts with BOS:
//   unedited           BOS p
//   edited             BOS p_edit p
//   edited + reversal  BOS p_edit r p
//   normal + reversal  BOS r p
struct EncodedEdit {
  int fact_id = 0;
  std::vector<int> prefix;  // BOS + p_edit (ends with the "Prompt:" marker)
  std::vector<int> query;   // p, without BOS
  int object = 0;           // first token of the true object
  int counterfact = 0;      // first token of the counterfact

  std::vector<int> unedited(int bos) const {
    std::vector<int> out{bos};
    out.insert(out.end(), query.begin(), query.end());
    return out;
  }

  std::vector<int> edited() const {
    std::vector<int> out = prefix;
    out.insert(out.end(), query.begin(), query.end());
    return out;
  }

  // Reversal tokens are spliced in as `ids`; continuous tokens use reserved slot ids and
  // supply their vectors as embedding overrides at reversal_positions().
  std::vector<int> edited_with(std::span<const int> ids) const {
    std::vector<int> out = prefix;
    out.insert(out.end(), ids.begin(), ids.end());
    out.insert(out.end(), query.begin(), query.end());
    return out;
  }

  std::vector<int> normal_with(int bos, std::span<const int> ids) const {
    std::vector<int> out{bos};
    out.insert(out.end(), ids.begin(), ids.end());
    out.insert(out.end(), query.begin(), query.end());
    return out;
  }

  std::size_t edited_reversal_offset() const { return prefix.size(); }
  static constexpr std::size_t normal_reversal_offset() { return 1; }
};

inline EncodedEdit encode_edit(const Tokenizer& tokenizer, const FactTriplet& target,
                               const EditPrompt& prompt, int bos) {
  EncodedEdit out;
  out.fact_id = target.id;
  out.prefix.push_back(bos);
  const auto prefix = tokenizer.encode(prompt.prefix_text());
  out.prefix.insert(out.prefix.end(), prefix.begin(), prefix.end());
  out.query = tokenizer.encode(prompt.query.text);
  out.object = tokenizer.encode(target.object).at(0);
  out.counterfact = tokenizer.encode(target.counterfact).at(0);
  return out;
}

// Edits for every (fact, template) in `targets`, with demonstrations drawn from `pool`.
inline std::vector<EncodedEdit> build_edits(const Tokenizer& tokenizer,
                                            const std::vector<FactTriplet>& targets,
                                            const std::vector<FactTriplet>& pool, int demos,
                                            int bos, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<EncodedEdit> out;
  for (const auto& target : targets) {
    for (int t = 0; t < static_cast<int>(target.templates.size()); ++t) {
      const auto chosen = sample_demos(target, pool, demos, rng);
      out.push_back(encode_edit(tokenizer, target, build_ike_prompt(target, chosen, t), bos));
    }
  }
  return out;
}

struct EditOutcome {
  int fact_id = 0;
  int unedited_top1 = 0;
  int edited_top1 = 0;
  bool success = false;
  lm::NextTokenDistribution unedited;
  lm::NextTokenDistribution edited;
};

template <typename T>
EditOutcome apply_edit(const lm::Transformer<T>& model, const EncodedEdit& edit) {
  const int bos = model.config().specials.bos;
  const auto edited_ids = edit.edited();
  require(static_cast<int>(edited_ids.size()) <= model.config().context_length,
          "apply_edit: edit prompt of ", edited_ids.size(), " tokens overflows context ",
          model.config().context_length, " (fact ", edit.fact_id, ")");
  EditOutcome out;
  out.fact_id = edit.fact_id;
  out.unedited = lm::next_token_distribution(model, std::span<const int>(edit.unedited(bos)));
  out.edited = lm::next_token_distribution(model, std::span<const int>(edited_ids));
  out.unedited_top1 = out.unedited.argmax();
  out.edited_top1 = out.edited.argmax();
  out.success = out.edited_top1 == edit.counterfact;
  return out;
}

struct EditSummary {
  std::size_t attempted = 0;
  std::size_t skipped = 0;  // context overflow
  std::size_t succeeded = 0;
  double success_rate() const {
    const auto n = attempted - skipped;
    return n == 0 ? 0.0 : static_cast<double>(succeeded) / static_cast<double>(n);
  }
};

template <typename T>
EditSummary edit_success(const lm::Transformer<T>& model, const std::vector<EncodedEdit>& edits) {
  EditSummary summary;
  for (const auto& e : edits) {
    ++summary.attempted;
    if (static_cast<int>(e.prefix.size() + e.query.size()) > model.config().context_length) {
      ++summary.skipped;
      continue;
    }
    summary.succeeded += apply_edit(model, e).success ? 1 : 0;
  }
  return summary;
}

inline constexpr std::size_t kDetectionFeatures = 10;
using DetectionFeatures = std::array<double, kDetectionFeatures>;

struct DetectionInstance {
  int fact_id = 0;
  bool edited = false;
  DetectionFeatures features{};
};

inline DetectionFeatures top10_features(const lm::NextTokenDistribution& dist) {
  require(dist.size() >= kDetectionFeatures, "detection features need a vocabulary of at least ",
          kDetectionFeatures, " tokens (got ", dist.size(), ")");
  DetectionFeatures f{};
  std::vector<double> probs = dist.probabilities;
  std::partial_sort(probs.begin(), probs.begin() + kDetectionFeatures, probs.end(), std::greater<>());
  std::copy_n(probs.begin(), kDetectionFeatures, f.begin());
  return f;
}

struct DetectionDataConfig {
  int train_size = 500;  // instances per split, half edited
  int test_size = 500;
  int demos = 8;
};

struct DetectionDataset {
  std::vector<DetectionInstance> train;
  std::vector<DetectionInstance> test;
};

namespace detail {

template <typename T>
std::vector<DetectionInstance> detection_split(const lm::Transformer<T>& model,
                                               const Tokenizer& tokenizer,
                                               const std::vector<FactTriplet>& split_facts,
                                               const std::vector<FactTriplet>& pool, int size,
                                               int demos, Rng& rng) {
  require(size % 2 == 0 && size > 0, "detection dataset size must be a positive even number");
  std::vector<std::pair<std::size_t, int>> queries;
  for (std::size_t f = 0; f < split_facts.size(); ++f) {
    for (int t = 0; t < static_cast<int>(split_facts[f].templates.size()); ++t) queries.emplace_back(f, t);
  }
  shuffle_range(queries.begin(), queries.end(), rng);
  const int bos = model.config().specials.bos;
  std::vector<DetectionInstance> out;
  for (const auto& [f, t] : queries) {
    if (static_cast<int>(out.size()) == size) break;
    const auto& target = split_facts[f];
    const auto chosen = sample_demos(target, pool, demos, rng);
    const auto edit = encode_edit(tokenizer, target, build_ike_prompt(target, chosen, t), bos);
    if (static_cast<int>(edit.prefix.size() + edit.query.size()) > model.config().context_length) continue;
    const auto outcome = apply_edit(model, edit);
    out.push_back({target.id, true, top10_features(outcome.edited)});
    out.push_back({target.id, false, top10_features(outcome.unedited)});
  }
  require(static_cast<int>(out.size()) == size, "build_detection_dataset: too few facts for ",
          size, " instances (built ", out.size(), ")");
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.fact_id < b.fact_id; });
  return out;
}

}  // namespace detail

// Edited instances come from p_edit + p, unedited ones from the same p alone. Facts are
// split in half by id, so train and test never share a fact.
template <typename T>
DetectionDataset build_detection_dataset(const lm::Transformer<T>& model, const Tokenizer& tokenizer,
                                         const std::vector<FactTriplet>& facts,
                                         const DetectionDataConfig& config, std::uint64_t seed) {
  require(facts.size() >= 2, "build_detection_dataset: need at least 2 facts");
  require(model.config().vocab_size >= static_cast<int>(kDetectionFeatures),
          "build_detection_dataset: vocabulary smaller than ", kDetectionFeatures);
  Rng rng(seed);
  std::vector<FactTriplet> shuffled = facts;
  shuffle_range(shuffled.begin(), shuffled.end(), rng);
  const std::size_t half = shuffled.size() / 2;
  const std::vector<FactTriplet> train_facts(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(half));
  const std::vector<FactTriplet> test_facts(shuffled.begin() + static_cast<std::ptrdiff_t>(half), shuffled.end());
  DetectionDataset out;
  out.train = detail::detection_split(model, tokenizer, train_facts, facts, config.train_size, config.demos, rng);
  out.test = detail::detection_split(model, tokenizer, test_facts, facts, config.test_size, config.demos, rng);
  return out;
}

inline void write_detection_instances(const std::vector<DetectionInstance>& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_runtime("cannot write detection dataset ", path);
  for (const auto& inst : data) {
    nlohmann::ordered_json j;
    j["fact-id"] = inst.fact_id;
    j["label"] = inst.edited ? "edited" : "unedited";
    for (std::size_t k = 0; k < kDetectionFeatures; ++k) j["f" + std::to_string(k + 1)] = inst.features[k];
    out << j.dump() << '\n';
  }
  if (!out) fail_runtime("I/O error writing ", path);
}

inline std::vector<DetectionInstance> read_detection_instances(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_validation("cannot open detection dataset ", path);
  std::vector<DetectionInstance> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      DetectionInstance inst;
      inst.fact_id = j.at("fact-id").get<int>();
      const auto label = j.at("label").get<std::string>();
      require(label == "edited" || label == "unedited", "bad label '", label, "'");
      inst.edited = label == "edited";
      for (std::size_t k = 0; k < kDetectionFeatures; ++k) {
        inst.features[k] = j.at("f" + std::to_string(k + 1)).get<double>();
      }
      out.push_back(inst);
    } catch (const std::exception& e) {
      fail_validation(path, ":", line_no, ": malformed detection record: ", e.what());
    }
  }
  return out;
}

}  // namespace ikerev
