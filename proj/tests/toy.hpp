#pragma once

// Small random models and hand-built edits shared by the unit tests.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ikerev/editor.hpp"
#include "ikerev/lm/transformer.hpp"
#include "ikerev/reversal/tune.hpp"
#include "ikerev/seed.hpp"

namespace toy {

inline ikerev::lm::LMConfig config(int vocab, int reserved = 4) {
  ikerev::lm::LMConfig c;
  c.vocab_size = vocab;
  c.layers = 2;
  c.heads = 2;
  c.model_dim = 8;
  c.context_length = 24;
  c.mlp_ratio = 2;
  c.specials.reserved_count = reserved;
  return c;
}

// Parameters drawn wider than the training init so attention is far from uniform.
template <typename T>
ikerev::lm::Transformer<T> model(const ikerev::lm::LMConfig& c, std::uint64_t seed, double scale = 0.5) {
  auto m = ikerev::lm::Transformer<T>::initialized(c, seed);
  ikerev::Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (const auto& block : m.layout().blocks()) {
    if (block.name.ends_with(".g")) continue;
    for (std::size_t i = 0; i < block.size(); ++i) {
      m.mutable_parameters()[block.offset + i] = static_cast<T>(scale * ikerev::standard_normal(rng));
    }
  }
  return m;
}

inline std::vector<int> random_ids(ikerev::Rng& rng, const ikerev::lm::LMConfig& c, std::size_t n) {
  std::vector<int> out;
  const auto first = static_cast<std::size_t>(c.specials.first_regular());
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(static_cast<int>(first + ikerev::uniform_index(rng, static_cast<std::size_t>(c.vocab_size) - first)));
  }
  return out;
}

inline std::vector<ikerev::EncodedEdit> edits(const ikerev::lm::LMConfig& c, std::size_t count, std::uint64_t seed) {
  ikerev::Rng rng(seed);
  std::vector<ikerev::EncodedEdit> out;
  for (std::size_t i = 0; i < count; ++i) {
    ikerev::EncodedEdit e;
    e.fact_id = static_cast<int>(i);
    e.prefix = {c.specials.bos};
    const auto p = random_ids(rng, c, 4 + i % 3);
    e.prefix.insert(e.prefix.end(), p.begin(), p.end());
    e.query = random_ids(rng, c, 3);
    e.object = random_ids(rng, c, 1)[0];
    e.counterfact = random_ids(rng, c, 1)[0];
    out.push_back(std::move(e));
  }
  return out;
}

template <typename T>
std::vector<ikerev::reversal::ReversalExample> examples(const ikerev::lm::Transformer<T>& m, std::size_t count,
                                                         std::uint64_t seed) {
  return ikerev::reversal::prepare_examples(m, edits(m.config(), count, seed));
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ikerev_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace toy
