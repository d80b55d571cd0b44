#pragma once

// Word-level tokenizer over a closed vocabulary. Newlines are the token "<nl>".

#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ikerev/corpus.hpp"
#include "ikerev/error.hpp"

namespace ikerev {

struct SpecialTokens {
  int pad = 0;
  int bos = 1;
  int eos = 2;
  int reserved_begin = 3;
  int reserved_count = 16;

  bool is_reserved(int id) const { return id >= reserved_begin && id < reserved_begin + reserved_count; }
  int reserved(int slot) const { return reserved_begin + slot; }
  // Tokens that a discrete reversal token may be chosen from. BOS counts as natural.
  bool is_natural(int id) const { return id != pad && id != eos && !is_reserved(id); }
  int first_regular() const { return reserved_begin + reserved_count; }

  friend bool operator==(const SpecialTokens&, const SpecialTokens&) = default;
};

inline constexpr std::string_view kNewlineToken = "<nl>";

class Tokenizer {
 public:
  Tokenizer() = default;

  explicit Tokenizer(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      const auto [it, inserted] = index_.emplace(tokens_[i], static_cast<int>(i));
      require(inserted, "tokenizer: duplicate token '", tokens_[i], "'");
    }
  }

  // Vocabulary over a corpus, in a fixed order: specials, prompt markers, then every word
  // in first-appearance order over templates, subjects and objects.
  static Tokenizer from_corpus(const Corpus& corpus, const SpecialTokens& specials = {}) {
    std::vector<std::string> tokens(static_cast<std::size_t>(specials.first_regular()));
    tokens[static_cast<std::size_t>(specials.pad)] = "<pad>";
    tokens[static_cast<std::size_t>(specials.bos)] = "<bos>";
    tokens[static_cast<std::size_t>(specials.eos)] = "<eos>";
    for (int s = 0; s < specials.reserved_count; ++s) {
      tokens[static_cast<std::size_t>(specials.reserved(s))] = "<rev" + std::to_string(s) + ">";
    }
    std::unordered_map<std::string, int> seen;
    for (std::size_t i = 0; i < tokens.size(); ++i) seen.emplace(tokens[i], static_cast<int>(i));
    auto add_words = [&](std::string_view text) {
      for (const auto& w : split_words(text)) {
        if (seen.emplace(w, static_cast<int>(tokens.size())).second) tokens.push_back(w);
      }
    };
    add_words(std::string(kNewlineToken));
    add_words(kNewFactMarker);
    add_words(kPromptMarker);
    for (int r = 0; r < corpus.config.relations; ++r) {
      const auto& spec = relation_catalog()[static_cast<std::size_t>(r)];
      for (int t = 0; t < corpus.config.templates_per_relation; ++t) {
        std::string templ(spec.templates[static_cast<std::size_t>(t)]);
        templ.replace(templ.find(kSubjectSlot), kSubjectSlot.size(), " ");
        add_words(templ);
      }
      for (int o = 0; o < corpus.config.objects_per_relation; ++o) {
        add_words(spec.objects[static_cast<std::size_t>(o)]);
      }
    }
    for (const auto* group : {&corpus.facts, &corpus.pseudo_facts}) {
      for (const auto& f : *group) {
        add_words(f.subject);
        for (const auto& t : f.templates) {
          std::string templ = t;
          const auto pos = templ.find(kSubjectSlot);
          if (pos != std::string::npos) templ.replace(pos, kSubjectSlot.size(), " ");
          add_words(templ);
        }
        add_words(f.object);
        add_words(f.counterfact);
      }
    }
    return Tokenizer(std::move(tokens));
  }

  static std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::string current;
    for (char c : text) {
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        if (!current.empty()) words.push_back(std::move(current));
        current.clear();
        if (c == '\n') words.emplace_back(kNewlineToken);
      } else {
        current.push_back(c);
      }
    }
    if (!current.empty()) words.push_back(std::move(current));
    return words;
  }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& w : split_words(text)) ids.push_back(id(w));
    return ids;
  }

  std::string decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
      const auto& tok = token(id);
      if (tok == kNewlineToken) {
        out += '\n';
        continue;
      }
      if (!out.empty() && out.back() != '\n') out += ' ';
      out += tok;
    }
    return out;
  }

  int id(std::string_view word) const {
    const auto it = index_.find(std::string(word));
    require(it != index_.end(), "tokenizer: unknown token '", word, "'");
    return it->second;
  }

  bool contains(std::string_view word) const { return index_.contains(std::string(word)); }

  const std::string& token(int id) const {
    require(id >= 0 && id < size(), "tokenizer: token id ", id, " out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail_runtime("cannot write tokenizer file ", path);
    for (const auto& t : tokens_) out << t << '\n';
  }

  static Tokenizer load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_validation("cannot open tokenizer file ", path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) tokens.push_back(line);
    require(!tokens.empty(), "tokenizer file ", path, " is empty");
    return Tokenizer(std::move(tokens));
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace ikerev
