#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ikerev/error.hpp"
#include "ikerev/tokenizer.hpp"

namespace ikerev::lm {

struct LMConfig {
  int vocab_size = 0;
  int layers = 4;
  int heads = 4;
  int model_dim = 128;
  int context_length = 256;
  int mlp_ratio = 4;
  SpecialTokens specials;

  int head_dim() const { return model_dim / heads; }

  void validate() const {
    require(vocab_size > specials.first_regular(), "lm: vocab_size ", vocab_size,
            " leaves no room for natural tokens");
    require(layers >= 1 && heads >= 1 && model_dim >= 1 && context_length >= 1 && mlp_ratio >= 1,
            "lm: layers, heads, model_dim, context_length and mlp_ratio must be positive");
    require(model_dim % heads == 0, "lm: model_dim ", model_dim, " not divisible by heads ", heads);
    require(specials.pad != specials.bos && specials.pad != specials.eos && specials.bos != specials.eos,
            "lm: special token ids collide");
    for (int id : {specials.pad, specials.bos, specials.eos}) {
      require(!specials.is_reserved(id), "lm: special token ", id, " collides with reserved slots");
    }
  }

  friend bool operator==(const LMConfig&, const LMConfig&) = default;
};

inline nlohmann::ordered_json to_json(const LMConfig& c) {
  nlohmann::ordered_json j;
  j["vocab_size"] = c.vocab_size;
  j["layers"] = c.layers;
  j["heads"] = c.heads;
  j["model_dim"] = c.model_dim;
  j["context_length"] = c.context_length;
  j["mlp_ratio"] = c.mlp_ratio;
  j["specials"] = {{"pad", c.specials.pad},
                   {"bos", c.specials.bos},
                   {"eos", c.specials.eos},
                   {"reserved_begin", c.specials.reserved_begin},
                   {"reserved_count", c.specials.reserved_count}};
  return j;
}

inline LMConfig lm_config_from_json(const nlohmann::json& j) {
  LMConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.model_dim = j.value("model_dim", c.model_dim);
  c.context_length = j.value("context_length", c.context_length);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  if (j.contains("specials")) {
    const auto& s = j.at("specials");
    c.specials.pad = s.value("pad", c.specials.pad);
    c.specials.bos = s.value("bos", c.specials.bos);
    c.specials.eos = s.value("eos", c.specials.eos);
    c.specials.reserved_begin = s.value("reserved_begin", c.specials.reserved_begin);
    c.specials.reserved_count = s.value("reserved_count", c.specials.reserved_count);
  }
  return c;
}

struct ParamBlock {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
};

// Offsets of every named parameter block inside one flat buffer.
class ParamLayout {
 public:
  struct LayerOffsets {
    std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_attn_out, b_attn_out;
    std::size_t ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
  };

  explicit ParamLayout(const LMConfig& config) {
    const auto v = static_cast<std::size_t>(config.vocab_size);
    const auto d = static_cast<std::size_t>(config.model_dim);
    const auto c = static_cast<std::size_t>(config.context_length);
    const auto f = d * static_cast<std::size_t>(config.mlp_ratio);
    tok_emb_ = add("tok_emb", {v, d});
    pos_emb_ = add("pos_emb", {c, d});
    for (int l = 0; l < config.layers; ++l) {
      const std::string p = "h" + std::to_string(l) + ".";
      LayerOffsets o{};
      o.ln1_g = add(p + "ln1.g", {d});
      o.ln1_b = add(p + "ln1.b", {d});
      o.w_qkv = add(p + "attn.w_qkv", {d, 3 * d});
      o.b_qkv = add(p + "attn.b_qkv", {3 * d});
      o.w_attn_out = add(p + "attn.w_out", {d, d});
      o.b_attn_out = add(p + "attn.b_out", {d});
      o.ln2_g = add(p + "ln2.g", {d});
      o.ln2_b = add(p + "ln2.b", {d});
      o.w_fc = add(p + "mlp.w_fc", {d, f});
      o.b_fc = add(p + "mlp.b_fc", {f});
      o.w_proj = add(p + "mlp.w_proj", {f, d});
      o.b_proj = add(p + "mlp.b_proj", {d});
      layers_.push_back(o);
    }
    lnf_g_ = add("lnf.g", {d});
    lnf_b_ = add("lnf.b", {d});
    unembed_ = add("unembed", {d, v});
  }

  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  std::size_t total() const { return total_; }
  const LayerOffsets& layer(int l) const { return layers_[static_cast<std::size_t>(l)]; }
  std::size_t tok_emb() const { return tok_emb_; }
  std::size_t pos_emb() const { return pos_emb_; }
  std::size_t lnf_g() const { return lnf_g_; }
  std::size_t lnf_b() const { return lnf_b_; }
  std::size_t unembed() const { return unembed_; }

 private:
  std::size_t add(std::string name, std::vector<std::size_t> shape) {
    ParamBlock block{std::move(name), std::move(shape), total_};
    total_ += block.size();
    const auto offset = block.offset;
    blocks_.push_back(std::move(block));
    return offset;
  }

  std::vector<ParamBlock> blocks_;
  std::vector<LayerOffsets> layers_;
  std::size_t total_ = 0;
  std::size_t tok_emb_ = 0, pos_emb_ = 0, lnf_g_ = 0, lnf_b_ = 0, unembed_ = 0;
};

}  // namespace ikerev::lm
