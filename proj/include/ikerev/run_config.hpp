#pragma once

// The run-config file: one JSON document covering every pipeline stage. Missing keys keep
// their defaults; unknown keys are rejected so typos do not silently fall back.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ikerev/corpus.hpp"
#include "ikerev/detector.hpp"
#include "ikerev/editor.hpp"
#include "ikerev/error.hpp"
#include "ikerev/lm/config.hpp"
#include "ikerev/lm/train.hpp"
#include "ikerev/reversal/tokens.hpp"

namespace ikerev {

struct DetectorConfig {
  DetectionDataConfig data;
  std::vector<double> reg_grid = default_reg_grid();
  double validation_fraction = 0.2;
  bool log_features = false;
};

struct ReversalConfig {
  reversal::Mode mode = reversal::Mode::kContinuous;
  reversal::Ablation ablation = reversal::Ablation::kNone;
  std::vector<int> m_list{1, 5, 10};
  double lambda = 0.5;
  int k = 10;
  int epochs = 3;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  double learning_rate = 1e-3;
  double normal_weight = 1.0;
  double init_noise = 0.01;
  int demos = 8;
  int train_edits = 200;       // caps on edits drawn from each split
  int validation_edits = 64;
  int test_edits = 200;
  std::string probe_init_token = "of";
  double probe_lambda = 0.5;
};

struct AnalysisConfig {
  int prompts = 200;
  std::vector<std::string> which{"shift", "ranks", "attention"};
};

struct RunConfig {
  std::uint64_t global_seed = 1;
  CorpusConfig corpus;
  lm::LMConfig lm;  // vocab_size comes from the tokenizer
  lm::TrainConfig train;
  DetectorConfig detector;
  ReversalConfig reversal;
  AnalysisConfig analysis;
  std::string out_dir = "out";
  std::string resume_from;  // optional checkpoint to continue training from

  void validate() const {
    corpus.validate();
    require(train.steps >= 0 && train.batch_rows >= 1 && train.learning_rate > 0 && train.warmup_steps >= 0,
            "config: bad lm training settings");
    require(lm.layers >= 1 && lm.heads >= 1 && lm.model_dim % lm.heads == 0 && lm.context_length >= 2,
            "config: bad lm shape (model-dim must be divisible by heads)");
    require(detector.data.train_size > 0 && detector.data.train_size % 2 == 0 && detector.data.test_size > 0 &&
                detector.data.test_size % 2 == 0,
            "config: detector train/test sizes must be positive and even");
    require(!detector.reg_grid.empty(), "config: detector reg-grid must be non-empty");
    for (double r : detector.reg_grid) require(r >= 0, "config: detector reg-grid entries must be >= 0");
    require(!reversal.m_list.empty(), "config: reversal m-list must be non-empty");
    for (int m : reversal.m_list) {
      require(m >= 1 && m <= lm.specials.reserved_count, "config: reversal m must be in [1, ",
              lm.specials.reserved_count, "] (got ", m, ")");
    }
    require(!reversal.seeds.empty(), "config: reversal seeds must be non-empty");
    require(reversal.lambda >= 0 && reversal.lambda <= 1, "config: lambda must be in [0, 1]");
    require(reversal.probe_lambda >= 0 && reversal.probe_lambda <= 1, "config: probe-lambda must be in [0, 1]");
    require(reversal.k >= 1, "config: k must be >= 1");
    require(reversal.epochs >= 0, "config: epochs must be >= 0");
    require(reversal.train_edits > 0 && reversal.validation_edits > 0 && reversal.test_edits > 0,
            "config: reversal edit counts must be positive");
    require(!(reversal.ablation == reversal::Ablation::kNoKl && reversal.lambda == 1.0),
            "config: lambda = 1 with the no-kl ablation is degenerate");
    require(!(reversal.mode == reversal::Mode::kContinuous && reversal.ablation != reversal::Ablation::kNone),
            "config: ablations apply to discrete mode only");
    require(analysis.prompts > 0, "config: analysis prompts must be positive");
    for (const auto& w : analysis.which) {
      require(w == "shift" || w == "ranks" || w == "attention", "config: unknown analysis '", w,
              "' (expected shift|ranks|attention)");
    }
    require(!out_dir.empty(), "config: out-dir must be non-empty");
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  require(j.is_object(), "config: '", where, "' must be an object");
  for (const auto& [key, value] : j.items()) {
    require(allowed.count(key) != 0, "config: unknown key '", key, "' in ", where);
  }
}

template <typename U>
void read(const nlohmann::json& j, const char* key, U& field) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<U>();
  } catch (const nlohmann::json::exception& e) {
    fail_validation("config: bad value for '", key, "': ", e.what());
  }
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::check_keys(j, {"global-seed", "corpus", "lm", "detector", "reversal", "analysis", "paths"}, "run config");
  detail::read(j, "global-seed", c.global_seed);
  if (j.contains("corpus")) {
    const auto& s = j.at("corpus");
    detail::check_keys(s, {"subjects", "relations", "objects-per-relation", "templates-per-relation", "pseudo-subjects",
                           "train-fraction", "validation-fraction", "demos", "episode-ratio", "statement-copies",
                           "statement-noise"},
                       "corpus");
    detail::read(s, "subjects", c.corpus.subjects);
    detail::read(s, "relations", c.corpus.relations);
    detail::read(s, "objects-per-relation", c.corpus.objects_per_relation);
    detail::read(s, "templates-per-relation", c.corpus.templates_per_relation);
    detail::read(s, "pseudo-subjects", c.corpus.pseudo_subjects);
    detail::read(s, "train-fraction", c.corpus.train_fraction);
    detail::read(s, "validation-fraction", c.corpus.validation_fraction);
    detail::read(s, "demos", c.corpus.demos);
    detail::read(s, "episode-ratio", c.corpus.episode_ratio);
    detail::read(s, "statement-copies", c.corpus.statement_copies);
    detail::read(s, "statement-noise", c.corpus.statement_noise);
  }
  if (j.contains("lm")) {
    const auto& s = j.at("lm");
    detail::check_keys(s, {"layers", "heads", "model-dim", "context-length", "mlp-ratio", "steps", "batch-rows",
                           "learning-rate", "min-learning-rate-ratio", "warmup-steps", "weight-decay", "grad-clip"},
                       "lm");
    detail::read(s, "layers", c.lm.layers);
    detail::read(s, "heads", c.lm.heads);
    detail::read(s, "model-dim", c.lm.model_dim);
    detail::read(s, "context-length", c.lm.context_length);
    detail::read(s, "mlp-ratio", c.lm.mlp_ratio);
    detail::read(s, "steps", c.train.steps);
    detail::read(s, "batch-rows", c.train.batch_rows);
    detail::read(s, "learning-rate", c.train.learning_rate);
    detail::read(s, "min-learning-rate-ratio", c.train.min_learning_rate_ratio);
    detail::read(s, "warmup-steps", c.train.warmup_steps);
    detail::read(s, "weight-decay", c.train.weight_decay);
    detail::read(s, "grad-clip", c.train.grad_clip);
  }
  if (j.contains("detector")) {
    const auto& s = j.at("detector");
    detail::check_keys(s, {"train-size", "test-size", "demos", "reg-grid", "validation-fraction", "log-features"},
                       "detector");
    detail::read(s, "train-size", c.detector.data.train_size);
    detail::read(s, "test-size", c.detector.data.test_size);
    detail::read(s, "demos", c.detector.data.demos);
    detail::read(s, "reg-grid", c.detector.reg_grid);
    detail::read(s, "validation-fraction", c.detector.validation_fraction);
    detail::read(s, "log-features", c.detector.log_features);
  }
  if (j.contains("reversal")) {
    const auto& s = j.at("reversal");
    detail::check_keys(s, {"mode", "ablation", "m-list", "lambda", "k", "epochs", "seeds", "learning-rate",
                           "normal-weight", "init-noise", "demos", "train-edits", "validation-edits", "test-edits",
                           "probe-init-token", "probe-lambda"},
                       "reversal");
    std::string mode = reversal::to_string(c.reversal.mode), ablation = reversal::to_string(c.reversal.ablation);
    detail::read(s, "mode", mode);
    detail::read(s, "ablation", ablation);
    c.reversal.mode = reversal::parse_mode(mode);
    c.reversal.ablation = reversal::parse_ablation(ablation);
    detail::read(s, "m-list", c.reversal.m_list);
    detail::read(s, "lambda", c.reversal.lambda);
    detail::read(s, "k", c.reversal.k);
    detail::read(s, "epochs", c.reversal.epochs);
    detail::read(s, "seeds", c.reversal.seeds);
    detail::read(s, "learning-rate", c.reversal.learning_rate);
    detail::read(s, "normal-weight", c.reversal.normal_weight);
    detail::read(s, "init-noise", c.reversal.init_noise);
    detail::read(s, "demos", c.reversal.demos);
    detail::read(s, "train-edits", c.reversal.train_edits);
    detail::read(s, "validation-edits", c.reversal.validation_edits);
    detail::read(s, "test-edits", c.reversal.test_edits);
    detail::read(s, "probe-init-token", c.reversal.probe_init_token);
    detail::read(s, "probe-lambda", c.reversal.probe_lambda);
  }
  if (j.contains("analysis")) {
    const auto& s = j.at("analysis");
    detail::check_keys(s, {"prompts", "which"}, "analysis");
    detail::read(s, "prompts", c.analysis.prompts);
    detail::read(s, "which", c.analysis.which);
  }
  if (j.contains("paths")) {
    const auto& s = j.at("paths");
    detail::check_keys(s, {"out-dir", "resume-from"}, "paths");
    detail::read(s, "out-dir", c.out_dir);
    detail::read(s, "resume-from", c.resume_from);
  }
  return c;
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["global-seed"] = c.global_seed;
  j["corpus"] = {{"subjects", c.corpus.subjects},
                 {"relations", c.corpus.relations},
                 {"objects-per-relation", c.corpus.objects_per_relation},
                 {"templates-per-relation", c.corpus.templates_per_relation},
                 {"pseudo-subjects", c.corpus.pseudo_subjects},
                 {"train-fraction", c.corpus.train_fraction},
                 {"validation-fraction", c.corpus.validation_fraction},
                 {"demos", c.corpus.demos},
                 {"episode-ratio", c.corpus.episode_ratio},
                 {"statement-copies", c.corpus.statement_copies},
                 {"statement-noise", c.corpus.statement_noise}};
  j["lm"] = {{"layers", c.lm.layers},
             {"heads", c.lm.heads},
             {"model-dim", c.lm.model_dim},
             {"context-length", c.lm.context_length},
             {"mlp-ratio", c.lm.mlp_ratio},
             {"steps", c.train.steps},
             {"batch-rows", c.train.batch_rows},
             {"learning-rate", c.train.learning_rate},
             {"min-learning-rate-ratio", c.train.min_learning_rate_ratio},
             {"warmup-steps", c.train.warmup_steps},
             {"weight-decay", c.train.weight_decay},
             {"grad-clip", c.train.grad_clip}};
  j["detector"] = {{"train-size", c.detector.data.train_size},
                   {"test-size", c.detector.data.test_size},
                   {"demos", c.detector.data.demos},
                   {"reg-grid", c.detector.reg_grid},
                   {"validation-fraction", c.detector.validation_fraction},
                   {"log-features", c.detector.log_features}};
  j["reversal"] = {{"mode", reversal::to_string(c.reversal.mode)},
                   {"ablation", reversal::to_string(c.reversal.ablation)},
                   {"m-list", c.reversal.m_list},
                   {"lambda", c.reversal.lambda},
                   {"k", c.reversal.k},
                   {"epochs", c.reversal.epochs},
                   {"seeds", c.reversal.seeds},
                   {"learning-rate", c.reversal.learning_rate},
                   {"normal-weight", c.reversal.normal_weight},
                   {"init-noise", c.reversal.init_noise},
                   {"demos", c.reversal.demos},
                   {"train-edits", c.reversal.train_edits},
                   {"validation-edits", c.reversal.validation_edits},
                   {"test-edits", c.reversal.test_edits},
                   {"probe-init-token", c.reversal.probe_init_token},
                   {"probe-lambda", c.reversal.probe_lambda}};
  j["analysis"] = {{"prompts", c.analysis.prompts}, {"which", c.analysis.which}};
  j["paths"] = {{"out-dir", c.out_dir}, {"resume-from", c.resume_from}};
  return j;
}

inline RunConfig load_run_config(const std::string& path) {
  if (!std::filesystem::exists(path)) fail_validation("config file not found: ", path);
  std::ifstream in(path);
  if (!in) fail_validation("cannot open config file ", path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail_validation("config file ", path, " is not valid JSON: ", e.what());
  }
  return run_config_from_json(j);
}

}  // namespace ikerev
