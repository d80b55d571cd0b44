#pragma once

// Pipeline stages behind the CLI. Every stage reads its inputs from the run's output
// directory, writes deterministic artifacts next to them, and returns its headline numbers.
//
// Seeds: stage seed = splitmix64(global_seed ^ fnv1a64(stage name)), with an optional
// index mixed in (see seed.hpp). Listed reversal seeds are indices into that scheme.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ikerev/analysis.hpp"
#include "ikerev/corpus.hpp"
#include "ikerev/detector.hpp"
#include "ikerev/editor.hpp"
#include "ikerev/error.hpp"
#include "ikerev/lm/checkpoint.hpp"
#include "ikerev/lm/inference.hpp"
#include "ikerev/lm/train.hpp"
#include "ikerev/reversal.hpp"
#include "ikerev/run_config.hpp"
#include "ikerev/seed.hpp"
#include "ikerev/tokenizer.hpp"

namespace ikerev::pipeline {

namespace fs = std::filesystem;

using Logger = std::function<void(const std::string&)>;

inline Logger stderr_logger() {
  return [](const std::string& msg) { std::cerr << msg << std::endl; };
}

struct Paths {
  fs::path dir;

  fs::path corpus() const { return dir / "corpus.jsonl"; }
  fs::path tokenizer() const { return dir / "tokenizer.txt"; }
  fs::path prompts() const { return dir / "prompts.jsonl"; }
  fs::path pretrain() const { return dir / "pretrain.jsonl"; }
  fs::path checkpoint() const { return dir / "model.ckpt"; }
  fs::path train_log() const { return dir / "train_log.csv"; }
  fs::path lm_report() const { return dir / "lm_report.json"; }
  fs::path detection_train() const { return dir / "detection_train.jsonl"; }
  fs::path detection_test() const { return dir / "detection_test.jsonl"; }
  fs::path detector() const { return dir / "detector.json"; }
  fs::path detector_selection() const { return dir / "detector_selection.csv"; }
  fs::path detection_metrics() const { return dir / "detection_metrics.csv"; }
  fs::path reversal_dir() const { return dir / "reversal"; }
  fs::path analysis_dir() const { return dir / "analysis"; }
};

inline void require_file(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p)) fail_validation("missing input ", p.string(), " (run `", producer, "` first)");
}

inline void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) fail_runtime("cannot create directory ", p.string(), ": ", ec.message());
}

inline std::string fmt(double v, int digits = 6) { return analysis::fixed(v, digits); }

// ---- gen-corpus -----------------------------------------------------------------------

struct CorpusResult {
  std::size_t facts = 0;
  std::size_t pseudo_facts = 0;
  std::size_t vocab = 0;
  std::size_t pretrain_documents = 0;
};

inline CorpusResult gen_corpus(const RunConfig& config, const Logger& log = {}) {
  config.validate();
  const Paths paths{config.out_dir};
  ensure_dir(paths.dir);
  const auto corpus = generate_corpus(config.corpus, stage_seed(config.global_seed, "corpus"));
  const auto tokenizer = Tokenizer::from_corpus(corpus, config.lm.specials);
  const auto mixture = build_pretrain_mixture(corpus, stage_seed(config.global_seed, "pretrain-mixture"));

  write_corpus(corpus, paths.corpus().string());
  tokenizer.save(paths.tokenizer().string());
  {
    std::ofstream out(paths.pretrain(), std::ios::binary);
    if (!out) fail_runtime("cannot write ", paths.pretrain().string());
    // one JSON string per line: edit episodes span several text lines
    for (const auto& doc : mixture) out << nlohmann::json(doc).dump() << '\n';
  }
  std::vector<PromptRecord> prompts;
  Rng rng(stage_seed(config.global_seed, "prompt-demos"));
  for (const auto& f : corpus.facts) {
    for (int t = 0; t < static_cast<int>(f.templates.size()); ++t) {
      prompts.push_back({"query", render_query(f, t).text, f.object, f.counterfact, f.id});
    }
    const auto demos = sample_demos(f, corpus.facts, config.corpus.demos, rng);
    prompts.push_back({"ike", build_ike_prompt(f, demos, 0).text(), f.object, f.counterfact, f.id});
  }
  write_prompts(prompts, paths.prompts().string());
  if (log) {
    log("corpus: " + std::to_string(corpus.facts.size()) + " facts, " + std::to_string(corpus.pseudo_facts.size()) +
        " pseudo facts, vocab " + std::to_string(tokenizer.size()) + ", " + std::to_string(mixture.size()) +
        " pretraining documents");
  }
  return {corpus.facts.size(), corpus.pseudo_facts.size(), static_cast<std::size_t>(tokenizer.size()), mixture.size()};
}

struct Loaded {
  Corpus corpus;
  Tokenizer tokenizer;
};

inline Loaded load_corpus(const RunConfig& config) {
  const Paths paths{config.out_dir};
  require_file(paths.corpus(), "gen-corpus");
  require_file(paths.tokenizer(), "gen-corpus");
  Loaded out{read_corpus(paths.corpus().string(), config.corpus), Tokenizer::load(paths.tokenizer().string())};
  return out;
}

inline lm::LMConfig model_config(const RunConfig& config, const Tokenizer& tokenizer) {
  lm::LMConfig c = config.lm;
  c.vocab_size = tokenizer.size();
  return c;
}

// ---- train-lm -------------------------------------------------------------------------

struct LMResult {
  double recall = 0.0;
  double edit_success = 0.0;
  std::size_t edits_skipped = 0;
  std::int64_t steps = 0;
  double final_loss = 0.0;
};

template <typename T>
double fact_recall(const lm::Transformer<T>& model, const Tokenizer& tokenizer, const std::vector<FactTriplet>& facts) {
  require(!facts.empty(), "fact_recall: no facts");
  const int bos = model.config().specials.bos;
  std::size_t hits = 0, n = 0;
  for (const auto& f : facts) {
    const int object = tokenizer.encode(f.object).at(0);
    for (int t = 0; t < static_cast<int>(f.templates.size()); ++t) {
      std::vector<int> ids{bos};
      const auto q = tokenizer.encode(render_query(f, t).text);
      ids.insert(ids.end(), q.begin(), q.end());
      hits += lm::next_token_distribution(model, std::span<const int>(ids)).argmax() == object ? 1 : 0;
      ++n;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

inline std::vector<EncodedEdit> evaluation_edits(const RunConfig& config, const Loaded& data, int bos) {
  return build_edits(data.tokenizer, data.corpus.facts, data.corpus.facts, config.corpus.demos, bos,
                     stage_seed(config.global_seed, "edit-success"));
}

inline LMResult train_lm(const RunConfig& config, const Logger& log = {}) {
  config.validate();
  const Paths paths{config.out_dir};
  const auto data = load_corpus(config);
  const auto lm_config = model_config(config, data.tokenizer);
  lm_config.validate();

  std::optional<lm::Checkpoint> init;
  if (!config.resume_from.empty()) {
    require_file(config.resume_from, "train-lm");
    init = lm::load_checkpoint(config.resume_from);
    require(init->config.vocab_size == lm_config.vocab_size, "resume checkpoint vocab size ", init->config.vocab_size,
            " does not match tokenizer vocab size ", lm_config.vocab_size, " (dimension mismatch)");
  }

  std::vector<std::vector<int>> documents;
  {
    std::ifstream in(paths.pretrain(), std::ios::binary);
    if (!in) fail_validation("missing input ", paths.pretrain().string(), " (run `gen-corpus` first)");
    std::string line;
    for (int n = 1; std::getline(in, line); ++n) {
      if (line.empty()) continue;
      try {
        documents.push_back(data.tokenizer.encode(nlohmann::json::parse(line).get<std::string>()));
      } catch (const nlohmann::json::exception& e) {
        fail_validation(paths.pretrain().string(), ":", n, ": ", e.what());
      }
    }
  }

  std::ostringstream train_log;
  train_log << "step,loss,learning-rate\n";
  const auto ckpt = lm::train_lm(documents, lm_config, config.train, stage_seed(config.global_seed, "lm"), init,
                                 [&](const lm::TrainProgress& p) {
                                   if (p.step % 50 != 0 && p.step != 1) return;
                                   train_log << p.step << ',' << fmt(p.loss) << ',' << fmt(p.learning_rate, 8) << '\n';
                                   if (log && p.step % 250 == 0) {
                                     log("train-lm: step " + std::to_string(p.step) + " loss " + fmt(p.loss, 4));
                                   }
                                 });
  lm::save_checkpoint(ckpt, paths.checkpoint().string());
  analysis::write_text(paths.train_log().string(), train_log.str());

  const auto model = ckpt.model<float>();
  LMResult r;
  r.recall = fact_recall(model, data.tokenizer, data.corpus.facts);
  const auto summary = edit_success(model, evaluation_edits(config, data, lm_config.specials.bos));
  r.edit_success = summary.success_rate();
  r.edits_skipped = summary.skipped;
  r.steps = ckpt.metadata.steps;
  r.final_loss = ckpt.metadata.final_loss;
  nlohmann::ordered_json report;
  report["steps"] = r.steps;
  report["final-loss"] = r.final_loss;
  report["fact-recall"] = r.recall;
  report["edit-success"] = r.edit_success;
  report["edits-skipped"] = r.edits_skipped;
  report["checkpoint-hash"] = ckpt.hash();
  analysis::write_text(paths.lm_report().string(), report.dump(2) + "\n");
  if (log) {
    log("train-lm: " + std::to_string(r.steps) + " steps, recall " + fmt(r.recall, 4) + ", edit success " +
        fmt(r.edit_success, 4));
  }
  return r;
}

inline lm::Checkpoint load_model(const RunConfig& config, const Tokenizer& tokenizer) {
  const Paths paths{config.out_dir};
  require_file(paths.checkpoint(), "train-lm");
  auto ckpt = lm::load_checkpoint(paths.checkpoint().string());
  require(ckpt.config.vocab_size == tokenizer.size(), "checkpoint vocab size ", ckpt.config.vocab_size,
          " does not match tokenizer vocab size ", tokenizer.size(), " (dimension mismatch)");
  return ckpt;
}

// ---- detect ---------------------------------------------------------------------------

struct DetectDataResult {
  std::size_t train = 0;
  std::size_t test = 0;
};

inline DetectDataResult detect_build_data(const RunConfig& config, const Logger& log = {}) {
  config.validate();
  const Paths paths{config.out_dir};
  const auto data = load_corpus(config);
  const auto model = load_model(config, data.tokenizer).model<float>();
  const auto ds = build_detection_dataset(model, data.tokenizer, data.corpus.facts, config.detector.data,
                                          stage_seed(config.global_seed, "detect-data"));
  write_detection_instances(ds.train, paths.detection_train().string());
  write_detection_instances(ds.test, paths.detection_test().string());
  if (log) log("detect build-data: " + std::to_string(ds.train.size()) + " train / " + std::to_string(ds.test.size()) + " test");
  return {ds.train.size(), ds.test.size()};
}

inline void check_balanced(const std::vector<DetectionInstance>& data, const std::string& name) {
  std::size_t edited = 0;
  for (const auto& d : data) edited += d.edited ? 1 : 0;
  require(!data.empty() && edited * 2 == data.size(), "detection ", name, " set is not balanced (", edited,
          " edited of ", data.size(), ")");
}

inline RegSelection detect_train(const RunConfig& config, const Logger& log = {}) {
  config.validate();
  const Paths paths{config.out_dir};
  require_file(paths.detection_train(), "detect build-data");
  const auto train = read_detection_instances(paths.detection_train().string());
  check_balanced(train, "training");
  DetectorOptions options;
  options.log_features = config.detector.log_features;
  const auto sel = select_reg_strength(train, config.detector.reg_grid, stage_seed(config.global_seed, "detector"),
                                       config.detector.validation_fraction, options);
  save_detector(sel.model, paths.detector().string());
  std::string csv = "reg-strength,validation-f1\n";
  for (const auto& [reg, f1] : sel.validation_f1) csv += fmt(reg) + "," + fmt(f1) + "\n";
  analysis::write_text(paths.detector_selection().string(), csv);
  if (log) log("detect train: reg-strength " + fmt(sel.reg_strength, 4));
  return sel;
}

inline std::string optional_fmt(const std::optional<double>& v) { return v ? fmt(*v) : "undefined"; }

inline DetectionMetrics detect_eval(const RunConfig& config, const Logger& log = {}) {
  config.validate();
  const Paths paths{config.out_dir};
  require_file(paths.detection_test(), "detect build-data");
  require_file(paths.detector(), "detect train");
  const auto test = read_detection_instances(paths.detection_test().string());
  check_balanced(test, "test");
  const auto model = load_detector(paths.detector().string());
  const auto m = evaluate_detector(model, test);
  std::string csv = "precision,recall,F1,accuracy,tp,fp,fn,tn\n";
  csv += optional_fmt(m.precision) + "," + optional_fmt(m.recall) + "," + optional_fmt(m.f1) + "," + fmt(m.accuracy) +
         "," + std::to_string(m.tp) + "," + std::to_string(m.fp) + "," + std::to_string(m.fn) + "," +
         std::to_string(m.tn) + "\n";
  analysis::write_text(paths.detection_metrics().string(), csv);
  if (log) log("detect eval: F1 " + optional_fmt(m.f1));
  return m;
}

// ---- reverse --------------------------------------------------------------------------

struct ReversalData {
  std::vector<reversal::ReversalExample> train;
  std::vector<reversal::ReversalExample> validation;
  std::vector<reversal::ReversalExample> test;
};

inline std::vector<EncodedEdit> capped_edits(const RunConfig& config, const Loaded& data, Split split, int cap,
                                             int bos, const std::string& stage) {
  auto edits = build_edits(data.tokenizer, data.corpus.split(split), data.corpus.facts, config.reversal.demos, bos,
                           stage_seed(config.global_seed, stage));
  Rng rng(stage_seed(config.global_seed, stage + "-order"));
  shuffle_range(edits.begin(), edits.end(), rng);
  if (static_cast<int>(edits.size()) > cap) edits.resize(static_cast<std::size_t>(cap));
  require(!edits.empty(), "no edits available for the ", to_string(split), " split");
  return edits;
}

// Tuning, selection and test edits come from the train, validation and test fact splits.
template <typename T>
ReversalData reversal_data(const RunConfig& config, const Loaded& data, const lm::Transformer<T>& model) {
  const int bos = model.config().specials.bos;
  ReversalData out;
  out.train = reversal::prepare_examples(
      model, capped_edits(config, data, Split::kTrain, config.reversal.train_edits, bos, "reversal-train"));
  out.validation = reversal::prepare_examples(
      model, capped_edits(config, data, Split::kValidation, config.reversal.validation_edits, bos, "reversal-validation"));
  out.test = reversal::prepare_examples(
      model, capped_edits(config, data, Split::kTest, config.reversal.test_edits, bos, "reversal-test"));
  return out;
}

inline reversal::TuneOptions tune_options(const ReversalConfig& rc) {
  reversal::TuneOptions o;
  o.epochs = rc.epochs;
  o.learning_rate = rc.learning_rate;
  o.normal_weight = rc.normal_weight;
  o.init_noise = rc.init_noise;
  return o;
}

struct ReverseResult {
  reversal::Baseline baseline;
  std::vector<reversal::ReversalEvalReport> reports;  // one per m
  std::optional<reversal::ProbeResult> probe;
};

inline std::string setting_name(const ReversalConfig& rc) {
  std::string s = reversal::to_string(rc.mode);
  if (rc.ablation != reversal::Ablation::kNone) s += "-" + reversal::to_string(rc.ablation);
  return s;
}

inline std::string token_file_name(const ReversalConfig& rc, int m, std::uint64_t seed) {
  return setting_name(rc) + "_m" + std::to_string(m) + "_s" + std::to_string(seed) + ".json";
}

inline nlohmann::ordered_json to_json(const reversal::ProbeResult& p) {
  nlohmann::ordered_json j;
  j["chosen-seed"] = p.chosen_seed;
  j["seed-accuracy"] = nlohmann::ordered_json::array();
  for (const auto& [seed, acc] : p.seed_accuracy) j["seed-accuracy"].push_back({{"seed", seed}, {"accuracy", acc}});
  j["w"] = p.weights.w;
  j["w-bar"] = p.weights.w_bar;
  j["r-init"] = p.r_init;
  j["r-tuned"] = p.r_tuned;
  return j;
}

inline ReverseResult reverse(const RunConfig& config, const Logger& log = {}) {
  config.validate();
  const Paths paths{config.out_dir};
  const auto& rc = config.reversal;
  const auto data = load_corpus(config);
  const auto model = load_model(config, data.tokenizer).model<float>();
  const auto rd = reversal_data(config, data, model);
  ensure_dir(paths.reversal_dir());

  ReverseResult result;
  result.baseline = reversal::compute_baseline(model, std::span<const reversal::ReversalExample>(rd.test));
  if (log) {
    log("reverse: baseline IKE vs no-IKE " + fmt(result.baseline.accuracy, 4) + ", edit success " +
        fmt(result.baseline.success_rate, 4));
  }
  const auto options = tune_options(rc);
  const std::string setting = setting_name(rc);

  if (rc.mode == reversal::Mode::kDiscrete) {
    require(data.tokenizer.contains(rc.probe_init_token), "probe init token '", rc.probe_init_token,
            "' is not in the vocabulary");
    std::vector<std::uint64_t> probe_seeds;
    for (auto s : rc.seeds) probe_seeds.push_back(stage_seed(config.global_seed, "reversal-probe", s));
    result.probe = reversal::probe_dimensions(model, rd.train, rd.validation, data.tokenizer.id(rc.probe_init_token),
                                              rc.probe_lambda, probe_seeds, options);
    analysis::write_text((paths.reversal_dir() / "probe.json").string(), to_json(*result.probe).dump() + "\n");
    if (log) log("reverse: probe kept seed " + std::to_string(result.probe->chosen_seed));
  }

  for (int m : rc.m_list) {
    std::vector<reversal::ReversalTokenSet> sets;
    for (auto s : rc.seeds) {
      const auto seed = stage_seed(config.global_seed, "reversal-" + setting + "-m" + std::to_string(m), s);
      reversal::ReversalTokenSet set;
      if (rc.mode == reversal::Mode::kContinuous) {
        set = reversal::tune_continuous(model, std::span<const reversal::ReversalExample>(rd.train), m, options, seed);
      } else {
        reversal::DiscreteOptions d;
        d.tune = options;
        d.select.k = static_cast<std::size_t>(rc.k);
        d.select.normal_weight = rc.normal_weight;
        d.lambda = rc.lambda;
        d.ablation = rc.ablation;
        set = reversal::tune_discrete(model, rd.train, rd.validation, result.probe->weights, m, d, seed);
      }
      set.seed = s;
      reversal::save_token_set(set, (paths.reversal_dir() / token_file_name(rc, m, s)).string());
      sets.push_back(std::move(set));
    }
    result.reports.push_back(reversal::eval_reversal(model, std::span<const reversal::ReversalTokenSet>(sets),
                                                     std::span<const reversal::ReversalExample>(rd.test),
                                                     result.baseline, setting));
    const auto& rep = result.reports.back();
    if (log) {
      log("reverse: " + setting + " m=" + std::to_string(m) + " edited mean " + fmt(rep.edited.mean, 4) + " std " +
          fmt(rep.edited.std, 4) + ", normal mean " + fmt(rep.normal.mean, 4));
    }
  }
  analysis::write_text((paths.reversal_dir() / (setting + "_report.csv")).string(),
                       reversal::reversal_csv(result.reports));
  analysis::write_text((paths.reversal_dir() / (setting + "_summary.csv")).string(),
                       reversal::reversal_summary_csv(result.reports));
  return result;
}

// ---- analyze --------------------------------------------------------------------------

struct AnalyzeResult {
  std::optional<analysis::ShiftHistogram> shift;
  std::vector<analysis::RankTrajectory> ranks;
  std::vector<analysis::AttentionReport> attention;
};

// Reversal tokens for the analyses: "bos", or a token-set file produced by `reverse`.
inline std::vector<reversal::RevToken> analysis_tokens(const std::string& spec, const Tokenizer& tokenizer,
                                                       const lm::LMConfig& lm_config) {
  if (spec == "bos") return reversal::discrete_tokens(std::vector<int>{lm_config.specials.bos});
  require_file(spec, "reverse");
  const auto set = reversal::load_token_set(spec);
  reversal::validate(set, lm_config.model_dim, lm_config.specials, tokenizer.size());
  return set.tokens();
}

inline AnalyzeResult analyze(const RunConfig& config, const std::vector<std::string>& which,
                             const std::string& reversal_spec = "bos", const Logger& log = {}) {
  config.validate();
  for (const auto& w : which) {
    require(w == "shift" || w == "ranks" || w == "attention", "analyze: unknown analysis '", w,
            "' (expected shift|ranks|attention|all)");
  }
  const Paths paths{config.out_dir};
  const auto data = load_corpus(config);
  const auto ckpt = load_model(config, data.tokenizer);
  const auto model = ckpt.model<float>();
  const auto rev = analysis_tokens(reversal_spec, data.tokenizer, ckpt.config);
  const auto edits = capped_edits(config, data, Split::kTest, config.analysis.prompts, ckpt.config.specials.bos,
                                  "analysis-prompts");
  const auto examples = reversal::prepare_examples(model, edits);
  const std::span<const reversal::ReversalExample> ex(examples);
  const std::span<const reversal::RevToken> rv(rev);
  ensure_dir(paths.analysis_dir());
  const auto dir = paths.analysis_dir();

  AnalyzeResult r;
  auto wants = [&](const char* name) { return std::find(which.begin(), which.end(), name) != which.end(); };
  if (wants("shift")) {
    r.shift = analysis::output_shift(model, std::span<const EncodedEdit>(edits));
    analysis::write_text((dir / "shift.csv").string(), analysis::shift_csv(r.shift));
    analysis::write_text((dir / "shift.svg").string(), analysis::shift_svg(*r.shift));
    analysis::write_text((dir / "shift.json").string(), analysis::to_json(*r.shift).dump(2) + "\n");
    if (log) log("analyze: shift top-1 " + fmt(r.shift->fractions[0], 4) + ", top-10 " + fmt(r.shift->fractions[9], 4));
  }
  if (wants("ranks")) {
    r.ranks = analysis::rank_trajectories(model, ex, rv);
    analysis::write_text((dir / "ranks.csv").string(), analysis::trajectory_csv(r.ranks));
    analysis::write_text((dir / "ranks.svg").string(), analysis::trajectory_svg(r.ranks));
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& t : r.ranks) j.push_back(analysis::to_json(t));
    analysis::write_text((dir / "ranks.json").string(), j.dump(2) + "\n");
    if (log) {
      log("analyze: rank L1 distance to no-IKE: IKE " + fmt(analysis::trajectory_l1(r.ranks[1], r.ranks[0]), 2) +
          ", IKE+reversal " + fmt(analysis::trajectory_l1(r.ranks[2], r.ranks[0]), 2));
    }
  }
  if (wants("attention")) {
    r.attention = {analysis::attention_report(model, ex, analysis::Setting::kIke),
                   analysis::attention_report(model, ex, analysis::Setting::kIkeReversal, rv),
                   analysis::attention_report(model, ex, analysis::Setting::kNoIke)};
    analysis::write_text((dir / "attention.csv").string(), analysis::attention_csv(r.attention));
    analysis::write_text((dir / "attention_layers.csv").string(), analysis::attention_layers_csv(r.attention));
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& a : r.attention) j.push_back(analysis::to_json(a));
    analysis::write_text((dir / "attention.json").string(), j.dump(2) + "\n");
    if (log) {
      log("analyze: query attention mass edited " + fmt(r.attention[0].mean_mass, 4) + ", edited+reversal " +
          fmt(r.attention[1].mean_mass, 4) + ", unedited " + fmt(r.attention[2].mean_mass, 4));
    }
  }
  return r;
}

}  // namespace ikerev::pipeline
