// ikerev: run the edit detection / reversal pipeline one stage at a time.
//
//   ikerev gen-corpus --config run.json
//   ikerev train-lm   --config run.json
//   ikerev detect build-data|train|eval --config run.json
//   ikerev reverse    --config run.json --mode discrete --ablation no-cos --m 5
//   ikerev analyze    all --config run.json
//
// Exit codes: 0 success, 1 validation error, 2 runtime error.

#include <malloc.h>

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ikerev/error.hpp"
#include "ikerev/pipeline.hpp"
#include "ikerev/run_config.hpp"

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> mode;
  std::optional<std::string> ablation;
  std::vector<int> m;
  std::optional<double> lambda;
  std::optional<int> k;
  std::optional<std::string> resume;
};

ikerev::RunConfig resolve(const Overrides& o) {
  ikerev::RunConfig c = o.config.empty() ? ikerev::RunConfig{} : ikerev::load_run_config(o.config);
  if (o.seed) c.global_seed = *o.seed;
  if (o.out_dir) c.out_dir = *o.out_dir;
  if (o.mode) c.reversal.mode = ikerev::reversal::parse_mode(*o.mode);
  if (o.ablation) c.reversal.ablation = ikerev::reversal::parse_ablation(*o.ablation);
  if (!o.m.empty()) c.reversal.m_list = o.m;
  if (o.lambda) c.reversal.lambda = *o.lambda;
  if (o.k) c.reversal.k = *o.k;
  if (o.resume) c.resume_from = *o.resume;
  c.validate();
  return c;
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "run-config JSON file");
  cmd->add_option("--seed", o.seed, "global seed");
  cmd->add_option("--out-dir", o.out_dir, "artifact directory");
}

void add_reversal(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--mode", o.mode, "continuous|discrete");
  cmd->add_option("--ablation", o.ablation, "none|no-cos|no-kl");
  cmd->add_option("--m", o.m, "number of reversal tokens (repeatable)");
  cmd->add_option("--lambda", o.lambda, "weight of the cosine term");
  cmd->add_option("--k", o.k, "candidate tokens per position");
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"In-context edit detection and reversal pipeline"};
  app.require_subcommand(1);
  Overrides o;

  auto* gen = app.add_subcommand("gen-corpus", "synthesize facts, tokenizer and pretraining text");
  add_common(gen, o);

  auto* train = app.add_subcommand("train-lm", "train the language model");
  add_common(train, o);
  train->add_option("--resume", o.resume, "checkpoint to continue training from");

  auto* detect = app.add_subcommand("detect", "edit detection");
  detect->require_subcommand(1);
  auto* build = detect->add_subcommand("build-data", "extract top-10 probability features");
  auto* fit = detect->add_subcommand("train", "fit the L1 logistic detector");
  auto* eval = detect->add_subcommand("eval", "score the detector on the test split");
  for (auto* c : {build, fit, eval}) add_common(c, o);

  auto* reverse = app.add_subcommand("reverse", "tune and evaluate reversal tokens");
  add_common(reverse, o);
  add_reversal(reverse, o);

  auto* analyze = app.add_subcommand("analyze", "output shift, rank trajectories and attention");
  add_common(analyze, o);
  std::string which = "all";
  std::string tokens = "bos";
  analyze->add_option("which", which, "shift|ranks|attention|all");
  analyze->add_option("--tokens", tokens, "\"bos\" or a reversal token file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  const auto log = ikerev::pipeline::stderr_logger();
  try {
    const auto config = resolve(o);
    if (gen->parsed()) {
      ikerev::pipeline::gen_corpus(config, log);
    } else if (train->parsed()) {
      ikerev::pipeline::train_lm(config, log);
    } else if (build->parsed()) {
      ikerev::pipeline::detect_build_data(config, log);
    } else if (fit->parsed()) {
      ikerev::pipeline::detect_train(config, log);
    } else if (eval->parsed()) {
      const auto m = ikerev::pipeline::detect_eval(config, log);
      std::cout << "precision,recall,F1\n"
                << ikerev::pipeline::optional_fmt(m.precision) << ',' << ikerev::pipeline::optional_fmt(m.recall)
                << ',' << ikerev::pipeline::optional_fmt(m.f1) << '\n';
    } else if (reverse->parsed()) {
      const auto r = ikerev::pipeline::reverse(config, log);
      std::cout << ikerev::reversal::reversal_summary_csv(r.reports);
    } else if (analyze->parsed()) {
      std::vector<std::string> kinds{which};
      if (which == "all") kinds = {"shift", "ranks", "attention"};
      ikerev::pipeline::analyze(config, kinds, tokens, log);
    }
  } catch (const ikerev::ValidationError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << std::endl;
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitRuntime;
  }
  return 0;
}
