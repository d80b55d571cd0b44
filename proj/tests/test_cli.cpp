#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "toy.hpp"

namespace {

namespace fs = std::filesystem;

int run(const std::string& args) {
  const std::string cmd = std::string(IKEREV_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Small enough that the whole pipeline runs in a few seconds.
fs::path tiny_config(const fs::path& dir) {
  nlohmann::json j = {
      {"corpus", {{"subjects", 12}, {"relations", 2}, {"objects-per-relation", 4}, {"pseudo-subjects", 6}, {"demos", 2}}},
      {"lm", {{"layers", 1}, {"heads", 2}, {"model-dim", 16}, {"context-length", 128}, {"steps", 12}, {"batch-rows", 2}}},
      {"detector", {{"train-size", 12}, {"test-size", 8}, {"demos", 2}}},
      {"reversal",
       {{"m-list", {1}}, {"seeds", {1, 2, 3}}, {"epochs", 1}, {"demos", 2}, {"train-edits", 6}, {"validation-edits", 3},
        {"test-edits", 6}, {"k", 3}}},
      {"analysis", {{"prompts", 4}}}};
  const auto path = dir / "run.json";
  std::ofstream(path) << j.dump(2);
  return path;
}

std::string common(const fs::path& config, const fs::path& out) {
  return "--config " + config.string() + " --out-dir " + out.string() + " --seed 3";
}

TEST(Cli, MissingConfigIsValidationError) {
  EXPECT_EQ(run("gen-corpus --config /nonexistent/run.json"), 1);
}

TEST(Cli, UnknownConfigKeyIsValidationError) {
  const auto dir = toy::temp_dir("cli-badkey");
  std::ofstream(dir / "run.json") << R"({"lm": {"layer": 2}})";
  EXPECT_EQ(run("gen-corpus --config " + (dir / "run.json").string()), 1);
}

TEST(Cli, BadArgumentsAreValidationErrors) {
  const auto dir = toy::temp_dir("cli-badargs");
  const auto out = (dir / "out").string();
  EXPECT_EQ(run("reverse --mode sideways --out-dir " + out), 1);
  EXPECT_EQ(run("reverse --mode discrete --ablation no-kl --lambda 1 --out-dir " + out), 1);
  EXPECT_EQ(run("reverse --m 0 --out-dir " + out), 1);
  EXPECT_EQ(run("analyze everything --out-dir " + out), 1);
  EXPECT_EQ(run("gen-corpus --no-such-flag"), 1);
}

TEST(Cli, MissingUpstreamArtifactIsValidationError) {
  const auto dir = toy::temp_dir("cli-missing");
  EXPECT_EQ(run("detect eval --out-dir " + (dir / "out").string()), 1);
  EXPECT_EQ(run("train-lm --out-dir " + (dir / "out").string()), 1);
}

TEST(Cli, CorruptCheckpointIsRuntimeError) {
  const auto dir = toy::temp_dir("cli-corrupt");
  const auto config = tiny_config(dir);
  const auto out = dir / "out";
  ASSERT_EQ(run("gen-corpus " + common(config, out)), 0);
  std::ofstream(out / "model.ckpt") << "definitely not a checkpoint";
  EXPECT_EQ(run("analyze shift " + common(config, out)), 2);
}

std::map<std::string, std::string> pipeline(const fs::path& dir) {
  const auto config = tiny_config(dir);
  const auto out = dir / "out";
  const auto args = common(config, out);
  for (const std::string step : {"gen-corpus", "train-lm", "detect build-data", "detect train", "detect eval",
                                 "reverse --mode continuous", "reverse --mode discrete",
                                 "reverse --mode discrete --ablation no-kl --lambda 0.5", "analyze all"}) {
    EXPECT_EQ(run(step + " " + args), 0) << step;
  }
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(out)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), out).string()] = read_file(e.path());
  }
  return files;
}

TEST(Cli, TinyPipelineRunsAndIsByteIdenticalOnRerun) {
  const auto a = pipeline(toy::temp_dir("cli-run-a"));
  const auto b = pipeline(toy::temp_dir("cli-run-b"));
  for (const char* name : {"corpus.jsonl", "model.ckpt", "detector.json", "detection_metrics.csv",
                           "reversal/continuous_summary.csv", "reversal/discrete_summary.csv",
                           "reversal/discrete-no-kl_summary.csv", "reversal/probe.json", "analysis/shift.csv",
                           "analysis/ranks.csv", "analysis/attention.csv"}) {
    EXPECT_TRUE(a.contains(name)) << name;
  }
  // Edit episodes span two text lines and must survive as single documents.
  std::istringstream pretrain(a.at("pretrain.jsonl"));
  std::size_t episodes = 0;
  for (std::string line; std::getline(pretrain, line);) {
    const auto doc = nlohmann::json::parse(line).get<std::string>();
    if (!doc.starts_with("New Fact:")) continue;
    ++episodes;
    EXPECT_NE(doc.find("\nPrompt: "), std::string::npos) << doc;
  }
  EXPECT_GT(episodes, 0u);
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [name, content] : a) {
    ASSERT_TRUE(b.contains(name)) << name;
    EXPECT_TRUE(content == b.at(name)) << name << " differs between identical runs";
  }
}

}  // namespace
