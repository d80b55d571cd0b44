// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero
// if any fails.
//
//   acceptance <work-dir> [--reuse]
//
// --reuse keeps an existing corpus and checkpoint in <work-dir>/main instead of retraining.

#include <malloc.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ikerev/pipeline.hpp"
#include "toy.hpp"

namespace {

namespace fs = std::filesystem;
namespace pl = ikerev::pipeline;
namespace rv = ikerev::reversal;

int failures = 0;

void report(const char* id, bool pass, const std::string& detail) {
  std::cout << id << " " << (pass ? "PASS" : "FAIL") << "  " << detail << std::endl;
  if (!pass) ++failures;
}

std::string f3(double v) { return pl::fmt(v, 3); }

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

pl::Logger timed_logger() {
  auto clock = std::make_shared<Stopwatch>();
  return [clock](const std::string& msg) { std::cerr << "[" << pl::fmt(clock->seconds(), 0) << "s] " << msg << std::endl; };
}

// ---- A6 / A7: oracle checks ------------------------------------------------------------

std::vector<double> random_distribution(ikerev::Rng& rng, std::size_t n) {
  std::vector<double> p(n);
  double sum = 0.0;
  for (auto& v : p) sum += v = ikerev::uniform_unit(rng) < 0.15 ? 0.0 : -std::log(ikerev::uniform_unit(rng) + 1e-300);
  if (sum == 0.0) p[0] = sum = 1.0;
  for (auto& v : p) v /= sum;
  return p;
}

double kl_worst_error() {
  ikerev::Rng rng(6001);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto n = 2 + ikerev::uniform_index(rng, 80);
    const auto p = random_distribution(rng, n), q = random_distribution(rng, n);
    long double oracle = 0.0L;
    for (std::size_t k = 0; k < n; ++k) {
      if (p[k] == 0.0) continue;
      oracle += static_cast<long double>(p[k]) *
                std::log(static_cast<long double>(p[k]) / std::max<long double>(q[k], 1e-12L));
    }
    worst = std::max(worst, std::abs(rv::kl_divergence(p, q) - static_cast<double>(oracle)));
  }
  return worst;
}

int exhaustive_mismatches() {
  const auto config = toy::config(24, 2);
  const auto model = toy::model<double>(config, 77, 0.4);
  const auto validation = toy::examples(model, 10, 5);
  ikerev::Rng rng(13);
  int mismatches = 0;
  for (int trial = 0; trial < 5; ++trial) {
    rv::Embeddings r(1);
    std::vector<double> a(8), b(8);
    for (std::size_t d = 0; d < 8; ++d) {
      r[0].push_back(ikerev::standard_normal(rng));
      a[d] = ikerev::standard_normal(rng);
      b[d] = a[d] + ikerev::standard_normal(rng);
    }
    rv::SelectOptions options;
    options.k = static_cast<std::size_t>(config.vocab_size);
    const auto chosen = rv::select_discrete(model, r, rv::dimension_weights(a, b), validation, options);
    int best = -1;
    double best_loss = std::numeric_limits<double>::infinity();
    for (int id = 0; id < config.vocab_size; ++id) {
      if (!config.specials.is_natural(id)) continue;
      const auto rev = rv::discrete_tokens(std::vector<int>{id});
      const double loss = rv::objective_value(model, validation, std::span<const rv::RevToken>(rev), rv::Objective{});
      if (loss < best_loss) {
        best_loss = loss;
        best = id;
      }
    }
    mismatches += chosen.at(0) == best ? 0 : 1;
  }
  return mismatches;
}

double detector_worst_gap() {
  std::ifstream in(std::string(IKEREV_FIXTURES) + "/detector_reference.json");
  const auto doc = nlohmann::json::parse(in);
  std::vector<ikerev::DetectionInstance> data;
  for (const auto& j : doc.at("instances")) {
    ikerev::DetectionInstance d;
    d.fact_id = j.at("fact-id");
    d.edited = j.at("edited");
    for (std::size_t k = 0; k < 10; ++k) d.features[k] = j.at("features")[k];
    data.push_back(d);
  }
  double worst = 0.0;
  for (const auto& s : doc.at("solutions")) {
    const auto model = ikerev::train_detector(data, s.at("reg-strength").get<double>(), 1);
    worst = std::max(worst, std::abs(ikerev::detector_objective(data, model) - s.at("objective").get<double>()));
  }
  return worst;
}

double weights_worst_error() {
  const auto w = rv::dimension_weights(std::vector<double>{0.0, 0.0, 0.0}, std::vector<double>{0.3, -0.1, 0.6});
  const double we[] = {0.3, 0.1, 0.6}, wbe[] = {2.0 / 9.0, 2.0 / 3.0, 1.0 / 9.0};
  double worst = 0.0;
  for (std::size_t i = 0; i < 3; ++i) worst = std::max({worst, std::abs(w.w[i] - we[i]), std::abs(w.w_bar[i] - wbe[i])});
  return worst;
}

double gradient_worst_relative_error() {
  using ikerev::lm::EmbeddingOverride;
  const auto c = toy::config(24);
  const auto model = toy::model<double>(c, 2718);
  ikerev::Rng rng(31);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto len = 2 + ikerev::uniform_index(rng, 14);
    const auto prompt = toy::random_ids(rng, c, len);
    std::vector<EmbeddingOverride<double>> overrides(1);
    overrides[0].position = ikerev::uniform_index(rng, len);
    for (int d = 0; d < c.model_dim; ++d) overrides[0].vector.push_back(0.5 * ikerev::standard_normal(rng));
    std::vector<double> a, b;
    for (int i = 0; i < c.vocab_size; ++i) {
      a.push_back(ikerev::standard_normal(rng));
      b.push_back(0.1 * ikerev::standard_normal(rng));
    }
    auto loss = [&](std::span<const double> p, std::span<const double> lp, std::span<double> g) {
      double v = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        v += a[i] * p[i] + b[i] * lp[i];
        g[i] = a[i] + b[i] / p[i];
      }
      return v;
    };
    auto value = [&](const std::vector<EmbeddingOverride<double>>& ov) {
      const auto d = ikerev::lm::next_token_distribution(model, std::span<const int>(prompt),
                                                         std::span<const EmbeddingOverride<double>>(ov));
      std::vector<double> g(d.size());
      return loss(d.probabilities, d.log_probabilities, g);
    };
    const auto result = ikerev::lm::embedding_gradients(model, std::span<const int>(prompt),
                                                        std::span<const EmbeddingOverride<double>>(overrides), loss);
    const double h = 1e-5;
    double diff = 0.0, ref = 0.0, got = 0.0;
    for (std::size_t d = 0; d < static_cast<std::size_t>(c.model_dim); ++d) {
      auto plus = overrides, minus = overrides;
      plus[0].vector[d] += h;
      minus[0].vector[d] -= h;
      const double fd = (value(plus) - value(minus)) / (2 * h);
      const double g = result.gradients.at(0).gradient[d];
      diff += (g - fd) * (g - fd);
      ref += fd * fd;
      got += g * g;
    }
    worst = std::max(worst, std::sqrt(diff) / std::max({std::sqrt(ref), std::sqrt(got), 1e-12}));
  }
  return worst;
}

// ---- pipeline helpers ------------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    files[fs::relative(e.path(), dir).string()] = os.str();
  }
  return files;
}

void full_pipeline(ikerev::RunConfig config, const pl::Logger& log) {
  pl::gen_corpus(config, log);
  pl::train_lm(config, log);
  pl::detect_build_data(config, log);
  pl::detect_train(config, log);
  pl::detect_eval(config, log);
  pl::reverse(config, log);
  config.reversal.mode = rv::Mode::kDiscrete;
  pl::reverse(config, log);
  pl::analyze(config, {"shift", "ranks", "attention"}, "bos", log);
}

double mean_over_m(const pl::ReverseResult& r, bool edited) {
  double s = 0.0;
  for (const auto& rep : r.reports) s += edited ? rep.edited.mean : rep.normal.mean;
  return s / static_cast<double>(r.reports.size());
}

int run(const fs::path& work, bool reuse) {
  const auto log = timed_logger();

  const double kl_err = kl_worst_error(), det_gap = detector_worst_gap(), w_err = weights_worst_error();
  const int mismatches = exhaustive_mismatches();
  report("A6", kl_err < 1e-9 && mismatches == 0 && det_gap < 1e-4 && w_err < 1e-9,
         "KL max err " + sci(kl_err) + ", exhaustive mismatches " + std::to_string(mismatches) +
             ", detector objective gap " + sci(det_gap) + ", w/w_bar max err " + sci(w_err));
  const double grad_err = gradient_worst_relative_error();
  report("A7", grad_err < 1e-3, "worst relative error " + sci(grad_err) + " over 10 triples (< 1e-3)");

  ikerev::RunConfig config;
  config.out_dir = (work / "main").string();
  config.validate();
  const pl::Paths paths{config.out_dir};

  pl::LMResult lm;
  if (reuse && fs::exists(paths.checkpoint()) && fs::exists(paths.lm_report())) {
    const auto j = nlohmann::json::parse(std::ifstream(paths.lm_report()));
    lm.recall = j.at("fact-recall");
    lm.edit_success = j.at("edit-success");
    log("reusing " + paths.checkpoint().string());
  } else {
    pl::gen_corpus(config, log);
    lm = pl::train_lm(config, log);
  }
  report("A1", lm.recall >= 0.95, "fact recall " + f3(lm.recall) + " (>= 0.95)");
  report("A2", lm.edit_success >= 0.90, "IKE edit success " + f3(lm.edit_success) + " (>= 0.90)");

  // Three detection seeds on the same checkpoint; the default seed runs last so its artifacts stay.
  std::vector<double> f1s;
  bool a3 = true;
  for (std::uint64_t seed : {2, 3, 1}) {
    auto c = config;
    c.global_seed = seed;
    pl::detect_build_data(c, log);
    pl::detect_train(c, log);
    const auto m = pl::detect_eval(c, log);
    f1s.push_back(m.f1.value_or(0.0));
    a3 = a3 && m.f1 && *m.f1 > 0.80;
  }
  report("A3", a3, "F1 over detection seeds 2,3,1: " + f3(f1s[0]) + ", " + f3(f1s[1]) + ", " + f3(f1s[2]) + " (> 0.80)");

  auto cont_cfg = config;
  cont_cfg.reversal.mode = rv::Mode::kContinuous;
  const auto cont = pl::reverse(cont_cfg, log);
  const double baseline = cont.baseline.accuracy;
  bool lift = true;
  std::string detail;
  for (const auto& r : cont.reports) {
    lift = lift && r.edited.mean - baseline >= 0.30;
    detail += "m=" + std::to_string(r.m) + " " + f3(r.edited.mean) + "±" + f3(r.edited.std) + "; ";
  }
  const auto& m1 = cont.reports.front();
  const auto& m10 = cont.reports.back();
  const bool stable = m10.edited.std < m1.edited.std || (m1.edited.std < 0.05 && m10.edited.std < 0.05);
  report("A4", lift && stable, detail + "baseline " + f3(baseline) + " (lift >= 0.30; std m=10 < m=1 or both < 0.05)");

  auto disc_cfg = config;
  disc_cfg.reversal.mode = rv::Mode::kDiscrete;
  const auto disc = pl::reverse(disc_cfg, log);
  const double cont_normal = mean_over_m(cont, false), disc_normal = mean_over_m(disc, false);
  bool preserve = true;
  for (const auto& r : cont.reports) preserve = preserve && r.normal.mean >= 0.80;
  report("A5", preserve && cont_normal >= disc_normal,
         "continuous preservation " + f3(cont_normal) + " (each m >= 0.80), discrete " + f3(disc_normal));

  auto analysis_cfg = config;
  const auto an = pl::analyze(analysis_cfg, {"shift", "ranks", "attention"}, "bos", log);
  const auto& h = *an.shift;
  const bool monotone = std::is_sorted(h.fractions.begin(), h.fractions.end()) && h.fractions.back() >= h.fractions.front();
  const double d_ike = ikerev::analysis::trajectory_l1(an.ranks[1], an.ranks[0]);
  const double d_rev = ikerev::analysis::trajectory_l1(an.ranks[2], an.ranks[0]);
  const auto& ike = an.attention[0];
  const auto& rev = an.attention[1];
  report("A8", monotone && d_rev < d_ike && rev.mean_mass > ike.mean_mass && rev.count >= 100,
         "shift k=1 " + f3(h.fractions.front()) + " k=10 " + f3(h.fractions.back()) + "; rank L1 to no-IKE: IKE " +
             f3(d_ike) + ", IKE+reversal " + f3(d_rev) + "; query attention " + f3(ike.mean_mass) + " -> " +
             f3(rev.mean_mass) + " over " + std::to_string(rev.count) + " prompts");

  // Reduced-size double run: every stage, same seed, separate directories.
  ikerev::RunConfig small;
  small.train.steps = 150;
  small.reversal.m_list = {1, 5};
  small.reversal.seeds = {1, 2};
  small.reversal.epochs = 1;
  small.reversal.train_edits = 32;
  small.reversal.validation_edits = 16;
  small.reversal.test_edits = 32;
  small.analysis.prompts = 32;
  std::map<std::string, std::string> runs[2];
  for (int i = 0; i < 2; ++i) {
    auto c = small;
    c.out_dir = (work / ("determinism-" + std::to_string(i))).string();
    fs::remove_all(c.out_dir);
    full_pipeline(c, log);
    runs[i] = snapshot(c.out_dir);
  }
  std::vector<std::string> differing;
  for (const auto& [name, content] : runs[0]) {
    if (!runs[1].contains(name) || runs[1].at(name) != content) differing.push_back(name);
  }
  const bool same_set = runs[0].size() == runs[1].size();
  report("A9", same_set && differing.empty() && runs[0].contains("model.ckpt"),
         std::to_string(runs[0].size()) + " artifacts compared, " + std::to_string(differing.size()) + " differ" +
             (differing.empty() ? "" : " (first: " + differing.front() + ")"));

  auto nokl_cfg = config;
  nokl_cfg.reversal.mode = rv::Mode::kDiscrete;
  nokl_cfg.reversal.ablation = rv::Ablation::kNoKl;
  const auto nokl = pl::reverse(nokl_cfg, log);
  bool collapsed = true;
  detail.clear();
  for (const auto& r : nokl.reports) {
    collapsed = collapsed && r.edited.mean <= nokl.baseline.accuracy + 0.05;
    detail += "m=" + std::to_string(r.m) + " " + f3(r.edited.mean) + "; ";
  }
  report("A10", collapsed, detail + "baseline " + f3(nokl.baseline.accuracy) + " (<= baseline + 0.05)");

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  const fs::path work = argc > 1 ? argv[1] : "acceptance_runs";
  const bool reuse = argc > 2 && std::string(argv[2]) == "--reuse";
  try {
    fs::create_directories(work);
    return run(work, reuse);
  } catch (const std::exception& e) {
    std::cout << "acceptance aborted: " << e.what() << std::endl;
    return 2;
  }
}
