#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ikerev/error.hpp"
#include "ikerev/lm/inference.hpp"
#include "ikerev/reversal/select.hpp"
#include "ikerev/reversal/tokens.hpp"
#include "ikerev/reversal/tune.hpp"

namespace ikerev::reversal {

struct SummaryStats {
  double max = 0.0;
  double mean = 0.0;
  double std = 0.0;  // population
};

inline SummaryStats summarize(std::span<const double> values) {
  require(!values.empty(), "summarize: no values");
  SummaryStats s;
  s.max = *std::max_element(values.begin(), values.end());
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  for (double v : values) s.std += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(values.size()));
  return s;
}

// No-reversal reference for a test set: edited top-1 and edit success per example.
struct Baseline {
  std::vector<int> original;
  std::vector<int> edited;
  std::vector<bool> success;
  double accuracy = 0.0;      // IKE vs no-IKE
  double success_rate = 0.0;  // edited top-1 = counterfact
};

template <typename T>
Baseline compute_baseline(const lm::Transformer<T>& model, std::span<const ReversalExample> test) {
  require(!test.empty(), "reversal eval: empty test set");
  Baseline b;
  b.original = original_top1(test);
  b.edited = reversed_top1(model, test, std::span<const RevToken>{}, true);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    b.success.push_back(b.edited[i] == test[i].edit.counterfact);
    hits += b.success.back() ? 1 : 0;
  }
  b.accuracy = matching_accuracy(b.edited, b.original);
  b.success_rate = static_cast<double>(hits) / static_cast<double>(test.size());
  return b;
}

struct SeedResult {
  std::uint64_t seed = 0;
  double edited = 0.0;             // p_edit r p vs p
  double edited_successful = 0.0;  // same, restricted to successfully edited instances
  double normal = 0.0;             // r p vs p
};

struct ReversalEvalReport {
  std::string setting;
  int m = 1;
  double baseline = 0.0;
  double edit_success_rate = 0.0;
  std::vector<SeedResult> seeds;
  SummaryStats edited;
  SummaryStats normal;
};

template <typename T>
SeedResult evaluate_token_set(const lm::Transformer<T>& model, const ReversalTokenSet& set,
                              std::span<const ReversalExample> test, const Baseline& baseline) {
  validate(set, model.config().model_dim, model.config().specials, model.config().vocab_size);
  const auto rev = set.tokens();
  const auto edited = reversed_top1(model, test, std::span<const RevToken>(rev), true);
  const auto normal = reversed_top1(model, test, std::span<const RevToken>(rev), false);
  SeedResult r;
  r.seed = set.seed;
  r.edited = matching_accuracy(edited, baseline.original);
  r.normal = matching_accuracy(normal, baseline.original);
  std::size_t n = 0, hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (!baseline.success[i]) continue;
    ++n;
    hits += edited[i] == baseline.original[i] ? 1 : 0;
  }
  r.edited_successful = n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n);
  return r;
}

// Test facts must be disjoint from the facts the tokens were tuned on.
template <typename T>
ReversalEvalReport eval_reversal(const lm::Transformer<T>& model, std::span<const ReversalTokenSet> sets,
                                 std::span<const ReversalExample> test, const Baseline& baseline,
                                 const std::string& setting) {
  require(!sets.empty(), "eval_reversal: no token sets");
  require(!test.empty(), "eval_reversal: empty test set");
  ReversalEvalReport report;
  report.setting = setting;
  report.m = sets.front().m;
  report.baseline = baseline.accuracy;
  report.edit_success_rate = baseline.success_rate;
  std::vector<double> edited, normal;
  for (const auto& set : sets) {
    require(set.m == report.m, "eval_reversal: token sets disagree on m");
    report.seeds.push_back(evaluate_token_set(model, set, test, baseline));
    edited.push_back(report.seeds.back().edited);
    normal.push_back(report.seeds.back().normal);
  }
  report.edited = summarize(edited);
  report.normal = summarize(normal);
  return report;
}

inline std::string format_fraction(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

inline const char* kReversalCsvHeader = "setting,#rt,seed,edited-acc,normal-acc,baseline-acc,edited-acc-successful\n";

inline std::string reversal_csv(std::span<const ReversalEvalReport> reports) {
  std::ostringstream os;
  os << kReversalCsvHeader;
  for (const auto& r : reports) {
    for (const auto& s : r.seeds) {
      os << r.setting << ',' << r.m << ',' << s.seed << ',' << format_fraction(s.edited) << ','
         << format_fraction(s.normal) << ',' << format_fraction(r.baseline) << ','
         << format_fraction(s.edited_successful) << '\n';
    }
  }
  return os.str();
}

inline std::string reversal_summary_csv(std::span<const ReversalEvalReport> reports) {
  std::ostringstream os;
  os << "setting,#rt,edited-max,edited-mean,edited-std,normal-max,normal-mean,normal-std,baseline-acc,edit-success\n";
  for (const auto& r : reports) {
    os << r.setting << ',' << r.m << ',' << format_fraction(r.edited.max) << ',' << format_fraction(r.edited.mean)
       << ',' << format_fraction(r.edited.std) << ',' << format_fraction(r.normal.max) << ','
       << format_fraction(r.normal.mean) << ',' << format_fraction(r.normal.std) << ','
       << format_fraction(r.baseline) << ',' << format_fraction(r.edit_success_rate) << '\n';
  }
  return os.str();
}

}  // namespace ikerev::reversal
