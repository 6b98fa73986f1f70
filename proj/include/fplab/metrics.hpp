#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fplab/model.hpp"
#include "json.hpp"

namespace fplab {

// Serialized value of "no divergence".
constexpr std::int64_t kNoDivergence = -1;

// One example's traces, one per runtime configuration.
using TraceSet = std::vector<GenerationTrace>;

// Sample (n - 1) standard deviation, two-pass over the sorted values, so
// the result is independent of input order. Throws for n < 2.
double sample_std(std::span<const double> xs);

// Length of the longest prefix shared by every trace's generated tokens;
// nullopt when all sequences are identical (same length included).
// Throws for fewer than two traces or differing prompts.
std::optional<std::size_t> div_index(std::span<const GenerationTrace> traces);

inline std::int64_t div_index_value(const std::optional<std::size_t>& d) {
  return d ? static_cast<std::int64_t>(*d) : kNoDivergence;
}

// Cross-config sample std of top1_prob at each position before the
// divergence index (the full common length when nothing diverges), averaged
// over positions, then over the examples that have at least one position.
double avg_std_top1_prob(std::span<const TraceSet> examples);

double std_acc(std::span<const double> accuracies);

// Per-example sample std of trace lengths across configs, averaged.
double avg_std_output_length(std::span<const TraceSet> examples);

struct PassAtOne {
  std::vector<double> per_config;
  double mean = 0.0;
  double std = 0.0;
};

// correctness[config][run]. Needs >= 2 configs and equal, non-zero run counts.
PassAtOne pass_at_1(const std::vector<std::vector<bool>>& correctness);

struct GapHistogram {
  std::vector<double> edges;  // bins.size() + 1 ascending edges spanning [0, 1]
  std::vector<std::uint64_t> counts;
  std::uint64_t total() const;
};

// Equal-width bins over [0, 1].
std::vector<double> uniform_edges(std::size_t bins);

// top1 - top2 probability per step, binned by [lo, hi) with the last bin
// closed. Throws if any step has fewer than two top-k entries or the edges
// do not span [0, 1].
GapHistogram prob_gap_histogram(std::span<const GenerationTrace> traces, std::span<const double> edges);

struct DivergenceReport {
  std::string policy;
  std::size_t n_configs = 0;
  std::size_t n_examples = 0;
  // Mean Div_Index over divergent examples; kNoDivergence when none diverge.
  double div_index = static_cast<double>(kNoDivergence);
  double div_percent = 0.0;
  double avg_std_top1_prob = 0.0;
  double std_acc = 0.0;
  double avg_std_output_length = 0.0;
  std::optional<PassAtOne> pass_at_1;
  std::vector<std::string> config_ids;
  std::vector<double> accuracy_per_config;
  std::vector<std::int64_t> per_example_div_index;
};

// Greedy traces per example (configs in the same order for every example)
// plus the golden final token per example. `sampled_correct`, when given, is
// correctness[config][run] for the sampled traces.
DivergenceReport build_report(const std::string& policy, std::span<const TraceSet> examples,
                              std::span<const TokenId> golden_final_tokens,
                              const std::optional<std::vector<std::vector<bool>>>& sampled_correct = std::nullopt);

nlohmann::json to_json(const DivergenceReport& r);

// CSV exports. Headers:
//   histogram:  bin_lo,bin_hi,count
//   divergence: example,div_index
//   accuracy:   config_id,accuracy[,pass_at_1]
std::string histogram_csv(const GapHistogram& h);
std::string div_index_csv(const DivergenceReport& r);
std::string accuracy_csv(const DivergenceReport& r);

}  // namespace fplab
