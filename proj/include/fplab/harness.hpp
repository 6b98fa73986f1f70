#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fplab/kernels.hpp"
#include "fplab/metrics.hpp"
#include "fplab/model.hpp"
#include "fplab/reduction.hpp"
#include "json.hpp"

namespace fplab {

// Stand-ins for two accelerator generations. They differ only in how
// partial sums are merged; nothing else about hardware is modelled.
enum class ArchProfile : std::uint8_t { ArchA, ArchB };

std::string_view arch_name(ArchProfile a);
std::optional<ArchProfile> parse_arch(std::string_view name);

struct RunConfig {
  ArchProfile arch = ArchProfile::ArchA;
  std::uint32_t device_count = 2;  // 2 or 4
  std::uint32_t batch_size = 8;  // 8, 16 or 32
  PrecisionPolicy policy;

  void validate() const;
  // "archA-tp2-bs8"
  std::string id() const;
};

// The 2 x 2 x 3 runtime matrix for one policy, arch-major then device count
// then batch size.
std::vector<RunConfig> config_matrix(const PrecisionPolicy& policy);

// split_k = device_count; block_size 32/64/128 for batch 8/16/32;
// SequentialAscending on ArchA, PairwiseTree on ArchB; no pre-permutation.
ReductionSchedule schedule_for(const RunConfig& config);

struct SamplingSpec {
  std::size_t n = 4;  // sampled runs per prompt and config
  double temperature = 0.7;
  double top_p = 0.95;
  std::uint64_t seed = 0;
};

struct SweepSpec {
  ModelConfig model;
  // Explicit prompts; when empty, prompt_count prompts of prompt_length
  // tokens are drawn from prompt_seed.
  std::vector<std::vector<TokenId>> prompts;
  std::uint64_t prompt_seed = 1234;
  std::size_t prompt_count = 100;
  std::size_t prompt_length = 8;
  std::size_t max_new_tokens = 32;
  std::vector<PrecisionPolicy> policies = {PrecisionPolicy::pure_bf16(), PrecisionPolicy::pure_fp16(),
                                           PrecisionPolicy::pure_fp32(), PrecisionPolicy::layercast()};
  std::optional<SamplingSpec> sampling;
  std::filesystem::path output_dir = "sweep_out";
  // 0 = hardware concurrency.
  std::size_t threads = 0;

  // Throws std::invalid_argument on empty prompts/policies or max_new_tokens == 0.
  void validate() const;
  // Explicit prompts, or the seeded ones.
  std::vector<std::vector<TokenId>> resolved_prompts() const;
};

nlohmann::json to_json(const SweepSpec& s);
SweepSpec sweep_spec_from_json(const nlohmann::json& j);

// Prompt tokens are uniform over [1, vocab_size) so no prompt contains EOS.
std::vector<std::vector<TokenId>> generate_prompts(std::uint64_t seed, std::size_t count, std::size_t length,
                                                   std::uint32_t vocab_size);

// Greedy decode under the FP64 reference policy with the canonical schedule.
GenerationTrace golden_run(const SweepSpec& spec, std::size_t example);
GenerationTrace golden_run(const WeightSet& weights, const std::vector<TokenId>& prompt, std::size_t max_new_tokens);

// Greedy (and optionally sampled) traces of every prompt under one config.
struct ConfigTraces {
  std::vector<GenerationTrace> greedy;
  std::vector<GenerationTrace> sampled;  // example-major, then run
};
ConfigTraces run_config(const WeightSet& weights, const std::vector<std::vector<TokenId>>& prompts,
                        const RunConfig& config, std::size_t max_new_tokens,
                        const std::optional<SamplingSpec>& sampling);

struct SweepResult {
  std::vector<DivergenceReport> reports;  // spec.policies order
  std::size_t cells_run = 0;
  std::size_t cells_skipped = 0;
};

// Output layout under spec.output_dir:
//   manifest.json                         spec, seeds, config hashes, cell status
//   golden.jsonl                          reference traces
//   traces/<policy>/<config>.jsonl        greedy traces
//   traces/<policy>/<config>.sampled.jsonl
//   reports/<policy>.json
// A rerun with an identical spec skips cells the manifest marks complete and
// whose file hash still matches.
SweepResult run_sweep(const SweepSpec& spec);

struct AnalyzeOptions {
  std::size_t histogram_bins = 20;
  // When set, CSV/JSON exports are written here.
  std::optional<std::filesystem::path> export_dir;
};

struct AnalysisResult {
  std::vector<DivergenceReport> reports;
  std::map<std::string, GapHistogram> histograms;  // by policy name
};

// Recompute every report from persisted traces alone. Missing or malformed
// files raise IoError naming the file (and config).
AnalysisResult analyze(const std::filesystem::path& trace_dir, const AnalyzeOptions& options = {});

// Write <policy>.json, gap_histogram_<policy>.csv, div_index_<policy>.csv
// and accuracy_<policy>.csv into dir.
void export_analysis(const AnalysisResult& result, const std::filesystem::path& dir);

struct DemoCheck {
  std::string label;
  std::string expected;
  std::string actual;
  bool ok() const { return expected == actual; }
};

struct DemoReport {
  std::vector<DemoCheck> checks;
  std::string text;
  bool ok() const;
};

// Rounding of 1.00012 into FP32/FP16/BF16 and the two three-term sums in
// both orders, computed live and compared with embedded bit strings.
DemoReport demo_nonassoc();

}  // namespace fplab
