// fplab: command-line front end for the reproducibility lab.
//
// Exit codes: 0 success, 1 usage error, 2 demo self-test mismatch, 3 I/O error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fplab/harness.hpp"
#include "fplab/io.hpp"

namespace {

constexpr int kUsage = 1;
constexpr int kSelfTest = 2;
constexpr int kIo = 3;

struct CommonFlags {
  std::string spec_path;
  std::vector<std::string> policies;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_new_tokens;
  std::optional<std::size_t> sample_n;
  double temperature = 0.7;
  double top_p = 0.95;
  std::optional<std::size_t> prompt_count;
  std::optional<std::size_t> threads;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--spec", f.spec_path, "Sweep spec JSON file")->check(CLI::ExistingFile);
  cmd->add_option("--policy", f.policies, "Precision policy: bf16, fp16, fp32, layercast, layercast-kvbf16, fp64");
  cmd->add_option("--out", f.out, "Output location");
  cmd->add_option("--seed", f.seed, "Model weight seed");
  cmd->add_option("--max-new-tokens", f.max_new_tokens, "Generated tokens per prompt");
  cmd->add_option("--sample-n", f.sample_n, "Seeded top-p runs per prompt and config (0 disables)");
  cmd->add_option("--temperature", f.temperature, "Sampling temperature")->capture_default_str();
  cmd->add_option("--top-p", f.top_p, "Nucleus mass")->capture_default_str();
  cmd->add_option("--prompts", f.prompt_count, "Number of seeded prompts");
  cmd->add_option("--threads", f.threads, "Worker threads (0 = all cores)");
}

fplab::SweepSpec build_spec(const CommonFlags& f) {
  fplab::SweepSpec spec;
  if (!f.spec_path.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(fplab::read_file(f.spec_path));
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(f.spec_path + ": " + e.what());
    }
    spec = fplab::sweep_spec_from_json(j);
  }
  if (!f.policies.empty()) {
    spec.policies.clear();
    for (const auto& p : f.policies) spec.policies.push_back(fplab::parse_policy(p));
  }
  if (!f.out.empty()) spec.output_dir = f.out;
  if (f.seed) spec.model.weight_seed = *f.seed;
  if (f.max_new_tokens) spec.max_new_tokens = *f.max_new_tokens;
  if (f.prompt_count) {
    spec.prompts.clear();
    spec.prompt_count = *f.prompt_count;
  }
  if (f.threads) spec.threads = *f.threads;
  if (f.sample_n) {
    if (*f.sample_n == 0) {
      spec.sampling.reset();
    } else {
      fplab::SamplingSpec s = spec.sampling.value_or(fplab::SamplingSpec{});
      s.n = *f.sample_n;
      s.temperature = f.temperature;
      s.top_p = f.top_p;
      spec.sampling = s;
    }
  }
  spec.validate();
  return spec;
}

void print_reports(const std::vector<fplab::DivergenceReport>& reports) {
  std::printf("%-18s %8s %11s %10s %18s %12s %14s\n", "policy", "configs", "div_percent", "div_index",
              "avg_std_top1_prob", "std_acc", "avg_std_length");
  for (const auto& r : reports) {
    std::printf("%-18s %8zu %11.4f %10.2f %18.6e %12.6f %14.6f\n", r.policy.c_str(), r.n_configs, r.div_percent,
                r.div_index, r.avg_std_top1_prob, r.std_acc, r.avg_std_output_length);
    if (r.pass_at_1) std::printf("%-18s pass@1 mean %.4f std %.6f\n", "", r.pass_at_1->mean, r.pass_at_1->std);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fplab: floating-point reproducibility lab for LLM inference"};
  app.require_subcommand(1);

  auto* demo = app.add_subcommand("demo-nonassoc", "Print and self-check the rounding and summation-order demos");

  CommonFlags run_flags;
  std::string arch = "archA";
  std::uint32_t devices = 2, batch = 8;
  auto* run = app.add_subcommand("run", "Decode every prompt under a single runtime configuration");
  add_common(run, run_flags);
  run->add_option("--arch", arch, "archA or archB")->capture_default_str();
  run->add_option("--devices", devices, "Device count (2 or 4)")->capture_default_str();
  run->add_option("--batch-size", batch, "Batch size (8, 16 or 32)")->capture_default_str();

  CommonFlags sweep_flags;
  auto* sweep = app.add_subcommand("sweep", "Run the full policy x 12-configuration matrix");
  add_common(sweep, sweep_flags);

  std::string analyze_dir, analyze_out;
  std::size_t bins = 20;
  auto* analyze = app.add_subcommand("analyze", "Recompute reports from persisted traces");
  analyze->add_option("trace_dir", analyze_dir, "Sweep output directory")->required();
  analyze->add_option("--out", analyze_out, "Also export JSON/CSV here");
  analyze->add_option("--bins", bins, "Gap histogram bins")->capture_default_str();

  std::string report_dir, report_out;
  std::size_t report_bins = 20;
  auto* report = app.add_subcommand("report", "Export reports as JSON and CSV");
  report->add_option("trace_dir", report_dir, "Sweep output directory")->required();
  report->add_option("--out", report_out, "Export directory (default <trace_dir>/exports)");
  report->add_option("--bins", report_bins, "Gap histogram bins")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (demo->parsed()) {
      const auto rep = fplab::demo_nonassoc();
      std::cout << rep.text;
      return rep.ok() ? 0 : kSelfTest;
    }
    if (run->parsed()) {
      const auto spec = build_spec(run_flags);
      const auto a = fplab::parse_arch(arch);
      if (!a) throw std::invalid_argument("unknown arch '" + arch + "'");
      if (spec.policies.size() != 1) throw std::invalid_argument("run takes exactly one --policy");
      fplab::RunConfig cfg{*a, devices, batch, spec.policies.front()};
      cfg.validate();
      const auto weights = fplab::init_weights(spec.model);
      const auto traces = fplab::run_config(weights, spec.resolved_prompts(), cfg, spec.max_new_tokens, spec.sampling);
      std::string text = fplab::to_jsonl(traces.greedy) + fplab::to_jsonl(traces.sampled);
      if (run_flags.out.empty()) {
        std::cout << text;
      } else {
        fplab::write_file_atomic(run_flags.out, text);
        std::cerr << "wrote " << traces.greedy.size() + traces.sampled.size() << " traces for " << cfg.id() << " to "
                  << run_flags.out << "\n";
      }
      return 0;
    }
    if (sweep->parsed()) {
      const auto spec = build_spec(sweep_flags);
      const auto result = fplab::run_sweep(spec);
      std::cerr << "cells run " << result.cells_run << ", skipped " << result.cells_skipped << ", output "
                << spec.output_dir.string() << "\n";
      print_reports(result.reports);
      return 0;
    }
    if (analyze->parsed()) {
      fplab::AnalyzeOptions opts;
      opts.histogram_bins = bins;
      if (!analyze_out.empty()) opts.export_dir = analyze_out;
      const auto result = fplab::analyze(analyze_dir, opts);
      print_reports(result.reports);
      return 0;
    }
    if (report->parsed()) {
      fplab::AnalyzeOptions opts;
      opts.histogram_bins = report_bins;
      const auto result = fplab::analyze(report_dir, opts);
      const std::filesystem::path out =
          report_out.empty() ? std::filesystem::path(report_dir) / "exports" : std::filesystem::path(report_out);
      fplab::export_analysis(result, out);
      std::cout << "exported " << result.reports.size() << " policy reports to " << out.string() << "\n";
      return 0;
    }
  } catch (const fplab::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
