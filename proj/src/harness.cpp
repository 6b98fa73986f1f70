#include "fplab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "fplab/io.hpp"
#include "fplab/splitmix.hpp"

#ifndef FPLAB_VERSION
#define FPLAB_VERSION "0.0.0"
#endif

namespace fplab {

namespace fs = std::filesystem;

std::string_view arch_name(ArchProfile a) { return a == ArchProfile::ArchA ? "archA" : "archB"; }

std::optional<ArchProfile> parse_arch(std::string_view name) {
  if (name == "archA" || name == "A" || name == "a") return ArchProfile::ArchA;
  if (name == "archB" || name == "B" || name == "b") return ArchProfile::ArchB;
  return std::nullopt;
}

void RunConfig::validate() const {
  if (device_count != 2 && device_count != 4) {
    throw std::invalid_argument("run config: device_count must be 2 or 4, got " + std::to_string(device_count));
  }
  if (batch_size != 8 && batch_size != 16 && batch_size != 32) {
    throw std::invalid_argument("run config: batch_size must be 8, 16 or 32, got " + std::to_string(batch_size));
  }
}

std::string RunConfig::id() const {
  return std::string(arch_name(arch)) + "-tp" + std::to_string(device_count) + "-bs" + std::to_string(batch_size);
}

std::vector<RunConfig> config_matrix(const PrecisionPolicy& policy) {
  std::vector<RunConfig> out;
  for (auto arch : {ArchProfile::ArchA, ArchProfile::ArchB}) {
    for (std::uint32_t dev : {2u, 4u}) {
      for (std::uint32_t bs : {8u, 16u, 32u}) out.push_back({arch, dev, bs, policy});
    }
  }
  return out;
}

ReductionSchedule schedule_for(const RunConfig& config) {
  config.validate();
  ReductionSchedule s;
  s.split_k = config.device_count;
  s.block_size = config.batch_size == 8 ? 32 : config.batch_size == 16 ? 64 : 128;
  s.combine_order =
      config.arch == ArchProfile::ArchA ? CombineOrder::SequentialAscending : CombineOrder::PairwiseTree;
  return s;
}

void SweepSpec::validate() const {
  model.validate();
  if (max_new_tokens == 0) throw std::invalid_argument("sweep spec: max_new_tokens must be >= 1");
  if (policies.empty()) throw std::invalid_argument("sweep spec: no policies");
  if (prompts.empty() && (prompt_count == 0 || prompt_length == 0)) {
    throw std::invalid_argument("sweep spec: no prompts");
  }
  for (std::size_t i = 0; i < policies.size(); ++i) {
    for (std::size_t j = i + 1; j < policies.size(); ++j) {
      if (policies[i] == policies[j]) throw std::invalid_argument("sweep spec: duplicate policy " + policies[i].name());
    }
  }
  if (sampling) {
    if (sampling->n == 0) throw std::invalid_argument("sweep spec: sampling.n must be >= 1");
    SamplingParams{SamplingMode::TopP, sampling->temperature, sampling->top_p, sampling->seed}.validate();
  }
}

std::vector<std::vector<TokenId>> SweepSpec::resolved_prompts() const {
  if (!prompts.empty()) return prompts;
  return generate_prompts(prompt_seed, prompt_count, prompt_length, model.vocab_size);
}

nlohmann::json to_json(const SweepSpec& s) {
  nlohmann::json j;
  j["model"] = to_json(s.model);
  if (!s.prompts.empty()) {
    j["prompts"] = s.prompts;
  } else {
    j["prompt_seed"] = s.prompt_seed;
    j["prompt_count"] = s.prompt_count;
    j["prompt_length"] = s.prompt_length;
  }
  j["max_new_tokens"] = s.max_new_tokens;
  auto pol = nlohmann::json::array();
  for (const auto& p : s.policies) pol.push_back(p.name());
  j["policies"] = pol;
  if (s.sampling) {
    j["sampling"] = {{"n", s.sampling->n},
                     {"temperature", s.sampling->temperature},
                     {"top_p", s.sampling->top_p},
                     {"seed", s.sampling->seed}};
  } else {
    j["sampling"] = nullptr;
  }
  j["output_dir"] = s.output_dir.string();
  return j;
}

SweepSpec sweep_spec_from_json(const nlohmann::json& j) {
  SweepSpec s;
  try {
    if (j.contains("model")) s.model = model_config_from_json(j["model"]);
    if (j.contains("prompts") && !j["prompts"].is_null()) s.prompts = j["prompts"].get<std::vector<std::vector<TokenId>>>();
    s.prompt_seed = j.value("prompt_seed", s.prompt_seed);
    s.prompt_count = j.value("prompt_count", s.prompt_count);
    s.prompt_length = j.value("prompt_length", s.prompt_length);
    s.max_new_tokens = j.value("max_new_tokens", s.max_new_tokens);
    if (j.contains("policies")) {
      s.policies.clear();
      for (const auto& p : j["policies"]) s.policies.push_back(parse_policy(p.get<std::string>()));
    }
    if (j.contains("sampling") && !j["sampling"].is_null()) {
      SamplingSpec ss;
      const auto& sj = j["sampling"];
      ss.n = sj.value("n", ss.n);
      ss.temperature = sj.value("temperature", ss.temperature);
      ss.top_p = sj.value("top_p", ss.top_p);
      ss.seed = sj.value("seed", ss.seed);
      s.sampling = ss;
    }
    if (j.contains("output_dir")) s.output_dir = j["output_dir"].get<std::string>();
    s.threads = j.value("threads", s.threads);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("sweep spec: ") + e.what());
  }
  s.validate();
  return s;
}

std::vector<std::vector<TokenId>> generate_prompts(std::uint64_t seed, std::size_t count, std::size_t length,
                                                   std::uint32_t vocab_size) {
  if (vocab_size < 2) throw std::invalid_argument("prompts: vocab_size must be >= 2");
  SplitMix64 rng(seed);
  std::vector<std::vector<TokenId>> out(count, std::vector<TokenId>(length));
  for (auto& p : out) {
    for (auto& t : p) t = static_cast<TokenId>(1 + rng.next_below(vocab_size - 1));
  }
  return out;
}

GenerationTrace golden_run(const WeightSet& weights, const std::vector<TokenId>& prompt, std::size_t max_new_tokens) {
  auto t = greedy_decode(weights, prompt, max_new_tokens, PrecisionPolicy::reference(), ReductionSchedule::canonical());
  t.run_config_id = "golden";
  return t;
}

GenerationTrace golden_run(const SweepSpec& spec, std::size_t example) {
  spec.validate();
  const auto prompts = spec.resolved_prompts();
  if (example >= prompts.size()) throw std::invalid_argument("golden_run: example index out of range");
  auto t = golden_run(init_weights(spec.model), prompts[example], spec.max_new_tokens);
  t.example = static_cast<std::int64_t>(example);
  return t;
}

ConfigTraces run_config(const WeightSet& weights, const std::vector<std::vector<TokenId>>& prompts,
                        const RunConfig& config, std::size_t max_new_tokens,
                        const std::optional<SamplingSpec>& sampling) {
  const auto schedule = schedule_for(config);
  auto dec = make_decoder(weights, config.policy, schedule);
  ConfigTraces out;
  for (std::size_t e = 0; e < prompts.size(); ++e) {
    auto t = greedy_decode(*dec, prompts[e], max_new_tokens);
    t.run_config_id = config.id();
    t.example = static_cast<std::int64_t>(e);
    out.greedy.push_back(std::move(t));
    if (!sampling) continue;
    for (std::size_t r = 0; r < sampling->n; ++r) {
      // One seed per (example, run); identical across configs so only
      // numerics separate the sampled traces of different configs.
      SplitMix64 seeder(sampling->seed ^ (0x9e3779b97f4a7c15ull * (e + 1)));
      std::uint64_t run_seed = 0;
      for (std::size_t k = 0; k <= r; ++k) run_seed = seeder.next();
      SamplingParams params{SamplingMode::TopP, sampling->temperature, sampling->top_p, run_seed};
      auto st = sample_decode(*dec, prompts[e], max_new_tokens, params);
      st.run_config_id = config.id();
      st.example = static_cast<std::int64_t>(e);
      st.run = static_cast<std::int64_t>(r);
      out.sampled.push_back(std::move(st));
    }
  }
  return out;
}

namespace {

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path greedy_path(const fs::path& root, const std::string& policy, const std::string& config) {
  return root / "traces" / policy / (config + ".jsonl");
}

fs::path sampled_path(const fs::path& root, const std::string& policy, const std::string& config) {
  return root / "traces" / policy / (config + ".sampled.jsonl");
}

std::string config_hash(const RunConfig& c) {
  nlohmann::json j = {{"policy", c.policy.name()}, {"config", c.id()}, {"schedule", to_json(schedule_for(c))}};
  return fnv1a_hex(j.dump());
}

// Correctness of a trace against the golden final token.
bool correct(const GenerationTrace& t, TokenId golden_final) { return !t.tokens.empty() && t.tokens.back() == golden_final; }

std::vector<std::vector<bool>> sampled_correctness(const std::vector<std::vector<GenerationTrace>>& sampled_per_config,
                                                   const std::vector<TokenId>& golden_final) {
  std::vector<std::vector<bool>> out;
  for (const auto& traces : sampled_per_config) {
    std::vector<bool> row;
    for (const auto& t : traces) row.push_back(correct(t, golden_final.at(static_cast<std::size_t>(t.example))));
    out.push_back(std::move(row));
  }
  return out;
}

// Group per-config greedy trace lists into per-example sets.
std::vector<TraceSet> by_example(const std::vector<std::vector<GenerationTrace>>& per_config, std::size_t n_examples) {
  std::vector<TraceSet> out(n_examples);
  for (const auto& traces : per_config) {
    for (const auto& t : traces) {
      if (t.example < 0 || static_cast<std::size_t>(t.example) >= n_examples) {
        throw IoError("trace for config " + t.run_config_id + " has example index " + std::to_string(t.example) +
                      " outside 0.." + std::to_string(n_examples - 1));
      }
      out[static_cast<std::size_t>(t.example)].push_back(t);
    }
  }
  for (std::size_t e = 0; e < n_examples; ++e) {
    if (out[e].size() != per_config.size()) {
      throw IoError("example " + std::to_string(e) + " has " + std::to_string(out[e].size()) + " traces, expected " +
                    std::to_string(per_config.size()));
    }
  }
  return out;
}

DivergenceReport policy_report(const std::string& policy, const std::vector<std::vector<GenerationTrace>>& greedy,
                               const std::vector<std::vector<GenerationTrace>>& sampled,
                               const std::vector<TokenId>& golden_final, bool with_sampling) {
  const auto examples = by_example(greedy, golden_final.size());
  std::optional<std::vector<std::vector<bool>>> sc;
  if (with_sampling) sc = sampled_correctness(sampled, golden_final);
  return build_report(policy, examples, golden_final, sc);
}

class Manifest {
 public:
  Manifest(fs::path path, nlohmann::json doc) : path_(std::move(path)), doc_(std::move(doc)) {}

  void save() {
    std::lock_guard lock(mu_);
    write_file_atomic(path_, doc_.dump(2) + "\n");
  }

  bool complete(const std::string& cell, const fs::path& root) {
    std::lock_guard lock(mu_);
    if (!doc_["cells"].contains(cell)) return false;
    const auto& c = doc_["cells"][cell];
    if (c.value("status", "") != "complete") return false;
    for (const auto& f : c["files"].items()) {
      const fs::path p = root / f.key();
      if (!fs::exists(p) || fnv1a_hex(read_file(p)) != f.value().get<std::string>()) return false;
    }
    return true;
  }

  void mark_complete(const std::string& cell, const std::map<std::string, std::string>& file_hashes) {
    {
      std::lock_guard lock(mu_);
      auto& c = doc_["cells"][cell];
      c["status"] = "complete";
      c["files"] = file_hashes;
      doc_["updated_at"] = now_utc();
    }
    save();
  }

 private:
  fs::path path_;
  nlohmann::json doc_;
  std::mutex mu_;
};

}  // namespace

SweepResult run_sweep(const SweepSpec& spec) {
  spec.validate();
  const fs::path root = spec.output_dir;
  const auto prompts = spec.resolved_prompts();
  const WeightSet weights = init_weights(spec.model);
  const nlohmann::json spec_json = to_json(spec);
  const std::string spec_hash = fnv1a_hex(spec_json.dump());

  // Manifest first: reuse cell status only when the spec is unchanged.
  const fs::path manifest_path = root / "manifest.json";
  nlohmann::json doc;
  if (fs::exists(manifest_path)) {
    try {
      doc = nlohmann::json::parse(read_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(manifest_path.string() + ": " + e.what());
    }
    if (doc.value("spec_hash", "") != spec_hash) doc = nlohmann::json();
  }
  if (doc.is_null()) {
    doc["created_at"] = now_utc();
    doc["cells"] = nlohmann::json::object();
  }
  doc["format_version"] = 1;
  doc["artifact_version"] = FPLAB_VERSION;
  doc["spec"] = spec_json;
  doc["spec_hash"] = spec_hash;
  doc["weights_checksum"] = fnv1a_hex(std::to_string(weights_checksum(weights)));
  doc["seeds"] = {{"weight_seed", spec.model.weight_seed},
                  {"prompt_seed", spec.prompts.empty() ? nlohmann::json(spec.prompt_seed) : nlohmann::json()},
                  {"sampling_seed", spec.sampling ? nlohmann::json(spec.sampling->seed) : nlohmann::json()}};
  doc["n_examples"] = prompts.size();
  doc["prompts"] = prompts;
  auto policies = nlohmann::json::array();
  for (const auto& p : spec.policies) {
    nlohmann::json pj;
    pj["name"] = p.name();
    pj["weight_storage"] = std::string(format_name(p.weight_storage()));
    pj["compute_format"] = std::string(format_name(p.compute_format()));
    pj["kv_cache_storage"] = std::string(format_name(p.kv_cache_storage()));
    pj["resident_bytes"] = resident_bytes(weights.element_count(),
                                          2ull * spec.model.n_layers * spec.model.max_seq_len * spec.model.d_model, p);
    auto configs = nlohmann::json::array();
    for (const auto& c : config_matrix(p)) {
      configs.push_back({{"id", c.id()},
                         {"arch", std::string(arch_name(c.arch))},
                         {"device_count", c.device_count},
                         {"batch_size", c.batch_size},
                         {"schedule", to_json(schedule_for(c))},
                         {"hash", config_hash(c)}});
    }
    pj["configs"] = configs;
    policies.push_back(pj);
  }
  doc["policies"] = policies;
  Manifest manifest(manifest_path, doc);
  manifest.save();

  struct Cell {
    std::string key;
    std::optional<RunConfig> config;  // empty = golden
  };
  std::vector<Cell> cells{{"golden", std::nullopt}};
  for (const auto& p : spec.policies) {
    for (const auto& c : config_matrix(p)) cells.push_back({p.name() + "/" + c.id(), c});
  }

  std::vector<std::optional<ConfigTraces>> produced(cells.size());
  std::vector<GenerationTrace> golden_traces;
  std::atomic<std::size_t> next{0}, ran{0}, skipped{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      const Cell& cell = cells[i];
      try {
        if (manifest.complete(cell.key, root)) {
          ++skipped;
          continue;
        }
        std::map<std::string, std::string> hashes;
        if (!cell.config) {
          std::vector<GenerationTrace> golden;
          for (std::size_t e = 0; e < prompts.size(); ++e) {
            auto t = golden_run(weights, prompts[e], spec.max_new_tokens);
            t.example = static_cast<std::int64_t>(e);
            golden.push_back(std::move(t));
          }
          const auto text = to_jsonl(golden);
          write_file_atomic(root / "golden.jsonl", text);
          hashes["golden.jsonl"] = fnv1a_hex(text);
          golden_traces = std::move(golden);
        } else {
          const auto& c = *cell.config;
          auto traces = run_config(weights, prompts, c, spec.max_new_tokens, spec.sampling);
          const auto gp = greedy_path(root, c.policy.name(), c.id());
          const auto text = to_jsonl(traces.greedy);
          write_file_atomic(gp, text);
          hashes[fs::relative(gp, root).generic_string()] = fnv1a_hex(text);
          if (spec.sampling) {
            const auto sp = sampled_path(root, c.policy.name(), c.id());
            const auto stext = to_jsonl(traces.sampled);
            write_file_atomic(sp, stext);
            hashes[fs::relative(sp, root).generic_string()] = fnv1a_hex(stext);
          }
          produced[i] = std::move(traces);
        }
        manifest.mark_complete(cell.key, hashes);
        ++ran;
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::size_t threads = spec.threads ? spec.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, cells.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);

  // Inline reports use the traces produced in this run; cells skipped on
  // resume are read back from disk.
  if (golden_traces.empty()) golden_traces = read_jsonl(root / "golden.jsonl");
  std::vector<TokenId> golden_final(prompts.size());
  for (const auto& g : golden_traces) golden_final.at(static_cast<std::size_t>(g.example)) = g.tokens.back();

  SweepResult result;
  std::size_t cell = 1;
  for (const auto& p : spec.policies) {
    std::vector<std::vector<GenerationTrace>> greedy, sampled;
    for (const auto& c : config_matrix(p)) {
      auto& slot = produced[cell++];
      if (!slot) {
        ConfigTraces loaded;
        loaded.greedy = read_jsonl(greedy_path(root, p.name(), c.id()));
        if (spec.sampling) loaded.sampled = read_jsonl(sampled_path(root, p.name(), c.id()));
        slot = std::move(loaded);
      }
      greedy.push_back(std::move(slot->greedy));
      sampled.push_back(std::move(slot->sampled));
    }
    auto report = policy_report(p.name(), greedy, sampled, golden_final, spec.sampling.has_value());
    write_file_atomic(root / "reports" / (report.policy + ".json"), to_json(report).dump(2) + "\n");
    result.reports.push_back(std::move(report));
  }
  result.cells_run = ran;
  result.cells_skipped = skipped;
  return result;
}

AnalysisResult analyze(const fs::path& trace_dir, const AnalyzeOptions& options) {
  const fs::path manifest_path = trace_dir / "manifest.json";
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest_path.string() + ": " + e.what());
  }
  const std::size_t n_examples = doc.at("n_examples").get<std::size_t>();
  const bool with_sampling = !doc["spec"]["sampling"].is_null();

  const fs::path golden_path = trace_dir / "golden.jsonl";
  if (!fs::exists(golden_path)) throw IoError(golden_path.string() + ": golden traces missing");
  const auto golden = read_jsonl(golden_path);
  if (golden.size() != n_examples) {
    throw IoError(golden_path.string() + ": " + std::to_string(golden.size()) + " traces, expected " +
                  std::to_string(n_examples));
  }
  std::vector<TokenId> golden_final(n_examples);
  for (const auto& g : golden) {
    if (g.example < 0 || static_cast<std::size_t>(g.example) >= n_examples || g.tokens.empty()) {
      throw IoError(golden_path.string() + ": bad golden record");
    }
    golden_final[static_cast<std::size_t>(g.example)] = g.tokens.back();
  }

  AnalysisResult result;
  const auto edges = uniform_edges(options.histogram_bins);
  for (const auto& pj : doc.at("policies")) {
    const std::string policy = pj.at("name").get<std::string>();
    std::vector<std::vector<GenerationTrace>> greedy, sampled;
    std::vector<GenerationTrace> all_greedy;
    for (const auto& cj : pj.at("configs")) {
      const std::string id = cj.at("id").get<std::string>();
      const auto gp = greedy_path(trace_dir, policy, id);
      if (!fs::exists(gp)) throw IoError("missing traces for config " + policy + "/" + id + " (" + gp.string() + ")");
      auto traces = read_jsonl(gp);
      if (traces.size() != n_examples) {
        throw IoError(gp.string() + ": " + std::to_string(traces.size()) + " traces for config " + id + ", expected " +
                      std::to_string(n_examples));
      }
      for (const auto& t : traces) {
        if (t.run_config_id != id) throw IoError(gp.string() + ": record labelled " + t.run_config_id);
      }
      all_greedy.insert(all_greedy.end(), traces.begin(), traces.end());
      greedy.push_back(std::move(traces));
      if (with_sampling) {
        const auto sp = sampled_path(trace_dir, policy, id);
        if (!fs::exists(sp)) {
          throw IoError("missing sampled traces for config " + policy + "/" + id + " (" + sp.string() + ")");
        }
        sampled.push_back(read_jsonl(sp));
      }
    }
    if (greedy.size() != 12) {
      throw IoError(manifest_path.string() + ": policy " + policy + " lists " + std::to_string(greedy.size()) +
                    " configs, expected 12");
    }
    result.reports.push_back(policy_report(policy, greedy, sampled, golden_final, with_sampling));
    result.histograms[policy] = prob_gap_histogram(all_greedy, edges);
  }
  if (options.export_dir) export_analysis(result, *options.export_dir);
  return result;
}

void export_analysis(const AnalysisResult& result, const fs::path& dir) {
  for (const auto& r : result.reports) {
    write_file_atomic(dir / (r.policy + ".json"), to_json(r).dump(2) + "\n");
    write_file_atomic(dir / ("div_index_" + r.policy + ".csv"), div_index_csv(r));
    write_file_atomic(dir / ("accuracy_" + r.policy + ".csv"), accuracy_csv(r));
    const auto it = result.histograms.find(r.policy);
    if (it != result.histograms.end()) {
      write_file_atomic(dir / ("gap_histogram_" + r.policy + ".csv"), histogram_csv(it->second));
    }
  }
}

bool DemoReport::ok() const {
  return std::all_of(checks.begin(), checks.end(), [](const DemoCheck& c) { return c.ok(); });
}

DemoReport demo_nonassoc() {
  DemoReport rep;
  std::ostringstream out;

  out << "Rounding of 1.00012\n";
  out << "  format  exact decimal value                  rounding error\n";
  struct Row {
    Format f;
    const char* decimal;
  };
  // Exact expansions of the rounded values.
  const Row rows[] = {{Format::FP32, "1.00012004375457763671875"}, {Format::FP16, "1.0"}, {Format::BF16, "1.0"}};
  const double truth = 1.00012;
  for (const auto& row : rows) {
    const auto v = parse_decimal("1.00012", row.f);
    const auto dec = exact_decimal(v);
    const double err = rounding_error(v, truth);
    char ebuf[32];
    std::snprintf(ebuf, sizeof ebuf, "%+.3g", err);
    out << "  " << format_name(row.f) << "    " << dec << std::string(dec.size() < 37 ? 37 - dec.size() : 1, ' ')
        << ebuf << "\n";
    rep.checks.push_back({std::string("1.00012 as ") + std::string(format_name(row.f)), row.decimal, dec});
  }

  struct Sum {
    const char* label;
    const char* a;
    const char* b;
    const char* c;
    // order: 0 = a+b+c, 1 = a+c+b
    const char* fp32[2];
    const char* bf16[2];
  };
  const Sum sums[] = {
      {"a, b, c = 0.1, -0.1, 0.2", "0.1", "-0.1", "0.2",
       {"00111110010011001100110011001101", "00111110010011001100110011001110"},
       {"0011111001001101", "0011111001001110"}},
      {"a, b, c = 0.0016, 0.0027, 1.0", "0.0016", "0.0027", "1.0",
       {"00111111100000001000110011100111", "00111111100000001000110011100111"},
       {"0011111110000001", "0011111110000000"}},
  };
  out << "\nSummation order\n";
  out << "  example                         order      fp32                              bf16\n";
  for (const auto& s : sums) {
    for (int order = 0; order < 2; ++order) {
      std::string got[2];
      int fi = 0;
      for (Format f : {Format::FP32, Format::BF16}) {
        const ScalarBits vals[3] = {parse_decimal(s.a, f), parse_decimal(s.b, f), parse_decimal(s.c, f)};
        const std::size_t perm[2][3] = {{0, 1, 2}, {0, 2, 1}};
        got[fi++] = bit_string(reduce_permuted(vals, perm[order], f));
      }
      const char* order_label = order == 0 ? "a + b + c" : "a + c + b";
      out << "  " << s.label << std::string(32 - std::string(s.label).size(), ' ') << order_label << "  " << got[0]
          << "  " << got[1] << "\n";
      rep.checks.push_back({std::string(s.label) + " " + order_label + " fp32", s.fp32[order], got[0]});
      rep.checks.push_back({std::string(s.label) + " " + order_label + " bf16", s.bf16[order], got[1]});
    }
  }
  out << "\n";
  for (const auto& c : rep.checks) {
    if (!c.ok()) out << "MISMATCH " << c.label << ": expected " << c.expected << ", got " << c.actual << "\n";
  }
  out << (rep.ok() ? "self-test: ok\n" : "self-test: FAILED\n");
  rep.text = out.str();
  return rep;
}

}  // namespace fplab
