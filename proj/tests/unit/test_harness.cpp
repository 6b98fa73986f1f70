#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "fplab/harness.hpp"
#include "fplab/io.hpp"
#include "fplab/softfloat.hpp"

using namespace fplab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("fplab_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

SweepSpec small_spec(const fs::path& out) {
  SweepSpec s;
  s.model.vocab_size = 48;
  s.model.d_model = 32;
  s.model.n_heads = 2;
  s.model.n_layers = 1;
  s.model.d_ff = 48;
  s.model.max_seq_len = 32;
  s.prompt_count = 4;
  s.prompt_length = 4;
  s.max_new_tokens = 8;
  s.policies = {PrecisionPolicy::pure_bf16(), PrecisionPolicy::pure_fp32()};
  s.output_dir = out;
  s.threads = 1;
  return s;
}

std::vector<fs::path> trace_files(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") out.push_back(fs::relative(e.path(), root));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("config matrix has twelve distinct schedules") {
  const auto configs = config_matrix(PrecisionPolicy::pure_bf16());
  REQUIRE(configs.size() == 12);
  std::set<std::string> ids, schedules;
  for (const auto& c : configs) {
    ids.insert(c.id());
    schedules.insert(to_json(schedule_for(c)).dump());
  }
  CHECK(ids.size() == 12);
  CHECK(schedules.size() == 12);
  CHECK(configs.front().id() == "archA-tp2-bs8");
  CHECK(configs.back().id() == "archB-tp4-bs32");
}

TEST_CASE("schedule_for mapping") {
  const auto a = schedule_for({ArchProfile::ArchA, 2, 8, PrecisionPolicy::pure_fp32()});
  CHECK(a.split_k == 2);
  CHECK(a.block_size == 32);
  CHECK(a.combine_order == CombineOrder::SequentialAscending);
  CHECK_FALSE(a.permutation_seed.has_value());

  const auto b = schedule_for({ArchProfile::ArchB, 4, 32, PrecisionPolicy::pure_fp32()});
  CHECK(b.split_k == 4);
  CHECK(b.block_size == 128);
  CHECK(b.combine_order == CombineOrder::PairwiseTree);

  CHECK(schedule_for({ArchProfile::ArchA, 4, 16, PrecisionPolicy::pure_fp32()}).block_size == 64);
}

TEST_CASE("run config validation and arch names") {
  CHECK_THROWS_AS(schedule_for({ArchProfile::ArchA, 3, 8, PrecisionPolicy::pure_fp32()}), std::invalid_argument);
  CHECK_THROWS_AS(schedule_for({ArchProfile::ArchA, 2, 12, PrecisionPolicy::pure_fp32()}), std::invalid_argument);
  CHECK(parse_arch("archB") == ArchProfile::ArchB);
  CHECK(parse_arch("A") == ArchProfile::ArchA);
  CHECK_FALSE(parse_arch("archC").has_value());
}

TEST_CASE("sweep spec json round trip and validation") {
  SweepSpec s = small_spec("out_x");
  s.sampling = SamplingSpec{3, 0.5, 0.9, 77};
  const auto back = sweep_spec_from_json(to_json(s));
  CHECK(back.model == s.model);
  CHECK(back.prompt_count == 4);
  CHECK(back.max_new_tokens == 8);
  REQUIRE(back.policies.size() == 2);
  CHECK(back.policies[0] == PrecisionPolicy::pure_bf16());
  REQUIRE(back.sampling.has_value());
  CHECK(back.sampling->n == 3);
  CHECK(back.sampling->top_p == doctest::Approx(0.9));
  CHECK(back.output_dir == fs::path("out_x"));
  CHECK(to_json(back) == to_json(s));

  auto bad = s;
  bad.max_new_tokens = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = s;
  bad.policies.clear();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = s;
  bad.policies = {PrecisionPolicy::pure_bf16(), PrecisionPolicy::pure_bf16()};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = s;
  bad.sampling->top_p = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_THROWS_AS(sweep_spec_from_json(nlohmann::json{{"policies", {"fp12"}}}), std::invalid_argument);
  CHECK_THROWS_AS(sweep_spec_from_json(nlohmann::json{{"max_new_tokens", "many"}}), std::invalid_argument);
}

TEST_CASE("prompts avoid eos and are seeded") {
  const auto p = generate_prompts(9, 200, 16, 10);
  for (const auto& prompt : p) {
    CHECK(prompt.size() == 16);
    for (auto t : prompt) {
      CHECK(t >= 1);
      CHECK(t < 10);
    }
  }
  CHECK(p == generate_prompts(9, 200, 16, 10));
  CHECK(p != generate_prompts(10, 200, 16, 10));
  CHECK_THROWS_AS(generate_prompts(1, 1, 1, 1), std::invalid_argument);
}

TEST_CASE("golden run is reproducible and never diverges from itself") {
  const auto spec = small_spec("unused");
  const auto g1 = golden_run(spec, 2);
  const auto g2 = golden_run(spec, 2);
  CHECK(g1 == g2);
  CHECK(g1.run_config_id == "golden");
  CHECK(g1.example == 2);
  const std::vector<GenerationTrace> pair = {g1, g2};
  CHECK_FALSE(div_index(pair).has_value());
  CHECK_THROWS_AS(golden_run(spec, 4), std::invalid_argument);
}

TEST_CASE("fp32 canonical agrees with golden final token") {
  // Default model, 100 prompts from seed 42, 32 new tokens.
  const ModelConfig cfg;
  const auto w = init_weights(cfg);
  const auto prompts = generate_prompts(42, 100, 8, cfg.vocab_size);
  int agree = 0;
  for (const auto& p : prompts) {
    const auto g = golden_run(w, p, 32);
    const auto t = greedy_decode(w, p, 32, PrecisionPolicy::pure_fp32(), ReductionSchedule::canonical());
    agree += t.tokens.back() == g.tokens.back();
  }
  // Measured 100/100.
  CHECK(agree >= 95);
}

TEST_CASE("layercast accuracy spread equals fp32 on rounded weights") {
  auto spec = small_spec("unused");
  spec.prompt_count = 6;
  const auto w = init_weights(spec.model);
  const auto wr = rounded_weights(w, Format::BF16);
  const auto prompts = spec.resolved_prompts();
  std::vector<TokenId> golden_final;
  for (const auto& p : prompts) golden_final.push_back(golden_run(w, p, spec.max_new_tokens).tokens.back());

  auto report_for = [&](const WeightSet& weights, const PrecisionPolicy& policy) {
    std::vector<TraceSet> examples(prompts.size());
    for (const auto& c : config_matrix(policy)) {
      auto ct = run_config(weights, prompts, c, spec.max_new_tokens, std::nullopt);
      for (std::size_t e = 0; e < prompts.size(); ++e) examples[e].push_back(ct.greedy[e]);
    }
    return build_report(policy.name(), examples, golden_final);
  };
  const auto lc = report_for(w, PrecisionPolicy::layercast());
  const auto fp = report_for(wr, PrecisionPolicy::pure_fp32());
  CHECK(lc.std_acc == fp.std_acc);
  CHECK(lc.accuracy_per_config == fp.accuracy_per_config);
  CHECK(lc.per_example_div_index == fp.per_example_div_index);
  CHECK(lc.avg_std_top1_prob == fp.avg_std_top1_prob);
}

TEST_CASE("sampled runs share seeds across configs") {
  const auto spec = small_spec("unused");
  const auto w = init_weights(spec.model);
  const auto prompts = spec.resolved_prompts();
  const SamplingSpec ss{2, 0.7, 0.95, 5};
  const auto configs = config_matrix(PrecisionPolicy::reference());
  const auto a = run_config(w, prompts, configs[0], spec.max_new_tokens, ss);
  const auto b = run_config(w, prompts, configs[7], spec.max_new_tokens, ss);
  REQUIRE(a.sampled.size() == prompts.size() * 2);
  // FP64 is far from any rounding-induced flip here, so the draws coincide.
  for (std::size_t i = 0; i < a.sampled.size(); ++i) {
    CHECK(a.sampled[i].tokens == b.sampled[i].tokens);
    CHECK(a.sampled[i].run == static_cast<std::int64_t>(i % 2));
  }
  CHECK(a.sampled[0].tokens != a.sampled[1].tokens);
}

TEST_CASE("sweep is deterministic, resumable and re-analyzable") {
  TempDir d1("sweep1"), d2("sweep2");
  auto s1 = small_spec(d1.path);
  s1.sampling = SamplingSpec{2, 0.7, 0.95, 3};
  auto s2 = s1;
  s2.output_dir = d2.path;

  const auto r1 = run_sweep(s1);
  CHECK(r1.cells_run == 1 + 2 * 12);
  CHECK(r1.cells_skipped == 0);
  const auto r2 = run_sweep(s2);

  const auto files = trace_files(d1.path);
  CHECK(files == trace_files(d2.path));
  CHECK(files.size() == 1 + 2 * 24 + 2);
  for (const auto& f : files) CHECK_MESSAGE(read_file(d1.path / f) == read_file(d2.path / f), f.string());

  SUBCASE("resume skips completed cells") {
    const auto r3 = run_sweep(s1);
    CHECK(r3.cells_run == 0);
    CHECK(r3.cells_skipped == 25);
    const fs::path victim = d1.path / "traces" / "bf16" / "archB-tp2-bs16.jsonl";
    const std::string before = read_file(victim);
    fs::remove(victim);
    const auto r4 = run_sweep(s1);
    CHECK(r4.cells_run == 1);
    CHECK(read_file(victim) == before);
    for (std::size_t i = 0; i < r1.reports.size(); ++i) CHECK(to_json(r4.reports[i]) == to_json(r1.reports[i]));
  }

  SUBCASE("changing the spec resets the manifest") {
    auto s3 = s1;
    s3.max_new_tokens = 6;
    const auto r3 = run_sweep(s3);
    CHECK(r3.cells_run == 25);
  }

  SUBCASE("analyze reproduces inline reports") {
    const fs::path exports = d1.path / "exports";
    const auto a = analyze(d1.path, {10, exports});
    REQUIRE(a.reports.size() == r1.reports.size());
    for (std::size_t i = 0; i < a.reports.size(); ++i) {
      CHECK(to_json(a.reports[i]) == to_json(r1.reports[i]));
      CHECK(to_json(a.reports[i]) == to_json(r2.reports[i]));
      CHECK(a.reports[i].pass_at_1.has_value());
    }
    CHECK(a.histograms.at("bf16").counts.size() == 10);
    for (const char* f : {"bf16.json", "div_index_bf16.csv", "accuracy_fp32.csv", "gap_histogram_fp32.csv"}) {
      CHECK_MESSAGE(fs::exists(exports / f), f);
    }
    const auto persisted = nlohmann::json::parse(read_file(d1.path / "reports" / "fp32.json"));
    CHECK(persisted == to_json(a.reports[1]));
  }

  SUBCASE("missing config traces name the config") {
    fs::remove(d1.path / "traces" / "fp32" / "archA-tp4-bs16.jsonl");
    try {
      analyze(d1.path);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("fp32/archA-tp4-bs16") != std::string::npos);
    }
  }

  SUBCASE("malformed trace line names file and line") {
    const fs::path p = d1.path / "traces" / "bf16" / "archA-tp2-bs8.jsonl";
    std::string text = read_file(p);
    const auto nl = text.find('\n');
    text.insert(nl + 1, "{not json\n");
    write_file_atomic(p, text);
    try {
      analyze(d1.path);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("archA-tp2-bs8.jsonl:2") != std::string::npos);
    }
  }

  SUBCASE("missing manifest") {
    fs::remove(d1.path / "manifest.json");
    CHECK_THROWS_AS(analyze(d1.path), IoError);
  }
}

TEST_CASE("manifest records provenance") {
  TempDir d("manifest");
  auto s = small_spec(d.path);
  s.policies = {PrecisionPolicy::layercast()};
  run_sweep(s);
  const auto m = nlohmann::json::parse(read_file(d.path / "manifest.json"));
  CHECK(m["weights_checksum"].is_string());
  CHECK(m["n_examples"] == 4);
  CHECK(m["prompts"].size() == 4);
  REQUIRE(m["policies"].size() == 1);
  const auto& p = m["policies"][0];
  CHECK(p["name"] == "layercast");
  CHECK(p["configs"].size() == 12);
  CHECK(p["configs"][0]["schedule"]["split_k"] == 2);
  CHECK(p["resident_bytes"].get<std::uint64_t>() > 0);
  CHECK(m["cells"].size() == 13);
  for (const auto& c : m["cells"]) CHECK(c["status"] == "complete");
}

TEST_CASE("report json uses -1 when nothing diverges") {
  TempDir d("sentinel");
  auto s = small_spec(d.path);
  s.policies = {PrecisionPolicy::reference()};
  const auto r = run_sweep(s);
  REQUIRE(r.reports.size() == 1);
  const auto j = nlohmann::json::parse(read_file(d.path / "reports" / "fp64.json"));
  CHECK(j["div_index"] == -1);
  CHECK(j["div_percent"] == 0.0);
  for (const auto& v : j["per_example_div_index"]) CHECK(v == -1);
  CHECK(j["std_acc"] == 0.0);
}

TEST_CASE("demo self-test passes") {
  const auto rep = demo_nonassoc();
  CHECK(rep.ok());
  CHECK(rep.checks.size() == 11);
  CHECK(rep.text.find("00111110010011001100110011001110") != std::string::npos);
  CHECK(rep.text.find("self-test: ok") != std::string::npos);
}

// io

TEST_CASE("tensor container round trip") {
  for (Format f : {Format::BF16, Format::FP16, Format::FP32, Format::FP64REF}) {
    const std::vector<double> vals = {1.0, -0.1, 3.5e-3, 0.0, -0.0, 65504.0, 1e-7};
    const auto t = Tensor::from_values({7}, f, vals);
    const auto bytes = encode_tensor(t);
    CHECK(bytes.size() == 1 + 8 + 8 + 7 * width_of(f) / 8);
    const auto back = decode_tensor(bytes);
    CHECK(back.bitwise_equal(t));
    CHECK(back.shape() == t.shape());

    auto trunc = bytes;
    trunc.pop_back();
    CHECK_THROWS_AS(decode_tensor(trunc), IoError);
    auto extra = bytes;
    extra.push_back(0);
    CHECK_THROWS_AS(decode_tensor(extra), IoError);
  }
  auto bytes = encode_tensor(Tensor::from_values({2, 2}, Format::FP32, std::vector<double>{1, 2, 3, 4}));
  CHECK(bytes[0] == 2);
  CHECK(bytes[1] == 2);  // rank, little-endian
  CHECK(bytes[9] == 2);
  CHECK(bytes.size() == 25 + 16);
  CHECK(bytes[27] == 0x80);
  CHECK(bytes[28] == 0x3f);  // 1.0f = 3f800000 little-endian
  bytes[0] = 9;
  CHECK_THROWS_AS(decode_tensor(bytes), IoError);
  CHECK_THROWS_AS(decode_tensor({}), IoError);

  TempDir d("tensor");
  const auto t = Tensor::from_values({3, 1}, Format::BF16, std::vector<double>{0.5, 0.25, -2});
  write_tensor(d.path / "t.bin", t);
  CHECK(read_tensor(d.path / "t.bin").bitwise_equal(t));
  CHECK_THROWS_AS(read_tensor(d.path / "nope.bin"), IoError);
}

TEST_CASE("fp32 hex") {
  CHECK(fp32_hex(1.0f) == "3f800000");
  CHECK(fp32_hex(-0.0f) == "80000000");
  CHECK(fp32_from_hex("3f800000") == 1.0f);
  for (float v : {0.1f, 1e-40f, 3.4e38f, 0.999999f}) CHECK(fp32_from_hex(fp32_hex(v)) == v);
  CHECK_THROWS_AS(fp32_from_hex("xyz"), IoError);
  CHECK_THROWS_AS(fp32_from_hex("3f80000"), IoError);
}

TEST_CASE("trace json round trip is exact") {
  const auto spec = small_spec("unused");
  const auto w = init_weights(spec.model);
  auto t = sample_decode(w, spec.resolved_prompts()[0], 8, PrecisionPolicy::pure_bf16(), ReductionSchedule::canonical(),
                         {SamplingMode::TopP, 0.7, 0.95, 11});
  t.run_config_id = "archA-tp2-bs8";
  t.example = 0;
  t.run = 1;
  const auto back = trace_from_json(to_json(t));
  CHECK(back == t);

  TempDir d("jsonl");
  const std::vector<GenerationTrace> traces = {t, back};
  write_file_atomic(d.path / "t.jsonl", to_jsonl(traces));
  CHECK(read_jsonl(d.path / "t.jsonl") == traces);
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}
