// Acceptance suite: one PASS/FAIL line per criterion.
//   fplab_acceptance [--criterion N]...

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fplab/harness.hpp"
#include "fplab/io.hpp"
#include "fplab/splitmix.hpp"
#include "mpfr_oracle.hpp"

using namespace fplab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("fplab_accept_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<ReductionSchedule> twelve_schedules() {
  std::vector<ReductionSchedule> out;
  for (const auto& c : config_matrix(PrecisionPolicy::pure_fp32())) out.push_back(schedule_for(c));
  return out;
}

// 1: three-term sums.
Outcome summation_bits() {
  const auto rep = demo_nonassoc();
  std::ostringstream d;
  bool ok = true;
  int sum_checks = 0;
  for (const auto& c : rep.checks) {
    if (c.label.rfind("a, b, c", 0) != 0) continue;
    ++sum_checks;
    if (!c.ok()) {
      ok = false;
      d << c.label << " got " << c.actual << "; ";
    }
  }
  // Second example: FP32 agrees across orders, BF16 differs in the last bit only.
  const auto v = [](const char* s, Format f) { return parse_decimal(s, f); };
  for (Format f : {Format::FP32, Format::BF16}) {
    const ScalarBits xs[3] = {v("0.0016", f), v("0.0027", f), v("1.0", f)};
    const std::size_t o1[3] = {0, 1, 2}, o2[3] = {0, 2, 1};
    const auto r1 = reduce_permuted(xs, o1, f).bits(), r2 = reduce_permuted(xs, o2, f).bits();
    if (f == Format::FP32 && r1 != r2) ok = false, d << "fp32 orders differ; ";
    if (f == Format::BF16 && (r1 ^ r2) != 1) ok = false, d << "bf16 orders not last-bit apart; ";
  }
  if (sum_checks != 8) ok = false;
  d << sum_checks << " bit strings compared";
  return {ok, d.str()};
}

// 2: rounding of 1.00012.
Outcome decimal_expansion() {
  std::ostringstream d;
  bool ok = true;
  const auto f32 = parse_decimal("1.00012", Format::FP32);
  const std::string dec = exact_decimal(f32);
  const std::string want_prefix = "1.00012004375457761";
  if (dec.rfind(want_prefix, 0) != 0) {
    ok = false;
    d << "expansion " << dec << " does not begin " << want_prefix << "; ";
  }
  const double err = rounding_error(f32, 1.00012);
  const double rel = std::abs(err - 4.38e-8) / 4.38e-8;
  if (rel > 1e-3) {
    ok = false;
    d << "error " << fmt("%.6e", err) << " is " << fmt("%.3e", rel) << " relative from 4.38e-8; ";
  }
  for (Format f : {Format::FP16, Format::BF16}) {
    if (parse_decimal("1.00012", f).to_double() != 1.0) {
      ok = false;
      d << format_name(f) << " not 1.0; ";
    }
  }
  if (ok) d << "fp32 " << dec << ", error " << fmt("%.4e", err);
  return {ok, d.str()};
}

// 3: correctly rounded half-precision arithmetic.
Outcome correct_rounding() {
  std::uint64_t cases = 0, bad = 0;
  std::ostringstream first;
  const auto check = [&](const char* what, const ScalarBits& got, double want, Format f, std::uint64_t a,
                         std::uint64_t b) {
    ++cases;
    if (got.bits() == encode(want, f).bits()) return;
    if (bad++ == 0) first << "first mismatch " << what << " " << std::hex << a << " " << b << std::dec << "; ";
  };
  {
    oracle::MpfrFormat o(Format::BF16);
    SplitMix64 rng(31);
    std::vector<ScalarBits> partners;
    for (std::uint64_t j = 0; j < 256; ++j) partners.push_back(ScalarBits::from_bits(Format::BF16, (j << 8) | rng.next_below(256)));
    for (std::uint64_t a = 0; a < 65536; ++a) {
      const auto x = ScalarBits::from_bits(Format::BF16, a);
      const double xd = x.to_double();
      for (const auto& y : partners) {
        const double yd = y.to_double();
        check("bf16 add", add(x, y, Format::BF16), o.add(xd, yd), Format::BF16, a, y.bits());
        check("bf16 mul", mul(x, y, Format::BF16), o.mul(xd, yd), Format::BF16, a, y.bits());
      }
    }
  }
  {
    oracle::MpfrFormat o(Format::FP16);
    SplitMix64 rng(32);
    for (int i = 0; i < 1000000; ++i) {
      const auto x = ScalarBits::from_bits(Format::FP16, rng.next_below(65536));
      const auto y = ScalarBits::from_bits(Format::FP16, rng.next_below(65536));
      const bool use_add = i % 2 == 0;
      const double want = use_add ? o.add(x.to_double(), y.to_double()) : o.mul(x.to_double(), y.to_double());
      check(use_add ? "fp16 add" : "fp16 mul", use_add ? add(x, y, Format::FP16) : mul(x, y, Format::FP16), want,
            Format::FP16, x.bits(), y.bits());
    }
  }
  std::ostringstream d;
  d << first.str() << bad << " mismatches in " << cases << " cases";
  return {bad == 0 && cases >= 16777216 + 1000000, d.str()};
}

// 4: scheduled sums against the permutation spread.
Outcome permutation_oracle() {
  std::vector<ReductionSchedule> schedules;
  for (std::uint64_t k : {1, 2, 3, 4}) {
    for (auto order : {CombineOrder::SequentialAscending, CombineOrder::SequentialDescending, CombineOrder::PairwiseTree}) {
      for (std::uint64_t b : {std::uint64_t{1}, std::uint64_t{2}, ReductionSchedule::kWholeChunk}) {
        schedules.push_back({k, b, order, std::nullopt});
        schedules.push_back({k, b, order, 1000 + k * 7 + b});
      }
    }
  }
  SplitMix64 rng(41);
  std::size_t runs = 0, outside = 0, outside_assoc = 0, max_bf16_spread = 0;
  std::ostringstream first;
  for (Format f : {Format::BF16, Format::FP16, Format::FP32}) {
    for (int t = 0; t < 100; ++t) {
      std::vector<ScalarBits> v;
      for (int i = 0; i < 5; ++i) {
        const double mag = (0.5 + rng.next_unit()) * std::ldexp(1.0, static_cast<int>(rng.next_below(9)) - 4);
        v.push_back(encode(rng.next_below(2) ? mag : -mag, f));
      }
      const auto spread = enumerate_order_spread(v, f);
      const auto assoc = enumerate_association_spread(v, f);
      if (f == Format::BF16) max_bf16_spread = std::max(max_bf16_spread, spread.size());
      for (const auto& s : schedules) {
        ++runs;
        const auto r = reduce_scheduled(v, s, f).value;
        if (std::find(spread.begin(), spread.end(), r) == spread.end()) {
          if (outside++ == 0) {
            first << "e.g. " << format_name(f) << " split_k " << s.split_k << " " << combine_order_name(s.combine_order)
                  << "; ";
          }
        }
        if (std::find(assoc.begin(), assoc.end(), r) == assoc.end()) ++outside_assoc;
      }
    }
  }
  std::ostringstream d;
  d << outside << "/" << runs << " scheduled sums outside the left-fold spread (" << first.str() << outside_assoc
    << " outside the association spread), max bf16 spread " << max_bf16_spread;
  return {outside == 0 && max_bf16_spread >= 2, d.str()};
}

// 5: LayerCast against FP32 on rounded weights.
Outcome layercast_equivalence() {
  SplitMix64 rng(51);
  const auto schedules = twelve_schedules();
  std::size_t cmp = 0, bad = 0;
  const auto random_tensor = [&](std::vector<std::size_t> shape, double scale) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    std::vector<double> vals(n);
    for (auto& x : vals) x = (2 * rng.next_unit() - 1) * scale;
    return Tensor::from_values(std::move(shape), Format::FP32, vals);
  };
  for (int t = 0; t < 200; ++t) {
    const std::size_t m = 1 + rng.next_below(4), k = 1 + rng.next_below(300), n = 1 + rng.next_below(8);
    const auto a = random_tensor({m, k}, 1.0);
    const auto w16 = random_tensor({k, n}, 0.1).converted(Format::BF16);
    const auto widened = w16.converted(Format::FP32);
    for (const auto& s : schedules) {
      ++cmp;
      bad += !matmul(a, w16, PrecisionPolicy::layercast(), s)
                  .bitwise_equal(matmul(a, widened, PrecisionPolicy::pure_fp32(), s));
    }
  }
  const auto w = init_weights(ModelConfig{});
  const auto r = rounded_weights(w, Format::BF16);
  const auto prompts = generate_prompts(52, 3, 12, w.config.vocab_size);
  for (const auto& p : prompts) {
    for (const auto& s : schedules) {
      ++cmp;
      bad += !forward(w, p, PrecisionPolicy::layercast(), s).bitwise_equal(forward(r, p, PrecisionPolicy::pure_fp32(), s));
    }
  }
  std::ostringstream d;
  d << bad << " differing outputs in " << cmp << " comparisons (200 matmuls and 3 forward passes, 12 schedules each)";
  return {bad == 0, d.str()};
}

std::vector<fs::path> output_files(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") out.push_back(fs::relative(e.path(), root));
  }
  std::sort(out.begin(), out.end());
  return out;
}

// 6: byte-identical reruns.
Outcome determinism() {
  TempDir d1("det1"), d2("det2");
  SweepSpec s;
  s.prompt_count = 8;
  s.max_new_tokens = 16;
  s.sampling = SamplingSpec{2, 0.7, 0.95, 61};
  s.output_dir = d1.path;
  s.threads = 1;
  auto s2 = s;
  s2.output_dir = d2.path;
  s2.threads = 3;
  run_sweep(s);
  run_sweep(s2);
  const auto files = output_files(d1.path);
  std::size_t differ = 0;
  if (files != output_files(d2.path)) return {false, "file sets differ"};
  for (const auto& f : files) differ += read_file(d1.path / f) != read_file(d2.path / f);

  // Seeded sampling on its own.
  const auto w = init_weights(s.model);
  const auto p = generate_prompts(62, 1, 8, s.model.vocab_size)[0];
  const SamplingParams sp{SamplingMode::TopP, 0.7, 0.95, 63};
  const ReductionSchedule sched{2, 32, CombineOrder::PairwiseTree, std::nullopt};
  const auto t1 = sample_decode(w, p, 24, PrecisionPolicy::pure_bf16(), sched, sp);
  const auto t2 = sample_decode(w, p, 24, PrecisionPolicy::pure_bf16(), sched, sp);
  const bool sampled_same = to_json(t1).dump() == to_json(t2).dump();

  std::ostringstream d;
  d << differ << " of " << files.size() << " files differ between two sweeps (1 vs 3 threads); repeated sampling "
    << (sampled_same ? "identical" : "differs");
  return {differ == 0 && sampled_same, d.str()};
}

// 7: precision ordering on the default sweep.
Outcome precision_ordering() {
  TempDir dir("order");
  SweepSpec s;
  s.output_dir = dir.path;
  const auto r = run_sweep(s);
  const auto get = [&](const std::string& name) -> const DivergenceReport& {
    return *std::find_if(r.reports.begin(), r.reports.end(), [&](const auto& x) { return x.policy == name; });
  };
  const auto &bf = get("bf16"), &hf = get("fp16"), &f32 = get("fp32"), &lc = get("layercast");
  const bool ok = bf.div_percent > f32.div_percent && bf.avg_std_top1_prob > hf.avg_std_top1_prob &&
                  hf.avg_std_top1_prob > f32.avg_std_top1_prob && lc.div_percent <= f32.div_percent + 0.02;
  std::ostringstream d;
  d << s.resolved_prompts().size() << " prompts; div_percent bf16 " << bf.div_percent << " fp16 " << hf.div_percent
    << " fp32 " << f32.div_percent << " layercast " << lc.div_percent << "; avg_std_top1_prob bf16 "
    << fmt("%.3e", bf.avg_std_top1_prob) << " fp16 " << fmt("%.3e", hf.avg_std_top1_prob) << " fp32 "
    << fmt("%.3e", f32.avg_std_top1_prob);
  return {ok, d.str()};
}

GenerationTrace make_trace(std::vector<TokenId> tokens, std::vector<float> top1) {
  GenerationTrace t;
  t.prompt = {1};
  t.tokens = std::move(tokens);
  t.top1_prob = std::move(top1);
  return t;
}

// 8: metric oracles.
Outcome metric_oracles() {
  SplitMix64 rng(81);
  std::size_t div_bad = 0, std_bad = 0, fixtures_bad = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t configs = 2 + rng.next_below(11);
    std::vector<TokenId> base;
    for (std::size_t i = 0, n = 1 + rng.next_below(12); i < n; ++i) base.push_back(1 + rng.next_below(4));
    TraceSet set;
    for (std::size_t c = 0; c < configs; ++c) {
      auto toks = base;
      if (rng.next_below(3) == 0) {
        toks.resize(rng.next_below(toks.size() + 1));
        for (std::size_t i = 0, e = rng.next_below(4); i < e; ++i) toks.push_back(1 + rng.next_below(4));
      }
      set.push_back(make_trace(toks, std::vector<float>(toks.size(), 0.5f)));
    }
    std::optional<std::size_t> want;
    for (std::size_t i = 0; i < set.size(); ++i) {
      for (std::size_t j = i + 1; j < set.size(); ++j) {
        const auto& a = set[i].tokens;
        const auto& b = set[j].tokens;
        std::optional<std::size_t> m;
        const std::size_t n = std::min(a.size(), b.size());
        for (std::size_t p = 0; p < n && !m; ++p) {
          if (a[p] != b[p]) m = p;
        }
        if (!m && a.size() != b.size()) m = n;
        if (m && (!want || *m < *want)) want = m;
      }
    }
    div_bad += div_index(set) != want;
  }
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> xs(2 + rng.next_below(30));
    const double scale = std::ldexp(1.0, static_cast<int>(rng.next_below(40)) - 20);
    for (auto& x : xs) x = (rng.next_unit() + (t % 3 == 0 ? 1000.0 : 0.0)) * scale;
    const double want = oracle::big_sample_std(xs);
    const double got = sample_std(xs);
    std_bad += want == 0 ? got != 0 : std::abs(got - want) > 1e-12 * want;
  }
  // Two-point fixtures: |a - b| / sqrt(2), correctly rounded.
  const double pairs[][2] = {{0.4, 0.6}, {0.0, 1.0}, {1.0, 3.0}, {0.25, 0.75}, {0.1, 0.3}};
  for (const auto& p : pairs) {
    const std::vector<double> xs = {p[0], p[1]};
    fixtures_bad += sample_std(xs) != oracle::two_point_std(p[0], p[1]);
  }
  const std::vector<double> acc = {0.5, 0.5, 0.5};
  fixtures_bad += std_acc(acc) != 0.0;
  std::ostringstream d;
  d << div_bad << "/1000 div_index, " << std_bad << "/2000 std, " << fixtures_bad << " fixture mismatches";
  return {div_bad == 0 && std_bad == 0 && fixtures_bad == 0, d.str()};
}

// 9: report conventions.
Outcome report_conventions() {
  TempDir dir("conv");
  SweepSpec s;
  s.model.vocab_size = 64;
  s.model.max_seq_len = 32;
  s.prompt_count = 5;
  s.max_new_tokens = 8;
  s.policies = {PrecisionPolicy::pure_bf16(), PrecisionPolicy::reference()};
  s.output_dir = dir.path;
  const auto r = run_sweep(s);
  std::ostringstream d;
  bool ok = true;
  const auto ref = nlohmann::json::parse(read_file(dir.path / "reports" / "fp64.json"));
  if (ref["div_index"] != -1) ok = false, d << "fp64 div_index " << ref["div_index"] << "; ";
  for (const auto& v : ref["per_example_div_index"]) {
    if (v != -1) ok = false;
  }
  for (const auto& rep : r.reports) {
    if (rep.n_configs != 12 || rep.config_ids.size() != 12) ok = false, d << rep.policy << " configs " << rep.n_configs << "; ";
  }
  const auto m = nlohmann::json::parse(read_file(dir.path / "manifest.json"));
  for (const auto& p : m["policies"]) {
    if (p["configs"].size() != 12) ok = false;
  }
  const auto a = analyze(dir.path);
  for (std::size_t i = 0; i < r.reports.size(); ++i) {
    if (to_json(a.reports.at(i)) != to_json(r.reports[i])) ok = false, d << r.reports[i].policy << " analyze differs; ";
  }
  if (ok) d << "sentinel -1, 12 configs per policy, analyze matches " << r.reports.size() << " inline reports";
  return {ok, d.str()};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fplab acceptance suite"};
  std::vector<int> which;
  app.add_option("--criterion,-c", which, "criterion number (repeatable); all when omitted")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all = {
      {1, "summation order bit strings", summation_bits},
      {2, "1.00012 decimal expansion", decimal_expansion},
      {3, "correct rounding vs MPFR", correct_rounding},
      {4, "scheduled sums within order spread", permutation_oracle},
      {5, "LayerCast equivalence", layercast_equivalence},
      {6, "determinism", determinism},
      {7, "precision ordering", precision_ordering},
      {8, "metric oracles", metric_oracles},
      {9, "report conventions", report_conventions},
  };
  int failed = 0;
  for (const auto& c : all) {
    if (!which.empty() && std::find(which.begin(), which.end(), c.id) == which.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d %s: %s (%.1fs) %s\n", c.id, o.pass ? "PASS" : "FAIL", c.name, secs, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
