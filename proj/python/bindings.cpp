#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fplab/harness.hpp"
#include "fplab/io.hpp"

namespace py = pybind11;
using namespace fplab;

namespace {

Format fmt(const std::string& name) {
  const auto f = parse_format(name);
  if (!f) throw std::invalid_argument("unknown format: " + name);
  return *f;
}

ScalarBits bits_of(std::uint64_t bits, const std::string& format) { return ScalarBits::from_bits(fmt(format), bits); }

std::vector<ScalarBits> encode_all(const std::vector<double>& values, Format f) {
  std::vector<ScalarBits> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(encode(v, f));
  return out;
}

ReductionSchedule make_schedule(std::uint64_t split_k, std::optional<std::uint64_t> block_size,
                                const std::string& combine_order, std::optional<std::uint64_t> permutation_seed) {
  const auto order = parse_combine_order(combine_order);
  if (!order) throw std::invalid_argument("unknown combine order: " + combine_order);
  ReductionSchedule s{split_k, block_size.value_or(ReductionSchedule::kWholeChunk), *order, permutation_seed};
  s.validate();
  return s;
}

std::vector<double> doubles(const std::vector<ScalarBits>& v) {
  std::vector<double> out;
  for (const auto& x : v) out.push_back(x.to_double());
  return out;
}

std::string reports_json(const std::vector<DivergenceReport>& reports) {
  auto arr = nlohmann::json::array();
  for (const auto& r : reports) arr.push_back(to_json(r));
  return arr.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Floating-point reproducibility lab: soft formats, scheduled reductions, toy decoder, sweeps";

  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def(
      "encode", [](double v, const std::string& f) { return encode(v, fmt(f)).bits(); }, py::arg("value"),
      py::arg("format"), "Round a float into the format (nearest-even) and return its bit pattern.");
  m.def(
      "decode", [](std::uint64_t bits, const std::string& f) { return bits_of(bits, f).to_double(); }, py::arg("bits"),
      py::arg("format"));
  m.def(
      "round_value", [](double v, const std::string& f) { return round_value(v, fmt(f)); }, py::arg("value"),
      py::arg("format"));
  m.def(
      "parse_decimal", [](const std::string& text, const std::string& f) { return parse_decimal(text, fmt(f)).bits(); },
      py::arg("text"), py::arg("format"));
  m.def(
      "bit_string", [](std::uint64_t bits, const std::string& f) { return bit_string(bits_of(bits, f)); },
      py::arg("bits"), py::arg("format"));
  m.def(
      "exact_decimal", [](std::uint64_t bits, const std::string& f) { return exact_decimal(bits_of(bits, f)); },
      py::arg("bits"), py::arg("format"));
  m.def(
      "add", [](std::uint64_t a, std::uint64_t b, const std::string& f) {
        return add(bits_of(a, f), bits_of(b, f), fmt(f)).bits();
      },
      py::arg("a"), py::arg("b"), py::arg("format"));
  m.def(
      "mul", [](std::uint64_t a, std::uint64_t b, const std::string& f) {
        return mul(bits_of(a, f), bits_of(b, f), fmt(f)).bits();
      },
      py::arg("a"), py::arg("b"), py::arg("format"));

  m.def(
      "reduce",
      [](const std::vector<double>& values, const std::string& f, std::uint64_t split_k,
         std::optional<std::uint64_t> block_size, const std::string& combine_order,
         std::optional<std::uint64_t> permutation_seed) {
        const auto s = make_schedule(split_k, block_size, combine_order, permutation_seed);
        return reduce_scheduled(encode_all(values, fmt(f)), s, fmt(f)).value.to_double();
      },
      py::arg("values"), py::arg("format"), py::arg("split_k") = 1, py::arg("block_size") = py::none(),
      py::arg("combine_order") = "sequential_ascending", py::arg("permutation_seed") = py::none(),
      "Sum values (each first rounded into the format) under an explicit schedule.");
  m.def(
      "order_spread",
      [](const std::vector<double>& values, const std::string& f) {
        return doubles(enumerate_order_spread(encode_all(values, fmt(f)), fmt(f)));
      },
      py::arg("values"), py::arg("format"));
  m.def(
      "association_spread",
      [](const std::vector<double>& values, const std::string& f) {
        return doubles(enumerate_association_spread(encode_all(values, fmt(f)), fmt(f)));
      },
      py::arg("values"), py::arg("format"));

  m.def(
      "_greedy_decode",
      [](const std::vector<TokenId>& prompt, std::size_t max_new_tokens, const std::string& policy,
         const std::string& arch, std::uint32_t devices, std::uint32_t batch_size, std::uint64_t weight_seed) {
        ModelConfig cfg;
        cfg.weight_seed = weight_seed;
        const auto a = parse_arch(arch);
        if (!a) throw std::invalid_argument("unknown arch: " + arch);
        const RunConfig rc{*a, devices, batch_size, parse_policy(policy)};
        py::gil_scoped_release nogil;
        return to_json(greedy_decode(init_weights(cfg), prompt, max_new_tokens, rc.policy, schedule_for(rc))).dump();
      },
      py::arg("prompt"), py::arg("max_new_tokens"), py::arg("policy"), py::arg("arch"), py::arg("devices"),
      py::arg("batch_size"), py::arg("weight_seed"));
  m.def(
      "_golden_run",
      [](const std::vector<TokenId>& prompt, std::size_t max_new_tokens, std::uint64_t weight_seed) {
        ModelConfig cfg;
        cfg.weight_seed = weight_seed;
        py::gil_scoped_release nogil;
        return to_json(golden_run(init_weights(cfg), prompt, max_new_tokens)).dump();
      },
      py::arg("prompt"), py::arg("max_new_tokens"), py::arg("weight_seed"));

  m.def(
      "div_index",
      [](const std::vector<std::vector<TokenId>>& sequences) {
        std::vector<GenerationTrace> traces(sequences.size());
        for (std::size_t i = 0; i < sequences.size(); ++i) traces[i].tokens = sequences[i];
        return div_index_value(div_index(traces));
      },
      py::arg("sequences"), "First position where the token sequences disagree, or -1.");
  m.def("sample_std", [](const std::vector<double>& xs) { return sample_std(xs); }, py::arg("values"));

  m.def(
      "_run_sweep",
      [](const std::string& spec_json) {
        const auto spec = sweep_spec_from_json(nlohmann::json::parse(spec_json));
        SweepResult r;
        {
          py::gil_scoped_release nogil;
          r = run_sweep(spec);
        }
        return py::make_tuple(reports_json(r.reports), r.cells_run, r.cells_skipped);
      },
      py::arg("spec_json"));
  m.def(
      "_analyze",
      [](const std::filesystem::path& dir, std::size_t bins, std::optional<std::filesystem::path> export_dir) {
        py::gil_scoped_release nogil;
        return reports_json(analyze(dir, {bins, export_dir}).reports);
      },
      py::arg("trace_dir"), py::arg("bins"), py::arg("export_dir"));

  m.def("demo_nonassoc", [] {
    const auto rep = demo_nonassoc();
    return py::make_tuple(rep.ok(), rep.text);
  });
}
