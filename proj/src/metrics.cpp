#include "fplab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fplab {

namespace {

void check_sets(std::span<const TraceSet> examples) {
  if (examples.empty()) throw std::invalid_argument("metrics: no examples");
  const std::size_t n = examples.front().size();
  for (const auto& set : examples) {
    if (set.size() != n) {
      throw std::invalid_argument("metrics: examples carry different trace counts (" + std::to_string(set.size()) +
                                  " vs " + std::to_string(n) + ")");
    }
  }
  if (n < 2) throw std::invalid_argument("metrics: need at least two traces per example");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

double sample_std(std::span<const double> xs) {
  if (xs.size() < 2) throw std::invalid_argument("sample_std: need at least two values");
  // Sorted so the result does not depend on the order configs are supplied in.
  std::vector<double> v(xs.begin(), xs.end());
  std::sort(v.begin(), v.end());
  // The mean of equal values need not round back to that value.
  if (v.front() == v.back()) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::optional<std::size_t> div_index(std::span<const GenerationTrace> traces) {
  if (traces.size() < 2) throw std::invalid_argument("div_index: need at least two traces");
  const auto& first = traces.front();
  for (const auto& t : traces) {
    if (t.prompt != first.prompt) throw std::invalid_argument("div_index: traces have different prompts");
  }
  std::size_t common = first.tokens.size();
  bool same_length = true;
  for (const auto& t : traces) {
    same_length = same_length && t.tokens.size() == first.tokens.size();
    common = std::min(common, t.tokens.size());
  }
  for (std::size_t i = 0; i < common; ++i) {
    for (const auto& t : traces) {
      if (t.tokens[i] != first.tokens[i]) return i;
    }
  }
  if (same_length) return std::nullopt;
  return common;
}

double avg_std_top1_prob(std::span<const TraceSet> examples) {
  check_sets(examples);
  double total = 0.0;
  std::size_t counted = 0;
  std::vector<double> column;
  for (const auto& set : examples) {
    const auto d = div_index(set);
    const std::size_t positions = d ? *d : set.front().tokens.size();
    if (positions == 0) continue;
    double acc = 0.0;
    for (std::size_t p = 0; p < positions; ++p) {
      column.clear();
      for (const auto& t : set) column.push_back(static_cast<double>(t.top1_prob.at(p)));
      acc += sample_std(column);
    }
    total += acc / static_cast<double>(positions);
    ++counted;
  }
  return counted ? total / static_cast<double>(counted) : 0.0;
}

double std_acc(std::span<const double> accuracies) {
  if (accuracies.size() < 2) throw std::invalid_argument("std_acc: need at least two configurations");
  return sample_std(accuracies);
}

double avg_std_output_length(std::span<const TraceSet> examples) {
  check_sets(examples);
  double total = 0.0;
  std::vector<double> lengths;
  for (const auto& set : examples) {
    lengths.clear();
    for (const auto& t : set) lengths.push_back(static_cast<double>(t.length()));
    total += sample_std(lengths);
  }
  return total / static_cast<double>(examples.size());
}

PassAtOne pass_at_1(const std::vector<std::vector<bool>>& correctness) {
  if (correctness.size() < 2) throw std::invalid_argument("pass_at_1: need at least two configurations");
  const std::size_t runs = correctness.front().size();
  if (runs == 0) throw std::invalid_argument("pass_at_1: no runs");
  PassAtOne out;
  for (const auto& cfg : correctness) {
    if (cfg.size() != runs) throw std::invalid_argument("pass_at_1: ragged correctness matrix");
    const auto hits = std::count(cfg.begin(), cfg.end(), true);
    out.per_config.push_back(static_cast<double>(hits) / static_cast<double>(runs));
  }
  double sum = 0.0;
  for (double v : out.per_config) sum += v;
  out.mean = sum / static_cast<double>(out.per_config.size());
  out.std = sample_std(out.per_config);
  return out;
}

std::uint64_t GapHistogram::total() const {
  std::uint64_t n = 0;
  for (auto c : counts) n += c;
  return n;
}

std::vector<double> uniform_edges(std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("histogram: need at least one bin");
  std::vector<double> e(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) e[i] = static_cast<double>(i) / static_cast<double>(bins);
  return e;
}

GapHistogram prob_gap_histogram(std::span<const GenerationTrace> traces, std::span<const double> edges) {
  if (edges.size() < 2 || edges.front() != 0.0 || edges.back() != 1.0 ||
      !std::is_sorted(edges.begin(), edges.end())) {
    throw std::invalid_argument("histogram: edges must ascend from 0 to 1");
  }
  GapHistogram h;
  h.edges.assign(edges.begin(), edges.end());
  h.counts.assign(edges.size() - 1, 0);
  for (const auto& t : traces) {
    for (const auto& step : t.topk) {
      if (step.size() < 2) throw std::invalid_argument("histogram: top-k with k < 2");
      const double gap = std::clamp(static_cast<double>(step[0].prob) - static_cast<double>(step[1].prob), 0.0, 1.0);
      auto it = std::upper_bound(h.edges.begin(), h.edges.end(), gap);
      std::size_t bin = static_cast<std::size_t>(it - h.edges.begin());
      bin = bin == 0 ? 0 : bin - 1;
      bin = std::min(bin, h.counts.size() - 1);
      ++h.counts[bin];
    }
  }
  return h;
}

DivergenceReport build_report(const std::string& policy, std::span<const TraceSet> examples,
                              std::span<const TokenId> golden_final_tokens,
                              const std::optional<std::vector<std::vector<bool>>>& sampled_correct) {
  check_sets(examples);
  if (golden_final_tokens.size() != examples.size()) {
    throw std::invalid_argument("report: golden token count does not match example count");
  }
  DivergenceReport r;
  r.policy = policy;
  r.n_examples = examples.size();
  r.n_configs = examples.front().size();
  for (const auto& t : examples.front()) r.config_ids.push_back(t.run_config_id);

  std::size_t divergent = 0;
  double div_sum = 0.0;
  for (const auto& set : examples) {
    const auto d = div_index(set);
    r.per_example_div_index.push_back(div_index_value(d));
    if (d) {
      ++divergent;
      div_sum += static_cast<double>(*d);
    }
  }
  r.div_percent = static_cast<double>(divergent) / static_cast<double>(examples.size());
  r.div_index = divergent ? div_sum / static_cast<double>(divergent) : static_cast<double>(kNoDivergence);
  r.avg_std_top1_prob = avg_std_top1_prob(examples);
  r.avg_std_output_length = avg_std_output_length(examples);

  r.accuracy_per_config.assign(r.n_configs, 0.0);
  for (std::size_t e = 0; e < examples.size(); ++e) {
    for (std::size_t c = 0; c < r.n_configs; ++c) {
      const auto& toks = examples[e][c].tokens;
      if (!toks.empty() && toks.back() == golden_final_tokens[e]) r.accuracy_per_config[c] += 1.0;
    }
  }
  for (auto& a : r.accuracy_per_config) a /= static_cast<double>(examples.size());
  r.std_acc = std_acc(r.accuracy_per_config);
  if (sampled_correct) r.pass_at_1 = pass_at_1(*sampled_correct);
  return r;
}

nlohmann::json to_json(const DivergenceReport& r) {
  nlohmann::json j;
  j["policy"] = r.policy;
  j["n_configs"] = r.n_configs;
  j["n_examples"] = r.n_examples;
  j["div_index"] = r.div_index;
  j["div_percent"] = r.div_percent;
  j["avg_std_top1_prob"] = r.avg_std_top1_prob;
  j["std_acc"] = r.std_acc;
  j["avg_std_output_length"] = r.avg_std_output_length;
  if (r.pass_at_1) {
    j["pass_at_1"] = {{"per_config", r.pass_at_1->per_config}, {"mean", r.pass_at_1->mean}, {"std", r.pass_at_1->std}};
  } else {
    j["pass_at_1"] = nullptr;
  }
  j["config_ids"] = r.config_ids;
  j["accuracy_per_config"] = r.accuracy_per_config;
  j["per_example_div_index"] = r.per_example_div_index;
  return j;
}

std::string histogram_csv(const GapHistogram& h) {
  std::string out = "bin_lo,bin_hi,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    out += fmt(h.edges[i]) + "," + fmt(h.edges[i + 1]) + "," + std::to_string(h.counts[i]) + "\n";
  }
  return out;
}

std::string div_index_csv(const DivergenceReport& r) {
  std::string out = "example,div_index\n";
  for (std::size_t i = 0; i < r.per_example_div_index.size(); ++i) {
    out += std::to_string(i) + "," + std::to_string(r.per_example_div_index[i]) + "\n";
  }
  return out;
}

std::string accuracy_csv(const DivergenceReport& r) {
  std::string out = r.pass_at_1 ? "config_id,accuracy,pass_at_1\n" : "config_id,accuracy\n";
  for (std::size_t c = 0; c < r.accuracy_per_config.size(); ++c) {
    out += r.config_ids.at(c) + "," + fmt(r.accuracy_per_config[c]);
    if (r.pass_at_1) out += "," + fmt(r.pass_at_1->per_config.at(c));
    out += "\n";
  }
  return out;
}

}  // namespace fplab
