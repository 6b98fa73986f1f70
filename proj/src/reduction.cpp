#include "fplab/reduction.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>

#include "fplab/splitmix.hpp"

namespace fplab {

namespace {

void require_all_in(std::span<const ScalarBits> values, Format format) {
  for (const auto& v : values) {
    if (v.format() != format) {
      throw std::invalid_argument("reduction: value in " + std::string(format_name(v.format())) +
                                  ", expected " + std::string(format_name(format)));
    }
  }
}

std::vector<ScalarBits> sorted_unique(std::vector<ScalarBits> out) {
  std::sort(out.begin(), out.end(),
            [](const ScalarBits& a, const ScalarBits& b) { return a.bits() < b.bits(); });
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void check_enumerable(std::size_t n, std::size_t max_n) {
  if (max_n > 8) throw std::invalid_argument("order spread: max_n must be <= 8");
  if (n == 0) throw std::invalid_argument("order spread: empty input");
  if (n > max_n) {
    throw std::invalid_argument("order spread: n = " + std::to_string(n) + " exceeds max_n = " +
                                std::to_string(max_n));
  }
}

}  // namespace

std::string_view combine_order_name(CombineOrder c) {
  switch (c) {
    case CombineOrder::SequentialAscending: return "sequential_ascending";
    case CombineOrder::SequentialDescending: return "sequential_descending";
    case CombineOrder::PairwiseTree: return "pairwise_tree";
  }
  return "?";
}

std::optional<CombineOrder> parse_combine_order(std::string_view name) {
  if (name == "sequential_ascending") return CombineOrder::SequentialAscending;
  if (name == "sequential_descending") return CombineOrder::SequentialDescending;
  if (name == "pairwise_tree") return CombineOrder::PairwiseTree;
  return std::nullopt;
}

void ReductionSchedule::validate() const {
  if (split_k == 0) throw std::invalid_argument("schedule: split_k must be >= 1");
  if (block_size == 0) throw std::invalid_argument("schedule: block_size must be >= 1");
}

nlohmann::json to_json(const ReductionSchedule& s) {
  nlohmann::json j;
  j["split_k"] = s.split_k;
  j["block_size"] = s.block_size;
  j["combine_order"] = std::string(combine_order_name(s.combine_order));
  j["permutation_seed"] = s.permutation_seed ? nlohmann::json(*s.permutation_seed) : nlohmann::json();
  return j;
}

ReductionSchedule schedule_from_json(const nlohmann::json& j) {
  ReductionSchedule s;
  s.split_k = j.at("split_k").get<std::uint64_t>();
  s.block_size = j.at("block_size").get<std::uint64_t>();
  const auto name = j.at("combine_order").get<std::string>();
  const auto order = parse_combine_order(name);
  if (!order) throw std::invalid_argument("schedule: unknown combine_order '" + name + "'");
  s.combine_order = *order;
  if (j.contains("permutation_seed") && !j["permutation_seed"].is_null()) {
    s.permutation_seed = j["permutation_seed"].get<std::uint64_t>();
  }
  s.validate();
  return s;
}

std::vector<std::size_t> schedule_permutation(std::size_t n, const ReductionSchedule& schedule) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (!schedule.permutation_seed || n < 2) return idx;
  SplitMix64 rng(*schedule.permutation_seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng.next_below(i + 1));
    std::swap(idx[i], idx[j]);
  }
  return idx;
}

ScalarBits reduce_permuted(std::span<const ScalarBits> values, std::span<const std::size_t> order,
                           Format format) {
  const std::size_t n = values.size();
  if (n == 0) throw std::invalid_argument("reduce_permuted: empty input");
  if (order.size() != n) {
    throw std::invalid_argument("reduce_permuted: order has " + std::to_string(order.size()) +
                                " entries for " + std::to_string(n) + " values");
  }
  std::vector<bool> seen(n, false);
  for (std::size_t i : order) {
    if (i >= n) throw std::invalid_argument("reduce_permuted: index " + std::to_string(i) + " out of range");
    if (seen[i]) throw std::invalid_argument("reduce_permuted: duplicate index " + std::to_string(i));
    seen[i] = true;
  }
  require_all_in(values, format);
  ScalarBits acc = values[order[0]];
  for (std::size_t i = 1; i < n; ++i) acc = add(acc, values[order[i]], format);
  return acc;
}

OrderedSum reduce_scheduled(std::span<const ScalarBits> values, const ReductionSchedule& schedule,
                            Format format) {
  schedule.validate();
  if (values.empty()) throw std::invalid_argument("reduce_scheduled: empty input");
  require_all_in(values, format);
  const auto perm = schedule_permutation(values.size(), schedule);
  std::vector<ScalarBits> work;
  work.reserve(values.size());
  for (std::size_t i : perm) work.push_back(values[i]);

  OrderedSum out;
  auto counting_add = [&](const ScalarBits& a, const ScalarBits& b) {
    ++out.ops_performed;
    return add(a, b, format);
  };
  out.value = reduce_in_place(std::span<ScalarBits>(work), schedule, counting_add);
  return out;
}

std::vector<ScalarBits> enumerate_order_spread(std::span<const ScalarBits> values, Format format,
                                               std::size_t max_n) {
  check_enumerable(values.size(), max_n);
  require_all_in(values, format);
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<ScalarBits> out;
  do {
    out.push_back(reduce_permuted(values, order, format));
  } while (std::next_permutation(order.begin(), order.end()));
  return sorted_unique(std::move(out));
}

std::vector<ScalarBits> enumerate_association_spread(std::span<const ScalarBits> values,
                                                     Format format, std::size_t max_n) {
  check_enumerable(values.size(), max_n);
  require_all_in(values, format);

  // Frontier of multisets (sorted bit patterns); each step replaces one pair
  // by its rounded sum. Addition is commutative, so unordered pairs suffice.
  std::set<std::vector<std::uint64_t>> frontier;
  {
    std::vector<std::uint64_t> start;
    for (const auto& v : values) start.push_back(v.bits());
    std::sort(start.begin(), start.end());
    frontier.insert(std::move(start));
  }
  for (std::size_t m = values.size(); m > 1; --m) {
    std::set<std::vector<std::uint64_t>> next;
    for (const auto& state : frontier) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j) {
          std::vector<std::uint64_t> child;
          child.reserve(m - 1);
          for (std::size_t k = 0; k < m; ++k) {
            if (k != i && k != j) child.push_back(state[k]);
          }
          const auto s = add(ScalarBits::from_bits(format, state[i]),
                             ScalarBits::from_bits(format, state[j]), format);
          child.push_back(s.bits());
          std::sort(child.begin(), child.end());
          next.insert(std::move(child));
        }
      }
    }
    frontier = std::move(next);
  }
  std::vector<ScalarBits> out;
  for (const auto& state : frontier) out.push_back(ScalarBits::from_bits(format, state[0]));
  return sorted_unique(std::move(out));
}

}  // namespace fplab
