#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fplab/softfloat.hpp"
#include "json.hpp"

namespace fplab {

enum class CombineOrder : std::uint8_t { SequentialAscending, SequentialDescending, PairwiseTree };

std::string_view combine_order_name(CombineOrder c);
std::optional<CombineOrder> parse_combine_order(std::string_view name);

// Explicit association order for a sum.
//
//   1. optional seeded pre-permutation (Fisher-Yates driven by SplitMix64,
//      i from n-1 down to 1 swapping with next_below(i + 1));
//   2. split into split_k contiguous chunks, the first n % split_k of them
//      one element longer;
//   3. inside a chunk, fold each block of block_size elements left to right
//      and merge the block partials per combine_order;
//   4. merge the chunk partials per combine_order.
//
// PairwiseTree adds neighbours (0,1), (2,3), ... level by level and carries
// an odd trailing element up unchanged. SequentialDescending starts from the
// last partial and folds towards the first.
struct ReductionSchedule {
  static constexpr std::uint64_t kWholeChunk = std::numeric_limits<std::uint64_t>::max();

  std::uint64_t split_k = 1;
  std::uint64_t block_size = kWholeChunk;
  CombineOrder combine_order = CombineOrder::SequentialAscending;
  std::optional<std::uint64_t> permutation_seed;

  // Plain left-to-right fold.
  static ReductionSchedule canonical() { return {}; }

  // Throws std::invalid_argument on split_k == 0 or block_size == 0.
  void validate() const;

  friend bool operator==(const ReductionSchedule&, const ReductionSchedule&) = default;
};

nlohmann::json to_json(const ReductionSchedule& s);
ReductionSchedule schedule_from_json(const nlohmann::json& j);

struct OrderedSum {
  ScalarBits value;
  std::uint64_t ops_performed = 0;
};

// Left fold of values[order[0]] + values[order[1]] + ... in `format`.
// Throws std::invalid_argument for an empty input, a malformed permutation,
// or operands not in `format`.
ScalarBits reduce_permuted(std::span<const ScalarBits> values, std::span<const std::size_t> order,
                           Format format);

OrderedSum reduce_scheduled(std::span<const ScalarBits> values, const ReductionSchedule& schedule,
                            Format format);

// All distinct results of reduce_permuted over the n! orders, sorted by bit
// pattern. Rejects n > max_n or max_n > 8.
std::vector<ScalarBits> enumerate_order_spread(std::span<const ScalarBits> values, Format format,
                                               std::size_t max_n = 8);

// All distinct results over every association tree of every ordering, i.e.
// every way of summing the values with n - 1 binary additions. Superset of
// enumerate_order_spread. Rejects n > max_n or max_n > 8.
std::vector<ScalarBits> enumerate_association_spread(std::span<const ScalarBits> values,
                                                     Format format, std::size_t max_n = 8);

// The seeded pre-permutation as an index order (identity when seed is empty).
std::vector<std::size_t> schedule_permutation(std::size_t n, const ReductionSchedule& schedule);

namespace detail {

template <class T, class Add>
T merge_partials(T* p, std::size_t m, CombineOrder order, Add& add) {
  switch (order) {
    case CombineOrder::SequentialAscending: {
      T acc = p[0];
      for (std::size_t i = 1; i < m; ++i) acc = add(acc, p[i]);
      return acc;
    }
    case CombineOrder::SequentialDescending: {
      T acc = p[m - 1];
      for (std::size_t i = m - 1; i > 0; --i) acc = add(acc, p[i - 1]);
      return acc;
    }
    case CombineOrder::PairwiseTree: {
      while (m > 1) {
        const std::size_t half = m / 2;
        for (std::size_t i = 0; i < half; ++i) p[i] = add(p[2 * i], p[2 * i + 1]);
        if (m & 1u) p[half] = p[m - 1];
        m = half + (m & 1u);
      }
      return p[0];
    }
  }
  return p[0];
}

}  // namespace detail

// Scheduled reduction over already-permuted values, in place (the span is
// used as scratch). The seeded pre-permutation is the caller's job; see
// schedule_permutation. `add` must be the correctly rounded sum of the
// working format. n >= 1.
template <class T, class Add>
T reduce_in_place(std::span<T> v, const ReductionSchedule& s, Add add) {
  const std::size_t n = v.size();
  const std::size_t chunks = static_cast<std::size_t>(std::min<std::uint64_t>(s.split_k, n));
  const std::size_t base = n / chunks;
  const std::size_t extra = n % chunks;
  const std::size_t bs = static_cast<std::size_t>(std::min<std::uint64_t>(s.block_size, n));

  std::size_t begin = 0;
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t len = base + (c < extra ? 1 : 0);
    T* chunk = v.data() + begin;
    std::size_t blocks = 0;
    for (std::size_t b = 0; b < len; b += bs) {
      const std::size_t e = std::min(len, b + bs);
      T acc = chunk[b];
      for (std::size_t i = b + 1; i < e; ++i) acc = add(acc, chunk[i]);
      chunk[blocks++] = acc;
    }
    v[c] = detail::merge_partials(chunk, blocks, s.combine_order, add);
    begin += len;
  }
  return detail::merge_partials(v.data(), chunks, s.combine_order, add);
}

}  // namespace fplab
