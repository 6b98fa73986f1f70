#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fplab/reduction.hpp"
#include "fplab/softfloat.hpp"

namespace fplab {

enum class PolicyKind : std::uint8_t { PureBF16, PureFP16, PureFP32, LayerCast, ReferenceFP64 };

// How weights are stored and in which format arithmetic happens.
//
// LayerCast keeps weights in BF16 and widens each element to FP32 right
// before it is multiplied; every activation, product and sum is FP32.
class PrecisionPolicy {
 public:
  PrecisionPolicy() : PrecisionPolicy(PolicyKind::PureFP32) {}
  // kv_cache_storage is only configurable for LayerCast (defaults to FP32
  // there); pure policies store the cache in their compute format.
  explicit PrecisionPolicy(PolicyKind kind, std::optional<Format> kv_cache_storage = std::nullopt);

  static PrecisionPolicy pure_bf16() { return PrecisionPolicy(PolicyKind::PureBF16); }
  static PrecisionPolicy pure_fp16() { return PrecisionPolicy(PolicyKind::PureFP16); }
  static PrecisionPolicy pure_fp32() { return PrecisionPolicy(PolicyKind::PureFP32); }
  static PrecisionPolicy layercast(Format kv = Format::FP32) { return PrecisionPolicy(PolicyKind::LayerCast, kv); }
  static PrecisionPolicy reference() { return PrecisionPolicy(PolicyKind::ReferenceFP64); }

  PolicyKind kind() const { return kind_; }
  Format weight_storage() const;
  Format compute_format() const;
  Format kv_cache_storage() const { return kv_; }

  // "bf16", "fp16", "fp32", "layercast", "layercast-kvbf16", "fp64".
  std::string name() const;

  friend bool operator==(const PrecisionPolicy&, const PrecisionPolicy&) = default;

 private:
  PolicyKind kind_;
  Format kv_;
};

// Throws std::invalid_argument for unknown names.
PrecisionPolicy parse_policy(std::string_view name);

// Dense row-major tensor. Elements are held as binary64 values that are
// exactly representable in storage_format (binary64 embeds every format
// here exactly), so at() recovers the original bit pattern.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, Format storage);  // zero filled

  // Rounds every value once to `storage`. Throws on size mismatch.
  static Tensor from_values(std::vector<std::size_t> shape, Format storage, std::span<const double> values);
  // Throws when an element's format differs from `storage`.
  static Tensor from_bits(std::vector<std::size_t> shape, Format storage, std::span<const ScalarBits> bits);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  Format storage_format() const { return format_; }

  double value(std::size_t i) const { return data_[i]; }
  ScalarBits at(std::size_t i) const { return encode(data_[i], format_); }
  std::span<const double> values() const { return data_; }

  // Round (narrower target) or widen exactly (wider target).
  Tensor converted(Format target) const;

  bool bitwise_equal(const Tensor& other) const;

 private:
  std::vector<std::size_t> shape_;
  Format format_ = Format::FP32;
  std::vector<double> data_;
};

// out[m x n] = A[m x k] * W[k x n]; each output element is one scheduled
// reduction of the k rounded products, everything in the policy's compute
// format. W must be stored in policy.weight_storage(); A may be in any format
// no wider than the compute format. Output is stored in the compute format.
Tensor matmul(const Tensor& a, const Tensor& w, const PrecisionPolicy& policy,
              const ReductionSchedule& schedule);

constexpr double kRmsNormEpsilon = 1e-6;

// x_i * gain_i / sqrt(sum(x^2) / d + eps), the sum scheduled, every step
// rounded in the compute format.
Tensor rmsnorm(const Tensor& x, const Tensor& gain, const PrecisionPolicy& policy,
               const ReductionSchedule& schedule);

// FP32 softmax with max subtraction and a canonical left-to-right sum.
Tensor softmax_stable(const Tensor& logits);

// Bytes a model occupies under a policy: weights at weight_storage width plus
// a KV cache of `kv_entries` scalars at kv_cache_storage width.
std::uint64_t resident_bytes(std::uint64_t weight_elements, std::uint64_t kv_entries,
                             const PrecisionPolicy& policy);

// ---------------------------------------------------------------------------
// Typed arithmetic cores. `Arith<F>` rounds every operation to format F;
// values travel as float (BF16/FP16/FP32) or double (FP64REF).

template <Format F>
struct Arith;

template <>
struct Arith<Format::BF16> {
  using T = float;
  static constexpr Format format = Format::BF16;
  static T round(T x) { return round_float_to_bf16(x); }
  static T from_double(double x) { return static_cast<T>(round_value(x, format)); }
  static T add(T a, T b) { return round(a + b); }
  static T mul(T a, T b) { return round(a * b); }
  static T div(T a, T b) { return round(a / b); }
  static T sqrt(T a) { return round(std::sqrt(a)); }
  static T exp(T a) { return round(std::exp(a)); }
};

template <>
struct Arith<Format::FP16> {
  using T = float;
  static constexpr Format format = Format::FP16;
  static T round(T x) { return round_float_to_fp16(x); }
  static T from_double(double x) { return static_cast<T>(round_value(x, format)); }
  static T add(T a, T b) { return round(a + b); }
  static T mul(T a, T b) { return round(a * b); }
  static T div(T a, T b) { return round(a / b); }
  static T sqrt(T a) { return round(std::sqrt(a)); }
  static T exp(T a) { return round(std::exp(a)); }
};

template <>
struct Arith<Format::FP32> {
  using T = float;
  static constexpr Format format = Format::FP32;
  static T round(T x) { return x; }
  static T from_double(double x) { return static_cast<T>(x); }
  static T add(T a, T b) { return a + b; }
  static T mul(T a, T b) { return a * b; }
  static T div(T a, T b) { return a / b; }
  static T sqrt(T a) { return std::sqrt(a); }
  static T exp(T a) { return std::exp(a); }
};

template <>
struct Arith<Format::FP64REF> {
  using T = double;
  static constexpr Format format = Format::FP64REF;
  static T round(T x) { return x; }
  static T from_double(double x) { return x; }
  static T add(T a, T b) { return a + b; }
  static T mul(T a, T b) { return a * b; }
  static T div(T a, T b) { return a / b; }
  static T sqrt(T a) { return std::sqrt(a); }
  static T exp(T a) { return std::exp(a); }
};

// Weight element accessors: identity for values already in the compute type,
// exact BF16 -> FP32 widening for LayerCast storage.
struct DirectLoad {
  template <class T>
  T operator()(T v) const { return v; }
};

struct Bf16Load {
  float operator()(std::uint16_t bits) const { return widen_bf16_bits(bits); }
};

namespace detail {

// Scheduled reduction of `v` (scratch, clobbered) honouring the optional
// seeded pre-permutation; `perm` caches the index order for v.size().
template <class A>
typename A::T scheduled_sum(std::span<typename A::T> v, const ReductionSchedule& s,
                            std::vector<typename A::T>& tmp, std::vector<std::size_t>& perm) {
  using T = typename A::T;
  if (s.permutation_seed) {
    if (perm.size() != v.size()) perm = schedule_permutation(v.size(), s);
    tmp.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) tmp[i] = v[perm[i]];
    return reduce_in_place(std::span<T>(tmp), s, [](T a, T b) { return A::add(a, b); });
  }
  return reduce_in_place(v, s, [](T a, T b) { return A::add(a, b); });
}

}  // namespace detail

// Reusable buffers so the inner loops never allocate.
template <class T>
struct KernelScratch {
  std::vector<T> products;
  std::vector<T> permuted;
  std::vector<std::size_t> perm;
};

// out[n] = x[k] * W, where W(p, j) = w[p * row_stride + j * col_stride].
template <class A, class WS, class Load>
void matvec(std::span<const typename A::T> x, const WS* w, std::size_t row_stride,
            std::size_t col_stride, std::size_t n, const ReductionSchedule& s, Load load,
            std::span<typename A::T> out, KernelScratch<typename A::T>& scratch) {
  using T = typename A::T;
  const std::size_t k = x.size();
  scratch.products.resize(k);
  for (std::size_t j = 0; j < n; ++j) {
    const WS* col = w + j * col_stride;
    for (std::size_t p = 0; p < k; ++p) {
      scratch.products[p] = A::mul(x[p], static_cast<T>(load(col[p * row_stride])));
    }
    out[j] = detail::scheduled_sum<A>(std::span<T>(scratch.products), s, scratch.permuted, scratch.perm);
  }
}

// In-place RMSNorm of x with gains g (any load type).
template <class A, class WS, class Load>
void rmsnorm_into(std::span<const typename A::T> x, const WS* gain, Load load,
                  const ReductionSchedule& s, std::span<typename A::T> out,
                  KernelScratch<typename A::T>& scratch) {
  using T = typename A::T;
  const std::size_t d = x.size();
  scratch.products.resize(d);
  for (std::size_t i = 0; i < d; ++i) scratch.products[i] = A::mul(x[i], x[i]);
  const T sum = detail::scheduled_sum<A>(std::span<T>(scratch.products), s, scratch.permuted, scratch.perm);
  const T mean = A::div(sum, A::from_double(static_cast<double>(d)));
  const T rms = A::sqrt(A::add(mean, A::from_double(kRmsNormEpsilon)));
  for (std::size_t i = 0; i < d; ++i) {
    out[i] = A::div(A::mul(x[i], static_cast<T>(load(gain[i]))), rms);
  }
}

// Softmax in the precision of U (float for every policy but the reference,
// which uses double). Canonical sequential sum.
template <class U>
void softmax_into(std::span<const U> logits, std::span<U> out) {
  U mx = logits[0];
  for (U v : logits) mx = v > mx ? v : mx;
  U sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
}

}  // namespace fplab
