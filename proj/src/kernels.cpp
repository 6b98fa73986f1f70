#include "fplab/kernels.hpp"

#include <functional>
#include <numeric>
#include <stdexcept>

namespace fplab {

namespace {

std::size_t product_of(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <class T>
std::vector<T> values_as(const Tensor& t) {
  std::vector<T> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<T>(t.value(i));
  return out;
}

template <class T>
Tensor to_tensor(std::vector<std::size_t> shape, Format f, const std::vector<T>& v) {
  std::vector<double> d(v.begin(), v.end());
  return Tensor::from_values(std::move(shape), f, d);
}

void require_activation(const Tensor& t, const PrecisionPolicy& policy, const char* what) {
  if (width_of(t.storage_format()) > width_of(policy.compute_format()) ||
      (t.storage_format() != policy.compute_format() &&
       width_of(t.storage_format()) == width_of(policy.compute_format()))) {
    throw std::invalid_argument(std::string(what) + ": activation format " +
                                std::string(format_name(t.storage_format())) +
                                " does not embed in compute format " +
                                std::string(format_name(policy.compute_format())));
  }
}

template <Format F>
Tensor matmul_typed(const Tensor& a, const Tensor& w, const PrecisionPolicy& policy,
                    const ReductionSchedule& s) {
  using A = Arith<F>;
  using T = typename A::T;
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = w.shape()[1];
  const auto x = values_as<T>(a);
  std::vector<T> out(m * n);
  KernelScratch<T> scratch;
  if (policy.kind() == PolicyKind::LayerCast) {
    std::vector<std::uint16_t> wbits(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) wbits[i] = static_cast<std::uint16_t>(w.at(i).bits());
    for (std::size_t r = 0; r < m; ++r) {
      matvec<A>(std::span<const T>(x.data() + r * k, k), wbits.data(), n, 1, n, s, Bf16Load{},
                std::span<T>(out.data() + r * n, n), scratch);
    }
  } else {
    const auto wv = values_as<T>(w);
    for (std::size_t r = 0; r < m; ++r) {
      matvec<A>(std::span<const T>(x.data() + r * k, k), wv.data(), n, 1, n, s, DirectLoad{},
                std::span<T>(out.data() + r * n, n), scratch);
    }
  }
  return to_tensor<T>({m, n}, F, out);
}

template <Format F>
Tensor rmsnorm_typed(const Tensor& x, const Tensor& gain, const ReductionSchedule& s) {
  using A = Arith<F>;
  using T = typename A::T;
  const auto xv = values_as<T>(x);
  const auto gv = values_as<T>(gain);
  std::vector<T> out(xv.size());
  KernelScratch<T> scratch;
  rmsnorm_into<A>(std::span<const T>(xv), gv.data(), DirectLoad{}, s, std::span<T>(out), scratch);
  return to_tensor<T>(x.shape(), F, out);
}

}  // namespace

PrecisionPolicy::PrecisionPolicy(PolicyKind kind, std::optional<Format> kv) : kind_(kind) {
  if (kv && kind != PolicyKind::LayerCast) {
    throw std::invalid_argument("kv_cache_storage is only configurable for LayerCast");
  }
  if (kind == PolicyKind::LayerCast) {
    kv_ = kv.value_or(Format::FP32);
    if (kv_ == Format::FP64REF) throw std::invalid_argument("LayerCast kv_cache_storage must be 16 or 32 bit");
  } else {
    kv_ = compute_format();
  }
}

Format PrecisionPolicy::weight_storage() const {
  switch (kind_) {
    case PolicyKind::PureBF16:
    case PolicyKind::LayerCast: return Format::BF16;
    case PolicyKind::PureFP16: return Format::FP16;
    case PolicyKind::PureFP32: return Format::FP32;
    case PolicyKind::ReferenceFP64: return Format::FP64REF;
  }
  return Format::FP32;
}

Format PrecisionPolicy::compute_format() const {
  switch (kind_) {
    case PolicyKind::PureBF16: return Format::BF16;
    case PolicyKind::PureFP16: return Format::FP16;
    case PolicyKind::PureFP32:
    case PolicyKind::LayerCast: return Format::FP32;
    case PolicyKind::ReferenceFP64: return Format::FP64REF;
  }
  return Format::FP32;
}

std::string PrecisionPolicy::name() const {
  switch (kind_) {
    case PolicyKind::PureBF16: return "bf16";
    case PolicyKind::PureFP16: return "fp16";
    case PolicyKind::PureFP32: return "fp32";
    case PolicyKind::LayerCast: return kv_ == Format::FP32 ? "layercast" : "layercast-kv" + std::string(format_name(kv_));
    case PolicyKind::ReferenceFP64: return "fp64";
  }
  return "?";
}

PrecisionPolicy parse_policy(std::string_view name) {
  if (name == "bf16") return PrecisionPolicy::pure_bf16();
  if (name == "fp16") return PrecisionPolicy::pure_fp16();
  if (name == "fp32") return PrecisionPolicy::pure_fp32();
  if (name == "fp64") return PrecisionPolicy::reference();
  if (name == "layercast") return PrecisionPolicy::layercast();
  if (name == "layercast-kvbf16") return PrecisionPolicy::layercast(Format::BF16);
  if (name == "layercast-kvfp16") return PrecisionPolicy::layercast(Format::FP16);
  throw std::invalid_argument("unknown policy '" + std::string(name) + "'");
}

Tensor::Tensor(std::vector<std::size_t> shape, Format storage)
    : shape_(std::move(shape)), format_(storage), data_(product_of(shape_), 0.0) {}

Tensor Tensor::from_values(std::vector<std::size_t> shape, Format storage, std::span<const double> values) {
  Tensor t(std::move(shape), storage);
  if (values.size() != t.size()) {
    throw std::invalid_argument("tensor: " + std::to_string(values.size()) + " values for shape " +
                                shape_str(t.shape_));
  }
  for (std::size_t i = 0; i < values.size(); ++i) t.data_[i] = round_value(values[i], storage);
  return t;
}

Tensor Tensor::from_bits(std::vector<std::size_t> shape, Format storage, std::span<const ScalarBits> bits) {
  Tensor t(std::move(shape), storage);
  if (bits.size() != t.size()) {
    throw std::invalid_argument("tensor: " + std::to_string(bits.size()) + " elements for shape " +
                                shape_str(t.shape_));
  }
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i].format() != storage) throw std::invalid_argument("tensor: element format mismatch");
    t.data_[i] = bits[i].to_double();
  }
  return t;
}

Tensor Tensor::converted(Format target) const {
  return Tensor::from_values(shape_, target, data_);
}

bool Tensor::bitwise_equal(const Tensor& other) const {
  if (shape_ != other.shape_ || format_ != other.format_) return false;
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (at(i).bits() != other.at(i).bits()) return false;
  }
  return true;
}

Tensor matmul(const Tensor& a, const Tensor& w, const PrecisionPolicy& policy,
              const ReductionSchedule& schedule) {
  schedule.validate();
  if (a.rank() != 2 || w.rank() != 2) throw std::invalid_argument("matmul: operands must be rank 2");
  if (a.shape()[1] != w.shape()[0]) {
    throw std::invalid_argument("matmul: inner dimensions differ: " + shape_str(a.shape()) + " * " +
                                shape_str(w.shape()));
  }
  if (a.shape()[1] == 0) throw std::invalid_argument("matmul: empty inner dimension");
  if (w.storage_format() != policy.weight_storage()) {
    throw std::invalid_argument("matmul: weights stored as " + std::string(format_name(w.storage_format())) +
                                ", policy " + policy.name() + " expects " +
                                std::string(format_name(policy.weight_storage())));
  }
  require_activation(a, policy, "matmul");
  switch (policy.compute_format()) {
    case Format::BF16: return matmul_typed<Format::BF16>(a, w, policy, schedule);
    case Format::FP16: return matmul_typed<Format::FP16>(a, w, policy, schedule);
    case Format::FP32: return matmul_typed<Format::FP32>(a, w, policy, schedule);
    case Format::FP64REF: break;
  }
  return matmul_typed<Format::FP64REF>(a, w, policy, schedule);
}

Tensor rmsnorm(const Tensor& x, const Tensor& gain, const PrecisionPolicy& policy,
               const ReductionSchedule& schedule) {
  schedule.validate();
  if (x.size() == 0) throw std::invalid_argument("rmsnorm: empty input");
  if (x.rank() != 1 || gain.rank() != 1 || x.size() != gain.size()) {
    throw std::invalid_argument("rmsnorm: x " + shape_str(x.shape()) + " and gain " +
                                shape_str(gain.shape()) + " must be matching vectors");
  }
  require_activation(x, policy, "rmsnorm");
  require_activation(gain, policy, "rmsnorm");
  switch (policy.compute_format()) {
    case Format::BF16: return rmsnorm_typed<Format::BF16>(x, gain, schedule);
    case Format::FP16: return rmsnorm_typed<Format::FP16>(x, gain, schedule);
    case Format::FP32: return rmsnorm_typed<Format::FP32>(x, gain, schedule);
    case Format::FP64REF: break;
  }
  return rmsnorm_typed<Format::FP64REF>(x, gain, schedule);
}

Tensor softmax_stable(const Tensor& logits) {
  if (logits.size() == 0) throw std::invalid_argument("softmax: empty input");
  const auto in = values_as<float>(logits);
  std::vector<float> out(in.size());
  softmax_into<float>(std::span<const float>(in), std::span<float>(out));
  return to_tensor<float>(logits.shape(), Format::FP32, out);
}

std::uint64_t resident_bytes(std::uint64_t weight_elements, std::uint64_t kv_entries,
                             const PrecisionPolicy& policy) {
  return weight_elements * static_cast<std::uint64_t>(width_of(policy.weight_storage()) / 8) +
         kv_entries * static_cast<std::uint64_t>(width_of(policy.kv_cache_storage()) / 8);
}

}  // namespace fplab
