#include "fplab/softfloat.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace fplab {

namespace {

constexpr std::uint64_t width_mask(Format f) {
  const int w = width_of(f);
  return w == 64 ? ~std::uint64_t{0} : ((std::uint64_t{1} << w) - 1);
}

void require_format(const ScalarBits& v, Format f, const char* what) {
  if (v.format() != f) {
    throw std::invalid_argument(std::string(what) + ": operand is " +
                                std::string(format_name(v.format())) + ", expected " +
                                std::string(format_name(f)));
  }
}

// Values of half formats are exact in binary32, so arithmetic runs there and
// rounds once. 24 >= 2p + 2 for p in {8, 11} keeps the double rounding exact.
float to_float_exact(const ScalarBits& v) {
  switch (v.format()) {
    case Format::BF16: return widen_bf16_bits(static_cast<std::uint16_t>(v.bits()));
    case Format::FP32: return std::bit_cast<float>(static_cast<std::uint32_t>(v.bits()));
    default: return static_cast<float>(v.to_double());
  }
}

}  // namespace

std::string_view format_name(Format f) {
  switch (f) {
    case Format::BF16: return "bf16";
    case Format::FP16: return "fp16";
    case Format::FP32: return "fp32";
    case Format::FP64REF: return "fp64";
  }
  return "?";
}

std::optional<Format> parse_format(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "bf16" || s == "bfloat16") return Format::BF16;
  if (s == "fp16" || s == "half") return Format::FP16;
  if (s == "fp32" || s == "float") return Format::FP32;
  if (s == "fp64" || s == "fp64ref" || s == "double") return Format::FP64REF;
  return std::nullopt;
}

ScalarBits ScalarBits::from_bits(Format format, std::uint64_t bits) {
  if ((bits & ~width_mask(format)) != 0) {
    throw std::invalid_argument("bit pattern wider than " + std::string(format_name(format)));
  }
  return ScalarBits(format, bits);
}

double ScalarBits::to_double() const {
  if (format_ == Format::FP64REF) return std::bit_cast<double>(bits_);
  if (format_ == Format::FP32) {
    return static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(bits_)));
  }
  const FloatFormat l = layout(format_);
  const std::uint64_t frac_mask = (std::uint64_t{1} << l.mantissa_bits) - 1;
  const std::uint64_t exp_field = (bits_ >> l.mantissa_bits) & ((1u << l.exponent_bits) - 1);
  const std::uint64_t frac = bits_ & frac_mask;
  const bool neg = sign();
  double mag;
  if (exp_field == (1u << l.exponent_bits) - 1) {
    mag = frac ? std::numeric_limits<double>::quiet_NaN() : std::numeric_limits<double>::infinity();
  } else if (exp_field == 0) {
    mag = std::ldexp(static_cast<double>(frac), l.min_exponent() - l.mantissa_bits);
  } else {
    mag = std::ldexp(static_cast<double>(frac | (frac_mask + 1)),
                     static_cast<int>(exp_field) - l.bias() - l.mantissa_bits);
  }
  return neg ? -mag : mag;
}

bool ScalarBits::is_nan() const {
  const FloatFormat l = layout(format_);
  const std::uint64_t abs = bits_ & (width_mask(format_) >> 1);
  const std::uint64_t inf = ((std::uint64_t{1} << l.exponent_bits) - 1) << l.mantissa_bits;
  return abs > inf;
}

bool ScalarBits::is_inf() const {
  const FloatFormat l = layout(format_);
  const std::uint64_t abs = bits_ & (width_mask(format_) >> 1);
  return abs == ((std::uint64_t{1} << l.exponent_bits) - 1) << l.mantissa_bits;
}

bool ScalarBits::is_zero() const { return (bits_ & (width_mask(format_) >> 1)) == 0; }

std::uint64_t canonical_nan_bits(Format f) {
  const FloatFormat l = layout(f);
  const std::uint64_t exp_all = ((std::uint64_t{1} << l.exponent_bits) - 1) << l.mantissa_bits;
  return exp_all | (std::uint64_t{1} << (l.mantissa_bits - 1));
}

ScalarBits encode(double value, Format target) {
  const FloatFormat l = layout(target);
  const int w = l.width();
  const std::uint64_t sign_bit = std::signbit(value) ? std::uint64_t{1} << (w - 1) : 0;

  if (std::isnan(value)) return ScalarBits(target, canonical_nan_bits(target));
  if (target == Format::FP64REF) return ScalarBits(target, std::bit_cast<std::uint64_t>(value));

  const std::uint64_t inf_bits = ((std::uint64_t{1} << l.exponent_bits) - 1) << l.mantissa_bits;
  if (std::isinf(value)) return ScalarBits(target, sign_bit | inf_bits);
  if (value == 0.0) return ScalarBits(target, sign_bit);

  // |value| = sig * 2^(exp - 52), sig a 53-bit integer with its top bit set.
  int exp = 0;
  const double frac = std::frexp(std::fabs(value), &exp);  // frac in [0.5, 1)
  exp -= 1;
  const auto sig = static_cast<std::uint64_t>(std::ldexp(frac, 53));

  const int p = l.precision();
  // Exponent of the least significant kept bit (the target quantum).
  const int quantum = std::max(exp, l.min_exponent()) - (p - 1);
  const int shift = quantum - (exp - 52);

  std::uint64_t q;
  if (shift <= 0) {
    q = sig << (-shift);
  } else if (shift >= 55) {
    q = 0;
  } else {
    q = sig >> shift;
    const std::uint64_t rem = sig & ((std::uint64_t{1} << shift) - 1);
    const std::uint64_t half = std::uint64_t{1} << (shift - 1);
    if (rem > half || (rem == half && (q & 1u))) ++q;
  }

  std::uint64_t mag;
  if (exp < l.min_exponent()) {
    // Subnormal: the field is the quantum count; a carry to 2^(p-1) lands
    // exactly on the smallest normal encoding.
    mag = q;
  } else {
    // q in [2^(p-1), 2^p]; adding onto (biased_exp - 1) propagates the carry.
    mag = (static_cast<std::uint64_t>(exp + l.bias() - 1) << (p - 1)) + q;
  }
  if (mag >= inf_bits) mag = inf_bits;
  return ScalarBits(target, sign_bit | mag);
}

double round_value(double x, Format f) {
  switch (f) {
    case Format::FP64REF: return x;
    case Format::FP32: return static_cast<double>(static_cast<float>(x));
    default: return encode(x, f).to_double();
  }
}

float round_float_to_fp16(float x) {
  const std::uint32_t u = std::bit_cast<std::uint32_t>(x);
  const std::uint32_t abs = u & 0x7fffffffu;
  const std::uint32_t sign = u & 0x80000000u;
  if (abs > 0x7f800000u) return std::bit_cast<float>(0x7fc00000u);
  // 65520 is the midpoint between 65504 (odd significand) and 2^16.
  if (abs >= 0x477ff000u) return std::bit_cast<float>(sign | 0x7f800000u);
  if (abs < 0x38800000u) {  // below 2^-14: fixed quantum 2^-24
    const float a = std::bit_cast<float>(abs);
    const float r = std::nearbyint(a * 0x1p24f) * 0x1p-24f;
    return std::bit_cast<float>(sign | std::bit_cast<std::uint32_t>(r));
  }
  std::uint32_t v = abs + 0xfffu + ((abs >> 13) & 1u);
  v &= ~std::uint32_t{0x1fff};
  return std::bit_cast<float>(sign | v);
}

ScalarBits round_to(const ScalarBits& value, Format target) {
  if (width_of(target) > width_of(value.format())) {
    throw std::invalid_argument("round_to: target wider than source; use widen");
  }
  if (value.is_nan()) return ScalarBits::from_bits(target, canonical_nan_bits(target));
  return encode(value.to_double(), target);
}

ScalarBits widen(const ScalarBits& value, Format target) {
  if (width_of(target) < width_of(value.format()) ||
      (width_of(target) == width_of(value.format()) && target != value.format())) {
    throw std::invalid_argument("widen: target narrower than source");
  }
  if (value.is_nan()) return ScalarBits::from_bits(target, canonical_nan_bits(target));
  return encode(value.to_double(), target);
}

ScalarBits parse_decimal(std::string_view text, Format target) {
  std::string s(text);
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (s.empty() || end != begin + s.size()) {
    throw std::invalid_argument("parse_decimal: malformed literal '" + s + "'");
  }
  return encode(v, target);
}

ScalarBits add(const ScalarBits& a, const ScalarBits& b, Format format) {
  require_format(a, format, "add");
  require_format(b, format, "add");
  switch (format) {
    case Format::FP64REF: return encode(a.to_double() + b.to_double(), format);
    case Format::FP32: return encode(static_cast<double>(to_float_exact(a) + to_float_exact(b)), format);
    default: break;
  }
  const float s = to_float_exact(a) + to_float_exact(b);
  return encode(static_cast<double>(s), format);
}

ScalarBits mul(const ScalarBits& a, const ScalarBits& b, Format format) {
  require_format(a, format, "mul");
  require_format(b, format, "mul");
  switch (format) {
    case Format::FP64REF: return encode(a.to_double() * b.to_double(), format);
    case Format::FP32: return encode(static_cast<double>(to_float_exact(a) * to_float_exact(b)), format);
    default: break;
  }
  const float p = to_float_exact(a) * to_float_exact(b);
  return encode(static_cast<double>(p), format);
}

std::string bit_string(const ScalarBits& v) {
  const int w = width_of(v.format());
  std::string out(static_cast<std::size_t>(w), '0');
  for (int i = 0; i < w; ++i) {
    if ((v.bits() >> (w - 1 - i)) & 1u) out[static_cast<std::size_t>(i)] = '1';
  }
  return out;
}

ScalarBits from_bit_string(Format format, std::string_view text) {
  const int w = width_of(format);
  if (static_cast<int>(text.size()) != w) {
    throw std::invalid_argument("from_bit_string: expected " + std::to_string(w) + " digits");
  }
  std::uint64_t bits = 0;
  for (char c : text) {
    if (c != '0' && c != '1') throw std::invalid_argument("from_bit_string: non-binary digit");
    bits = (bits << 1) | static_cast<std::uint64_t>(c == '1');
  }
  return ScalarBits::from_bits(format, bits);
}

std::string exact_decimal(const ScalarBits& v) {
  const double x = v.to_double();
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x < 0 ? "-inf" : "inf";
  // A binary64 value has at most 1074 fractional decimal digits; to_chars in
  // fixed notation with that precision is exact, then trailing zeros go.
  std::string buf(1500, '\0');
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x, std::chars_format::fixed, 1074);
  buf.resize(static_cast<std::size_t>(res.ptr - buf.data()));
  while (!buf.empty() && buf.back() == '0') buf.pop_back();
  if (!buf.empty() && buf.back() == '.') buf += '0';
  return buf;
}

double rounding_error(const ScalarBits& rounded, double reference) {
  return rounded.to_double() - reference;
}

}  // namespace fplab
