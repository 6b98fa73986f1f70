#pragma once

#include <bit>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace fplab {

enum class Format : std::uint8_t { BF16 = 0, FP16 = 1, FP32 = 2, FP64REF = 3 };

// Bit layout of a binary floating-point format. mantissa_bits counts the
// stored fraction bits only (the implicit leading bit is not included).
struct FloatFormat {
  Format name;
  int sign_bits;
  int exponent_bits;
  int mantissa_bits;

  constexpr int width() const { return sign_bits + exponent_bits + mantissa_bits; }
  constexpr int precision() const { return mantissa_bits + 1; }
  constexpr int bias() const { return (1 << (exponent_bits - 1)) - 1; }
  constexpr int min_exponent() const { return 1 - bias(); }
  constexpr int max_exponent() const { return bias(); }
};

constexpr FloatFormat layout(Format f) {
  switch (f) {
    case Format::BF16: return {Format::BF16, 1, 8, 7};
    case Format::FP16: return {Format::FP16, 1, 5, 10};
    case Format::FP32: return {Format::FP32, 1, 8, 23};
    case Format::FP64REF: break;
  }
  return {Format::FP64REF, 1, 11, 52};
}

constexpr int width_of(Format f) { return layout(f).width(); }

std::string_view format_name(Format f);
// Accepts "bf16", "fp16", "fp32", "fp64" (case-insensitive).
std::optional<Format> parse_format(std::string_view name);

// A raw bit pattern tagged with its format. Bits above the format width are
// always zero.
class ScalarBits {
 public:
  constexpr ScalarBits() = default;

  // Throws std::invalid_argument when bits does not fit in the format width.
  static ScalarBits from_bits(Format format, std::uint64_t bits);

  constexpr Format format() const { return format_; }
  constexpr std::uint64_t bits() const { return bits_; }

  // Exact value; every format here embeds exactly into binary64.
  double to_double() const;

  bool is_nan() const;
  bool is_inf() const;
  bool is_zero() const;
  bool sign() const { return (bits_ >> (width_of(format_) - 1)) & 1u; }

  friend constexpr bool operator==(const ScalarBits&, const ScalarBits&) = default;

 private:
  constexpr ScalarBits(Format f, std::uint64_t b) : format_(f), bits_(b) {}
  friend ScalarBits encode(double value, Format target);

  Format format_ = Format::FP32;
  std::uint64_t bits_ = 0;
};

// Rounds an arbitrary binary64 value to the target format
// (round-to-nearest-even, gradual underflow, overflow to infinity,
// canonical quiet NaN).
ScalarBits encode(double value, Format target);

std::uint64_t canonical_nan_bits(Format f);

// Round a value held in a wider (or equal) format to target.
ScalarBits round_to(const ScalarBits& value, Format target);

// Exact widening; throws std::invalid_argument if target is narrower.
ScalarBits widen(const ScalarBits& value, Format target);

// Decimal literal -> nearest binary64 -> rounded once to target.
// Throws std::invalid_argument for malformed text.
ScalarBits parse_decimal(std::string_view text, Format target);

// Correctly rounded arithmetic in `format`. Operands must already be in
// `format` (std::invalid_argument otherwise). Products and sums round
// independently; there is no fused path.
ScalarBits add(const ScalarBits& a, const ScalarBits& b, Format format);
ScalarBits mul(const ScalarBits& a, const ScalarBits& b, Format format);

// MSB-first binary rendering of exactly width_of(format) characters.
std::string bit_string(const ScalarBits& v);
// Inverse of bit_string. Throws std::invalid_argument on bad length or digits.
ScalarBits from_bit_string(Format format, std::string_view text);

// Full exact decimal expansion of a finite value ("1.00012004375457763671875").
// Non-finite values render as "nan", "inf", "-inf".
std::string exact_decimal(const ScalarBits& v);

// Signed error (rounded - reference) evaluated in binary64.
double rounding_error(const ScalarBits& rounded, double reference);

// ---------------------------------------------------------------------------
// Fast value-domain helpers used by the tensor kernels. All take and return
// values that are exactly representable in the named format.

inline float round_float_to_bf16(float x) {
  std::uint32_t u = std::bit_cast<std::uint32_t>(x);
  if ((u & 0x7fffffffu) > 0x7f800000u) return std::bit_cast<float>(0x7fc00000u);
  u += 0x7fffu + ((u >> 16) & 1u);
  return std::bit_cast<float>(u & 0xffff0000u);
}

float round_float_to_fp16(float x);

inline std::uint16_t bf16_bits_of(float bf16_value) {
  return static_cast<std::uint16_t>(std::bit_cast<std::uint32_t>(bf16_value) >> 16);
}

inline float widen_bf16_bits(std::uint16_t bits) {
  return std::bit_cast<float>(static_cast<std::uint32_t>(bits) << 16);
}

// Round a binary64 value to the format and return it as binary64.
double round_value(double x, Format f);

}  // namespace fplab
