#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dfpq {

// Stored values are alpha * beta where beta = 2^(ehat-1) * signed-significand
// is decoded from an n-bit code with p significand bits and n-p-1 exponent
// bits. Every representable beta is an integer.
enum class Encoding { SignMagnitude, TwosComplement };

// ExtendNumeric uses every code as a number; ReserveInfNan mirrors IEEE-754 by
// reserving the all-ones exponent field (zero significand = Inf, else NaN).
enum class InfNanMode { ExtendNumeric, ReserveInfNan };

struct FloatFormat {
  int n = 8;  // total code bits, 2..16
  int p = 4;  // significand bits, 0..n-1
  Encoding encoding = Encoding::SignMagnitude;
  bool subnormals = true;  // false invalidates codes with ehat==0 and sig!=0
  InfNanMode inf_nan = InfNanMode::ExtendNumeric;

  int exponent_bits() const { return n - p - 1; }
  void validate() const;  // throws std::invalid_argument
  std::string to_string() const;
  bool operator==(const FloatFormat&) const = default;
};

enum class CodeClass { Numeric, Inf, NaN, InvalidSubnormal };

// Exact decoded value mant * 2^exp2. Canonical form keeps mant odd (or zero
// with exp2 == 0) so equal values compare equal. exp2 can reach 2^15 - 2 for
// n=16 formats, far beyond both int64 and double range, hence this struct.
struct ExactValue {
  std::int64_t mant = 0;
  std::int32_t exp2 = 0;

  static ExactValue make(std::int64_t mant, std::int32_t exp2);
  bool is_zero() const { return mant == 0; }
  bool negative() const { return mant < 0; }
  // -1 / 0 / +1 comparison of exact values.
  static int compare(const ExactValue& a, const ExactValue& b);
  bool operator==(const ExactValue&) const = default;

  bool fits_int64() const;
  std::int64_t to_int64() const;       // throws std::overflow_error if huge
  bool fits_double() const;            // exactly representable as double
  double to_double() const;            // exact when fits_double()
  std::string to_string() const;       // exact decimal or "m*2^e" for huge
};

// Field extraction ---------------------------------------------------------

// Unsigned exponent field; identically 0 when p == n-1.
int exponent_of_code(std::uint32_t code, const FloatFormat& fmt);
int significand_of_code(std::uint32_t code, const FloatFormat& fmt);
bool sign_of_code(std::uint32_t code, const FloatFormat& fmt);

CodeClass classify_code(std::uint32_t code, const FloatFormat& fmt);

// Decoding -----------------------------------------------------------------

// Numeric codes only; throws std::domain_error for Inf/NaN codes and
// std::invalid_argument for subnormal codes when subnormals are disabled.
ExactValue decode_exact(std::uint32_t code, const FloatFormat& fmt);

// Convenience int64 decode; throws std::overflow_error when the value is too
// large (possible for n >= 9 with few significand bits).
std::int64_t decode_code(std::uint32_t code, const FloatFormat& fmt);
double decode_to_double(std::uint32_t code, const FloatFormat& fmt);

// Largest representable value (equals the largest magnitude for the
// sign-magnitude encoding). Closed form for ExtendNumeric; derived by
// enumeration for ReserveInfNan.
ExactValue beta_max_exact(const FloatFormat& fmt);
std::int64_t beta_max(const FloatFormat& fmt);  // throws std::overflow_error if huge

// True when every representable value converts to double without overflow,
// the requirement for the rounding/quantization/engine fast paths.
bool is_computable(const FloatFormat& fmt);

// Enumeration --------------------------------------------------------------

// All distinct numeric values, ascending. Exhaustive over all 2^n codes.
std::vector<ExactValue> enumerate_values_exact(const FloatFormat& fmt);

// Same values as doubles; requires is_computable(fmt).
std::vector<double> enumerate_values(const FloatFormat& fmt);

// Non-negative values divided by beta_max, ascending in [0, 1]. Works for
// every valid format (ratios stay in double range).
std::vector<double> fpspace_normalized(const FloatFormat& fmt);

// Cached per-format table: distinct values with canonical codes (smallest
// unsigned code wins) and significand parity (even preferred across
// duplicate codes). Shared by rounding oracles and the engine.
struct ValueTable {
  FloatFormat fmt;
  std::vector<ExactValue> values;      // ascending
  std::vector<std::uint16_t> codes;    // canonical code per value
  std::vector<std::uint8_t> sig_odd;   // 0 = some code has even significand
  std::vector<double> dvalues;         // only filled when computable
  bool computable = false;

  std::size_t index_of_code(std::uint32_t code) const;  // by decoded value
};

const ValueTable& value_table(const FloatFormat& fmt);

// Rounding -----------------------------------------------------------------

// Nearest representable value by direct per-bucket arithmetic (no search over
// an enumerated table). Ties prefer the even significand; ties between two
// even (or two odd) significands prefer the smaller magnitude. Returns the
// canonical code; zero always rounds to the positive-zero code.
// Strict form requires |x| <= beta_max and finite x (std::domain_error).
std::uint16_t round_to_format(double x, const FloatFormat& fmt);

// Same, but clamps x into [-beta_max, beta_max] first.
std::uint16_t round_saturating(double x, const FloatFormat& fmt);

}  // namespace dfpq
