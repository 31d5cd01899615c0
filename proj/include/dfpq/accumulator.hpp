#pragma once

#include <cstdint>

#include <boost/multiprecision/cpp_int.hpp>

#include "dfpq/format.hpp"

namespace dfpq {

// Arbitrary-precision integer for range analysis: operand bounds are format
// magnitudes that can reach 2^126 and beyond, so products and scaled sums
// overflow any fixed-width type.
using BigInt = boost::multiprecision::cpp_int;

BigInt exact_to_bigint(const ExactValue& v);

// bits needed for x >= 0 (0 -> 0); and the ceiling of log2(x) for x >= 1.
int bit_length(const BigInt& x);
int ceil_log2(const BigInt& x);

// Integer operand range [-b - epsilon, b] with b >= 1, epsilon >= 0. A
// clamped quantized tensor always has epsilon = 0; the epsilon >= 1 forms
// exist for unclamped two's-complement lattices.
struct OperandRange {
  BigInt b = 1;
  BigInt epsilon = 0;

  void validate() const;  // throws std::invalid_argument
  BigInt a() const { return -b - epsilon; }
};

struct Interval {
  BigInt lo;
  BigInt hi;
  bool operator==(const Interval&) const = default;
};

// Accumulator requirement for one reduction: q-bit two's-complement signed
// accumulation is exact for up to n_max in-range terms.
struct AccumulatorSpec {
  int q = 0;
  BigInt n_max = 0;
};

// Multiply-accumulate: range of an N-term sum of products, the smallest
// accumulator width that contains it, and the largest safe term count at a
// fixed width. Widths assume a two's-complement accumulator: values must stay
// in [-2^(q-1), 2^(q-1) - 1].
Interval mac_bounds(const OperandRange& x, const OperandRange& y, std::int64_t n_terms);
int mac_min_q(const OperandRange& x, const OperandRange& y, std::int64_t n_terms);
BigInt mac_max_n(const OperandRange& x, const OperandRange& y, int q);

// Eltwise addition: same three quantities for an N-term sum of plain terms.
Interval add_bounds(const OperandRange& x, std::int64_t n_terms);
int add_min_q(const OperandRange& x, std::int64_t n_terms);
BigInt add_max_n(const OperandRange& x, int q);

}  // namespace dfpq
