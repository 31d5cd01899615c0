#include "dfpq/accumulator.hpp"

#include <stdexcept>
#include <string>

namespace dfpq {

namespace {

void check_terms(std::int64_t n_terms) {
  if (n_terms < 1)
    throw std::invalid_argument("accumulator: term count must be >= 1, got " +
                                std::to_string(n_terms));
}

void check_q(int q) {
  if (q < 2) throw std::invalid_argument("accumulator: width must be >= 2, got " + std::to_string(q));
}

}  // namespace

BigInt exact_to_bigint(const ExactValue& v) { return BigInt(v.mant) << v.exp2; }

int bit_length(const BigInt& x) {
  if (x < 0) throw std::invalid_argument("bit_length: negative input");
  if (x == 0) return 0;
  return static_cast<int>(boost::multiprecision::msb(x)) + 1;
}

int ceil_log2(const BigInt& x) {
  if (x < 1) throw std::invalid_argument("ceil_log2: input must be >= 1");
  return bit_length(x - 1);
}

void OperandRange::validate() const {
  if (b < 1) throw std::invalid_argument("operand range: upper bound must be >= 1");
  if (epsilon < 0) throw std::invalid_argument("operand range: epsilon must be >= 0");
}

Interval mac_bounds(const OperandRange& x, const OperandRange& y, std::int64_t n_terms) {
  x.validate();
  y.validate();
  check_terms(n_terms);
  // Convention: order the operands so ay*bx <= ax*by; both corner products are
  // reachable, the convention just names the smaller one.
  const OperandRange* px = &x;
  const OperandRange* py = &y;
  if (py->a() * px->b > px->a() * py->b) std::swap(px, py);
  return {n_terms * py->a() * px->b, n_terms * px->a() * py->a()};
}

int mac_min_q(const OperandRange& x, const OperandRange& y, std::int64_t n_terms) {
  x.validate();
  y.validate();
  check_terms(n_terms);
  // The positive corner (b_x + eps_x)(b_y + eps_y) dominates the negative
  // corner in magnitude, so only the upper bound constrains the width.
  const BigInt upper = n_terms * (x.b + x.epsilon) * (y.b + y.epsilon);
  return bit_length(upper) + 1;
}

BigInt mac_max_n(const OperandRange& x, const OperandRange& y, int q) {
  x.validate();
  y.validate();
  check_q(q);
  const BigInt n = ((BigInt(1) << (q - 1)) - 1) / ((x.b + x.epsilon) * (y.b + y.epsilon));
  if (n == 0)
    throw std::domain_error("accumulator: " + std::to_string(q) +
                            " bits is too narrow for even one product");
  return n;
}

Interval add_bounds(const OperandRange& x, std::int64_t n_terms) {
  x.validate();
  check_terms(n_terms);
  return {n_terms * x.a(), n_terms * x.b};
}

int add_min_q(const OperandRange& x, std::int64_t n_terms) {
  x.validate();
  check_terms(n_terms);
  if (x.epsilon == 0) return bit_length(n_terms * x.b) + 1;
  // With epsilon >= 1 the lower corner -N(b + eps) dominates; a width whose
  // half-range reaches it automatically covers the smaller upper corner.
  return ceil_log2(n_terms * (x.b + x.epsilon)) + 1;
}

BigInt add_max_n(const OperandRange& x, int q) {
  x.validate();
  check_q(q);
  const BigInt half = BigInt(1) << (q - 1);
  const BigInt n = x.epsilon == 0 ? BigInt((half - 1) / x.b) : BigInt(half / (x.b + x.epsilon));
  if (n == 0)
    throw std::domain_error("accumulator: " + std::to_string(q) +
                            " bits is too narrow for even one term");
  return n;
}

}  // namespace dfpq
