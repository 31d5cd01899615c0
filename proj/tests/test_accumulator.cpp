#include "dfpq/accumulator.hpp"

#include <algorithm>
#include <stdexcept>

#include "doctest.h"

using namespace dfpq;

namespace {

OperandRange op(std::int64_t b, std::int64_t eps = 0) {
  OperandRange r;
  r.b = b;
  r.epsilon = eps;
  return r;
}

// Brute-force oracle: extreme single products over the integer boxes, scaled
// by the term count (terms are independent, so the N-term extremes are N
// times the single-term extremes).
Interval brute_mac_bounds(const OperandRange& x, const OperandRange& y, int n) {
  BigInt lo = 0, hi = 0;
  bool first = true;
  for (BigInt bx = x.a(); bx <= x.b; ++bx) {
    for (BigInt by = y.a(); by <= y.b; ++by) {
      const BigInt prod = bx * by;
      if (first || prod < lo) lo = prod;
      if (first || prod > hi) hi = prod;
      first = false;
    }
  }
  return {n * lo, n * hi};
}

bool fits(const Interval& iv, int q) {
  const BigInt half = BigInt(1) << (q - 1);
  return iv.lo >= -half && iv.hi <= half - 1;
}

int oracle_min_q(const Interval& iv) {
  for (int q = 2;; ++q)
    if (fits(iv, q)) return q;
}

}  // namespace

TEST_SUITE("accumulator") {

TEST_CASE("bit_length and ceil_log2 basics") {
  CHECK(bit_length(BigInt(0)) == 0);
  CHECK(bit_length(BigInt(1)) == 1);
  CHECK(bit_length(BigInt(7)) == 3);
  CHECK(bit_length(BigInt(8)) == 4);
  CHECK(bit_length(BigInt(1) << 100) == 101);
  CHECK(ceil_log2(BigInt(1)) == 0);
  CHECK(ceil_log2(BigInt(8)) == 3);
  CHECK(ceil_log2(BigInt(9)) == 4);
}

TEST_CASE("mac_bounds frozen examples") {
  CHECK(mac_bounds(op(1), op(1), 1) == Interval{-1, 1});
  CHECK(mac_bounds(op(3), op(5), 2) == Interval{-30, 30});
  // One-sided excess: the worst negative product pairs the extended negative
  // end -4 with the other operand's +5.
  CHECK(mac_bounds(op(3, 1), op(5), 1) == Interval{-20, 20});
  CHECK(brute_mac_bounds(op(3, 1), op(5), 1) == Interval{-20, 20});
  // Symmetric in its arguments.
  CHECK(mac_bounds(op(5), op(3, 1), 1) == Interval{-20, 20});
}

TEST_CASE("mac_min_q frozen examples") {
  CHECK(mac_min_q(op(1), op(1), 1) == 2);
  CHECK(mac_min_q(op(127), op(127), 1024) == 25);
  CHECK(mac_min_q(op(1984), op(1984), 1) == 23);
  // The excess enters per operand; the cross-operand reading would give 6.
  CHECK(mac_min_q(op(1, 1), op(7), 1) == 5);
}

TEST_CASE("mac_max_n frozen examples") {
  CHECK(mac_max_n(op(127), op(127), 32) == ((BigInt(1) << 31) - 1) / 16129);
  CHECK(mac_max_n(op(5), op(1), 8) == 25);
  CHECK_THROWS_AS(mac_max_n(op(1984), op(1984), 8), std::domain_error);
}

TEST_CASE("add frozen examples") {
  CHECK(add_bounds(op(1), 3) == Interval{-3, 3});
  CHECK(add_bounds(op(7), 4) == Interval{-28, 28});
  CHECK(add_bounds(op(7, 1), 4) == Interval{-32, 28});
  CHECK(add_min_q(op(1), 3) == 3);
  CHECK(add_min_q(op(7), 4) == 6);
  CHECK(add_min_q(op(7, 1), 4) == 6);
  CHECK(add_max_n(op(5), 8) == 25);
  CHECK(add_max_n(op(5, 1), 8) == 21);
  CHECK(add_max_n(op(1), 2) == 1);
  CHECK_THROWS_AS(add_max_n(op(200), 2), std::domain_error);
}

TEST_CASE("exhaustive grid: widths are safe, minimal, and N-tight (mac)") {
  for (int bx = 1; bx <= 8; ++bx) {
    for (int by = 1; by <= 8; ++by) {
      for (int ex = 0; ex <= 1; ++ex) {
        for (int ey = 0; ey <= 1; ++ey) {
          for (int n = 1; n <= 16; ++n) {
            const OperandRange x = op(bx, ex), y = op(by, ey);
            const Interval brute = brute_mac_bounds(x, y, n);
            CAPTURE(bx);
            CAPTURE(by);
            CAPTURE(ex);
            CAPTURE(ey);
            CAPTURE(n);
            REQUIRE(mac_bounds(x, y, n) == brute);
            const int q = mac_min_q(x, y, n);
            REQUIRE(q == oracle_min_q(brute));  // safe and minimal
            // At this width, the closed-form term cap is safe and one more
            // term overflows.
            const BigInt cap = mac_max_n(x, y, q);
            REQUIRE(cap >= n);
            const Interval one = brute_mac_bounds(x, y, 1);
            REQUIRE(fits(Interval{cap * one.lo, cap * one.hi}, q));
            REQUIRE(!fits(Interval{(cap + 1) * one.lo, (cap + 1) * one.hi}, q));
          }
        }
      }
    }
  }
}

TEST_CASE("exhaustive grid: widths are safe, minimal, and N-tight (add)") {
  for (int bx = 1; bx <= 8; ++bx) {
    for (int ex = 0; ex <= 1; ++ex) {
      for (int n = 1; n <= 16; ++n) {
        const OperandRange x = op(bx, ex);
        const Interval brute = add_bounds(x, n);
        CAPTURE(bx);
        CAPTURE(ex);
        CAPTURE(n);
        const int q = add_min_q(x, n);
        REQUIRE(q == oracle_min_q(brute));  // safe and minimal in both branches
        const BigInt cap = add_max_n(x, q);
        REQUIRE(cap >= n);
        REQUIRE(fits(Interval{cap * x.a(), cap * x.b}, q));
        REQUIRE(!fits(Interval{(cap + 1) * x.a(), (cap + 1) * x.b}, q));
      }
    }
  }
}

TEST_CASE("round-trip consistency between q and N") {
  for (int bx : {1, 3, 8, 127}) {
    for (int by : {1, 5, 127}) {
      for (int n : {1, 7, 100}) {
        const int q = mac_min_q(op(bx), op(by), n);
        CHECK(mac_max_n(op(bx), op(by), q) >= n);
        const int qa = add_min_q(op(bx), n);
        CHECK(add_max_n(op(bx), qa) >= n);
      }
    }
  }
}

TEST_CASE("huge-format operands stay exact") {
  // 8-bit p=1 extreme: b = 3 * 2^62; a 72-term reduction of such products
  // needs a 135-bit accumulator.
  const BigInt b = exact_to_bigint(beta_max_exact(FloatFormat{8, 1}));
  CHECK(b == BigInt(3) << 62);
  OperandRange x;
  x.b = b;
  CHECK(mac_min_q(x, x, 72) == 135);
  const Interval iv = mac_bounds(x, x, 72);
  CHECK(iv.hi == BigInt(72) * b * b);
  CHECK(oracle_min_q(iv) == 135);
}

TEST_CASE("input validation") {
  CHECK_THROWS_AS(mac_bounds(op(0), op(1), 1), std::invalid_argument);
  CHECK_THROWS_AS(mac_bounds(op(1, -1), op(1), 1), std::invalid_argument);
  CHECK_THROWS_AS(mac_bounds(op(1), op(1), 0), std::invalid_argument);
  CHECK_THROWS_AS(mac_max_n(op(1), op(1), 1), std::invalid_argument);
  CHECK_THROWS_AS(add_max_n(op(1), 0), std::invalid_argument);
}

}  // TEST_SUITE
