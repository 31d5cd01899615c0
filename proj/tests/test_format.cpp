#include "dfpq/format.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <stdexcept>
#include <vector>

#include "doctest.h"

using namespace dfpq;

namespace {

// Independent transliteration of the decode rules, kept deliberately separate
// from the library implementation: works on raw bit fields and returns the
// value as (mantissa, shift) before any canonicalization.
struct RawValue {
  std::int64_t mant;
  int shift;
};

RawValue reference_decode(std::uint32_t code, int n, int p, bool twos_complement) {
  const int ebits = n - p - 1;
  const std::int64_t sig = code & ((1u << p) - 1u);
  const std::int64_t ehat = ebits == 0 ? 0 : (code >> p) & ((1u << ebits) - 1u);
  const bool neg = (code >> (n - 1)) & 1u;
  const std::int64_t hidden = std::int64_t{1} << p;
  std::int64_t m;
  if (!twos_complement) {
    m = ehat == 0 ? sig : hidden + sig;
    if (neg) m = -m;
  } else {
    // The sign bit weighs -(2^p + 2^(p+1)) in both branches; the hidden bit
    // joins only when ehat > 0.
    if (ehat == 0) {
      m = sig - (neg ? 3 * hidden : 0);
    } else {
      m = sig + hidden - (neg ? 3 * hidden : 0);
    }
  }
  return {m, ehat == 0 ? 0 : static_cast<int>(ehat) - 1};
}

std::set<std::int64_t> int_value_set(const FloatFormat& fmt) {
  std::set<std::int64_t> out;
  for (std::uint32_t code = 0; code < (1u << fmt.n); ++code) {
    if (classify_code(code, fmt) != CodeClass::Numeric) continue;
    out.insert(decode_code(code, fmt));
  }
  return out;
}

FloatFormat make(int n, int p) {
  FloatFormat f;
  f.n = n;
  f.p = p;
  return f;
}

}  // namespace

TEST_SUITE("format") {

TEST_CASE("format validation rejects out-of-range parameters") {
  CHECK_THROWS_AS(make(1, 0).validate(), std::invalid_argument);
  CHECK_THROWS_AS(make(17, 4).validate(), std::invalid_argument);
  CHECK_THROWS_AS(make(8, 8).validate(), std::invalid_argument);
  CHECK_THROWS_AS(make(8, -1).validate(), std::invalid_argument);
  CHECK_NOTHROW(make(2, 0).validate());
  CHECK_NOTHROW(make(2, 1).validate());
  CHECK_NOTHROW(make(16, 15).validate());
}

TEST_CASE("exponent field extraction") {
  // 8-bit, p=4: bits [s e e e m m m m], exponent field 101 -> 5.
  CHECK(exponent_of_code(0b0'101'0000, make(8, 4)) == 5);
  // 3-bit, p=1: bits [s e m].
  CHECK(exponent_of_code(0b0'1'0, make(3, 1)) == 1);
  CHECK(exponent_of_code(0b0'0'1, make(3, 1)) == 0);
  // p == n-1 leaves no exponent field; ehat is identically zero.
  for (std::uint32_t c = 0; c < 16; ++c) CHECK(exponent_of_code(c, make(4, 3)) == 0);
}

TEST_CASE("decode matches the independent bit-field transliteration") {
  for (int n : {2, 3, 4, 5, 8}) {
    for (int p = 0; p < n; ++p) {
      for (Encoding enc : {Encoding::SignMagnitude, Encoding::TwosComplement}) {
        FloatFormat fmt = make(n, p);
        fmt.encoding = enc;
        for (std::uint32_t code = 0; code < (1u << n); ++code) {
          ExactValue got = decode_exact(code, fmt);
          RawValue want = reference_decode(code, n, p, enc == Encoding::TwosComplement);
          ExactValue want_canon = ExactValue::make(want.mant, want.shift);
          CAPTURE(n);
          CAPTURE(p);
          CAPTURE(code);
          CHECK(got == want_canon);
        }
      }
    }
  }
}

TEST_CASE("frozen decode examples") {
  // 8-bit p=4, sign 0, ehat=7, significand 15 -> 2^6 * 31 = 1984.
  CHECK(decode_code(0b0'111'1111, make(8, 4)) == 1984);
  // Negative-zero code decodes to plain zero.
  CHECK(decode_code(0b1000, make(4, 1)) == 0);
}

TEST_CASE("beta_max frozen values and closed form") {
  CHECK(beta_max(make(8, 7)) == 127);  // no exponent bits
  CHECK(beta_max(make(8, 4)) == 1984);
  CHECK(beta_max(make(8, 6)) == 127);  // int8-like lattice
  CHECK(beta_max(make(4, 1)) == 12);
}

TEST_CASE("beta_max equals enumeration max; decoded values are integers") {
  for (int n = 2; n <= 6; ++n) {
    for (int p = 0; p < n; ++p) {
      for (Encoding enc : {Encoding::SignMagnitude, Encoding::TwosComplement}) {
        for (bool sub : {true, false}) {
          FloatFormat fmt = make(n, p);
          fmt.encoding = enc;
          fmt.subnormals = sub;
          auto values = enumerate_values_exact(fmt);
          REQUIRE(!values.empty());
          CHECK(std::is_sorted(values.begin(), values.end(),
                               [](const ExactValue& a, const ExactValue& b) {
                                 return ExactValue::compare(a, b) < 0;
                               }));
          for (const ExactValue& v : values) CHECK(v.exp2 >= 0);  // integral
          // Largest value: closed form holds whenever the top normal exists.
          if (sub || p < n - 1) {
            CHECK(values.back() == beta_max_exact(fmt));
          } else {
            // Degenerate: no exponent field and no subnormals leaves only zero.
            CHECK(values.back().is_zero());
            CHECK(beta_max_exact(fmt).is_zero());
          }
        }
      }
    }
  }
}

TEST_CASE("frozen value sets") {
  CHECK(int_value_set(make(4, 1)) ==
        std::set<std::int64_t>{-12, -8, -6, -4, -3, -2, -1, 0, 1, 2, 3, 4, 6, 8, 12});
  CHECK(int_value_set(make(2, 1)) == std::set<std::int64_t>{-1, 0, 1});
  CHECK(int_value_set(make(2, 0)) == std::set<std::int64_t>{-1, 0, 1});

  // Two's-complement negatives differ: the ehat==0 branch sits at -3*2^p and
  // the smallest-magnitude negative is -(2^p + 1), not -1.
  FloatFormat tc41 = make(4, 1);
  tc41.encoding = Encoding::TwosComplement;
  CHECK(int_value_set(tc41) ==
        std::set<std::int64_t>{-16, -12, -8, -6, -5, -4, -3, 0, 1, 2, 3, 4, 6, 8, 12});

  FloatFormat tc84 = make(8, 4);
  tc84.encoding = Encoding::TwosComplement;
  auto sm_set = int_value_set(make(8, 4));
  auto tc_set = int_value_set(tc84);
  // Positive halves coincide.
  for (std::int64_t v : sm_set)
    if (v >= 0) CHECK(tc_set.count(v) == 1);
  // The two's-complement magnitude range extends past beta_max...
  CHECK(*tc_set.begin() == -2048);                    // 2^7 * -16
  CHECK(tc_set.count(-2047) == 0);                    // ...but with gaps
  // ...and small negative integers -1..-16 are unrepresentable except via
  // the shifted ehat==0 block starting at -3*2^4 = -48.
  for (std::int64_t v = -16; v <= -1; ++v) CHECK(tc_set.count(v) == 0);
  CHECK(tc_set.count(-48) == 1);
  CHECK(tc_set.count(-33) == 1);  // -48 + 15
}

TEST_CASE("disabling subnormals removes exactly the nonzero ehat==0 significands") {
  // Exact (mantissa, shift) pairs; values for low p overflow int64 at n=8.
  auto exact_set = [](const FloatFormat& fmt) {
    std::set<std::pair<std::int64_t, std::int32_t>> out;
    for (const ExactValue& v : enumerate_values_exact(fmt)) out.insert({v.mant, v.exp2});
    return out;
  };
  for (int n : {4, 6, 8}) {
    for (int p = 0; p < n; ++p) {
      FloatFormat on = make(n, p);
      FloatFormat off = on;
      off.subnormals = false;
      auto a = exact_set(on);
      auto b = exact_set(off);
      const ExactValue step = ExactValue::make(1, p);
      std::set<std::pair<std::int64_t, std::int32_t>> expect;
      for (const auto& [mant, exp2] : a) {
        const ExactValue mag{std::abs(mant), exp2};
        if (!(mant != 0 && ExactValue::compare(mag, step) < 0)) expect.insert({mant, exp2});
      }
      CHECK(b == expect);
    }
  }
}

TEST_CASE("reserved Inf/NaN codes follow the IEEE layout") {
  FloatFormat fmt = make(8, 4);
  fmt.inf_nan = InfNanMode::ReserveInfNan;
  int inf = 0, nan = 0, numeric = 0;
  for (std::uint32_t c = 0; c < 256; ++c) {
    switch (classify_code(c, fmt)) {
      case CodeClass::Inf: ++inf; break;
      case CodeClass::NaN: ++nan; break;
      case CodeClass::Numeric: ++numeric; break;
      default: break;
    }
  }
  CHECK(inf == 2);        // +/- Inf
  CHECK(nan == 30);       // 2 signs * 15 nonzero significands
  CHECK(numeric == 224);
  // Top numeric exponent drops to 6: beta_max = 2^5 * 31 = 992.
  CHECK(beta_max(fmt) == 992);
  auto vals = enumerate_values_exact(fmt);
  CHECK(vals.back() == beta_max_exact(fmt));
  CHECK_THROWS_AS(decode_code(0b0'111'0000, fmt), std::domain_error);
  CHECK_THROWS_AS(decode_code(0b0'111'0001, fmt), std::domain_error);

  // One exponent bit: reserving kills every normal; only subnormals remain.
  FloatFormat tiny = make(4, 2);
  tiny.inf_nan = InfNanMode::ReserveInfNan;
  CHECK(int_value_set(tiny) == std::set<std::int64_t>{-3, -2, -1, 0, 1, 2, 3});
  CHECK(beta_max(tiny) == 3);

  // No exponent field at all: nothing to reserve.
  FloatFormat none = make(4, 3);
  none.inf_nan = InfNanMode::ReserveInfNan;
  CHECK(int_value_set(none) == int_value_set(make(4, 3)));
}

TEST_CASE("invalid subnormal codes error out of decode") {
  FloatFormat fmt = make(8, 4);
  fmt.subnormals = false;
  CHECK(classify_code(0b0'000'0001, fmt) == CodeClass::InvalidSubnormal);
  CHECK_THROWS_AS(decode_code(0b0'000'0001, fmt), std::invalid_argument);
  CHECK(decode_code(0b0'000'0000, fmt) == 0);
}

TEST_CASE("normalized grid endpoints and the 3-bit example") {
  auto grid = fpspace_normalized(make(3, 1));
  REQUIRE(grid.size() == 4);
  CHECK(grid[0] == doctest::Approx(0.0));
  CHECK(grid[1] == doctest::Approx(1.0 / 3.0));
  CHECK(grid[2] == doctest::Approx(2.0 / 3.0));
  CHECK(grid[3] == doctest::Approx(1.0));
  for (int n : {2, 4, 8}) {
    for (int p = 0; p < n; ++p) {
      auto g = fpspace_normalized(make(n, p));
      CHECK(g.front() == 0.0);
      CHECK(g.back() == 1.0);
      CHECK(std::is_sorted(g.begin(), g.end()));
    }
  }
  // Huge-range formats still produce a usable normalized grid.
  auto gh = fpspace_normalized(make(16, 0));
  CHECK(gh.front() == 0.0);
  CHECK(gh.back() == 1.0);
}

TEST_CASE("one exponent bit gives consecutive integer lattices") {
  // p = n-2: subnormals 0..2^p-1 plus normals 2^p..2^(p+1)-1, a full integer
  // ramp; p = n-1 is the pure integer grid.
  for (int n : {3, 4, 8}) {
    auto a = int_value_set(make(n, n - 2));
    std::int64_t top = (std::int64_t{1} << (n - 1)) - 1;
    std::set<std::int64_t> expect;
    for (std::int64_t v = -top; v <= top; ++v) expect.insert(v);
    CHECK(a == expect);
    CHECK(int_value_set(make(n, n - 1)) == expect);
  }
}

TEST_CASE("huge formats stay exact") {
  FloatFormat f = make(16, 0);
  ExactValue bm = beta_max_exact(f);
  CHECK(bm.mant == 1);
  CHECK(bm.exp2 == (1 << 15) - 2);
  CHECK(!bm.fits_int64());
  CHECK_THROWS_AS(beta_max(f), std::overflow_error);
  CHECK(bm.to_string().find("2^32766") != std::string::npos);
  CHECK(!is_computable(f));
  CHECK(is_computable(make(8, 1)));
  // 8-bit p=1 tops out above int64 but is still an exact double.
  ExactValue b81 = beta_max_exact(make(8, 1));
  CHECK(b81.mant == 3);
  CHECK(b81.exp2 == 62);
  CHECK(!b81.fits_int64());
  CHECK(b81.to_double() == std::ldexp(3.0, 62));
}

TEST_CASE("frozen rounding examples") {
  FloatFormat f41 = make(4, 1);
  // Midpoint 5.0 between 4 (even significand) and 6 (odd): even wins.
  CHECK(decode_code(round_to_format(5.0, f41), f41) == 4);
  CHECK(decode_code(round_to_format(11.9, f41), f41) == 12);
  CHECK(decode_code(round_to_format(2.5, f41), f41) == 2);
  CHECK(decode_code(round_to_format(0.5, f41), f41) == 0);
  CHECK(decode_code(round_to_format(-5.0, f41), f41) == -4);
  // Zero always becomes the positive-zero code.
  CHECK(round_to_format(0.0, f41) == 0);
  CHECK(round_to_format(-0.0, f41) == 0);

  // p=0 has only even significands; equal-parity ties take the smaller
  // magnitude.
  FloatFormat f40 = make(4, 0);
  CHECK(decode_code(round_to_format(1.5, f40), f40) == 1);
  CHECK(decode_code(round_to_format(3.0, f40), f40) == 2);

  // Two's complement reaches for 0 when small negatives are unrepresentable.
  FloatFormat tc = f41;
  tc.encoding = Encoding::TwosComplement;
  CHECK(decode_code(round_to_format(-1.0, tc), tc) == 0);
  CHECK(decode_code(round_to_format(-2.0, tc), tc) == -3);
  CHECK(decode_code(round_to_format(-7.5, tc), tc) == -8);
  // -7 ties between -6 and -8, both with an even-significand code: the
  // smaller magnitude wins (-6 is encodable with significand 0 via ehat=0).
  CHECK(decode_code(round_to_format(-7.0, tc), tc) == -6);

  // Saturation clamps to +/- beta_max in both encodings.
  CHECK(decode_code(round_saturating(1e30, f41), f41) == 12);
  CHECK(decode_code(round_saturating(-1e30, tc), tc) == -12);
  CHECK_THROWS_AS(round_to_format(12.5, f41), std::domain_error);
  CHECK_THROWS_AS(round_to_format(std::nan(""), f41), std::domain_error);
}

TEST_CASE("rounding with subnormals disabled") {
  FloatFormat f = make(8, 4);
  f.subnormals = false;
  // Gap between 0 and 16; 7.9 rounds down, 8.1 rounds up, the midpoint 8
  // has even significands on both sides and takes the smaller magnitude.
  CHECK(decode_code(round_to_format(7.9, f), f) == 0);
  CHECK(decode_code(round_to_format(8.1, f), f) == 16);
  CHECK(decode_code(round_to_format(8.0, f), f) == 0);
}

TEST_CASE("two's-complement rounding never lands on a disabled subnormal code") {
  // Some negative values sit both in the ehat==0 block and in a normal binade
  // (possible once there are at least two exponent bits). With subnormals off
  // only the normal code decodes, so rounding must pick it; the block anchor
  // -3*2^p is the one ehat==0 code that stays live. Probe every representable
  // value and the midpoints between neighbors.
  for (int n : {6, 8}) {
    for (int p : {2, 3, n - 4}) {
      if (p < 2 || p > n - 3) continue;
      for (InfNanMode mode : {InfNanMode::ExtendNumeric, InfNanMode::ReserveInfNan}) {
        FloatFormat fmt = make(n, p);
        fmt.encoding = Encoding::TwosComplement;
        fmt.subnormals = false;
        fmt.inf_nan = mode;
        CAPTURE(fmt.to_string());
        const ValueTable& table = value_table(fmt);
        for (std::size_t i = 0; i < table.dvalues.size(); ++i) {
          const std::uint16_t exact = round_to_format(table.dvalues[i], fmt);
          CHECK(exact == table.codes[i]);  // canonical code, not a stale duplicate
          if (i + 1 < table.dvalues.size()) {
            const double mid = (table.dvalues[i] + table.dvalues[i + 1]) / 2;
            CHECK(classify_code(round_to_format(mid, fmt), fmt) == CodeClass::Numeric);
          }
        }
      }
    }
  }
  // The duplicate pair pinned by hand: -18 in the 6-bit, p=3 layout is ehat==0
  // code 38 and also normal code 55 (ehat=2, sig=7).
  FloatFormat f = make(6, 3);
  f.encoding = Encoding::TwosComplement;
  f.subnormals = false;
  CHECK(round_to_format(-18.0, f) == 55);
  CHECK(decode_code(55, f) == -18);
  CHECK(round_to_format(-24.0, f) == 32);  // the anchor keeps its ehat==0 code
  f.subnormals = true;
  CHECK(round_to_format(-18.0, f) == 38);  // smaller code wins when both decode
}

TEST_CASE("rounding agrees with nearest-neighbor search over the enumeration") {
  std::mt19937_64 rng(7);
  for (int n : {3, 4, 5, 8}) {
    for (int p : {0, 1, n - 2, n - 1}) {
      if (p < 0 || p >= n) continue;
      for (Encoding enc : {Encoding::SignMagnitude, Encoding::TwosComplement}) {
        for (bool sub : {true, false}) {
          FloatFormat fmt = make(n, p);
          fmt.encoding = enc;
          fmt.subnormals = sub;
          const ValueTable& table = value_table(fmt);
          const double bm = beta_max_exact(fmt).to_double();
          const double small = std::min(bm, std::ldexp(1.0, p + 3));
          std::uniform_real_distribution<double> unit(-1.0, 1.0);
          for (int trial = 0; trial < 2000; ++trial) {
            // Alternate full-range and near-zero draws so wide-range formats
            // exercise their low buckets too.
            double x = unit(rng) * (trial % 2 ? small : bm);
            std::uint16_t code = round_to_format(x, fmt);
            // Linear-scan oracle with the same tie chain.
            std::size_t best = 0;
            for (std::size_t i = 1; i < table.values.size(); ++i) {
              double dv = std::abs(table.dvalues[i] - x);
              double db = std::abs(table.dvalues[best] - x);
              if (dv < db) {
                best = i;
              } else if (dv == db) {
                bool cur_odd = table.sig_odd[best], new_odd = table.sig_odd[i];
                double mag_b = std::abs(table.dvalues[best]);
                double mag_i = std::abs(table.dvalues[i]);
                if (new_odd < cur_odd || (new_odd == cur_odd && mag_i < mag_b)) best = i;
              }
            }
            CAPTURE(n);
            CAPTURE(p);
            CAPTURE(x);
            CHECK(code == table.codes[best]);
          }
        }
      }
    }
  }
}

}  // TEST_SUITE
