#include "dfpq/format.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace dfpq {

namespace {

int bit_length(std::uint64_t v) { return 64 - std::countl_zero(v); }

struct Fields {
  bool neg;
  int ehat;
  int sig;
};

Fields fields_of(std::uint32_t code, const FloatFormat& fmt) {
  fmt.validate();
  if (code >> fmt.n)
    throw std::invalid_argument("format: code " + std::to_string(code) + " exceeds " +
                                std::to_string(fmt.n) + " bits");
  Fields f;
  f.sig = static_cast<int>(code & ((1u << fmt.p) - 1u));
  const int ebits = fmt.exponent_bits();
  f.ehat = ebits == 0 ? 0 : static_cast<int>((code >> fmt.p) & ((1u << ebits) - 1u));
  f.neg = (code >> (fmt.n - 1)) & 1u;
  return f;
}

// Highest numeric exponent field value; 0 means no normal buckets exist.
int top_numeric_ehat(const FloatFormat& fmt) {
  const int ebits = fmt.exponent_bits();
  if (ebits == 0) return 0;
  const int top = (1 << ebits) - 1;
  return fmt.inf_nan == InfNanMode::ReserveInfNan ? top - 1 : top;
}

}  // namespace

void FloatFormat::validate() const {
  if (n < 2 || n > 16)
    throw std::invalid_argument("float_format: n must be in [2,16], got " + std::to_string(n));
  if (p < 0 || p > n - 1)
    throw std::invalid_argument("float_format: p must be in [0,n-1], got " + std::to_string(p) +
                                " with n=" + std::to_string(n));
}

std::string FloatFormat::to_string() const {
  std::ostringstream os;
  os << "n" << n << "p" << p << (encoding == Encoding::SignMagnitude ? "sm" : "tc");
  if (!subnormals) os << "-nosub";
  if (inf_nan == InfNanMode::ReserveInfNan) os << "-rsv";
  return os.str();
}

// ExactValue ---------------------------------------------------------------

ExactValue ExactValue::make(std::int64_t mant, std::int32_t exp2) {
  if (mant == 0) return {0, 0};
  while ((mant & 1) == 0) {
    mant >>= 1;
    ++exp2;
  }
  return {mant, exp2};
}

int ExactValue::compare(const ExactValue& a, const ExactValue& b) {
  const int sa = a.mant < 0 ? -1 : a.mant > 0 ? 1 : 0;
  const int sb = b.mant < 0 ? -1 : b.mant > 0 ? 1 : 0;
  if (sa != sb) return sa < sb ? -1 : 1;
  if (sa == 0) return 0;
  const std::uint64_t ma = static_cast<std::uint64_t>(sa > 0 ? a.mant : -a.mant);
  const std::uint64_t mb = static_cast<std::uint64_t>(sb > 0 ? b.mant : -b.mant);
  const std::int64_t ka = bit_length(ma) + a.exp2;
  const std::int64_t kb = bit_length(mb) + b.exp2;
  int mag;
  if (ka != kb) {
    mag = ka < kb ? -1 : 1;
  } else {
    // Equal bit positions: shifts are bounded by the mantissa widths.
    const std::int32_t e = std::min(a.exp2, b.exp2);
    const unsigned __int128 xa = static_cast<unsigned __int128>(ma) << (a.exp2 - e);
    const unsigned __int128 xb = static_cast<unsigned __int128>(mb) << (b.exp2 - e);
    mag = xa < xb ? -1 : xa > xb ? 1 : 0;
  }
  return sa > 0 ? mag : -mag;
}

bool ExactValue::fits_int64() const {
  if (mant == 0) return true;
  const std::uint64_t m = static_cast<std::uint64_t>(mant < 0 ? -mant : mant);
  return bit_length(m) + exp2 <= 63;
}

std::int64_t ExactValue::to_int64() const {
  if (!fits_int64()) throw std::overflow_error("exact_value: " + to_string() + " exceeds int64");
  return mant << exp2;
}

bool ExactValue::fits_double() const {
  if (mant == 0) return true;
  const std::uint64_t m = static_cast<std::uint64_t>(mant < 0 ? -mant : mant);
  // Mantissas are always narrow (< 2^17), so representability is only a
  // question of exponent range.
  return bit_length(m) - 1 + exp2 <= 1023;
}

double ExactValue::to_double() const {
  if (!fits_double()) throw std::overflow_error("exact_value: " + to_string() + " exceeds double");
  return std::ldexp(static_cast<double>(mant), exp2);
}

std::string ExactValue::to_string() const {
  if (fits_int64()) return std::to_string(mant << exp2);
  std::ostringstream os;
  const std::int64_t m = mant < 0 ? -mant : mant;
  if (mant < 0) os << "-";
  if (m != 1) os << m << "*";
  os << "2^" << exp2;
  const double l10 = std::log10(static_cast<double>(m)) + exp2 * std::log10(2.0);
  double ip = 0.0;
  const double frac = std::modf(l10, &ip);
  os << " (~" << std::setprecision(3) << std::pow(10.0, frac) << "e+"
     << static_cast<long long>(ip) << ")";
  return os.str();
}

// Fields and classification ------------------------------------------------

int exponent_of_code(std::uint32_t code, const FloatFormat& fmt) {
  return fields_of(code, fmt).ehat;
}

int significand_of_code(std::uint32_t code, const FloatFormat& fmt) {
  return fields_of(code, fmt).sig;
}

bool sign_of_code(std::uint32_t code, const FloatFormat& fmt) {
  return fields_of(code, fmt).neg;
}

CodeClass classify_code(std::uint32_t code, const FloatFormat& fmt) {
  const Fields f = fields_of(code, fmt);
  const int ebits = fmt.exponent_bits();
  if (fmt.inf_nan == InfNanMode::ReserveInfNan && ebits >= 1 && f.ehat == (1 << ebits) - 1)
    return f.sig == 0 ? CodeClass::Inf : CodeClass::NaN;
  if (!fmt.subnormals && f.ehat == 0 && f.sig != 0) return CodeClass::InvalidSubnormal;
  return CodeClass::Numeric;
}

// Decoding -----------------------------------------------------------------

ExactValue decode_exact(std::uint32_t code, const FloatFormat& fmt) {
  switch (classify_code(code, fmt)) {
    case CodeClass::Inf:
    case CodeClass::NaN:
      throw std::domain_error("decode: code " + std::to_string(code) +
                              " is a reserved Inf/NaN code in " + fmt.to_string());
    case CodeClass::InvalidSubnormal:
      throw std::invalid_argument("decode: code " + std::to_string(code) +
                                  " is a subnormal code but subnormals are disabled in " +
                                  fmt.to_string());
    case CodeClass::Numeric:
      break;
  }
  const Fields f = fields_of(code, fmt);
  const std::int64_t hidden = std::int64_t{1} << fmt.p;
  std::int64_t m;
  if (fmt.encoding == Encoding::SignMagnitude) {
    m = f.ehat == 0 ? f.sig : hidden + f.sig;
    if (f.neg) m = -m;
  } else {
    // Two's-complement weighting: the sign bit carries -(2^p + 2^(p+1)) in
    // both branches, which makes the negative lattice asymmetric to the
    // positive one (see the enumeration tests).
    m = f.sig - (f.neg ? 3 * hidden : 0);
    if (f.ehat != 0) m += hidden;
  }
  return ExactValue::make(m, f.ehat == 0 ? 0 : f.ehat - 1);
}

std::int64_t decode_code(std::uint32_t code, const FloatFormat& fmt) {
  const ExactValue v = decode_exact(code, fmt);
  if (!v.fits_int64())
    throw std::overflow_error("decode: value " + v.to_string() + " exceeds int64 range");
  return v.to_int64();
}

double decode_to_double(std::uint32_t code, const FloatFormat& fmt) {
  return decode_exact(code, fmt).to_double();
}

ExactValue beta_max_exact(const FloatFormat& fmt) {
  fmt.validate();
  if (fmt.inf_nan == InfNanMode::ReserveInfNan) return value_table(fmt).values.back();
  if (fmt.p == fmt.n - 1) {
    // Pure significand grid; with subnormals disabled only zero survives.
    if (!fmt.subnormals) return ExactValue::make(0, 0);
    return ExactValue::make((std::int64_t{1} << (fmt.n - 1)) - 1, 0);
  }
  const int ebits = fmt.exponent_bits();
  return ExactValue::make((std::int64_t{1} << (fmt.p + 1)) - 1, (1 << ebits) - 2);
}

std::int64_t beta_max(const FloatFormat& fmt) {
  const ExactValue v = beta_max_exact(fmt);
  if (!v.fits_int64())
    throw std::overflow_error("beta_max: " + v.to_string() + " exceeds int64 for " +
                              fmt.to_string());
  return v.to_int64();
}

bool is_computable(const FloatFormat& fmt) { return value_table(fmt).computable; }

// Enumeration --------------------------------------------------------------

std::vector<ExactValue> enumerate_values_exact(const FloatFormat& fmt) {
  return value_table(fmt).values;
}

std::vector<double> enumerate_values(const FloatFormat& fmt) {
  const ValueTable& t = value_table(fmt);
  if (!t.computable)
    throw std::overflow_error("enumerate_values: " + fmt.to_string() +
                              " exceeds double range; use enumerate_values_exact");
  return t.dvalues;
}

std::vector<double> fpspace_normalized(const FloatFormat& fmt) {
  const ValueTable& t = value_table(fmt);
  const ExactValue bm = t.values.back();
  if (bm.is_zero())
    throw std::domain_error("fpspace_normalized: " + fmt.to_string() +
                            " has no positive values");
  std::vector<double> out;
  for (const ExactValue& v : t.values) {
    if (v.negative()) continue;
    // Ratio of two exact values; exponents may individually exceed double
    // range but the ratio never exceeds 1.
    out.push_back(std::ldexp(static_cast<double>(v.mant) / static_cast<double>(bm.mant),
                             v.exp2 - bm.exp2));
  }
  return out;
}

const ValueTable& value_table(const FloatFormat& fmt) {
  fmt.validate();
  using Key = std::tuple<int, int, int, int, int>;
  static std::mutex mu;
  static std::map<Key, std::unique_ptr<ValueTable>> cache;
  const Key key{fmt.n, fmt.p, static_cast<int>(fmt.encoding), fmt.subnormals ? 1 : 0,
                static_cast<int>(fmt.inf_nan)};
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(key);
  if (it != cache.end()) return *it->second;

  auto table = std::make_unique<ValueTable>();
  table->fmt = fmt;
  std::vector<std::pair<ExactValue, std::uint16_t>> items;
  for (std::uint32_t code = 0; code < (1u << fmt.n); ++code) {
    if (classify_code(code, fmt) != CodeClass::Numeric) continue;
    items.emplace_back(decode_exact(code, fmt), static_cast<std::uint16_t>(code));
  }
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    const int c = ExactValue::compare(a.first, b.first);
    return c != 0 ? c < 0 : a.second < b.second;
  });
  for (std::size_t i = 0; i < items.size();) {
    std::size_t j = i;
    std::uint8_t odd = 1;
    while (j < items.size() && items[j].first == items[i].first) {
      const int sig = significand_of_code(items[j].second, fmt);
      odd = static_cast<std::uint8_t>(std::min<int>(odd, sig & 1));
      ++j;
    }
    table->values.push_back(items[i].first);
    table->codes.push_back(items[i].second);  // smallest code for the value
    table->sig_odd.push_back(odd);
    i = j;
  }
  table->computable =
      table->values.front().fits_double() && table->values.back().fits_double();
  if (table->computable) {
    table->dvalues.reserve(table->values.size());
    for (const ExactValue& v : table->values) table->dvalues.push_back(v.to_double());
  }
  const ValueTable& ref = *table;
  cache.emplace(key, std::move(table));
  return ref;
}

std::size_t ValueTable::index_of_code(std::uint32_t code) const {
  const ExactValue v = decode_exact(code, fmt);
  auto it = std::lower_bound(values.begin(), values.end(), v,
                             [](const ExactValue& a, const ExactValue& b) {
                               return ExactValue::compare(a, b) < 0;
                             });
  if (it == values.end() || !(*it == v))
    throw std::logic_error("value_table: code not found");
  return static_cast<std::size_t>(it - values.begin());
}

// Rounding -----------------------------------------------------------------

namespace {

struct Cand {
  double value;
  int sig_odd;
};

void add_cand(std::vector<Cand>& cs, double value, int sig_odd) {
  for (Cand& c : cs) {
    if (c.value == value) {
      c.sig_odd = std::min(c.sig_odd, sig_odd);
      return;
    }
  }
  cs.push_back({value, sig_odd});
}

// Representable non-negative neighbors of magnitude m (both encodings share
// the non-negative lattice). Direct bucket arithmetic, no table lookups.
void nonneg_candidates(double m, const FloatFormat& fmt, std::vector<Cand>& cs) {
  const double hidden = std::ldexp(1.0, fmt.p);
  const int et = top_numeric_ehat(fmt);
  add_cand(cs, 0.0, 0);
  if (fmt.subnormals && fmt.p >= 1) {
    const double k = std::clamp(std::floor(m), 0.0, hidden - 1);
    const double k1 = std::clamp(k + 1, 0.0, hidden - 1);
    add_cand(cs, k, static_cast<int>(k) & 1);
    add_cand(cs, k1, static_cast<int>(k1) & 1);
  }
  if (et >= 1) {
    const int eh = std::clamp(std::ilogb(std::max(m, hidden)) - fmt.p + 1, 1, et);
    for (int ee = std::max(1, eh - 1); ee <= std::min(et, eh + 1); ++ee) {
      const double step = std::ldexp(1.0, ee - 1);
      const double k = std::floor(m / step);
      for (double kk : {k, k + 1}) {
        kk = std::clamp(kk, hidden, 2 * hidden - 1);
        add_cand(cs, kk * step, (static_cast<std::int64_t>(kk - hidden)) & 1);
      }
    }
  }
}

// Representable negative neighbors under the two's-complement encoding: the
// ehat==0 block sits at -3*2^p and normal buckets span 2^(ee-1)*[-2^(p+1),
// -(2^p+1)].
void tc_negative_candidates(double x, const FloatFormat& fmt, std::vector<Cand>& cs) {
  const double hidden = std::ldexp(1.0, fmt.p);
  const int et = top_numeric_ehat(fmt);
  add_cand(cs, 0.0, 0);
  const double smax = fmt.subnormals && fmt.p >= 1 ? hidden - 1 : 0.0;
  const double s = std::clamp(std::floor(x + 3 * hidden), 0.0, smax);
  const double s1 = std::clamp(s + 1, 0.0, smax);
  add_cand(cs, s - 3 * hidden, static_cast<int>(s) & 1);
  add_cand(cs, s1 - 3 * hidden, static_cast<int>(s1) & 1);
  if (et >= 1) {
    const double m = std::max(-x, hidden + 1);
    const int eh = std::ilogb(m) - fmt.p;
    for (int ee = std::max(1, eh - 1); ee <= std::min(et, eh + 2); ++ee) {
      const double step = std::ldexp(1.0, ee - 1);
      const double k = std::floor(x / step);
      for (double kk : {k, k + 1}) {
        kk = std::clamp(kk, -2 * hidden, -(hidden + 1));
        add_cand(cs, kk * step, (static_cast<std::int64_t>(kk + 2 * hidden)) & 1);
      }
    }
  }
}

// Canonical code for a representable non-negative value.
std::uint16_t encode_nonneg(double v, const FloatFormat& fmt) {
  if (v == 0.0) return 0;
  const double hidden = std::ldexp(1.0, fmt.p);
  if (v < hidden) {  // subnormal block: code == sig
    if (!fmt.subnormals) throw std::logic_error("round: failed to encode value");
    return static_cast<std::uint16_t>(v);
  }
  const int ee = std::ilogb(v) - fmt.p + 1;
  const double step = std::ldexp(1.0, ee - 1);
  const std::uint16_t sig = static_cast<std::uint16_t>(v / step - hidden);
  return static_cast<std::uint16_t>((ee << fmt.p) | sig);
}

std::uint16_t encode_value(double v, const FloatFormat& fmt) {
  const std::uint16_t sign_bit = static_cast<std::uint16_t>(1u << (fmt.n - 1));
  if (v >= 0.0) return encode_nonneg(v, fmt);
  if (fmt.encoding == Encoding::SignMagnitude)
    return static_cast<std::uint16_t>(sign_bit | encode_nonneg(-v, fmt));
  const double hidden = std::ldexp(1.0, fmt.p);
  const double s = v + 3 * hidden;
  if (s >= 0.0 && s < hidden && (fmt.subnormals || s == 0.0)) {
    // The ehat==0 block yields the smallest (canonical) code. With subnormals
    // disabled only its sig==0 anchor stays decodable, so values duplicated
    // between that block and a normal binade fall through to the normal code.
    return static_cast<std::uint16_t>(sign_bit | static_cast<std::uint16_t>(s));
  }
  const int guess = std::ilogb(-v) - fmt.p;
  for (int ee = std::max(1, guess - 1); ee <= guess + 2; ++ee) {
    const double step = std::ldexp(1.0, ee - 1);
    const double k = v / step;
    if (k == std::floor(k) && k >= -2 * hidden && k <= -(hidden + 1)) {
      const std::uint16_t sig = static_cast<std::uint16_t>(k + 2 * hidden);
      return static_cast<std::uint16_t>(sign_bit | (ee << fmt.p) | sig);
    }
  }
  throw std::logic_error("round: failed to encode value");
}

std::uint16_t round_impl(double x, const FloatFormat& fmt) {
  if (x == 0.0) return 0;  // positive-zero code, also for -0.0
  std::vector<Cand> cs;
  cs.reserve(12);
  if (x > 0.0 || fmt.encoding == Encoding::SignMagnitude) {
    nonneg_candidates(std::abs(x), fmt, cs);
    if (x < 0.0)
      for (Cand& c : cs) c.value = -c.value;
  } else {
    tc_negative_candidates(x, fmt, cs);
  }
  const Cand* best = &cs[0];
  for (const Cand& c : cs) {
    const double db = std::abs(best->value - x);
    const double dc = std::abs(c.value - x);
    if (dc < db ||
        (dc == db && (c.sig_odd < best->sig_odd ||
                      (c.sig_odd == best->sig_odd &&
                       std::abs(c.value) < std::abs(best->value)))))
      best = &c;
  }
  return encode_value(best->value, fmt);
}

}  // namespace

std::uint16_t round_to_format(double x, const FloatFormat& fmt) {
  fmt.validate();
  if (!std::isfinite(x)) throw std::domain_error("round: input is not finite");
  const ValueTable& t = value_table(fmt);
  if (!t.computable)
    throw std::domain_error("round: " + fmt.to_string() + " exceeds double range");
  const double bm = t.values.back().to_double();
  if (std::abs(x) > bm)
    throw std::domain_error("round: |x| = " + std::to_string(std::abs(x)) +
                            " exceeds beta_max = " + std::to_string(bm));
  return round_impl(x, fmt);
}

std::uint16_t round_saturating(double x, const FloatFormat& fmt) {
  fmt.validate();
  if (std::isnan(x)) throw std::domain_error("round: input is NaN");
  const ValueTable& t = value_table(fmt);
  if (!t.computable)
    throw std::domain_error("round: " + fmt.to_string() + " exceeds double range");
  const double bm = t.values.back().to_double();
  return round_impl(std::clamp(x, -bm, bm), fmt);
}

}  // namespace dfpq
