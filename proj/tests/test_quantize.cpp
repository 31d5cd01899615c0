#include "dfpq/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "doctest.h"

using namespace dfpq;

namespace {

FloatFormat make(int n, int p) {
  FloatFormat f;
  f.n = n;
  f.p = p;
  return f;
}

Tensor tensor_of(std::vector<std::int64_t> shape, std::vector<float> data) {
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::move(data);
  return t;
}

std::vector<double> decoded(const QTensor& q) {
  std::vector<double> out;
  for (std::uint16_t c : q.codes) out.push_back(decode_to_double(c, q.format));
  return out;
}

}  // namespace

TEST_SUITE("quantize") {

TEST_CASE("scale_from_threshold frozen values") {
  CHECK(scale_from_threshold(1984.0, make(8, 4)).alpha == 1.0);
  CHECK(scale_from_threshold(127.0, make(8, 7)).alpha == 1.0);
  CHECK(scale_from_threshold(1.0, make(4, 1)).alpha == doctest::Approx(1.0 / 12.0));
  CHECK(scale_from_threshold(3.5, make(8, 4)).threshold() == doctest::Approx(3.5));

  CHECK_THROWS_AS(scale_from_threshold(0.0, make(8, 4)), std::invalid_argument);
  CHECK_THROWS_AS(scale_from_threshold(-1.0, make(8, 4)), std::invalid_argument);
  CHECK_THROWS_AS(scale_from_threshold(std::nan(""), make(8, 4)), std::invalid_argument);
  // Value range beyond double: unusable for real-valued scaling.
  CHECK_THROWS_AS(scale_from_threshold(1.0, make(16, 0)), std::invalid_argument);
}

TEST_CASE("quantize endpoints, clamping, and exact integers") {
  const FloatFormat f = make(8, 4);
  const float inf = std::numeric_limits<float>::infinity();
  QTensor q = quantize_tensor(tensor_of({6}, {0.0f, 1984.0f, -1984.0f, 5.0f, 3968.0f, -inf}),
                              1984.0, f);
  q.validate();
  CHECK(q.scales == std::vector<double>{1.0});
  CHECK(decoded(q) == std::vector<double>{0, 1984, -1984, 5, 1984, -1984});
}

TEST_CASE("two's complement stays inside the symmetric clamp range") {
  FloatFormat tc = make(4, 1);
  tc.encoding = Encoding::TwosComplement;
  // -16 is representable but lies outside [-beta_max, beta_max]; the clamp
  // keeps it out of quantized tensors.
  QTensor q = quantize_tensor(tensor_of({4}, {-16.0f, -13.0f, -12.0f, -5.0f}), 12.0, tc);
  CHECK(decoded(q) == std::vector<double>{-12, -12, -12, -5});
}

TEST_CASE("per-channel thresholds quantize each block independently") {
  const FloatFormat f = make(8, 4);
  Tensor x = tensor_of({2, 4}, {5.0f, 1984.0f, -3000.0f, 0.0f,  //
                                5.0f, 992.0f, -992.0f, 3.3f});
  QTensor q = quantize_tensor_per_channel(x, {1984.0, 992.0}, f);
  q.validate();
  CHECK(q.per_channel());
  CHECK(q.scales[0] == 1.0);
  CHECK(q.scales[1] == 0.5);
  CHECK(decoded(q) == std::vector<double>{5, 1984, -1984, 0, 10, 1984, -1984, 7});
  Tensor d = dequantize_tensor(q);
  CHECK(d.data == std::vector<float>{5.0f, 1984.0f, -1984.0f, 0.0f,  //
                                     5.0f, 992.0f, -992.0f, 3.5f});

  CHECK_THROWS_AS(quantize_tensor_per_channel(x, {1.0, 2.0, 3.0}, f), std::invalid_argument);
  CHECK_THROWS_AS(quantize_tensor_per_channel(x, {1.0, 0.0}, f), std::invalid_argument);
}

TEST_CASE("error cases") {
  const FloatFormat f = make(8, 4);
  CHECK_THROWS_AS(quantize_tensor(tensor_of({1}, {std::nanf("")}), 1.0, f), std::domain_error);
  CHECK_THROWS_AS(quantize_tensor(tensor_of({1}, {1.0f}), 0.0, f), std::invalid_argument);
  CHECK_THROWS_AS(quantize_tensor(tensor_of({1}, {1.0f}), -2.0, f), std::invalid_argument);
}

TEST_CASE("zero tensor round-trips to zero") {
  QTensor q = quantize_tensor(Tensor({3, 2}), 0.75, make(6, 2));
  CHECK(std::all_of(q.codes.begin(), q.codes.end(), [](std::uint16_t c) { return c == 0; }));
  Tensor d = dequantize_tensor(q);
  CHECK(std::all_of(d.data.begin(), d.data.end(), [](float v) { return v == 0.0f; }));
}

TEST_CASE("quantize-dequantize-quantize is idempotent") {
  std::mt19937_64 rng(11);
  struct Case {
    FloatFormat fmt;
    double gamma;
  };
  FloatFormat tc41 = make(4, 1);
  tc41.encoding = Encoding::TwosComplement;
  for (const Case& c : {Case{make(8, 4), 7.3}, Case{tc41, 0.9}, Case{make(8, 6), 100.0}}) {
    std::uniform_real_distribution<double> dist(-c.gamma, c.gamma);
    Tensor x({257});
    for (float& v : x.data) v = static_cast<float>(dist(rng));
    QTensor q1 = quantize_tensor(x, c.gamma, c.fmt);
    Tensor d1 = dequantize_tensor(q1);
    QTensor q2 = quantize_tensor(d1, c.gamma, c.fmt);
    CHECK(q1.codes == q2.codes);
  }
}

TEST_CASE("round-trip error is at most half the local value spacing") {
  // alpha = 1 and integer lattice values keep float32 storage exact, so the
  // spacing bound holds with no slack.
  const FloatFormat f = make(8, 4);
  const double gamma = 1984.0;
  const std::vector<double> values = enumerate_values(f);
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> dist(-gamma, gamma);
  Tensor x({1000});
  for (float& v : x.data) v = static_cast<float>(dist(rng));
  Tensor rt = dequantize_tensor(quantize_tensor(x, gamma, f));
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double xv = x.data[i];
    auto hi = std::lower_bound(values.begin(), values.end(), xv);
    REQUIRE(hi != values.end());
    const double lo = hi == values.begin() ? *hi : *(hi - 1);
    const double half = (*hi - lo) / 2.0;
    CHECK(std::abs(xv - rt.data[i]) <= half);
  }
}

TEST_CASE("qtensor validation catches inconsistencies") {
  QTensor q = quantize_tensor(tensor_of({4}, {1.0f, 2.0f, 3.0f, 4.0f}), 4.0, make(8, 4));
  QTensor bad = q;
  bad.codes.pop_back();
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);
  bad = q;
  bad.scales = {0.0};
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);
  bad = q;
  bad.codes[0] = 256;  // out of range for n=8
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);
  bad = q;
  bad.scales = {1.0, 2.0};  // wrong per-channel count for shape [4]
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);
}

}  // TEST_SUITE
