#include "dfpq/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dfpq {

namespace {

double checked_beta_max(const FloatFormat& fmt, const char* who) {
  fmt.validate();
  if (!is_computable(fmt))
    throw std::invalid_argument(std::string(who) + ": " + fmt.to_string() +
                                " exceeds double range");
  const double bm = beta_max_exact(fmt).to_double();
  if (bm <= 0.0)
    throw std::invalid_argument(std::string(who) + ": " + fmt.to_string() +
                                " has no positive values");
  return bm;
}

void check_gamma(double gamma, const char* who) {
  if (!(gamma > 0.0) || !std::isfinite(gamma))
    throw std::invalid_argument(std::string(who) + ": threshold must be positive and finite, got " +
                                std::to_string(gamma));
}

void quantize_block(const float* x, std::size_t count, double gamma, double alpha,
                    const FloatFormat& fmt, std::uint16_t* out) {
  for (std::size_t i = 0; i < count; ++i) {
    const double v = x[i];
    if (std::isnan(v)) throw std::domain_error("quantize: NaN element in input tensor");
    // Clamp handles +-Inf; the saturating round absorbs the one-ulp overshoot
    // that dividing a clamped value by gamma/beta_max can produce.
    const double c = std::clamp(v, -gamma, gamma);
    out[i] = round_saturating(c / alpha, fmt);
  }
}

}  // namespace

double ScaledFormat::threshold() const {
  return alpha * beta_max_exact(format).to_double();
}

ScaledFormat scale_from_threshold(double gamma, const FloatFormat& fmt) {
  check_gamma(gamma, "scale_from_threshold");
  const double bm = checked_beta_max(fmt, "scale_from_threshold");
  return {fmt, gamma / bm};
}

std::int64_t QTensor::numel() const { return shape_numel(shape); }

void QTensor::validate() const {
  format.validate();
  if (static_cast<std::int64_t>(codes.size()) != numel())
    throw std::runtime_error("qtensor: code count " + std::to_string(codes.size()) +
                             " does not match shape " + shape_to_string(shape));
  if (scales.size() != 1 &&
      (shape.empty() || static_cast<std::int64_t>(scales.size()) != shape[0]))
    throw std::runtime_error("qtensor: expected 1 or " +
                             std::to_string(shape.empty() ? 0 : shape[0]) + " scales, got " +
                             std::to_string(scales.size()));
  for (double s : scales)
    if (!(s > 0.0) || !std::isfinite(s))
      throw std::runtime_error("qtensor: scale must be positive and finite");
  const std::uint32_t limit = 1u << format.n;
  for (std::uint16_t c : codes)
    if (c >= limit) throw std::runtime_error("qtensor: code out of range for format");
}

QTensor quantize_tensor(const Tensor& x, double gamma, const FloatFormat& fmt) {
  check_tensor(x, "quantize");
  check_gamma(gamma, "quantize");
  const double bm = checked_beta_max(fmt, "quantize");
  QTensor q;
  q.shape = x.shape;
  q.format = fmt;
  q.scales = {gamma / bm};
  q.codes.resize(x.data.size());
  quantize_block(x.data.data(), x.data.size(), gamma, q.scales[0], fmt, q.codes.data());
  return q;
}

QTensor quantize_tensor_per_channel(const Tensor& x, const std::vector<double>& gammas,
                                    const FloatFormat& fmt) {
  check_tensor(x, "quantize");
  if (x.shape.empty())
    throw std::invalid_argument("quantize: per-channel input needs at least one axis");
  if (static_cast<std::int64_t>(gammas.size()) != x.shape[0])
    throw std::invalid_argument("quantize: got " + std::to_string(gammas.size()) +
                                " thresholds for " + std::to_string(x.shape[0]) + " channels");
  const double bm = checked_beta_max(fmt, "quantize");
  QTensor q;
  q.shape = x.shape;
  q.format = fmt;
  q.codes.resize(x.data.size());
  q.scales.resize(gammas.size());
  const std::size_t block = x.shape[0] == 0 ? 0 : x.data.size() / x.shape[0];
  for (std::size_t ch = 0; ch < gammas.size(); ++ch) {
    check_gamma(gammas[ch], "quantize");
    q.scales[ch] = gammas[ch] / bm;
    quantize_block(x.data.data() + ch * block, block, gammas[ch], q.scales[ch], fmt,
                   q.codes.data() + ch * block);
  }
  return q;
}

Tensor dequantize_tensor(const QTensor& q) {
  q.validate();
  Tensor out(q.shape);
  const std::size_t block =
      q.per_channel() ? q.codes.size() / q.scales.size() : q.codes.size();
  for (std::size_t i = 0; i < q.codes.size(); ++i) {
    const double alpha = q.scales[q.per_channel() ? i / block : 0];
    out.data[i] = static_cast<float>(alpha * decode_to_double(q.codes[i], q.format));
  }
  return out;
}

}  // namespace dfpq
