#pragma once

#include <cstdint>
#include <vector>

#include "dfpq/format.hpp"
#include "dfpq/tensor.hpp"

namespace dfpq {

// A format plus its real scale alpha. Stored values are alpha * beta, so the
// clamp threshold is gamma = alpha * beta_max and alpha itself is the
// smallest positive representable magnitude (when subnormals are on).
struct ScaledFormat {
  FloatFormat format;
  double alpha = 1.0;

  double threshold() const;
  bool operator==(const ScaledFormat&) const = default;
};

// alpha = gamma / beta_max; gamma must be positive and finite.
ScaledFormat scale_from_threshold(double gamma, const FloatFormat& fmt);

// Tensor of stored codes. scales holds one entry for per-tensor scaling or
// shape[0] entries for per-output-channel scaling (axis 0); every code is
// numeric and decodes to a magnitude <= beta_max.
struct QTensor {
  std::vector<std::int64_t> shape;
  std::vector<std::uint16_t> codes;
  FloatFormat format;
  std::vector<double> scales;

  bool per_channel() const { return scales.size() > 1; }
  std::int64_t numel() const;
  void validate() const;  // shape/codes/scales consistency, code range
};

// Clamp each element to [-gamma, gamma], divide by alpha = gamma / beta_max,
// and round to the nearest representable value. NaN elements and
// non-positive gamma are errors; +-Inf elements saturate via the clamp.
QTensor quantize_tensor(const Tensor& x, double gamma, const FloatFormat& fmt);

// Per-output-channel variant: gammas has shape[0] entries and each channel
// (contiguous block along axis 0) is quantized with its own threshold.
QTensor quantize_tensor_per_channel(const Tensor& x, const std::vector<double>& gammas,
                                    const FloatFormat& fmt);

// Elementwise alpha * decode(code).
Tensor dequantize_tensor(const QTensor& q);

}  // namespace dfpq
