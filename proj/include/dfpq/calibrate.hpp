#pragma once

// Histogram-based threshold calibration: chooses the clipping magnitude gamma
// for every activation tensor by sweeping histogram truncation points and
// scoring each candidate with a distribution distance, and records per-channel
// magnitude bounds for weights. One calibration batch drives the whole run;
// results are bit-reproducible for identical inputs.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dfpq/format.hpp"
#include "dfpq/graph.hpp"
#include "dfpq/tensor.hpp"

namespace dfpq {

// --- histograms ------------------------------------------------------------

// Equal-width histogram of sample magnitudes over [0, max|x|].
struct Histogram {
  std::vector<double> bin_edges;  // num_bins + 1 ascending edges; first is 0,
                                  // last is the largest magnitude seen
  std::vector<double> pdf;        // per-bin mass, sums to 1
  std::vector<double> cdf;        // running sum of pdf; last entry exactly 1
  bool degenerate = false;        // every sample was zero; all mass in bin 0
};

// Bins |x| into num_bins equal-width bins. The largest magnitude lands in the
// final bin. Requires finite, non-empty input and num_bins >= 1; an all-zero
// input yields a degenerate histogram instead of zero-width bins.
Histogram build_histogram(const std::vector<float>& samples, int num_bins);
Histogram build_histogram(const Tensor& x, int num_bins);

// --- distribution distances ------------------------------------------------

enum class Divergence {
  RelativeEntropy,         // KL(reference || candidate)
  ReverseRelativeEntropy,  // KL(candidate || reference)
  JensenShannon,
  TotalVariation,
  Hellinger,
  KolmogorovSmirnov,  // computed on the cdfs directly
  ChiSquared,         // Pearson, candidate in the denominator
  EarthMover,         // 1-D, unit bin spacing
};
inline constexpr int kDivergenceCount = 8;

// Which distances contribute to a candidate's score and with what weight.
struct MeasureConfig {
  std::array<double, kDivergenceCount> weights{};

  // Relative entropy alone, weight 1 (the default everywhere).
  static MeasureConfig relative_entropy();
  // Uniform average of all eight distances.
  static MeasureConfig composite();
};

// Weighted sum of the enabled distances between two same-length discrete
// cdfs. Density-based distances work on the adjacent differences of the cdfs;
// where a distance divides by (or takes a log of) a density, zero bins of
// that density first receive additive mass 1e-12 and the density is
// renormalized, so the score is always finite.
double measure(const std::vector<double>& reference_cdf,
               const std::vector<double>& candidate_cdf, const MeasureConfig& cfg);

// --- threshold sweep -------------------------------------------------------

struct SweepConfig {
  int num_bins = 2048;  // must exceed 2^(n-1) + 1 for an n-bit format
  MeasureConfig measure = MeasureConfig::relative_entropy();
};

struct SweepResult {
  double gamma = 1.0;      // chosen clipping magnitude
  double delta = 0.0;      // score of the chosen candidate
  bool degenerate = false; // all-zero input; gamma fell back to 1
};

// Scans truncation points i from 2^(n-1) + 1 bins up to the full histogram.
// Each candidate clips the cdf at bin i, resamples the clipped head through
// the format's normalized value grid (linear interpolation out and back), and
// scores the result against the untouched cdf; gamma is the bin edge of the
// best-scoring candidate, ties resolved toward the smallest. Deterministic:
// no randomness anywhere.
SweepResult threshold_sweep(const Histogram& h, const FloatFormat& fmt,
                            const MeasureConfig& cfg);
SweepResult threshold_sweep(const std::vector<float>& samples, const FloatFormat& fmt,
                            const SweepConfig& cfg = {});
SweepResult threshold_sweep(const Tensor& x, const FloatFormat& fmt,
                            const SweepConfig& cfg = {});

// --- network calibration ---------------------------------------------------

// One calibrated quantity: an activation tensor's clipping magnitude, or a
// weight tensor's per-output-channel magnitude bounds.
struct CalibrationRecord {
  std::string tensor_id;
  std::vector<double> gamma;  // one entry for activations; per-channel for weights
  double delta = 0.0;         // sweep score; 0 for weights
  FloatFormat format;
  bool degenerate = false;    // gamma fell back to 1 on all-zero data
};

// Per-output-channel magnitude bound max|w[c]| along axis 0, computed exactly
// (no histogram); all-zero channels fall back to 1.
std::vector<double> weight_thresholds(const Tensor& w);

struct CalibrationConfig {
  SweepConfig sweep;
};

// Calibrates a preprocessed graph against a batch of 1..128 input tensors.
// Walks the graph in topological order executing already-calibrated tensors
// in quantize-dequantize form, so later layers see earlier quantization
// error. Scale-preserving chains defer their threshold to the end of the
// chain (a convolution feeding a rectifier is measured after the rectifier
// and shares its gamma); every input of an element-wise add or concatenation
// shares the threshold swept on the joined output. Activation records are
// keyed by tensor id; weight records by "<node id>.weight". Throws on cyclic
// graphs and on node kinds that must be folded away before calibration.
std::map<std::string, CalibrationRecord> calibrate_network(
    const Graph& g, const std::vector<Tensor>& batch, const FloatFormat& fmt,
    const CalibrationConfig& cfg = {});

// Scalar clipping magnitude for every activation tensor in the graph,
// expanded from the record map: tensors covered by a downstream
// scale-preserving node (rectifier, max-pool) take their consumer's value.
std::map<std::string, double> activation_thresholds(
    const Graph& g, const std::map<std::string, CalibrationRecord>& records);

}  // namespace dfpq
