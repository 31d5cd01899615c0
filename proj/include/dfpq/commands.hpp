#pragma once

// Command layer behind the `dfpq` binary. Each run_* function implements one
// subcommand against parsed options, writes its human-readable report to the
// given stream, and throws std::exception subclasses with a one-line message
// on failure (the binary maps those to a nonzero exit code). Everything is
// deterministic given the options and input files: calibration-subset
// selection is driven by an explicit seed, and repeated runs produce
// byte-identical containers and CSV reports.

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dfpq/calibrate.hpp"
#include "dfpq/engine.hpp"
#include "dfpq/graph.hpp"
#include "dfpq/tensor.hpp"

namespace dfpq {

// --- shared offline flow ---------------------------------------------------

// One-call offline quantization: preprocesses a float graph (join merging,
// affine folding, rescale splicing), calibrates thresholds on the batch,
// assigns join downscale factors, removes unity rescales, quantizes weights,
// and sizes the integer accumulators. The returned plan is ready for
// quantized_forward; `records` is the calibration report that goes into the
// saved container.
struct OfflineResult {
  std::map<std::string, CalibrationRecord> records;
  ExecutionPlan plan;
};
OfflineResult quantize_offline(const Graph& float_graph,
                               const std::vector<Tensor>& batch,
                               const FloatFormat& fmt,
                               const CalibrationConfig& cfg = {},
                               int accumulator_bits = 64,
                               bool bias_on_output_grid = false);

// Deterministic choice of `size` distinct indices out of `count` (partial
// Fisher-Yates over a fixed-seed mt19937). Order matters only for
// reproducibility; threshold statistics are permutation-invariant.
std::vector<int> pick_subset(int count, int size, unsigned seed);

// String forms shared by the CLI surface and the reports.
Encoding parse_encoding(const std::string& name);        // "sign-magnitude" | "twos-complement"
MeasureConfig parse_measure(const std::string& name);    // "kl1" | "composite"
// "" normally; "dynamic fixed-point" at p == n-2; "no exponent bits" at
// p == n-1.
std::string format_label(int n, int p);

// --- calibrate -------------------------------------------------------------

struct CalibrateOptions {
  std::string model_path;   // float model manifest
  std::string calib_dir;    // directory with data.tensor (labels unused)
  std::string out_path;     // quantized manifest to write (blob goes next to it)
  int calib_size = 128;     // images drawn from the calibration set
  int n = 8;
  int p = 4;
  bool subnormals = true;
  bool reserve_inf_nan = false;
  std::string encoding = "sign-magnitude";
  std::string measure = "kl1";
  int bins = 2048;
  unsigned seed = 0;
  int accumulator_bits = 64;
  bool bias_on_output_grid = false;
};

// Loads the model, runs the offline flow on a seeded calibration subset,
// writes the quantized container, and prints the per-tensor threshold and
// per-node accumulator report.
void run_calibrate(const CalibrateOptions& o, std::ostream& out);

// --- infer -----------------------------------------------------------------

struct InferOptions {
  std::string quantized_path;  // quantized container manifest
  std::string data_dir;        // directory with data.tensor (+ labels.txt)
  std::string compare_float;   // optional float model manifest to diff against
};

// Reloads the container, rebuilds the execution plan at the stored
// accumulator width, and reports top-1 accuracy over the labeled data set.
// With compare_float set, also runs the float reference on every image and
// reports logit error, top-1 agreement, and per-layer max absolute error
// relative to each layer's float maximum.
void run_infer(const InferOptions& o, std::ostream& out);

// --- sweep -----------------------------------------------------------------

struct SweepOptions {
  std::string model_path;
  std::string calib_dir;
  std::string eval_dir;   // labeled evaluation set
  std::string csv_path;   // CSV report to write
  std::vector<int> ns{8};
  std::vector<int> ps;
  std::vector<int> calib_sizes{128};
  std::string subnormals = "on";   // "on" | "off" | "both"
  std::string inf_nan = "numeric"; // "numeric" | "reserved" | "both"
  std::string encoding = "sign-magnitude";
  std::string measure = "kl1";
  int bins = 2048;
  unsigned seed = 0;
  int accumulator_bits = 64;
};

// Runs the full offline flow plus evaluation for every grid cell
// {n} x {p} x {subnormals} x {inf-nan} x {calib size}, printing an aligned
// text table and writing one CSV row per cell. A cell that fails (invalid
// format, accumulator overflow, ...) records its error in the status column
// and the run continues. The text report ends with a float baseline and a
// low-significand collapse line comparing the lowest completed p against the
// best completed cell.
void run_sweep(const SweepOptions& o, std::ostream& out);

// --- formats ---------------------------------------------------------------

struct FormatsOptions {
  int n = 8;
  std::vector<int> ps;
};

// Prints, for each requested significand width: exponent bits, largest
// representable magnitude, distinct value count, smallest normal, subnormal
// step, and the non-negative value grid normalized to [0, 1] (elided in the
// middle for wide formats).
void run_formats(const FormatsOptions& o, std::ostream& out);

}  // namespace dfpq
