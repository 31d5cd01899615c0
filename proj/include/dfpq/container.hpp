#pragma once

// On-disk containers. A model lives as a UTF-8 JSON manifest (human-diffable,
// sorted keys, stable formatting) plus a sibling raw binary blob holding the
// tensor data; the manifest's tensor table locates every tensor in the blob
// by offset. Serialization is deterministic: identical in-memory content
// produces byte-identical files, and parse -> serialize -> parse is the
// identity.
//
// Float tensors are little-endian IEEE-754 binary32. Quantized code tensors
// are packed little-endian, one byte per code for formats up to 8 bits and
// two bytes per code up to 16.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dfpq/calibrate.hpp"
#include "dfpq/engine.hpp"
#include "dfpq/graph.hpp"
#include "dfpq/tensor.hpp"

namespace dfpq {

// --- float model -----------------------------------------------------------

// Writes `manifest_path` (JSON) and its blob next to it (same name with the
// extension replaced by ".bin", recorded in the manifest). Node parameter
// tensors are stored under "<node id>.<slot>" names, packed in sorted order.
void save_model(const Graph& g, const std::string& manifest_path);

// Loads a manifest written by save_model (or by any tool following the same
// layout) and rebuilds the graph, validating shapes, offsets, and blob size.
Graph load_model(const std::string& manifest_path);

// --- quantized model -------------------------------------------------------

// Everything needed to reload and re-run a calibrated model bit-identically,
// plus the human-relevant calibration and accumulator reports.
struct QuantizedContainer {
  QuantizedModel model;
  int accumulator_bits = 64;
  bool bias_on_output_grid = false;
  std::map<std::string, CalibrationRecord> records;  // calibration report
  std::vector<NodeBudget> budgets;                   // accumulator report
};

void save_quantized(const QuantizedContainer& c, const std::string& manifest_path);
QuantizedContainer load_quantized(const std::string& manifest_path);

// --- datasets --------------------------------------------------------------

// A directory with one "data.tensor" file (magic "DFPT1\0", image count,
// per-image shape, then count * numel little-endian binary32 values) and an
// optional "labels.txt" (one integer per line, one line per image).
struct Dataset {
  std::vector<Tensor> images;  // all share one shape
  std::vector<int> labels;     // empty when labels.txt is absent
};

void save_dataset(const Dataset& d, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace dfpq
