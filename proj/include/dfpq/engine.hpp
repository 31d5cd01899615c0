#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dfpq/accumulator.hpp"
#include "dfpq/graph.hpp"
#include "dfpq/quantize.hpp"
#include "dfpq/tensor.hpp"

namespace dfpq {

// Tensor id consumed by the single Output node; throws if the graph does not
// have exactly one Input and one Output.
std::string graph_output_tensor(const Graph& g);
std::string graph_input_tensor(const Graph& g);

// Single-precision execution of every node kind (accumulating in double),
// returning every produced tensor by id. IdentityDownscale is a float-domain
// identity: its factor only rescales quantized storage, not values.
std::map<std::string, Tensor> reference_forward(const Graph& g, const Tensor& input);

// One node of the float semantics evaluated on explicit input tensors (same
// order as node.inputs), returning the node's output tensor. Input and Output
// nodes carry no arithmetic and are rejected.
Tensor reference_node(const Node& n, const std::vector<Tensor>& inputs);

// --- quantized model -------------------------------------------------------

// A preprocessed graph plus everything needed to run it on codes: one shared
// element format, a calibrated threshold per activation tensor, per-node
// quantized weights (per-output-channel scales), and float biases (biases
// enter the integer accumulator requantized at alpha_x * alpha_w).
struct QuantizedModel {
  Graph graph;
  FloatFormat format;
  std::map<std::string, double> thresholds;          // tensor id -> gamma
  std::map<std::string, QTensor> weights;            // node id -> codes
  std::map<std::string, std::vector<float>> biases;  // node id -> float bias
};

// Quantizes convolution / inner-product weights per output channel at their
// max-abs thresholds (an all-zero channel uses threshold 1) and copies
// biases. Average pools are materialized as fixed-weight depthwise
// convolutions (every tap 1/k^2) so the quantized graph reduces to MAC,
// join, and pointwise kinds. Affine kinds must already be folded away.
QuantizedModel quantize_model(const Graph& g, const FloatFormat& fmt,
                              std::map<std::string, double> thresholds);

// --- execution plan --------------------------------------------------------

// Accumulator accounting for one reduction node, fixed at plan time.
struct NodeBudget {
  std::string node;
  std::int64_t terms = 0;  // reduction size N (MAC) or input count (add)
  int q_required = 0;      // bits for the actual worst case, bias included
  int q_minimal = 0;       // closed-form minimal width for the MAC/add alone
  BigInt n_cap = 0;        // largest safe term count at the engine width
};

struct ExecutionPlan {
  QuantizedModel model;
  std::vector<std::size_t> order;  // topological node order
  std::map<std::string, std::vector<std::int64_t>> shapes;
  std::map<std::string, ScaledFormat> act;  // tensor id -> scaled format
  std::vector<NodeBudget> budgets;
  int accumulator_bits = 64;
  bool bias_on_output_grid = false;
};

// Validates the model against the engine contract and fails fast — nothing
// is deferred to execution time: every activation tensor has a threshold;
// pass-through kinds (ReLU, MaxPool) and concat inputs keep their scale;
// eltwise inputs never exceed the output scale; every reduction fits the
// accumulator width (bits in [8, 127]; widths above 64 emulate a wider
// accumulator for sweep reporting, still exactly).
//
// bias_on_output_grid selects where biases are quantized: false (default)
// puts them on the accumulator grid alpha_x * alpha_w[oc], inside the exact
// integer sum; true rounds them onto the output grid alpha_z and adds them
// after the rescale, leaving the accumulator budget to the products alone.
ExecutionPlan build_plan(const QuantizedModel& m, int accumulator_bits = 64,
                         bool bias_on_output_grid = false);

// --- node kernels (public so oracle tests can drive them directly) --------

// Convolution / inner product on codes: decodes both operands to integers,
// accumulates products exactly in a wide signed integer, adds the bias
// requantized to alpha_x * alpha_w[oc] (rounded half-to-even), scales the
// total by alpha_x * alpha_w[oc] / alpha_z in double precision, and rounds
// into the output format, clamping at +-beta_max. With bias_on_output_grid
// the bias is instead rounded onto the output grid and added after the
// rescale, outside the integer accumulator.
QTensor quantized_mac_node(const Node& geom, const QTensor& x, const QTensor& w,
                           const std::vector<float>& bias, const ScaledFormat& out_sf,
                           bool bias_on_output_grid = false);

// Sum of (alpha_i / alpha_z) * beta_i per element in double precision, then
// one rounding into the output format. Requires alpha_i <= alpha_z and a
// shared element format; with all ratios 1 the sum is exact integer
// arithmetic (the plan bounds it to stay below 2^53).
QTensor quantized_eltwise_add(const std::vector<QTensor>& xs, const ScaledFormat& out_sf);

// Negative-valued codes become the canonical zero code; scale is unchanged.
QTensor quantized_relu(const QTensor& x);

// Window maximum by decoded value (never by raw code); padding taps are
// skipped, so they can never win. Scale is unchanged.
QTensor quantized_max_pool(const Node& geom, const QTensor& x);

// Re-rounds every element onto a new scale: beta' = round(beta * alpha_in /
// alpha_out), saturating. This is how IdentityDownscale executes: its output
// tensor carries the join threshold, so values above it clip.
QTensor quantized_requantize(const QTensor& x, const ScaledFormat& out_sf);

// --- end-to-end ------------------------------------------------------------

struct ForwardResult {
  Tensor logits;                         // dequantized final output
  std::map<std::string, QTensor> tensors;  // every activation, by tensor id
};

// Quantizes the input at its calibrated threshold, runs every node on codes,
// and dequantizes the final tensor. Deterministic: repeated calls produce
// bit-identical codes.
ForwardResult quantized_forward(const ExecutionPlan& plan, const Tensor& input);

struct OutputComparison {
  double max_abs = 0.0;
  double max_rel = 0.0;  // |a-b|/|b| over elements with b != 0
  bool top1_match = true;
};

// Deterministic error metrics between two same-shaped tensors; top-1 compares
// the first argmax of each.
OutputComparison compare_outputs(const Tensor& a, const Tensor& b);

}  // namespace dfpq
