// Quantized execution: planning (scale checks and accumulator sizing, all
// ahead of time) and the integer datapath itself. Accumulation is performed
// in a 128-bit signed integer, which is exact for every plan the sizing
// guard accepts (widths up to 127 bits); the default engine width is 64.

#include "dfpq/engine.hpp"

#include "dfpq/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dfpq {

namespace {

using Acc = __int128;

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("engine: " + msg);
}

constexpr std::int64_t kNonNumeric = std::numeric_limits<std::int64_t>::min();

// code -> decoded integer value, with kNonNumeric marking unusable codes.
// Cached per format: the table is consulted once per tap.
const std::vector<std::int64_t>& decode_lut(const FloatFormat& fmt) {
  static std::mutex mu;
  static std::map<std::uint32_t, std::unique_ptr<std::vector<std::int64_t>>> cache;

  const std::uint32_t key = static_cast<std::uint32_t>(fmt.n) | (static_cast<std::uint32_t>(fmt.p) << 5) |
                            (static_cast<std::uint32_t>(fmt.encoding) << 10) |
                            (static_cast<std::uint32_t>(fmt.subnormals) << 11) |
                            (static_cast<std::uint32_t>(fmt.inf_nan) << 12);
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(key);
  if (it != cache.end()) return *it->second;

  fmt.validate();
  auto lut = std::make_unique<std::vector<std::int64_t>>(std::size_t{1} << fmt.n, kNonNumeric);
  for (std::uint32_t c = 0; c < lut->size(); ++c) {
    if (classify_code(c, fmt) != CodeClass::Numeric) continue;
    try {
      (*lut)[c] = decode_code(c, fmt);
    } catch (const std::overflow_error&) {
      fail("format " + fmt.to_string() + " decodes beyond 64-bit integers and cannot execute");
    }
  }
  return *cache.emplace(key, std::move(lut)).first->second;
}

double channel_scale(const QTensor& w, std::int64_t oc) {
  return w.scales[w.per_channel() ? static_cast<std::size_t>(oc) : 0];
}

// Bias expressed on the accumulator's grid alpha_x * alpha_w[oc], rounded
// half-to-even (the default floating-point rounding mode).
std::int64_t bias_on_grid(double bias, double ax, double aw, const std::string& id) {
  const double t = ax * aw;
  const double on_grid = bias / t;
  if (!(std::fabs(on_grid) <= 9.0e18))
    fail("node '" + id + "': bias " + std::to_string(bias) + " exceeds the integer accumulator range");
  return std::llrint(on_grid);
}

// Bias expressed on the output grid alpha_z, for the mode that adds it after
// the rescale instead of inside the accumulator.
double bias_on_output(double bias, double az, const std::string& id) {
  const double on_grid = bias / az;
  if (!(std::fabs(on_grid) <= 9.0e18))
    fail("node '" + id + "': bias " + std::to_string(bias) +
         " exceeds the representable integer range on the output grid");
  return static_cast<double>(std::llrint(on_grid));
}

std::vector<std::int64_t> conv_out_shape(const Node& n, const std::vector<std::int64_t>& in_shape,
                                         std::int64_t oc) {
  const std::int64_t ho = (in_shape[1] + 2 * n.pad - n.kernel) / n.stride + 1;
  const std::int64_t wo = (in_shape[2] + 2 * n.pad - n.kernel) / n.stride + 1;
  return {oc, ho, wo};
}

void require_same_format(const QTensor& x, const FloatFormat& fmt, const std::string& what) {
  if (x.format != fmt) fail(what + ": element formats differ");
}

}  // namespace

// --- node kernels ----------------------------------------------------------

QTensor quantized_mac_node(const Node& geom, const QTensor& x, const QTensor& w,
                           const std::vector<float>& bias, const ScaledFormat& out_sf,
                           bool bias_on_output_grid) {
  x.validate();
  w.validate();
  require_same_format(x, out_sf.format, "node '" + geom.id + "'");
  require_same_format(w, out_sf.format, "node '" + geom.id + "'");
  if (x.per_channel()) fail("node '" + geom.id + "': activations must be per-tensor scaled");
  const double ax = x.scales[0];
  const auto& lut = decode_lut(x.format);

  const std::int64_t oc_count = w.shape.at(0);
  if (!bias.empty() && static_cast<std::int64_t>(bias.size()) != oc_count)
    fail("node '" + geom.id + "': bias length does not match the output channels");

  std::vector<std::int64_t> bias_q(static_cast<std::size_t>(oc_count), 0);
  std::vector<double> post(static_cast<std::size_t>(oc_count), 0.0);
  std::vector<double> ratio(static_cast<std::size_t>(oc_count), 0.0);
  for (std::int64_t oc = 0; oc < oc_count; ++oc) {
    const double aw = channel_scale(w, oc);
    if (!bias.empty()) {
      if (bias_on_output_grid)
        post[oc] = bias_on_output(bias[oc], out_sf.alpha, geom.id);
      else
        bias_q[oc] = bias_on_grid(bias[oc], ax, aw, geom.id);
    }
    const double t = ax * aw;
    ratio[oc] = t / out_sf.alpha;
  }

  QTensor out;
  out.format = out_sf.format;
  out.scales = {out_sf.alpha};

  if (geom.kind == NodeKind::Convolution) {
    if (x.shape.size() != 3 || w.shape.size() != 4)
      fail("node '" + geom.id + "': convolution expects a [C,H,W] input and [OC,IC/g,K,K] weights");
    const std::int64_t c_in = x.shape[0], h_in = x.shape[1], w_in = x.shape[2];
    const std::int64_t icg = w.shape[1], k = w.shape[2];
    if (k != w.shape[3] || k != geom.kernel) fail("node '" + geom.id + "': kernel size mismatch");
    if (icg * geom.groups != c_in) fail("node '" + geom.id + "': group count mismatch");
    const std::int64_t ocg = oc_count / geom.groups;
    out.shape = conv_out_shape(geom, x.shape, oc_count);
    const std::int64_t ho = out.shape[1], wo = out.shape[2];
    out.codes.resize(static_cast<std::size_t>(oc_count * ho * wo));

    std::size_t at = 0;
    for (std::int64_t oc = 0; oc < oc_count; ++oc) {
      const std::int64_t grp = oc / ocg;
      for (std::int64_t y = 0; y < ho; ++y) {
        for (std::int64_t xo = 0; xo < wo; ++xo, ++at) {
          Acc acc = bias_q[oc];
          for (std::int64_t ic = 0; ic < icg; ++ic) {
            const std::int64_t c = grp * icg + ic;
            for (std::int64_t kh = 0; kh < k; ++kh) {
              const std::int64_t iy = y * geom.stride - geom.pad + kh;
              if (iy < 0 || iy >= h_in) continue;  // padding taps contribute zero
              for (std::int64_t kw = 0; kw < k; ++kw) {
                const std::int64_t ix = xo * geom.stride - geom.pad + kw;
                if (ix < 0 || ix >= w_in) continue;
                const std::int64_t xb = lut[x.codes[static_cast<std::size_t>((c * h_in + iy) * w_in + ix)]];
                const std::int64_t wb = lut[w.codes[static_cast<std::size_t>(((oc * icg + ic) * k + kh) * k + kw)]];
                acc += static_cast<Acc>(xb) * wb;
              }
            }
          }
          out.codes[at] =
              round_saturating(static_cast<double>(acc) * ratio[oc] + post[oc], out.format);
        }
      }
    }
    return out;
  }

  if (geom.kind == NodeKind::InnerProduct) {
    if (w.shape.size() != 2) fail("node '" + geom.id + "': inner product expects [OUT,IN] weights");
    const std::int64_t in_f = w.shape[1];
    if (x.numel() != in_f) fail("node '" + geom.id + "': input size does not match the weight columns");
    out.shape = {oc_count};
    out.codes.resize(static_cast<std::size_t>(oc_count));
    for (std::int64_t o = 0; o < oc_count; ++o) {
      Acc acc = bias_q[o];
      for (std::int64_t i = 0; i < in_f; ++i) {
        const std::int64_t xb = lut[x.codes[static_cast<std::size_t>(i)]];
        const std::int64_t wb = lut[w.codes[static_cast<std::size_t>(o * in_f + i)]];
        acc += static_cast<Acc>(xb) * wb;
      }
      out.codes[static_cast<std::size_t>(o)] =
          round_saturating(static_cast<double>(acc) * ratio[o] + post[o], out.format);
    }
    return out;
  }

  fail("node '" + geom.id + "': not a multiply-accumulate kind");
}

QTensor quantized_eltwise_add(const std::vector<QTensor>& xs, const ScaledFormat& out_sf) {
  if (xs.empty()) fail("eltwise add needs at least one input");
  std::vector<double> ratio(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    xs[i].validate();
    require_same_format(xs[i], out_sf.format, "eltwise add");
    if (xs[i].per_channel()) fail("eltwise add: inputs must be per-tensor scaled");
    if (xs[i].shape != xs[0].shape) fail("eltwise add: input shapes differ");
    if (xs[i].scales[0] > out_sf.alpha)
      fail("eltwise add: input scale " + std::to_string(xs[i].scales[0]) +
           " exceeds the output scale " + std::to_string(out_sf.alpha));
    ratio[i] = xs[i].scales[0] / out_sf.alpha;
  }
  const auto& lut = decode_lut(out_sf.format);

  QTensor out;
  out.shape = xs[0].shape;
  out.format = out_sf.format;
  out.scales = {out_sf.alpha};
  out.codes.resize(xs[0].codes.size());
  for (std::size_t e = 0; e < out.codes.size(); ++e) {
    double sum = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i)
      sum += ratio[i] * static_cast<double>(lut[xs[i].codes[e]]);
    out.codes[e] = round_saturating(sum, out.format);
  }
  return out;
}

QTensor quantized_relu(const QTensor& x) {
  x.validate();
  if (x.per_channel()) fail("relu: input must be per-tensor scaled");
  const auto& lut = decode_lut(x.format);
  const std::uint16_t zero = round_to_format(0.0, x.format);
  QTensor out = x;
  for (auto& c : out.codes)
    if (lut[c] < 0) c = zero;
  return out;
}

QTensor quantized_max_pool(const Node& geom, const QTensor& x) {
  x.validate();
  if (x.per_channel()) fail("node '" + geom.id + "': input must be per-tensor scaled");
  if (x.shape.size() != 3) fail("node '" + geom.id + "': max pool expects a [C,H,W] input");
  const auto& lut = decode_lut(x.format);
  const std::int64_t c_n = x.shape[0], h_in = x.shape[1], w_in = x.shape[2];

  QTensor out;
  out.format = x.format;
  out.scales = x.scales;
  out.shape = conv_out_shape(geom, x.shape, c_n);
  const std::int64_t ho = out.shape[1], wo = out.shape[2];
  out.codes.resize(static_cast<std::size_t>(c_n * ho * wo));

  std::size_t at = 0;
  for (std::int64_t c = 0; c < c_n; ++c) {
    for (std::int64_t y = 0; y < ho; ++y) {
      for (std::int64_t xo = 0; xo < wo; ++xo, ++at) {
        bool seen = false;
        std::uint16_t best_code = 0;
        std::int64_t best = 0;
        for (std::int64_t kh = 0; kh < geom.kernel; ++kh) {
          const std::int64_t iy = y * geom.stride - geom.pad + kh;
          if (iy < 0 || iy >= h_in) continue;  // padding never wins the max
          for (std::int64_t kw = 0; kw < geom.kernel; ++kw) {
            const std::int64_t ix = xo * geom.stride - geom.pad + kw;
            if (ix < 0 || ix >= w_in) continue;
            const std::uint16_t code = x.codes[static_cast<std::size_t>((c * h_in + iy) * w_in + ix)];
            const std::int64_t v = lut[code];
            if (!seen || v > best) {  // ties keep the first tap encountered
              seen = true;
              best = v;
              best_code = code;
            }
          }
        }
        if (!seen) fail("node '" + geom.id + "': pooling window has no input taps");
        out.codes[at] = best_code;
      }
    }
  }
  return out;
}

QTensor quantized_requantize(const QTensor& x, const ScaledFormat& out_sf) {
  x.validate();
  require_same_format(x, out_sf.format, "requantize");
  if (x.per_channel()) fail("requantize: input must be per-tensor scaled");
  const auto& lut = decode_lut(x.format);
  const double ratio = x.scales[0] / out_sf.alpha;
  QTensor out = x;
  out.scales = {out_sf.alpha};
  for (auto& c : out.codes)
    c = round_saturating(static_cast<double>(lut[c]) * ratio, out.format);
  return out;
}

// --- model preparation -----------------------------------------------------

QuantizedModel quantize_model(const Graph& g, const FloatFormat& fmt,
                              std::map<std::string, double> thresholds) {
  fmt.validate();
  g.validate();
  const auto shapes = g.infer_shapes();

  QuantizedModel m;
  m.graph = g;
  m.format = fmt;
  m.thresholds = std::move(thresholds);

  for (Node& n : m.graph.nodes) {
    if (n.kind == NodeKind::BatchNorm || n.kind == NodeKind::Scale || n.kind == NodeKind::Bias)
      fail("node '" + n.id + "': affine kinds must be folded away before quantization");

    if (n.kind == NodeKind::AvgPool) {
      // An average pool is a depthwise convolution whose taps are all 1/k^2;
      // materializing it lets the integer MAC path handle it unchanged.
      const std::int64_t c_n = shapes.at(n.inputs[0]).at(0);
      const std::int64_t k = n.kernel;
      n.kind = NodeKind::Convolution;
      n.groups = static_cast<int>(c_n);
      n.weight.shape = {c_n, 1, k, k};
      n.weight.data.assign(static_cast<std::size_t>(c_n * k * k),
                           1.0f / static_cast<float>(k * k));
      n.bias = Tensor{};
    }

    if (n.kind != NodeKind::Convolution && n.kind != NodeKind::InnerProduct) continue;

    m.weights.emplace(n.id, quantize_tensor_per_channel(n.weight, weight_thresholds(n.weight), fmt));
    m.biases.emplace(n.id, n.bias.data);
  }
  return m;
}

// --- planning --------------------------------------------------------------

ExecutionPlan build_plan(const QuantizedModel& m, int accumulator_bits,
                         bool bias_on_output_grid) {
  if (accumulator_bits < 8 || accumulator_bits > 127)
    fail("accumulator width " + std::to_string(accumulator_bits) + " is outside [8, 127]");
  m.format.validate();
  if (!is_computable(m.format))
    fail("format " + m.format.to_string() + " has values beyond double range and cannot execute");
  if (bit_length(exact_to_bigint(beta_max_exact(m.format))) > 63)
    fail("format " + m.format.to_string() + " decodes beyond 64-bit integers and cannot execute");
  m.graph.validate();

  ExecutionPlan plan;
  plan.model = m;
  plan.accumulator_bits = accumulator_bits;
  plan.bias_on_output_grid = bias_on_output_grid;
  plan.shapes = m.graph.infer_shapes();
  plan.order = m.graph.topological_order();

  for (const auto& [tensor, shape] : plan.shapes) {
    (void)shape;
    const auto it = m.thresholds.find(tensor);
    if (it == m.thresholds.end()) fail("no threshold recorded for tensor '" + tensor + "'");
    if (!(it->second > 0.0) || !std::isfinite(it->second))
      fail("tensor '" + tensor + "': threshold must be positive and finite");
    plan.act.emplace(tensor, scale_from_threshold(it->second, m.format));
  }

  const BigInt b = exact_to_bigint(beta_max_exact(m.format));
  const OperandRange rng{b, 0};

  for (const std::size_t idx : plan.order) {
    const Node& n = m.graph.nodes[idx];
    switch (n.kind) {
      case NodeKind::Input:
      case NodeKind::Output:
      case NodeKind::IdentityDownscale:
        break;

      case NodeKind::BatchNorm:
      case NodeKind::Scale:
      case NodeKind::Bias:
      case NodeKind::AvgPool:
        fail("node '" + n.id + "': kind " + node_kind_name(n.kind) +
             " cannot execute on codes; prepare the model first");

      case NodeKind::Convolution:
      case NodeKind::InnerProduct: {
        const auto wit = m.weights.find(n.id);
        if (wit == m.weights.end()) fail("node '" + n.id + "': no quantized weights");
        const QTensor& w = wit->second;
        w.validate();
        if (w.format != m.format) fail("node '" + n.id + "': weight format differs from the model format");
        if (!n.weight.shape.empty() && w.shape != n.weight.shape)
          fail("node '" + n.id + "': quantized weight shape differs from the graph weights");

        const std::int64_t terms = n.kind == NodeKind::Convolution
                                       ? w.shape.at(1) * w.shape.at(2) * w.shape.at(3)
                                       : w.shape.at(1);
        const double ax = plan.act.at(n.inputs[0]).alpha;
        BigInt bias_mag = 0;
        const auto bit = m.biases.find(n.id);
        if (bit != m.biases.end() && !bit->second.empty()) {
          const double az = plan.act.at(n.outputs[0]).alpha;
          for (std::int64_t oc = 0; oc < w.shape.at(0); ++oc) {
            if (bias_on_output_grid) {
              // Added after the rescale: only representability matters here.
              (void)bias_on_output(bit->second[static_cast<std::size_t>(oc)], az, n.id);
              continue;
            }
            const std::int64_t bq =
                bias_on_grid(bit->second[static_cast<std::size_t>(oc)], ax, channel_scale(w, oc), n.id);
            BigInt babs = bq;
            if (babs < 0) babs = -babs;
            if (babs > bias_mag) bias_mag = babs;
          }
        }

        NodeBudget budget;
        budget.node = n.id;
        budget.terms = terms;
        budget.q_required = bit_length(BigInt(terms) * b * b + bias_mag) + 1;
        budget.q_minimal = mac_min_q(rng, rng, terms);
        if (budget.q_required > accumulator_bits)
          fail("node '" + n.id + "': needs a " + std::to_string(budget.q_required) +
               "-bit accumulator but the engine has " + std::to_string(accumulator_bits) + " bits");
        // Passing the width check means one product fits, so the cap exists.
        budget.n_cap = mac_max_n(rng, rng, accumulator_bits);
        plan.budgets.push_back(std::move(budget));
        break;
      }

      case NodeKind::EltwiseAdd: {
        const double az = plan.act.at(n.outputs[0]).alpha;
        for (const auto& t : n.inputs)
          if (plan.act.at(t).alpha > az)
            fail("node '" + n.id + "': input '" + t + "' scale exceeds the output scale");
        const auto terms = static_cast<std::int64_t>(n.inputs.size());
        NodeBudget budget;
        budget.node = n.id;
        budget.terms = terms;
        budget.q_required = add_min_q(rng, terms);
        budget.q_minimal = budget.q_required;
        const int exact_bits = std::min(accumulator_bits, 53);
        budget.n_cap = add_max_n(rng, exact_bits);
        // With equal scales the sum is pure integer arithmetic carried in
        // double significands, so it must stay within 53 bits.
        if (budget.q_required > exact_bits)
          fail("node '" + n.id + "': a " + std::to_string(budget.q_required) +
               "-bit sum cannot be formed exactly (limit " + std::to_string(exact_bits) + " bits)");
        plan.budgets.push_back(std::move(budget));
        break;
      }

      case NodeKind::ReLU:
      case NodeKind::MaxPool:
        if (!(plan.act.at(n.inputs[0]) == plan.act.at(n.outputs[0])))
          fail("node '" + n.id + "': must keep its scale, but input and output thresholds differ");
        break;

      case NodeKind::Concat:
        for (const auto& t : n.inputs)
          if (!(plan.act.at(t) == plan.act.at(n.outputs[0])))
            fail("node '" + n.id + "': concatenation inputs must share the output scale");
        break;
    }
  }
  return plan;
}

// --- end-to-end ------------------------------------------------------------

ForwardResult quantized_forward(const ExecutionPlan& plan, const Tensor& input) {
  const Graph& g = plan.model.graph;
  check_tensor(input, "input");
  const std::string in_t = graph_input_tensor(g);
  const std::string out_t = graph_output_tensor(g);
  const Node& in_node = g.nodes[g.producer_of(in_t)];
  if (input.shape != in_node.shape)
    fail("input shape " + shape_to_string(input.shape) + " does not match node '" + in_node.id +
         "' which declares " + shape_to_string(in_node.shape));

  ForwardResult result;
  auto& bufs = result.tensors;
  bufs.emplace(in_t, quantize_tensor(input, plan.model.thresholds.at(in_t), plan.model.format));

  for (const std::size_t idx : plan.order) {
    const Node& n = g.nodes[idx];
    switch (n.kind) {
      case NodeKind::Input:
      case NodeKind::Output:
        break;

      case NodeKind::Convolution:
      case NodeKind::InnerProduct: {
        static const std::vector<float> kNoBias;
        const auto bit = plan.model.biases.find(n.id);
        bufs.emplace(n.outputs[0],
                     quantized_mac_node(n, bufs.at(n.inputs[0]), plan.model.weights.at(n.id),
                                        bit != plan.model.biases.end() ? bit->second : kNoBias,
                                        plan.act.at(n.outputs[0]), plan.bias_on_output_grid));
        break;
      }

      case NodeKind::ReLU:
        bufs.emplace(n.outputs[0], quantized_relu(bufs.at(n.inputs[0])));
        break;

      case NodeKind::MaxPool:
        bufs.emplace(n.outputs[0], quantized_max_pool(n, bufs.at(n.inputs[0])));
        break;

      case NodeKind::EltwiseAdd: {
        std::vector<QTensor> xs;
        xs.reserve(n.inputs.size());
        for (const auto& t : n.inputs) xs.push_back(bufs.at(t));
        bufs.emplace(n.outputs[0], quantized_eltwise_add(xs, plan.act.at(n.outputs[0])));
        break;
      }

      case NodeKind::Concat: {
        QTensor out;
        out.format = plan.model.format;
        out.scales = {plan.act.at(n.outputs[0]).alpha};
        out.shape = plan.shapes.at(n.outputs[0]);
        for (const auto& t : n.inputs) {
          const QTensor& part = bufs.at(t);
          if (part.scales != out.scales)
            fail("node '" + n.id + "': concatenation input '" + t + "' changed scale");
          out.codes.insert(out.codes.end(), part.codes.begin(), part.codes.end());
        }
        bufs.emplace(n.outputs[0], std::move(out));
        break;
      }

      case NodeKind::IdentityDownscale:
        bufs.emplace(n.outputs[0],
                     quantized_requantize(bufs.at(n.inputs[0]), plan.act.at(n.outputs[0])));
        break;

      case NodeKind::BatchNorm:
      case NodeKind::Scale:
      case NodeKind::Bias:
      case NodeKind::AvgPool:
        fail("node '" + n.id + "': kind " + node_kind_name(n.kind) + " cannot execute on codes");
    }
  }

  result.logits = dequantize_tensor(bufs.at(out_t));
  return result;
}

OutputComparison compare_outputs(const Tensor& a, const Tensor& b) {
  check_tensor(a, "first output");
  check_tensor(b, "second output");
  if (a.shape != b.shape)
    fail("output shapes differ: " + shape_to_string(a.shape) + " vs " + shape_to_string(b.shape));

  OutputComparison cmp;
  std::size_t arg_a = 0, arg_b = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double av = a.data[i], bv = b.data[i];
    const double abs_err = std::fabs(av - bv);
    cmp.max_abs = std::max(cmp.max_abs, abs_err);
    if (bv != 0.0)
      cmp.max_rel = std::max(cmp.max_rel, abs_err / std::fabs(bv));
    else if (av != 0.0)
      cmp.max_rel = std::numeric_limits<double>::infinity();
    if (a.data[i] > a.data[arg_a]) arg_a = i;
    if (b.data[i] > b.data[arg_b]) arg_b = i;
  }
  cmp.top1_match = arg_a == arg_b;
  return cmp;
}

}  // namespace dfpq
