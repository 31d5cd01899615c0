#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "dfpq/calibrate.hpp"
#include "dfpq/engine.hpp"
#include "dfpq/quantize.hpp"

namespace dfpq {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("calibration: " + msg);
}

// Additive mass given to zero bins of a density that ends up in a denominator
// or a logarithm, so every enabled distance stays finite.
constexpr double kZeroBinMass = 1e-12;

std::vector<double> pdf_of(const std::vector<double>& cdf) {
  std::vector<double> p(cdf.size());
  double prev = 0.0;
  for (std::size_t i = 0; i < cdf.size(); ++i) {
    p[i] = std::max(0.0, cdf[i] - prev);
    prev = cdf[i];
  }
  return p;
}

std::vector<double> smoothed(std::vector<double> p) {
  double sum = 0.0;
  for (double& v : p) {
    if (v == 0.0) v = kZeroBinMass;
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

// Relative entropy sum over bins where the first density has mass. The second
// density must be positive on those bins (smoothed by the caller if needed).
double relative_entropy(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) s += p[i] * std::log(p[i] / q[i]);
  return s;
}

// Piecewise-linear value of samples ys placed on the uniform grid j/(m-1),
// j = 0..m-1, evaluated at x in [0, 1].
double interp_uniform(const std::vector<double>& ys, std::size_t m, double x) {
  const double pos = x * static_cast<double>(m - 1);
  const auto j = static_cast<std::size_t>(pos);
  if (j + 1 >= m) return ys[m - 1];
  const double frac = pos - static_cast<double>(j);
  return ys[j] + frac * (ys[j + 1] - ys[j]);
}

}  // namespace

// --- histograms ------------------------------------------------------------

Histogram build_histogram(const std::vector<float>& samples, int num_bins) {
  if (samples.empty()) fail("histogram needs at least one sample");
  if (num_bins < 1) fail("histogram needs at least one bin");

  double top = 0.0;
  for (float v : samples) {
    if (!std::isfinite(v)) fail("histogram input contains a non-finite value");
    top = std::max(top, std::fabs(static_cast<double>(v)));
  }

  const auto bins = static_cast<std::size_t>(num_bins);
  Histogram h;
  h.bin_edges.resize(bins + 1);
  h.pdf.assign(bins, 0.0);
  h.cdf.assign(bins, 0.0);

  if (top == 0.0) {
    h.degenerate = true;
    std::fill(h.bin_edges.begin(), h.bin_edges.end(), 0.0);
    h.pdf[0] = 1.0;
    std::fill(h.cdf.begin(), h.cdf.end(), 1.0);
    return h;
  }

  for (std::size_t i = 0; i <= bins; ++i)
    h.bin_edges[i] = top * static_cast<double>(i) / static_cast<double>(num_bins);
  h.bin_edges[bins] = top;

  const double inv = static_cast<double>(num_bins) / top;
  for (float v : samples) {
    auto idx =
        static_cast<std::size_t>(std::fabs(static_cast<double>(v)) * inv);
    if (idx >= bins) idx = bins - 1;  // the largest magnitude lands in the final bin
    h.pdf[idx] += 1.0;
  }

  const auto total = static_cast<double>(samples.size());
  double run = 0.0;
  for (std::size_t i = 0; i < bins; ++i) {
    h.pdf[i] /= total;
    run += h.pdf[i];
    h.cdf[i] = run;
  }
  h.cdf[bins - 1] = 1.0;
  return h;
}

Histogram build_histogram(const Tensor& x, int num_bins) {
  check_tensor(x, "build_histogram");
  return build_histogram(x.data, num_bins);
}

// --- distribution distances ------------------------------------------------

MeasureConfig MeasureConfig::relative_entropy() {
  MeasureConfig c;
  c.weights[static_cast<int>(Divergence::RelativeEntropy)] = 1.0;
  return c;
}

MeasureConfig MeasureConfig::composite() {
  MeasureConfig c;
  c.weights.fill(1.0 / kDivergenceCount);
  return c;
}

double measure(const std::vector<double>& reference_cdf,
               const std::vector<double>& candidate_cdf, const MeasureConfig& cfg) {
  if (reference_cdf.empty() || reference_cdf.size() != candidate_cdf.size())
    fail("measure needs two same-length non-empty cdfs");
  double enabled = 0.0;
  for (double w : cfg.weights) {
    if (!(w >= 0.0)) fail("distance weights must be non-negative and finite");
    enabled += w;
  }
  if (enabled == 0.0) fail("no distance enabled in the measure configuration");

  const std::size_t bins = reference_cdf.size();
  const auto w_of = [&](Divergence d) { return cfg.weights[static_cast<int>(d)]; };

  // Densities are only materialized when a density-based distance is enabled.
  std::vector<double> p, q, sp, sq;
  const bool needs_density =
      w_of(Divergence::RelativeEntropy) > 0.0 || w_of(Divergence::ReverseRelativeEntropy) > 0.0 ||
      w_of(Divergence::JensenShannon) > 0.0 || w_of(Divergence::TotalVariation) > 0.0 ||
      w_of(Divergence::Hellinger) > 0.0 || w_of(Divergence::ChiSquared) > 0.0;
  if (needs_density) {
    p = pdf_of(reference_cdf);
    q = pdf_of(candidate_cdf);
  }

  double total = 0.0;

  if (double w = w_of(Divergence::RelativeEntropy); w > 0.0) {
    sq = smoothed(q);
    total += w * relative_entropy(p, sq);
  }
  if (double w = w_of(Divergence::ReverseRelativeEntropy); w > 0.0) {
    sp = smoothed(p);
    total += w * relative_entropy(q, sp);
  }
  if (double w = w_of(Divergence::JensenShannon); w > 0.0) {
    std::vector<double> m(bins);
    for (std::size_t i = 0; i < bins; ++i) m[i] = 0.5 * (p[i] + q[i]);
    total += w * 0.5 * (relative_entropy(p, m) + relative_entropy(q, m));
  }
  if (double w = w_of(Divergence::TotalVariation); w > 0.0) {
    double s = 0.0;
    for (std::size_t i = 0; i < bins; ++i) s += std::fabs(p[i] - q[i]);
    total += w * 0.5 * s;
  }
  if (double w = w_of(Divergence::Hellinger); w > 0.0) {
    double s = 0.0;
    for (std::size_t i = 0; i < bins; ++i) {
      const double d = std::sqrt(p[i]) - std::sqrt(q[i]);
      s += d * d;
    }
    total += w * std::sqrt(0.5 * s);
  }
  if (double w = w_of(Divergence::KolmogorovSmirnov); w > 0.0) {
    double s = 0.0;
    for (std::size_t i = 0; i < bins; ++i)
      s = std::max(s, std::fabs(reference_cdf[i] - candidate_cdf[i]));
    total += w * s;
  }
  if (double w = w_of(Divergence::ChiSquared); w > 0.0) {
    if (sq.empty()) sq = smoothed(q);
    double s = 0.0;
    for (std::size_t i = 0; i < bins; ++i) {
      const double d = p[i] - sq[i];
      s += d * d / sq[i];
    }
    total += w * s;
  }
  if (double w = w_of(Divergence::EarthMover); w > 0.0) {
    double s = 0.0;
    for (std::size_t i = 0; i < bins; ++i)
      s += std::fabs(reference_cdf[i] - candidate_cdf[i]);
    total += w * s;
  }
  return total;
}

// --- threshold sweep -------------------------------------------------------

SweepResult threshold_sweep(const Histogram& h, const FloatFormat& fmt,
                            const MeasureConfig& cfg) {
  fmt.validate();
  if (h.degenerate) return {1.0, 0.0, true};

  const auto bins = h.pdf.size();
  if (h.bin_edges.size() != bins + 1 || h.cdf.size() != bins)
    fail("histogram fields disagree on the bin count");
  const std::size_t first = (std::size_t{1} << (fmt.n - 1)) + 1;
  if (bins <= first)
    fail("threshold sweep needs more than 2^(n-1)+1 = " + std::to_string(first) +
         " bins for " + fmt.to_string() + ", got " + std::to_string(bins));

  const std::vector<double> grid = fpspace_normalized(fmt);
  const std::size_t g_n = grid.size();

  SweepResult best;
  best.gamma = h.bin_edges[bins];
  best.delta = std::numeric_limits<double>::infinity();

  std::vector<double> r, q, on_grid(g_n);
  for (std::size_t i = first; i <= bins; ++i) {
    // Clip: everything from bin i-1 onward is treated as already-accumulated mass.
    r = h.cdf;
    for (std::size_t k = i - 1; k < bins; ++k) r[k] = 1.0;

    // Resample the clipped head (r[0..i) on the uniform grid) onto the
    // format's normalized value grid and back; the reconstruction error is
    // exactly the information the format would lose at this clipping point.
    for (std::size_t k = 0; k < g_n; ++k) on_grid[k] = interp_uniform(r, i, grid[k]);
    q = r;
    std::size_t seg = 0;  // grid is ascending and so are the query points
    for (std::size_t j = 0; j < i; ++j) {
      const double u = static_cast<double>(j) / static_cast<double>(i - 1);
      if (u >= grid[g_n - 1]) {
        q[j] = on_grid[g_n - 1];
        continue;
      }
      while (seg + 2 < g_n && grid[seg + 1] <= u) ++seg;
      const double span = grid[seg + 1] - grid[seg];
      const double frac = (u - grid[seg]) / span;
      q[j] = on_grid[seg] + frac * (on_grid[seg + 1] - on_grid[seg]);
    }

    const double d = measure(h.cdf, q, cfg);
    if (d < best.delta) {
      best.delta = d;
      best.gamma = h.bin_edges[i];
    }
  }
  return best;
}

SweepResult threshold_sweep(const std::vector<float>& samples, const FloatFormat& fmt,
                            const SweepConfig& cfg) {
  return threshold_sweep(build_histogram(samples, cfg.num_bins), fmt, cfg.measure);
}

SweepResult threshold_sweep(const Tensor& x, const FloatFormat& fmt,
                            const SweepConfig& cfg) {
  check_tensor(x, "threshold_sweep");
  return threshold_sweep(x.data, fmt, cfg);
}

// --- weights ---------------------------------------------------------------

std::vector<double> weight_thresholds(const Tensor& w) {
  check_tensor(w, "weight_thresholds");
  if (w.shape.empty() || w.data.empty()) fail("weight_thresholds needs a non-empty tensor");
  const std::int64_t oc = w.shape[0];
  const std::int64_t block = static_cast<std::int64_t>(w.data.size()) / oc;
  std::vector<double> gammas(static_cast<std::size_t>(oc));
  for (std::int64_t ch = 0; ch < oc; ++ch) {
    double g_ch = 0.0;
    for (std::int64_t i = 0; i < block; ++i) {
      const auto v = static_cast<double>(w.data[static_cast<std::size_t>(ch * block + i)]);
      if (!std::isfinite(v)) fail("weight tensor contains a non-finite value");
      g_ch = std::max(g_ch, std::fabs(v));
    }
    gammas[static_cast<std::size_t>(ch)] = g_ch > 0.0 ? g_ch : 1.0;
  }
  return gammas;
}

// --- network calibration ---------------------------------------------------

namespace {

// Union-find over tensor ids; scale-preserving nodes and join nodes merge
// their tensors into one threshold group.
struct TensorGroups {
  std::map<std::string, std::string> parent;

  const std::string& find(const std::string& t) {
    std::string* at = &parent[t];
    if (at->empty()) {
      *at = t;
      return parent.find(t)->first;
    }
    if (*at == t) return *at;
    const std::string root = find(*at);
    parent[t] = root;
    return parent[t];
  }

  void unite(const std::string& a, const std::string& b) {
    const std::string ra = find(a), rb = find(b);
    if (ra != rb) parent[ra] = rb;
  }
};

bool is_pass_through(NodeKind k) {
  return k == NodeKind::ReLU || k == NodeKind::MaxPool;
}

bool is_join(NodeKind k) {
  return k == NodeKind::EltwiseAdd || k == NodeKind::Concat;
}

}  // namespace

std::map<std::string, CalibrationRecord> calibrate_network(
    const Graph& g, const std::vector<Tensor>& batch, const FloatFormat& fmt,
    const CalibrationConfig& cfg) {
  fmt.validate();
  if (batch.empty() || batch.size() > 128)
    fail("calibration batch must hold 1 to 128 inputs, got " + std::to_string(batch.size()));
  g.validate();
  g.infer_shapes();  // validates wiring and shape agreement
  const std::vector<std::size_t> order = g.topological_order();

  for (const Node& n : g.nodes)
    if (n.kind == NodeKind::BatchNorm || n.kind == NodeKind::Scale || n.kind == NodeKind::Bias)
      fail("node '" + n.id + "': kind " + node_kind_name(n.kind) +
           " cannot be calibrated; fold it into the preceding linear layer first");

  SweepConfig sweep = cfg.sweep;
  const int min_bins = (1 << (fmt.n - 1)) + 1;
  if (sweep.num_bins <= min_bins) sweep.num_bins = 1 << fmt.n;

  // Threshold groups and, per tensor, whether a scale-preserving consumer
  // takes over its record.
  TensorGroups groups;
  std::map<std::string, bool> covered;
  for (const Node& n : g.nodes) {
    if (is_pass_through(n.kind)) {
      groups.unite(n.inputs[0], n.outputs[0]);
      covered[n.inputs[0]] = true;
    } else if (is_join(n.kind)) {
      for (const std::string& t : n.inputs) groups.unite(n.outputs[0], t);
    }
  }

  // Every group freezes at its topologically last tensor.
  std::map<std::string, std::size_t> produced_at;
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const Node& n = g.nodes[order[pos]];
    if (n.kind != NodeKind::Output) produced_at[n.outputs[0]] = pos;
  }
  std::map<std::string, std::string> decision;
  std::map<std::string, std::vector<std::string>> members;
  for (const auto& [t, pos] : produced_at) {
    const std::string root = groups.find(t);
    members[root].push_back(t);
    auto it = decision.find(root);
    if (it == decision.end() || pos > produced_at.at(it->second)) decision[root] = t;
  }

  const auto batch_size = batch.size();
  std::map<std::string, std::vector<Tensor>> vals;  // per-input activations
  std::map<std::string, CalibrationRecord> recs;

  for (std::size_t idx : order) {
    const Node& n = g.nodes[idx];
    if (n.kind == NodeKind::Output) continue;
    const std::string& out_t = n.outputs[0];

    // Produce this node's activations for the whole batch.
    std::vector<Tensor>& out_vals = vals[out_t];
    out_vals.reserve(batch_size);
    if (n.kind == NodeKind::Input) {
      for (std::size_t b = 0; b < batch_size; ++b) {
        if (batch[b].shape != n.shape)
          fail("calibration input " + std::to_string(b) + " is " +
               shape_to_string(batch[b].shape) + ", node '" + n.id + "' expects " +
               shape_to_string(n.shape));
        out_vals.push_back(batch[b]);
      }
    } else {
      for (std::size_t b = 0; b < batch_size; ++b) {
        std::vector<Tensor> ins;
        ins.reserve(n.inputs.size());
        for (const std::string& t : n.inputs) ins.push_back(vals.at(t)[b]);
        out_vals.push_back(reference_node(n, ins));
      }
    }

    if (n.kind == NodeKind::Convolution || n.kind == NodeKind::InnerProduct) {
      CalibrationRecord wr;
      wr.tensor_id = n.id + ".weight";
      wr.gamma = weight_thresholds(n.weight);
      wr.format = fmt;
      const std::int64_t oc = n.weight.shape[0];
      const std::int64_t block = static_cast<std::int64_t>(n.weight.data.size()) / oc;
      for (std::int64_t ch = 0; ch < oc && !wr.degenerate; ++ch) {
        bool all_zero = true;
        for (std::int64_t i = 0; i < block && all_zero; ++i)
          all_zero = n.weight.data[static_cast<std::size_t>(ch * block + i)] == 0.0f;
        wr.degenerate = all_zero;
      }
      recs.emplace(wr.tensor_id, std::move(wr));
    }

    // Thresholds freeze only at a group's last tensor; everything upstream in
    // the group stays pending until then.
    const std::string root = groups.find(out_t);
    if (decision.at(root) != out_t) continue;

    std::vector<float> samples;
    for (const Tensor& t : out_vals)
      samples.insert(samples.end(), t.data.begin(), t.data.end());
    const SweepResult sr = threshold_sweep(samples, fmt, sweep);

    std::vector<std::string> mem = members.at(root);
    std::sort(mem.begin(), mem.end(), [&](const std::string& a, const std::string& b) {
      return produced_at.at(a) < produced_at.at(b);
    });
    for (const std::string& m : mem) {
      if (covered.count(m)) continue;
      CalibrationRecord rec;
      rec.tensor_id = m;
      rec.gamma = {sr.gamma};
      rec.delta = sr.delta;
      rec.format = fmt;
      rec.degenerate = sr.degenerate;
      recs.emplace(m, std::move(rec));
    }

    // Re-execute the group on its now-frozen inputs and store every member in
    // quantize-dequantize form, so downstream nodes see the quantization error.
    for (const std::string& m : mem) {
      const Node& pn = g.nodes[g.producer_of(m)];
      bool in_group_input = false;
      for (const std::string& t : pn.inputs)
        if (groups.find(t) == root) in_group_input = true;
      std::vector<Tensor>& mv = vals.at(m);
      for (std::size_t b = 0; b < batch_size; ++b) {
        if (in_group_input) {
          std::vector<Tensor> ins;
          ins.reserve(pn.inputs.size());
          for (const std::string& t : pn.inputs) ins.push_back(vals.at(t)[b]);
          mv[b] = reference_node(pn, ins);
        }
        mv[b] = dequantize_tensor(quantize_tensor(mv[b], sr.gamma, fmt));
      }
    }
  }
  return recs;
}

std::map<std::string, double> activation_thresholds(
    const Graph& g, const std::map<std::string, CalibrationRecord>& records) {
  const auto shapes = g.infer_shapes();
  std::map<std::string, double> out;
  for (const auto& [id, rec] : records) {
    if (!shapes.count(id)) continue;  // weight records live outside the tensor space
    if (rec.gamma.size() != 1)
      fail("record for tensor '" + id + "' does not hold a scalar threshold");
    out[id] = rec.gamma[0];
  }
  const std::vector<std::size_t> order = g.topological_order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Node& n = g.nodes[*it];
    if (!is_pass_through(n.kind)) continue;
    auto got = out.find(n.outputs[0]);
    if (got != out.end() && !out.count(n.inputs[0])) out[n.inputs[0]] = got->second;
  }
  return out;
}

}  // namespace dfpq
