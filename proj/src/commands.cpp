#include "dfpq/commands.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "dfpq/container.hpp"
#include "dfpq/format.hpp"
#include "dfpq/passes.hpp"
#include "dfpq/quantize.hpp"

namespace dfpq {
namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string fmt_f4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string fmt_e3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

FloatFormat make_format(int n, int p, const std::string& encoding,
                        bool subnormals, bool reserve_inf_nan) {
  FloatFormat f;
  f.n = n;
  f.p = p;
  f.encoding = parse_encoding(encoding);
  f.subnormals = subnormals;
  f.inf_nan = reserve_inf_nan ? InfNanMode::ReserveInfNan : InfNanMode::ExtendNumeric;
  f.validate();
  return f;
}

// Index of the first maximum — the tie rule every top-1 count here uses.
int argmax(const Tensor& t) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(t.data.size()); ++i)
    if (t.data[i] > t.data[best]) best = i;
  return best;
}

std::vector<Tensor> gather_subset(const Dataset& ds, const std::string& dir,
                                  int size, unsigned seed) {
  if (ds.images.empty()) fail("calibration set in '" + dir + "' has no images");
  const int count = static_cast<int>(ds.images.size());
  if (size < 1) fail("calibration size must be at least 1");
  if (size > count)
    fail("calibration set in '" + dir + "' has " + std::to_string(count) +
         " images; " + std::to_string(size) + " requested");
  std::vector<Tensor> batch;
  batch.reserve(static_cast<std::size_t>(size));
  for (int i : pick_subset(count, size, seed)) batch.push_back(ds.images[static_cast<std::size_t>(i)]);
  return batch;
}

std::size_t count_top1(const ExecutionPlan& plan, const Dataset& ds) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.images.size(); ++i)
    if (argmax(quantized_forward(plan, ds.images[i]).logits) == ds.labels[i]) ++correct;
  return correct;
}

std::string ratio_line(std::size_t correct, std::size_t total) {
  return fmt_f4(static_cast<double>(correct) / static_cast<double>(total)) + " (" +
         std::to_string(correct) + "/" + std::to_string(total) + ")";
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string quoted = "\"";
  for (char c : s) {
    if (c == '"') quoted += "\"\"";
    else quoted += c;
  }
  quoted += '"';
  return quoted;
}

}  // namespace

// --- shared helpers --------------------------------------------------------

std::vector<int> pick_subset(int count, int size, unsigned seed) {
  if (count < 1 || size < 1 || size > count)
    throw std::invalid_argument("pick_subset: need 1 <= size <= count");
  std::vector<int> idx(static_cast<std::size_t>(count));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937 rng(seed);
  for (int i = 0; i < size; ++i) {
    const int j = i + static_cast<int>(rng() % static_cast<std::uint32_t>(count - i));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(size));
  return idx;
}

Encoding parse_encoding(const std::string& name) {
  if (name == "sign-magnitude") return Encoding::SignMagnitude;
  if (name == "twos-complement") return Encoding::TwosComplement;
  throw std::invalid_argument("unknown encoding '" + name +
                              "' (expected sign-magnitude or twos-complement)");
}

MeasureConfig parse_measure(const std::string& name) {
  if (name == "kl1") return MeasureConfig::relative_entropy();
  if (name == "composite") return MeasureConfig::composite();
  throw std::invalid_argument("unknown measure '" + name + "' (expected kl1 or composite)");
}

std::string format_label(int n, int p) {
  if (p == n - 2) return "dynamic fixed-point";
  if (p == n - 1) return "no exponent bits";
  return "";
}

OfflineResult quantize_offline(const Graph& float_graph,
                               const std::vector<Tensor>& batch,
                               const FloatFormat& fmt,
                               const CalibrationConfig& cfg,
                               int accumulator_bits,
                               bool bias_on_output_grid) {
  fmt.validate();
  Graph g = float_graph;
  merge_fork_join(g);
  fold_linear(g);
  splice_identity_downscale(g);
  OfflineResult r;
  r.records = calibrate_network(g, batch, fmt, cfg);
  auto thresholds = activation_thresholds(g, r.records);
  assign_downscale_factors(g, thresholds);
  splice_out_unity(g);
  QuantizedModel m = quantize_model(g, fmt, std::move(thresholds));
  r.plan = build_plan(m, accumulator_bits, bias_on_output_grid);
  return r;
}

// --- calibrate -------------------------------------------------------------

void run_calibrate(const CalibrateOptions& o, std::ostream& out) {
  const FloatFormat fmt =
      make_format(o.n, o.p, o.encoding, o.subnormals, o.reserve_inf_nan);
  CalibrationConfig cfg;
  cfg.sweep.num_bins = o.bins;
  cfg.sweep.measure = parse_measure(o.measure);

  const Graph g = load_model(o.model_path);
  const Dataset calib = load_dataset(o.calib_dir);
  const std::vector<Tensor> batch = gather_subset(calib, o.calib_dir, o.calib_size, o.seed);

  OfflineResult r = quantize_offline(g, batch, fmt, cfg, o.accumulator_bits,
                                     o.bias_on_output_grid);

  QuantizedContainer c{r.plan.model, o.accumulator_bits, o.bias_on_output_grid,
                       r.records, r.plan.budgets};
  save_quantized(c, o.out_path);

  out << "model: " << o.model_path << " (" << g.nodes.size() << " nodes, "
      << c.model.graph.nodes.size() << " after preprocessing)\n";
  out << "format: " << fmt.to_string() << "\n";
  out << "calibration: " << batch.size() << " of " << calib.images.size()
      << " images (seed " << o.seed << "), " << o.bins << " bins, measure "
      << o.measure << "\n";

  std::size_t width = 0;
  for (const auto& [key, rec] : r.records) width = std::max(width, key.size());
  out << "thresholds:\n";
  for (const auto& [key, rec] : r.records) {
    out << "  " << std::left << std::setw(static_cast<int>(width) + 2) << key << std::right;
    if (key.size() > 7 && key.compare(key.size() - 7, 7, ".weight") == 0) {
      const double gmax = *std::max_element(rec.gamma.begin(), rec.gamma.end());
      out << "gamma_max " << fmt_g(gmax) << "  (" << rec.gamma.size() << " channels)";
    } else {
      out << "gamma " << fmt_g(rec.gamma.at(0)) << "  delta " << fmt_g(rec.delta);
    }
    if (rec.degenerate) out << "  [degenerate]";
    out << "\n";
  }

  int worst = 0;
  std::size_t nwidth = 0;
  for (const auto& b : r.plan.budgets) nwidth = std::max(nwidth, b.node.size());
  out << "accumulators:\n";
  for (const auto& b : r.plan.budgets) {
    out << "  " << std::left << std::setw(static_cast<int>(nwidth) + 2) << b.node
        << std::right << "terms " << std::setw(5) << b.terms << "  q_required "
        << std::setw(3) << b.q_required << "  q_minimal " << std::setw(3)
        << b.q_minimal << "\n";
    worst = std::max(worst, b.q_required);
  }
  out << "accumulator width: " << worst << " of " << o.accumulator_bits
      << " bits\n";
  if (o.bias_on_output_grid) out << "bias handling: rounded onto the output grid\n";

  const std::string blob =
      std::filesystem::path(o.out_path).replace_extension(".bin").string();
  out << "wrote " << o.out_path << " (+ " << blob << ")\n";
}

// --- infer -----------------------------------------------------------------

void run_infer(const InferOptions& o, std::ostream& out) {
  const QuantizedContainer qc = load_quantized(o.quantized_path);
  const ExecutionPlan plan =
      build_plan(qc.model, qc.accumulator_bits, qc.bias_on_output_grid);

  const Dataset ds = load_dataset(o.data_dir);
  if (ds.images.empty()) fail("data set in '" + o.data_dir + "' has no images");
  const bool labeled = !ds.labels.empty();
  if (!labeled && o.compare_float.empty())
    fail("data set in '" + o.data_dir +
         "' has no labels and no --compare-float reference; nothing to report");

  std::optional<Graph> ref_graph;
  std::string ref_out_id;
  if (!o.compare_float.empty()) {
    Graph fg = load_model(o.compare_float);
    merge_fork_join(fg);
    fold_linear(fg);
    ref_out_id = graph_output_tensor(fg);
    ref_graph = std::move(fg);
  }

  struct LayerErr {
    double diff = 0.0;  // max |quantized - float|
    double peak = 0.0;  // max |float|
  };
  std::map<std::string, LayerErr> layers;
  std::size_t q_correct = 0, f_correct = 0, agree = 0;
  double logit_abs = 0.0, logit_rel = 0.0;

  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const ForwardResult fr = quantized_forward(plan, ds.images[i]);
    const int qa = argmax(fr.logits);
    if (labeled && qa == ds.labels[i]) ++q_correct;

    if (ref_graph) {
      const auto ref = reference_forward(*ref_graph, ds.images[i]);
      const Tensor& flog = ref.at(ref_out_id);
      const int fa = argmax(flog);
      if (fa == qa) ++agree;
      if (labeled && fa == ds.labels[i]) ++f_correct;
      const OutputComparison oc = compare_outputs(fr.logits, flog);
      logit_abs = std::max(logit_abs, oc.max_abs);
      logit_rel = std::max(logit_rel, oc.max_rel);
      for (const auto& [id, qt] : fr.tensors) {
        // A tensor feeding a rectifier is stored with its negative tail
        // clipped at the post-rectifier threshold — only its rectified image
        // is meaningful, so diffing it against the float value is not.
        bool pre_rectifier = false;
        for (std::size_t ci : qc.model.graph.consumers_of(id))
          if (qc.model.graph.nodes[ci].kind == NodeKind::ReLU) pre_rectifier = true;
        if (pre_rectifier) continue;
        const auto it = ref.find(id);
        if (it == ref.end()) continue;
        const Tensor dq = dequantize_tensor(qt);
        if (dq.data.size() != it->second.data.size()) continue;
        LayerErr& le = layers[id];
        for (std::size_t k = 0; k < dq.data.size(); ++k) {
          const double fv = it->second.data[k];
          le.diff = std::max(le.diff, std::abs(static_cast<double>(dq.data[k]) - fv));
          le.peak = std::max(le.peak, std::abs(fv));
        }
      }
    }
  }

  out << "images: " << ds.images.size() << " (labels: " << (labeled ? "yes" : "no")
      << ")\n";
  out << "format: " << qc.model.format.to_string() << ", accumulator "
      << qc.accumulator_bits << " bits\n";
  if (labeled)
    out << "quantized top-1: " << ratio_line(q_correct, ds.images.size()) << "\n";
  if (ref_graph) {
    if (labeled)
      out << "float top-1: " << ratio_line(f_correct, ds.images.size()) << "\n";
    out << "top-1 agreement: " << ratio_line(agree, ds.images.size()) << "\n";
    out << "logits vs float: max abs err " << fmt_g(logit_abs)
        << ", max rel err " << fmt_g(logit_rel) << "\n";
    std::size_t width = 0;
    for (const auto& [id, le] : layers) width = std::max(width, id.size());
    out << "per-layer max |quantized - float| relative to the layer's float max:\n";
    for (const auto& [id, le] : layers) {
      const double rel = le.diff / std::max(le.peak, 1e-30);
      out << "  " << std::left << std::setw(static_cast<int>(width) + 2) << id
          << std::right << fmt_e3(rel) << "\n";
    }
  }
}

// --- sweep -----------------------------------------------------------------

namespace {

std::vector<bool> expand_subnormals(const std::string& s) {
  if (s == "on") return {true};
  if (s == "off") return {false};
  if (s == "both") return {true, false};
  throw std::invalid_argument("unknown subnormals choice '" + s +
                              "' (expected on, off, or both)");
}

std::vector<InfNanMode> expand_inf_nan(const std::string& s) {
  if (s == "numeric") return {InfNanMode::ExtendNumeric};
  if (s == "reserved") return {InfNanMode::ReserveInfNan};
  if (s == "both") return {InfNanMode::ExtendNumeric, InfNanMode::ReserveInfNan};
  throw std::invalid_argument("unknown inf-nan choice '" + s +
                              "' (expected numeric, reserved, or both)");
}

// Drop below which the collapse line reports "yes".
constexpr double kCollapseDropPp = 5.0;

}  // namespace

void run_sweep(const SweepOptions& o, std::ostream& out) {
  if (o.ns.empty()) fail("sweep: no bit widths given");
  if (o.ps.empty()) fail("sweep: no significand widths given");
  if (o.calib_sizes.empty()) fail("sweep: no calibration sizes given");
  if (o.csv_path.empty()) fail("sweep: no CSV output path given");
  const std::vector<bool> subs = expand_subnormals(o.subnormals);
  const std::vector<InfNanMode> infs = expand_inf_nan(o.inf_nan);
  parse_encoding(o.encoding);
  CalibrationConfig cfg;
  cfg.sweep.num_bins = o.bins;
  cfg.sweep.measure = parse_measure(o.measure);

  const Graph g0 = load_model(o.model_path);
  const Dataset calib = load_dataset(o.calib_dir);
  const Dataset eval = load_dataset(o.eval_dir);
  if (eval.images.empty()) fail("evaluation set in '" + o.eval_dir + "' has no images");
  if (eval.labels.empty()) fail("evaluation set in '" + o.eval_dir + "' has no labels");

  // Float baseline on the preprocessed graph.
  Graph fg = g0;
  merge_fork_join(fg);
  fold_linear(fg);
  const std::string fout = graph_output_tensor(fg);
  std::size_t f_correct = 0;
  for (std::size_t i = 0; i < eval.images.size(); ++i)
    if (argmax(reference_forward(fg, eval.images[i]).at(fout)) == eval.labels[i])
      ++f_correct;

  struct Cell {
    int n = 0, p = 0, calib_size = 0;
    bool subnormals = true;
    InfNanMode inf_nan = InfNanMode::ExtendNumeric;
    bool ok = false;
    double top1 = 0.0;
    std::string status;
    std::string label;
  };
  std::vector<Cell> cells;
  for (int n : o.ns)
    for (int p : o.ps)
      for (bool sub : subs)
        for (InfNanMode inf : infs)
          for (int cs : o.calib_sizes) {
            Cell c;
            c.n = n;
            c.p = p;
            c.subnormals = sub;
            c.inf_nan = inf;
            c.calib_size = cs;
            c.label = format_label(n, p);
            try {
              FloatFormat fmt;
              fmt.n = n;
              fmt.p = p;
              fmt.encoding = parse_encoding(o.encoding);
              fmt.subnormals = sub;
              fmt.inf_nan = inf;
              fmt.validate();
              const auto batch = gather_subset(calib, o.calib_dir, cs, o.seed);
              const OfflineResult r =
                  quantize_offline(g0, batch, fmt, cfg, o.accumulator_bits, false);
              c.top1 = static_cast<double>(count_top1(r.plan, eval)) /
                       static_cast<double>(eval.images.size());
              c.ok = true;
              c.status = "ok";
            } catch (const std::exception& e) {
              c.status = e.what();
            }
            cells.push_back(std::move(c));
          }

  out << "sweep: " << cells.size() << " cells on " << o.model_path << "\n";
  out << "settings: encoding " << o.encoding << ", measure " << o.measure << ", "
      << o.bins << " bins, seed " << o.seed << ", accumulator "
      << o.accumulator_bits << " bits\n";
  out << "float top-1: " << ratio_line(f_correct, eval.images.size()) << "\n";
  out << "   n   p  subn  inf-nan   calib    top-1  label                status\n";
  for (const Cell& c : cells) {
    out << std::setw(4) << c.n << std::setw(4) << c.p << std::setw(6)
        << (c.subnormals ? "on" : "off") << std::setw(9)
        << (c.inf_nan == InfNanMode::ExtendNumeric ? "numeric" : "reserved")
        << std::setw(8) << c.calib_size << std::setw(9)
        << (c.ok ? fmt_f4(c.top1) : std::string("-")) << "  " << std::left
        << std::setw(21) << (c.label.empty() ? "-" : c.label) << std::right
        << c.status << "\n";
  }

  const Cell* lowest = nullptr;
  const Cell* best = nullptr;
  for (const Cell& c : cells) {
    if (!c.ok) continue;
    if (!lowest || c.p < lowest->p) lowest = &c;
    if (!best || c.top1 > best->top1) best = &c;
  }
  if (!lowest) {
    out << "low-significand collapse: n/a (no completed cells)\n";
  } else {
    const double drop_pp = (best->top1 - lowest->top1) * 100.0;
    out << "low-significand collapse at p=" << lowest->p << ": "
        << (drop_pp >= kCollapseDropPp ? "yes" : "no") << " (top-1 "
        << fmt_f4(lowest->top1) << " vs best " << fmt_f4(best->top1) << ", drop "
        << fmt_g(drop_pp) << " pp)\n";
  }

  std::string csv = "n,p,subnormals,inf_nan,calib_size,status,top1,label\n";
  for (const Cell& c : cells) {
    csv += std::to_string(c.n) + "," + std::to_string(c.p) + "," +
           (c.subnormals ? "on" : "off") + "," +
           (c.inf_nan == InfNanMode::ExtendNumeric ? "numeric" : "reserved") +
           "," + std::to_string(c.calib_size) + "," + csv_field(c.status) + "," +
           (c.ok ? fmt_f4(c.top1) : std::string()) + "," + csv_field(c.label) +
           "\n";
  }
  std::ofstream f(o.csv_path, std::ios::binary);
  if (!f) fail("cannot open '" + o.csv_path + "' for writing");
  f.write(csv.data(), static_cast<std::streamsize>(csv.size()));
  f.close();
  if (!f) fail("failed writing '" + o.csv_path + "'");
  out << "wrote " << o.csv_path << "\n";
}

// --- formats ---------------------------------------------------------------

void run_formats(const FormatsOptions& o, std::ostream& out) {
  if (o.ps.empty()) fail("formats: no significand widths given");
  for (int p : o.ps) {
    FloatFormat f;
    f.n = o.n;
    f.p = p;
    f.validate();
    const auto values = enumerate_values_exact(f);
    const auto grid = fpspace_normalized(f);

    out << "format " << f.to_string() << "\n";
    out << "  exponent bits: " << (f.n - f.p - 1) << "\n";
    out << "  beta_max: " << beta_max_exact(f).to_string() << "\n";
    out << "  distinct values: " << values.size() << " (of " << (1 << f.n)
        << " codes)\n";
    if (p == f.n - 1)
      out << "  smallest normal: none\n";
    else
      out << "  smallest normal: " << (std::int64_t{1} << p) << "\n";
    out << "  subnormal step: 1\n";
    const std::string label = format_label(f.n, f.p);
    if (!label.empty()) out << "  note: " << label << "\n";

    out << "  normalized grid (" << grid.size() << " points):";
    if (grid.size() <= 48) {
      for (double v : grid) out << " " << fmt_g(v);
    } else {
      for (std::size_t i = 0; i < 8; ++i) out << " " << fmt_g(grid[i]);
      out << " ...";
      for (std::size_t i = grid.size() - 3; i < grid.size(); ++i)
        out << " " << fmt_g(grid[i]);
    }
    out << "\n";
  }
}

}  // namespace dfpq
