// dfpq — calibrate float CNN models into a dynamic floating-point container,
// run the quantized network with exact integer accumulation, and explore
// format trade-offs. Every subcommand exits 0 on success and nonzero with a
// one-line diagnostic on failure.

#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "dfpq/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"dynamic floating-point quantization toolkit"};
  app.require_subcommand(1);

  dfpq::CalibrateOptions cal;
  bool cal_no_subnormals = false;
  CLI::App* c = app.add_subcommand(
      "calibrate", "calibrate a float model and write a quantized container");
  c->add_option("--model", cal.model_path, "float model manifest (JSON + sibling .bin)")
      ->required();
  c->add_option("--calib", cal.calib_dir, "calibration set directory (data.tensor)")
      ->required();
  c->add_option("--calib-size", cal.calib_size, "images to draw from the calibration set")
      ->required();
  c->add_option("--n", cal.n, "code width in bits")->required();
  c->add_option("--p", cal.p, "explicit significand bits")->required();
  c->add_flag("--no-subnormals", cal_no_subnormals, "disable subnormal codes");
  c->add_flag("--reserve-inf-nan", cal.reserve_inf_nan,
              "reserve top-exponent codes for Inf/NaN instead of numbers");
  c->add_option("--encoding", cal.encoding, "significand encoding")
      ->check(CLI::IsMember({"sign-magnitude", "twos-complement"}))
      ->capture_default_str();
  c->add_option("--measure", cal.measure, "threshold-sweep distance measure")
      ->check(CLI::IsMember({"kl1", "composite"}))
      ->capture_default_str();
  c->add_option("--bins", cal.bins, "histogram bins for the threshold sweep")
      ->capture_default_str();
  c->add_option("--seed", cal.seed, "seed for calibration-subset selection")
      ->capture_default_str();
  c->add_option("--accumulator-bits", cal.accumulator_bits,
                "integer accumulator width to plan for")
      ->capture_default_str();
  c->add_flag("--bias-on-output-grid", cal.bias_on_output_grid,
              "round biases onto the output grid after rescale instead of "
              "feeding them to the accumulator");
  c->add_option("--out", cal.out_path, "quantized container manifest to write")
      ->required();

  dfpq::InferOptions inf;
  CLI::App* i = app.add_subcommand(
      "infer", "run a quantized container over a data set and report accuracy");
  i->add_option("--quantized", inf.quantized_path, "quantized container manifest")
      ->required();
  i->add_option("--data", inf.data_dir, "data set directory (data.tensor + labels.txt)")
      ->required();
  i->add_option("--compare-float", inf.compare_float,
                "float model manifest to diff against, layer by layer");

  dfpq::SweepOptions sw;
  CLI::App* s = app.add_subcommand(
      "sweep", "quantize and evaluate a grid of formats, writing a CSV report");
  s->add_option("--model", sw.model_path, "float model manifest")->required();
  s->add_option("--calib", sw.calib_dir, "calibration set directory")->required();
  s->add_option("--eval", sw.eval_dir, "labeled evaluation set directory")->required();
  s->add_option("--n", sw.ns, "code widths (comma list)")
      ->delimiter(',')
      ->capture_default_str();
  s->add_option("--p", sw.ps, "significand widths (comma list)")
      ->delimiter(',')
      ->required();
  s->add_option("--calib-size", sw.calib_sizes, "calibration sizes (comma list)")
      ->delimiter(',')
      ->capture_default_str();
  s->add_option("--subnormals", sw.subnormals, "subnormal axis")
      ->check(CLI::IsMember({"on", "off", "both"}))
      ->capture_default_str();
  s->add_option("--inf-nan", sw.inf_nan, "Inf/NaN axis")
      ->check(CLI::IsMember({"numeric", "reserved", "both"}))
      ->capture_default_str();
  s->add_option("--encoding", sw.encoding, "significand encoding")
      ->check(CLI::IsMember({"sign-magnitude", "twos-complement"}))
      ->capture_default_str();
  s->add_option("--measure", sw.measure, "threshold-sweep distance measure")
      ->check(CLI::IsMember({"kl1", "composite"}))
      ->capture_default_str();
  s->add_option("--bins", sw.bins, "histogram bins")->capture_default_str();
  s->add_option("--seed", sw.seed, "seed for calibration-subset selection")
      ->capture_default_str();
  s->add_option("--accumulator-bits", sw.accumulator_bits,
                "integer accumulator width to plan for")
      ->capture_default_str();
  s->add_option("--csv", sw.csv_path, "CSV report path to write")->required();

  dfpq::FormatsOptions fo;
  CLI::App* f = app.add_subcommand(
      "formats", "print value grids and ranges for a list of formats");
  f->add_option("--n", fo.n, "code width in bits")->required();
  f->add_option("--p", fo.ps, "significand widths (comma list)")
      ->delimiter(',')
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*c) {
      cal.subnormals = !cal_no_subnormals;
      dfpq::run_calibrate(cal, std::cout);
    } else if (*i) {
      dfpq::run_infer(inf, std::cout);
    } else if (*s) {
      dfpq::run_sweep(sw, std::cout);
    } else if (*f) {
      dfpq::run_formats(fo, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "dfpq: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
