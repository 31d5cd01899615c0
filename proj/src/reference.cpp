#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "dfpq/engine.hpp"

namespace dfpq {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("engine: " + msg); }

const Node& single_node(const Graph& g, NodeKind kind, const char* what) {
  const Node* found = nullptr;
  for (const Node& n : g.nodes) {
    if (n.kind != kind) continue;
    if (found) fail(std::string("expected exactly one ") + what + " node");
    found = &n;
  }
  if (!found) fail(std::string("graph has no ") + what + " node");
  return *found;
}

// Shared by convolution and pooling: iterate output positions and window taps.
struct Window {
  std::int64_t h_in, w_in, h_out, w_out;
  int kernel, stride, pad;
};

std::int64_t window_out(std::int64_t in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

Window make_window(const Node& n, const std::vector<std::int64_t>& in_shape) {
  return {in_shape[1],
          in_shape[2],
          window_out(in_shape[1], n.kernel, n.stride, n.pad),
          window_out(in_shape[2], n.kernel, n.stride, n.pad),
          n.kernel,
          n.stride,
          n.pad};
}

}  // namespace

std::string graph_input_tensor(const Graph& g) {
  return single_node(g, NodeKind::Input, "input").outputs[0];
}

std::string graph_output_tensor(const Graph& g) {
  return single_node(g, NodeKind::Output, "output").inputs[0];
}

Tensor reference_node(const Node& n, const std::vector<Tensor>& inputs) {
  if (n.kind == NodeKind::Input || n.kind == NodeKind::Output)
    fail("node '" + n.id + "': " + node_kind_name(n.kind) + " nodes carry no arithmetic");
  if (inputs.size() != n.inputs.size())
    fail("node '" + n.id + "': expected " + std::to_string(n.inputs.size()) +
         " input tensors, got " + std::to_string(inputs.size()));
  for (const Tensor& t : inputs) check_tensor(t, "reference input of node '" + n.id + "'");

  switch (n.kind) {
    case NodeKind::Convolution: {
      const Tensor& x = inputs[0];
      const std::int64_t c_in = x.shape[0];
      const std::int64_t oc = n.weight.shape[0];
      const std::int64_t icg = c_in / n.groups;
      const std::int64_t ocg = oc / n.groups;
      const Window w = make_window(n, x.shape);
      Tensor out({oc, w.h_out, w.w_out});
      for (std::int64_t o = 0; o < oc; ++o) {
        const std::int64_t grp = o / ocg;
        for (std::int64_t oy = 0; oy < w.h_out; ++oy) {
          for (std::int64_t ox = 0; ox < w.w_out; ++ox) {
            double acc = n.bias.data.empty() ? 0.0 : n.bias.data[o];
            for (std::int64_t i = 0; i < icg; ++i) {
              const std::int64_t ci = grp * icg + i;
              for (int ky = 0; ky < w.kernel; ++ky) {
                const std::int64_t iy = oy * w.stride + ky - w.pad;
                if (iy < 0 || iy >= w.h_in) continue;
                for (int kx = 0; kx < w.kernel; ++kx) {
                  const std::int64_t ix = ox * w.stride + kx - w.pad;
                  if (ix < 0 || ix >= w.w_in) continue;
                  const double xv = x.data[(ci * w.h_in + iy) * w.w_in + ix];
                  const double wv =
                      n.weight.data[((o * icg + i) * n.kernel + ky) * n.kernel + kx];
                  acc += xv * wv;
                }
              }
            }
            out.data[(o * w.h_out + oy) * w.w_out + ox] = static_cast<float>(acc);
          }
        }
      }
      return out;
    }
    case NodeKind::InnerProduct: {
      const Tensor& x = inputs[0];
      const std::int64_t in_f = n.weight.shape[1];
      const std::int64_t out_f = n.weight.shape[0];
      Tensor out({out_f});
      for (std::int64_t o = 0; o < out_f; ++o) {
        double acc = n.bias.data.empty() ? 0.0 : n.bias.data[o];
        for (std::int64_t i = 0; i < in_f; ++i)
          acc += static_cast<double>(x.data[i]) * n.weight.data[o * in_f + i];
        out.data[o] = static_cast<float>(acc);
      }
      return out;
    }
    case NodeKind::BatchNorm: {
      const Tensor& x = inputs[0];
      const std::int64_t c = x.shape[0];
      const std::int64_t per = x.numel() / c;
      Tensor out(x.shape);
      for (std::int64_t ci = 0; ci < c; ++ci) {
        const double denom = static_cast<double>(n.bn_var.data[ci]) + n.eps;
        if (denom <= 0.0)
          fail("node '" + n.id + "': channel " + std::to_string(ci) +
               " has non-positive variance plus epsilon");
        const double inv = 1.0 / std::sqrt(denom);
        const double gamma = n.bn_gamma.data.empty() ? 1.0 : n.bn_gamma.data[ci];
        const double beta = n.bn_beta.data.empty() ? 0.0 : n.bn_beta.data[ci];
        for (std::int64_t j = 0; j < per; ++j) {
          const double v = x.data[ci * per + j];
          out.data[ci * per + j] =
              static_cast<float>((v - n.bn_mean.data[ci]) * inv * gamma + beta);
        }
      }
      return out;
    }
    case NodeKind::Scale:
    case NodeKind::Bias: {
      const Tensor& x = inputs[0];
      const std::int64_t c = x.shape[0];
      const std::int64_t per = x.numel() / c;
      Tensor out(x.shape);
      for (std::int64_t ci = 0; ci < c; ++ci) {
        const double a = n.kind == NodeKind::Scale ? n.weight.data[ci] : 1.0;
        const double t = n.bias.data.empty() ? 0.0 : n.bias.data[ci];
        for (std::int64_t j = 0; j < per; ++j)
          out.data[ci * per + j] = static_cast<float>(a * x.data[ci * per + j] + t);
      }
      return out;
    }
    case NodeKind::ReLU: {
      const Tensor& x = inputs[0];
      Tensor out(x.shape);
      for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = std::max(0.0f, x.data[i]);
      return out;
    }
    case NodeKind::EltwiseAdd: {
      Tensor out(inputs[0].shape);
      for (const Tensor& x : inputs) {
        if (x.shape != out.shape)
          fail("node '" + n.id + "': element-wise inputs disagree on shape");
        for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] += x.data[i];
      }
      return out;
    }
    case NodeKind::Concat: {
      std::vector<std::int64_t> shape = inputs[0].shape;
      shape[0] = 0;
      for (const Tensor& x : inputs) shape[0] += x.shape[0];
      Tensor out(shape);
      std::int64_t at = 0;
      for (const Tensor& x : inputs) {
        std::copy(x.data.begin(), x.data.end(), out.data.begin() + at);
        at += static_cast<std::int64_t>(x.data.size());
      }
      return out;
    }
    case NodeKind::MaxPool:
    case NodeKind::AvgPool: {
      const Tensor& x = inputs[0];
      const std::int64_t c = x.shape[0];
      const Window w = make_window(n, x.shape);
      Tensor out({c, w.h_out, w.w_out});
      for (std::int64_t ci = 0; ci < c; ++ci) {
        for (std::int64_t oy = 0; oy < w.h_out; ++oy) {
          for (std::int64_t ox = 0; ox < w.w_out; ++ox) {
            double best = -std::numeric_limits<double>::infinity();
            double sum = 0.0;
            for (int ky = 0; ky < w.kernel; ++ky) {
              const std::int64_t iy = oy * w.stride + ky - w.pad;
              for (int kx = 0; kx < w.kernel; ++kx) {
                const std::int64_t ix = ox * w.stride + kx - w.pad;
                // Padding contributes zero to the average but never wins the max.
                if (iy >= 0 && iy < w.h_in && ix >= 0 && ix < w.w_in) {
                  const double v = x.data[(ci * w.h_in + iy) * w.w_in + ix];
                  best = std::max(best, v);
                  sum += v;
                }
              }
            }
            out.data[(ci * w.h_out + oy) * w.w_out + ox] = static_cast<float>(
                n.kind == NodeKind::MaxPool ? best : sum / (w.kernel * w.kernel));
          }
        }
      }
      return out;
    }
    case NodeKind::IdentityDownscale:
      return inputs[0];
    case NodeKind::Input:
    case NodeKind::Output:
      break;
  }
  fail("node '" + n.id + "': unsupported kind");
}

std::map<std::string, Tensor> reference_forward(const Graph& g, const Tensor& input) {
  check_tensor(input, "reference_forward input");
  const auto shapes = g.infer_shapes();
  std::map<std::string, Tensor> vals;

  for (std::size_t idx : g.topological_order()) {
    const Node& n = g.nodes[idx];
    if (n.kind == NodeKind::Output) continue;
    if (n.kind == NodeKind::Input) {
      if (input.shape != n.shape)
        fail("input tensor is " + shape_to_string(input.shape) + ", node '" + n.id +
             "' expects " + shape_to_string(n.shape));
      vals[n.outputs[0]] = input;
      continue;
    }
    std::vector<Tensor> ins;
    ins.reserve(n.inputs.size());
    for (const std::string& t : n.inputs) ins.push_back(vals.at(t));
    Tensor out = reference_node(n, ins);
    if (out.shape != shapes.at(n.outputs[0]))
      fail("node '" + n.id + "': computed shape " + shape_to_string(out.shape) +
           " disagrees with inferred shape " + shape_to_string(shapes.at(n.outputs[0])));
    vals[n.outputs[0]] = std::move(out);
  }
  return vals;
}

}  // namespace dfpq
