#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "dfpq/passes.hpp"

namespace dfpq {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("passes: " + msg); }

bool is_affine(NodeKind k) {
  return k == NodeKind::BatchNorm || k == NodeKind::Scale || k == NodeKind::Bias;
}

bool is_weighted(NodeKind k) {
  return k == NodeKind::Convolution || k == NodeKind::InnerProduct;
}

// Per-channel y[c] = a[c] * x[c] + t[c] view of a BatchNorm/Scale/Bias node.
struct Affine {
  std::vector<double> a, t;
};

Affine affine_of(const Node& n) {
  Affine r;
  switch (n.kind) {
    case NodeKind::BatchNorm: {
      const std::size_t c = n.bn_mean.data.size();
      r.a.resize(c);
      r.t.resize(c);
      for (std::size_t i = 0; i < c; ++i) {
        const double denom = static_cast<double>(n.bn_var.data[i]) + n.eps;
        if (denom <= 0.0)
          fail("node '" + n.id + "': channel " + std::to_string(i) +
               " has non-positive variance plus epsilon");
        const double gamma = n.bn_gamma.data.empty() ? 1.0 : n.bn_gamma.data[i];
        r.a[i] = gamma / std::sqrt(denom);
        r.t[i] = (n.bn_beta.data.empty() ? 0.0 : n.bn_beta.data[i]) - n.bn_mean.data[i] * r.a[i];
      }
      break;
    }
    case NodeKind::Scale: {
      const std::size_t c = n.weight.data.size();
      r.a.assign(n.weight.data.begin(), n.weight.data.end());
      r.t.assign(c, 0.0);
      for (std::size_t i = 0; i < n.bias.data.size(); ++i) r.t[i] = n.bias.data[i];
      break;
    }
    case NodeKind::Bias: {
      r.a.assign(n.bias.data.size(), 1.0);
      r.t.assign(n.bias.data.begin(), n.bias.data.end());
      break;
    }
    default:
      fail("node '" + n.id + "' is not an affine layer");
  }
  return r;
}

bool all_zero(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

void ensure_bias(Node& n, std::int64_t out_channels) {
  if (!n.bias.data.empty()) return;
  n.bias = Tensor({out_channels});
}

// y[o] = a[o] * (W x + b)[o] + t[o]  ==>  scale row o of W by a[o], remap bias.
void fold_after(Node& conv, const Affine& f) {
  const std::int64_t oc = conv.weight.shape[0];
  const std::int64_t per = conv.weight.numel() / oc;
  ensure_bias(conv, oc);
  for (std::int64_t o = 0; o < oc; ++o) {
    for (std::int64_t j = 0; j < per; ++j)
      conv.weight.data[o * per + j] = static_cast<float>(conv.weight.data[o * per + j] * f.a[o]);
    conv.bias.data[o] = static_cast<float>(f.a[o] * conv.bias.data[o] + f.t[o]);
  }
}

// y = W (a ⊙ x + t) + b  ==>  scale W columns by a, add W·t to the bias.
// For a convolution the per-channel shift t only folds exactly when no padding
// is involved (padding pixels are raw zeros, not shifted ones) or t is zero.
void fold_before_conv(Node& conv, const Affine& f) {
  const std::int64_t oc = conv.weight.shape[0];
  const std::int64_t icg = conv.weight.shape[1];
  const std::int64_t k2 = conv.kernel * static_cast<std::int64_t>(conv.kernel);
  const std::int64_t ocg = oc / conv.groups;
  ensure_bias(conv, oc);
  for (std::int64_t o = 0; o < oc; ++o) {
    const std::int64_t grp = o / ocg;
    double delta = 0.0;
    for (std::int64_t i = 0; i < icg; ++i) {
      const std::int64_t ic = grp * icg + i;
      for (std::int64_t j = 0; j < k2; ++j) {
        const std::int64_t at = (o * icg + i) * k2 + j;
        delta += static_cast<double>(conv.weight.data[at]) * f.t[ic];
        conv.weight.data[at] = static_cast<float>(conv.weight.data[at] * f.a[ic]);
      }
    }
    conv.bias.data[o] = static_cast<float>(conv.bias.data[o] + delta);
  }
}

void fold_before_ip(Node& ip, const Affine& f, const std::vector<std::int64_t>& in_shape) {
  const std::int64_t out_f = ip.weight.shape[0];
  const std::int64_t in_f = ip.weight.shape[1];
  const std::int64_t spatial = shape_numel(in_shape) / static_cast<std::int64_t>(in_shape[0]);
  ensure_bias(ip, out_f);
  for (std::int64_t o = 0; o < out_f; ++o) {
    double delta = 0.0;
    for (std::int64_t idx = 0; idx < in_f; ++idx) {
      const std::int64_t c = idx / spatial;
      const std::int64_t at = o * in_f + idx;
      delta += static_cast<double>(ip.weight.data[at]) * f.t[c];
      ip.weight.data[at] = static_cast<float>(ip.weight.data[at] * f.a[c]);
    }
    ip.bias.data[o] = static_cast<float>(ip.bias.data[o] + delta);
  }
}

void clear_affine_params(Node& n) {
  n.bn_mean = Tensor();
  n.bn_var = Tensor();
  n.bn_gamma = Tensor();
  n.bn_beta = Tensor();
  n.eps = 0.0;
}

// Rewrites an affine node in place into an identity convolution (rank-3
// activations: depthwise 1x1) or identity inner product (rank-1: diagonal).
void materialize_affine(Node& n, const std::vector<std::int64_t>& in_shape) {
  const Affine f = affine_of(n);
  const std::int64_t c = static_cast<std::int64_t>(f.a.size());
  clear_affine_params(n);
  if (in_shape.size() == 3) {
    n.kind = NodeKind::Convolution;
    n.kernel = 1;
    n.stride = 1;
    n.pad = 0;
    n.groups = static_cast<int>(c);
    n.weight = Tensor({c, 1, 1, 1});
    for (std::int64_t i = 0; i < c; ++i) n.weight.data[i] = static_cast<float>(f.a[i]);
  } else if (in_shape.size() == 1) {
    n.kind = NodeKind::InnerProduct;
    n.weight = Tensor({c, c});
    for (std::int64_t i = 0; i < c; ++i)
      n.weight.data[i * c + i] = static_cast<float>(f.a[i]);
  } else {
    fail("node '" + n.id + "': cannot materialize an affine over a rank-" +
         std::to_string(in_shape.size()) + " tensor");
  }
  n.bias = Tensor({c});
  for (std::int64_t i = 0; i < c; ++i) n.bias.data[i] = static_cast<float>(f.t[i]);
}

}  // namespace

void merge_fork_join(Graph& g) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      const Node& a = g.nodes[i];
      if (a.kind != NodeKind::Concat) continue;
      const std::vector<std::size_t> cons = g.consumers_of(a.outputs[0]);
      if (cons.size() != 1) continue;
      Node& b = g.nodes[cons[0]];
      if (b.kind != NodeKind::Concat || b.axis != a.axis) continue;
      std::vector<std::string> merged;
      for (const std::string& t : b.inputs) {
        if (t == a.outputs[0])
          merged.insert(merged.end(), a.inputs.begin(), a.inputs.end());
        else
          merged.push_back(t);
      }
      b.inputs = std::move(merged);
      g.nodes.erase(g.nodes.begin() + static_cast<std::ptrdiff_t>(i));
      changed = true;
      break;
    }
  }
}

void fold_linear(Graph& g) {
  for (;;) {
    const std::vector<std::size_t> order = g.topological_order();
    const auto shapes = g.infer_shapes();
    bool changed = false;
    for (std::size_t oi : order) {
      Node& n = g.nodes[oi];
      if (!is_affine(n.kind)) continue;

      // Fold into the producing convolution / inner product when this node is
      // its sole consumer.
      const std::size_t pi = g.producer_of(n.inputs[0]);
      if (is_weighted(g.nodes[pi].kind) && g.consumers_of(n.inputs[0]).size() == 1) {
        const Affine f = affine_of(n);
        fold_after(g.nodes[pi], f);
        g.nodes[pi].outputs[0] = n.outputs[0];
        g.nodes.erase(g.nodes.begin() + static_cast<std::ptrdiff_t>(oi));
        changed = true;
        break;
      }

      const std::vector<std::size_t> cons = g.consumers_of(n.outputs[0]);
      if (cons.size() != 1) continue;
      Node& next = g.nodes[cons[0]];

      // Compose two adjacent affines into one Scale node.
      if (is_affine(next.kind)) {
        const Affine f1 = affine_of(n);
        const Affine f2 = affine_of(next);
        const std::size_t c = f1.a.size();
        Node merged;
        merged.id = n.id;
        merged.kind = NodeKind::Scale;
        merged.inputs = n.inputs;
        merged.outputs = next.outputs;
        merged.weight = Tensor({static_cast<std::int64_t>(c)});
        merged.bias = Tensor({static_cast<std::int64_t>(c)});
        for (std::size_t i = 0; i < c; ++i) {
          merged.weight.data[i] = static_cast<float>(f2.a[i] * f1.a[i]);
          merged.bias.data[i] = static_cast<float>(f2.a[i] * f1.t[i] + f2.t[i]);
        }
        const std::size_t hi = std::max(oi, cons[0]);
        const std::size_t lo = std::min(oi, cons[0]);
        g.nodes[lo] = std::move(merged);
        g.nodes.erase(g.nodes.begin() + static_cast<std::ptrdiff_t>(hi));
        changed = true;
        break;
      }

      // Fold into the consuming convolution / inner product.
      if (is_weighted(next.kind)) {
        const Affine f = affine_of(n);
        if (next.kind == NodeKind::Convolution) {
          if (next.pad != 0 && !all_zero(f.t)) continue;  // padding breaks the shift
          fold_before_conv(next, f);
        } else {
          fold_before_ip(next, f, shapes.at(n.inputs[0]));
        }
        next.inputs[0] = n.inputs[0];
        g.nodes.erase(g.nodes.begin() + static_cast<std::ptrdiff_t>(oi));
        changed = true;
        break;
      }
    }
    if (!changed) break;
  }

  // Whatever affine survives has no foldable neighbour: realize it as an
  // identity convolution / inner product so only weighted kinds remain.
  const auto shapes = g.infer_shapes();
  for (Node& n : g.nodes)
    if (is_affine(n.kind)) materialize_affine(n, shapes.at(n.inputs[0]));
}

void splice_identity_downscale(Graph& g) {
  struct Splice {
    std::string join_id;
    std::size_t input_index;
  };
  std::vector<Splice> pending;

  for (const Node& j : g.nodes) {
    if (j.kind != NodeKind::EltwiseAdd && j.kind != NodeKind::Concat) continue;
    for (std::size_t k = 0; k < j.inputs.size(); ++k) {
      std::string cur = j.inputs[k];
      for (;;) {
        if (g.consumers_of(cur).size() > 1) {
          // Fork point: the producer's scale is shared with another branch.
          pending.push_back({j.id, k});
          break;
        }
        const Node& p = g.nodes[g.producer_of(cur)];
        if (is_weighted(p.kind) || p.kind == NodeKind::AvgPool ||
            p.kind == NodeKind::IdentityDownscale)
          break;  // this branch can absorb a rescale here
        if (p.kind == NodeKind::ReLU || p.kind == NodeKind::MaxPool) {
          cur = p.inputs[0];  // order-preserving: a rescale commutes through
          continue;
        }
        pending.push_back({j.id, k});  // Input / join / affine: nothing scalable
        break;
      }
    }
  }

  auto tensor_exists = [&g](const std::string& t) {
    for (const Node& n : g.nodes)
      for (const std::string& out : n.outputs)
        if (out == t) return true;
    return false;
  };

  for (const Splice& s : pending) {
    std::string id = s.join_id + "_ds" + std::to_string(s.input_index);
    while (g.has_node(id) || tensor_exists(id + "_out")) id += "_";
    Node d;
    d.id = id;
    d.kind = NodeKind::IdentityDownscale;
    d.factor = 1.0;
    d.inputs = {g.node(s.join_id).inputs[s.input_index]};
    d.outputs = {id + "_out"};
    g.node(s.join_id).inputs[s.input_index] = d.outputs[0];
    g.nodes.push_back(std::move(d));
  }
}

void assign_downscale_factors(Graph& g, const std::map<std::string, double>& thresholds) {
  auto threshold_of = [&thresholds](const std::string& tensor, const std::string& who) {
    const auto it = thresholds.find(tensor);
    if (it == thresholds.end()) fail("no threshold recorded for tensor '" + tensor + "' (" + who + ")");
    if (!(it->second > 0.0)) fail("threshold for tensor '" + tensor + "' must be positive");
    return it->second;
  };
  for (Node& n : g.nodes) {
    if (n.kind != NodeKind::IdentityDownscale) continue;
    const std::vector<std::size_t> cons = g.consumers_of(n.outputs[0]);
    if (cons.size() != 1 || (g.nodes[cons[0]].kind != NodeKind::EltwiseAdd &&
                             g.nodes[cons[0]].kind != NodeKind::Concat))
      fail("IdentityDownscale '" + n.id + "' must feed exactly one join");
    const double branch = threshold_of(n.inputs[0], "branch into '" + n.id + "'");
    const double join = threshold_of(g.nodes[cons[0]].outputs[0], "join after '" + n.id + "'");
    n.factor = std::min(1.0, join / branch);
  }
}

void splice_out_unity(Graph& g) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      const Node& d = g.nodes[i];
      if (d.kind != NodeKind::IdentityDownscale || d.factor != 1.0) continue;
      const std::string from = d.outputs[0];
      const std::string to = d.inputs[0];
      for (Node& n : g.nodes)
        for (std::string& in : n.inputs)
          if (in == from) in = to;
      g.nodes.erase(g.nodes.begin() + static_cast<std::ptrdiff_t>(i));
      changed = true;
      break;
    }
  }
}

}  // namespace dfpq
