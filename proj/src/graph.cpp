#include "dfpq/graph.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace dfpq {

namespace {

struct KindName {
  NodeKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {NodeKind::Input, "input"},
    {NodeKind::Output, "output"},
    {NodeKind::Convolution, "convolution"},
    {NodeKind::InnerProduct, "inner_product"},
    {NodeKind::BatchNorm, "batch_norm"},
    {NodeKind::Scale, "scale"},
    {NodeKind::Bias, "bias"},
    {NodeKind::ReLU, "relu"},
    {NodeKind::EltwiseAdd, "eltwise_add"},
    {NodeKind::Concat, "concat"},
    {NodeKind::MaxPool, "max_pool"},
    {NodeKind::AvgPool, "avg_pool"},
    {NodeKind::IdentityDownscale, "identity_downscale"},
};

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("graph: " + msg); }

}  // namespace

const char* node_kind_name(NodeKind k) {
  for (const KindName& kn : kKindNames)
    if (kn.kind == k) return kn.name;
  return "?";
}

NodeKind node_kind_from_name(const std::string& name) {
  for (const KindName& kn : kKindNames)
    if (name == kn.name) return kn.kind;
  throw std::runtime_error("graph: unknown node kind '" + name + "'");
}

Node& Graph::node(const std::string& id) {
  for (Node& n : nodes)
    if (n.id == id) return n;
  fail("no node named '" + id + "'");
}

const Node& Graph::node(const std::string& id) const {
  return const_cast<Graph*>(this)->node(id);
}

bool Graph::has_node(const std::string& id) const {
  return std::any_of(nodes.begin(), nodes.end(), [&](const Node& n) { return n.id == id; });
}

std::size_t Graph::producer_of(const std::string& tensor) const {
  for (std::size_t i = 0; i < nodes.size(); ++i)
    for (const std::string& out : nodes[i].outputs)
      if (out == tensor) return i;
  fail("tensor '" + tensor + "' has no producer");
}

std::vector<std::size_t> Graph::consumers_of(const std::string& tensor) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    for (const std::string& in : nodes[i].inputs)
      if (in == tensor) {
        out.push_back(i);
        break;
      }
  return out;
}

void Graph::validate() const {
  std::set<std::string> ids;
  std::set<std::string> produced;
  for (const Node& n : nodes) {
    if (n.id.empty()) fail("node with empty id");
    if (!ids.insert(n.id).second) fail("duplicate node id '" + n.id + "'");
    for (const std::string& t : n.outputs)
      if (!produced.insert(t).second) fail("tensor '" + t + "' has two producers");

    const std::size_t nin = n.inputs.size(), nout = n.outputs.size();
    auto arity = [&](bool ok) {
      if (!ok)
        fail("node '" + n.id + "' (" + node_kind_name(n.kind) + ") has bad arity: " +
             std::to_string(nin) + " in, " + std::to_string(nout) + " out");
    };
    switch (n.kind) {
      case NodeKind::Input: arity(nin == 0 && nout == 1); break;
      case NodeKind::Output: arity(nin == 1 && nout == 0); break;
      case NodeKind::EltwiseAdd: arity(nin >= 2 && nout == 1); break;
      case NodeKind::Concat: arity(nin >= 1 && nout == 1); break;
      default: arity(nin == 1 && nout == 1); break;
    }
    if (n.kind == NodeKind::IdentityDownscale && !(n.factor > 0.0 && n.factor <= 1.0))
      fail("node '" + n.id + "': downscale factor must be in (0, 1]");
  }
  for (const Node& n : nodes)
    for (const std::string& t : n.inputs)
      if (!produced.count(t)) fail("tensor '" + t + "' consumed by '" + n.id + "' is never produced");
  topological_order();  // throws on cycles
}

std::vector<std::size_t> Graph::topological_order() const {
  // Kahn's algorithm with an id-ordered ready set for determinism.
  std::vector<std::size_t> indegree(nodes.size(), 0);
  std::map<std::string, std::vector<std::size_t>> consumers;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    indegree[i] = nodes[i].inputs.size();
    for (const std::string& t : nodes[i].inputs) consumers[t].push_back(i);
  }
  std::set<std::pair<std::string, std::size_t>> ready;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (indegree[i] == 0) ready.insert({nodes[i].id, i});
  std::vector<std::size_t> order;
  order.reserve(nodes.size());
  while (!ready.empty()) {
    const std::size_t i = ready.begin()->second;
    ready.erase(ready.begin());
    order.push_back(i);
    for (const std::string& t : nodes[i].outputs)
      for (std::size_t c : consumers[t])
        if (--indegree[c] == 0) ready.insert({nodes[c].id, c});
  }
  if (order.size() != nodes.size()) fail("cycle detected");
  return order;
}

namespace {

std::vector<std::int64_t> conv_like_shape(const Node& n, const std::vector<std::int64_t>& in,
                                          std::int64_t out_channels) {
  if (in.size() != 3)
    fail("node '" + n.id + "': expected [C,H,W] input, got " + shape_to_string(in));
  auto bad = [&] {
    fail("node '" + n.id + "': window " + std::to_string(n.kernel) + "/" +
         std::to_string(n.stride) + "/" + std::to_string(n.pad) + " does not fit " +
         shape_to_string(in));
  };
  if (n.kernel < 1 || n.stride < 1 || n.pad < 0) bad();
  const std::int64_t h = (in[1] + 2 * n.pad - n.kernel) / n.stride + 1;
  const std::int64_t w = (in[2] + 2 * n.pad - n.kernel) / n.stride + 1;
  if (in[1] + 2 * n.pad < n.kernel || in[2] + 2 * n.pad < n.kernel || h < 1 || w < 1) bad();
  return {out_channels, h, w};
}

std::int64_t channels_of(const Node& n, const std::vector<std::int64_t>& in) {
  if (in.empty()) fail("node '" + n.id + "': scalar input");
  return in[0];
}

}  // namespace

std::map<std::string, std::vector<std::int64_t>> Graph::infer_shapes() const {
  std::map<std::string, std::vector<std::int64_t>> shapes;
  for (std::size_t i : topological_order()) {
    const Node& n = nodes[i];
    std::vector<std::vector<std::int64_t>> in;
    for (const std::string& t : n.inputs) in.push_back(shapes.at(t));
    std::vector<std::int64_t> out;
    switch (n.kind) {
      case NodeKind::Input:
        if (n.shape.empty()) fail("input node '" + n.id + "' has no shape");
        out = n.shape;
        break;
      case NodeKind::Output:
        continue;
      case NodeKind::Convolution: {
        check_tensor(n.weight, "node '" + n.id + "' weight");
        if (n.weight.shape.size() != 4)
          fail("node '" + n.id + "': conv weight must be [OC,IC/g,K,K]");
        const std::int64_t oc = n.weight.shape[0];
        const std::int64_t icg = n.weight.shape[1];
        const std::int64_t c = channels_of(n, in[0]);
        if (n.groups < 1 || c % n.groups != 0 || oc % n.groups != 0 || icg != c / n.groups ||
            n.weight.shape[2] != n.kernel || n.weight.shape[3] != n.kernel)
          fail("node '" + n.id + "': weight " + shape_to_string(n.weight.shape) +
               " inconsistent with input " + shape_to_string(in[0]) + ", groups " +
               std::to_string(n.groups) + ", kernel " + std::to_string(n.kernel));
        if (!n.bias.data.empty() && static_cast<std::int64_t>(n.bias.data.size()) != oc)
          fail("node '" + n.id + "': bias size != output channels");
        out = conv_like_shape(n, in[0], oc);
        break;
      }
      case NodeKind::InnerProduct: {
        check_tensor(n.weight, "node '" + n.id + "' weight");
        if (n.weight.shape.size() != 2)
          fail("node '" + n.id + "': inner-product weight must be [OF,IF]");
        const std::int64_t flat = shape_numel(in[0]);
        if (n.weight.shape[1] != flat)
          fail("node '" + n.id + "': weight expects " + std::to_string(n.weight.shape[1]) +
               " features, input flattens to " + std::to_string(flat));
        if (!n.bias.data.empty() &&
            static_cast<std::int64_t>(n.bias.data.size()) != n.weight.shape[0])
          fail("node '" + n.id + "': bias size != output features");
        out = {n.weight.shape[0]};
        break;
      }
      case NodeKind::BatchNorm: {
        const std::int64_t c = channels_of(n, in[0]);
        for (const Tensor* t : {&n.bn_mean, &n.bn_var, &n.bn_gamma, &n.bn_beta})
          if (!t->data.empty() && static_cast<std::int64_t>(t->data.size()) != c)
            fail("node '" + n.id + "': batch-norm parameter length != channels");
        if (n.bn_mean.data.empty() || n.bn_var.data.empty())
          fail("node '" + n.id + "': batch-norm needs mean and variance");
        out = in[0];
        break;
      }
      case NodeKind::Scale:
      case NodeKind::Bias: {
        const std::int64_t c = channels_of(n, in[0]);
        const Tensor& param = n.kind == NodeKind::Scale ? n.weight : n.bias;
        if (static_cast<std::int64_t>(param.data.size()) != c)
          fail("node '" + n.id + "': per-channel parameter length != channels");
        if (n.kind == NodeKind::Scale && !n.bias.data.empty() &&
            static_cast<std::int64_t>(n.bias.data.size()) != c)
          fail("node '" + n.id + "': per-channel bias length != channels");
        out = in[0];
        break;
      }
      case NodeKind::ReLU:
      case NodeKind::IdentityDownscale:
        out = in[0];
        break;
      case NodeKind::EltwiseAdd:
        for (const auto& s : in)
          if (s != in[0])
            fail("node '" + n.id + "': mismatched eltwise input shapes " +
                 shape_to_string(s) + " vs " + shape_to_string(in[0]));
        out = in[0];
        break;
      case NodeKind::Concat: {
        if (n.axis != 0) fail("node '" + n.id + "': only channel concat is supported");
        out = in[0];
        for (std::size_t k = 1; k < in.size(); ++k) {
          if (in[k].size() != out.size() ||
              !std::equal(in[k].begin() + 1, in[k].end(), out.begin() + 1))
            fail("node '" + n.id + "': concat inputs disagree off-axis: " +
                 shape_to_string(in[k]) + " vs " + shape_to_string(out));
          out[0] += in[k][0];
        }
        break;
      }
      case NodeKind::MaxPool:
      case NodeKind::AvgPool:
        out = conv_like_shape(n, in[0], channels_of(n, in[0]));
        break;
    }
    shapes[n.outputs[0]] = std::move(out);
  }
  return shapes;
}

}  // namespace dfpq
