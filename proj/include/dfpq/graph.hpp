#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dfpq/tensor.hpp"

namespace dfpq {

enum class NodeKind {
  Input,
  Output,
  Convolution,
  InnerProduct,
  BatchNorm,
  Scale,
  Bias,
  ReLU,
  EltwiseAdd,
  Concat,
  MaxPool,
  AvgPool,
  IdentityDownscale,
};

const char* node_kind_name(NodeKind k);
NodeKind node_kind_from_name(const std::string& name);  // throws on unknown

// One layer. Attributes are a flat superset; each kind reads only its own.
// Activations flow as [C,H,W]; inner products flatten their input; conv
// weights are [OC, IC/groups, K, K] and per-channel affine parameters are
// length-C vectors.
struct Node {
  std::string id;
  NodeKind kind = NodeKind::Input;
  std::vector<std::string> inputs;   // tensor ids, ordered
  std::vector<std::string> outputs;  // tensor ids (one, except Output: none)

  int kernel = 0;   // conv / pool window (square)
  int stride = 1;   // conv / pool
  int pad = 0;      // conv / pool
  int groups = 1;   // conv
  int axis = 0;     // concat axis over [C,H,W]
  double eps = 0.0;      // batchnorm denominator epsilon
  double factor = 1.0;   // identity-downscale multiplier, in (0, 1]
  std::vector<std::int64_t> shape;  // Input: produced tensor shape

  Tensor weight;  // conv/inner-product kernel; Scale: per-channel multiplier
  Tensor bias;    // conv/inner-product/Scale/Bias additive term (may be empty)
  Tensor bn_mean, bn_var, bn_gamma, bn_beta;  // batchnorm statistics/affine
};

struct Graph {
  std::vector<Node> nodes;

  Node& node(const std::string& id);
  const Node& node(const std::string& id) const;
  bool has_node(const std::string& id) const;

  // Index of the node producing a tensor; throws if absent.
  std::size_t producer_of(const std::string& tensor) const;
  // Node indices consuming a tensor, in node order.
  std::vector<std::size_t> consumers_of(const std::string& tensor) const;

  // Unique ids, single producer per tensor, per-kind arity, acyclicity.
  void validate() const;  // throws std::runtime_error

  // Producers before consumers; ties broken by node id, so repeated calls and
  // node reorderings give identical sequences. Throws on cycles.
  std::vector<std::size_t> topological_order() const;

  // Tensor id -> [C,H,W]-style shape, walking the topological order; checks
  // weight/arity/shape consistency along the way.
  std::map<std::string, std::vector<std::int64_t>> infer_shapes() const;
};

}  // namespace dfpq
