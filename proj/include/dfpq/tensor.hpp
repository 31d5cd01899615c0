#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dfpq {

// Dense row-major float32 tensor. Shapes are free-form; conv-path activations
// use [C,H,W], inner-product activations use [F], conv weights [OC,IC/g,KH,KW].
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> s);

  std::int64_t numel() const;
  bool empty() const { return data.empty(); }
};

std::int64_t shape_numel(const std::vector<std::int64_t>& shape);
std::string shape_to_string(const std::vector<std::int64_t>& shape);

// Throws std::runtime_error when data size and shape disagree.
void check_tensor(const Tensor& t, const std::string& who);

}  // namespace dfpq
