#include "dfpq/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace dfpq {

Tensor::Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
  data.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0f);
}

std::int64_t Tensor::numel() const { return shape_numel(shape); }

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) {
    if (d < 0) throw std::runtime_error("shape_numel: negative dimension");
    n *= d;
  }
  return n;
}

std::string shape_to_string(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

void check_tensor(const Tensor& t, const std::string& who) {
  if (static_cast<std::int64_t>(t.data.size()) != shape_numel(t.shape))
    throw std::runtime_error(who + ": tensor data size does not match shape " +
                             shape_to_string(t.shape));
}

}  // namespace dfpq
