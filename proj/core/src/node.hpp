#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "spm/tensor.hpp"

namespace spm::detail {

struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;
  bool requires_grad = false;
  bool consumed = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;
  ~Node();

  Real* grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), Real{0});
    return grad.data();
  }
};

std::uint64_t next_sequence();

/// Builds an op result. Parents and the backward rule are kept only when
/// recording is enabled and at least one parent needs a gradient.
Tensor make_result(Shape shape, std::vector<Real> value, std::vector<std::shared_ptr<Node>> parents,
                   std::function<void(Node&)> backward);

inline Node& node_of(const Tensor& t) {
  if (!t.defined()) throw GraphError("use of an undefined tensor");
  return *t.node();
}

}  // namespace spm::detail
