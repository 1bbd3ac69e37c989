#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spm {

#ifdef SPM_USE_DOUBLE
using Real = double;
#else
using Real = float;
#endif

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised when operand shapes are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for misuse of the computation graph (non-scalar loss, consumed tape).
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised when a masked softmax/reduction has no unmasked entry in a slice.
class DegenerateMaskError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
struct Node;
}

/// Handle to a node of the dynamic computation graph.
///
/// Copies share the node. Leaf tensors (created through the factories) own
/// their values; op results additionally record their parents and a backward
/// rule while gradient recording is enabled. Values are stored row-major.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const Real> data() const;
  /// Writable view of the values. Only meaningful for leaves (parameters,
  /// inputs); mutating an interior node silently invalidates its backward.
  std::span<Real> mutable_data();
  Real item() const;
  Real at(std::initializer_list<std::size_t> index) const;
  std::vector<Real> to_vector() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const Real> grad() const;
  std::span<Real> mutable_grad();
  void zero_grad();

  /// Same values, cut from the graph.
  Tensor detach() const;

  /// Reverse-mode pass from this scalar. Gradients accumulate into every
  /// reachable tensor with requires_grad; the recorded graph is released
  /// afterwards, so a second call on the same loss throws GraphError.
  void backward() const;

  bool is_leaf() const;
  std::uint64_t sequence() const;

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Thread-local switch controlling whether ops record backward information.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool flag);
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace spm
