#include "spm/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

#include "node.hpp"

namespace spm {

namespace {
thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_sequence{1};

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<Real> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  node->seq = detail::next_sequence();
  return node;
}
}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace detail {

Node::~Node() {
  // Unlink iteratively; long recurrent chains would otherwise recurse once per node.
  std::vector<std::shared_ptr<Node>> pending = std::move(parents);
  while (!pending.empty()) {
    auto node = std::move(pending.back());
    pending.pop_back();
    if (node && node.use_count() == 1) {
      for (auto& p : node->parents) pending.push_back(std::move(p));
      node->parents.clear();
      node->backward = nullptr;
    }
  }
}

std::uint64_t next_sequence() { return g_sequence.fetch_add(1, std::memory_order_relaxed); }

Tensor make_result(Shape shape, std::vector<Real> value, std::vector<std::shared_ptr<Node>> parents,
                   std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->seq = next_sequence();
  if (g_grad_enabled) {
    bool any = std::any_of(parents.begin(), parents.end(),
                           [](const auto& p) { return p->requires_grad; });
    if (any) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

}  // namespace detail

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<Real>(n, Real{0}), requires_grad));
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<Real>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<Real> values, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
  return Tensor(make_leaf({}, {value}, requires_grad));
}

const Shape& Tensor::shape() const { return detail::node_of(*this).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return detail::node_of(*this).value.size(); }

std::span<const Real> Tensor::data() const { return detail::node_of(*this).value; }

std::span<Real> Tensor::mutable_data() { return detail::node_of(*this).value; }

Real Tensor::item() const {
  const auto& n = detail::node_of(*this);
  if (n.value.size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(n.shape));
  return n.value[0];
}

Real Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& n = detail::node_of(*this);
  if (index.size() != n.shape.size()) {
    throw DimensionError("index rank does not match " + shape_string(n.shape));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= n.shape[axis]) throw DimensionError("index out of range for " + shape_string(n.shape));
    flat = flat * n.shape[axis] + i;
    ++axis;
  }
  return n.value[flat];
}

std::vector<Real> Tensor::to_vector() const { return detail::node_of(*this).value; }

bool Tensor::requires_grad() const { return detail::node_of(*this).requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  auto& n = detail::node_of(*this);
  n.requires_grad = flag;
  if (!flag) n.grad.clear();
}

bool Tensor::has_grad() const {
  const auto& n = detail::node_of(*this);
  return n.requires_grad && n.grad.size() == n.value.size();
}

std::span<const Real> Tensor::grad() const {
  const auto& n = detail::node_of(*this);
  if (!has_grad()) throw GraphError("tensor has no gradient");
  return n.grad;
}

std::span<Real> Tensor::mutable_grad() {
  auto& n = detail::node_of(*this);
  if (!n.requires_grad) throw GraphError("tensor does not require a gradient");
  return {n.grad_buffer(), n.value.size()};
}

void Tensor::zero_grad() {
  auto& n = detail::node_of(*this);
  if (n.requires_grad) std::fill(n.grad.begin(), n.grad.end(), Real{0});
}

Tensor Tensor::detach() const {
  const auto& n = detail::node_of(*this);
  return Tensor(make_leaf(n.shape, n.value, false));
}

bool Tensor::is_leaf() const { return !detail::node_of(*this).backward; }

std::uint64_t Tensor::sequence() const { return detail::node_of(*this).seq; }

void Tensor::backward() const {
  auto& root = detail::node_of(*this);
  if (root.value.size() != 1 || !root.shape.empty()) {
    throw GraphError("backward() needs a scalar loss, got shape " + shape_string(root.shape));
  }
  if (root.consumed) throw GraphError("the graph behind this loss was already consumed by backward()");
  if (!root.requires_grad) return;

  // Collect the reachable recorded subgraph. Sequence numbers are assigned at
  // creation, so sorting by them descending is a valid reverse topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> pending{&root};
  while (!pending.empty()) {
    auto* n = pending.back();
    pending.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad) pending.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->seq > b->seq; });

  // Interior gradients are scratch space for this pass only.
  for (auto* n : order) {
    if (n->backward) n->grad.assign(n->value.size(), Real{0});
  }
  root.grad_buffer()[0] += Real{1};
  for (auto* n : order) {
    if (n->backward) n->backward(*n);
  }
  // Releasing parents may drop the last owner of other nodes in `order`, so
  // keep them alive until every node has been released.
  std::vector<std::shared_ptr<detail::Node>> keep_alive;
  for (auto* n : order) {
    if (n->backward) {
      for (auto& p : n->parents) keep_alive.push_back(std::move(p));
      n->backward = nullptr;
      n->parents.clear();
      n->consumed = true;
    }
  }
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool flag) { g_grad_enabled = flag; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace spm
