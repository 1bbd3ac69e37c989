#include "spm/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "node.hpp"

namespace spm {

using detail::make_result;
using detail::Node;
using detail::node_of;
using NodePtr = std::shared_ptr<Node>;

namespace {

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

std::string pair_shapes(const Shape& a, const Shape& b) {
  return shape_string(a) + " and " + shape_string(b);
}

void check_axis(const Shape& shape, std::size_t axis, const char* what) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(what) + ": axis " + std::to_string(axis) + " out of range for " +
                         shape_string(shape));
  }
}

// View of a tensor as [outer, axis, inner] around one axis.
struct AxisView {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

Shape row_major_strides(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

// Maps every output element of a broadcast to the source element of an operand.
struct BroadcastPlan {
  Shape out;
  enum class Kind { same, scalar_b, scalar_a, suffix_b, suffix_a, general } kind = Kind::same;
  std::vector<std::size_t> a_index;
  std::vector<std::size_t> b_index;
};

Shape broadcast_shape(const Shape& a, const Shape& b) {
  std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast shapes " + pair_shapes(a, b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

std::vector<std::size_t> source_index(const Shape& src, const Shape& out) {
  std::size_t n = shape_numel(out);
  std::vector<std::size_t> index(n);
  std::size_t offset = out.size() - src.size();
  Shape src_strides = row_major_strides(src);
  Shape out_strides = row_major_strides(out);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t rem = flat;
    std::size_t s = 0;
    for (std::size_t axis = 0; axis < out.size(); ++axis) {
      std::size_t coord = rem / out_strides[axis];
      rem %= out_strides[axis];
      if (axis >= offset) {
        std::size_t sd = src[axis - offset];
        if (sd != 1) s += coord * src_strides[axis - offset];
      }
    }
    index[flat] = s;
  }
  return index;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out = a;
    plan.kind = BroadcastPlan::Kind::same;
    return plan;
  }
  plan.out = broadcast_shape(a, b);
  std::size_t na = shape_numel(a), nb = shape_numel(b);
  if (plan.out == a && nb == 1) {
    plan.kind = BroadcastPlan::Kind::scalar_b;
  } else if (plan.out == b && na == 1) {
    plan.kind = BroadcastPlan::Kind::scalar_a;
  } else if (plan.out == a && is_suffix(b, a)) {
    plan.kind = BroadcastPlan::Kind::suffix_b;
  } else if (plan.out == b && is_suffix(a, b)) {
    plan.kind = BroadcastPlan::Kind::suffix_a;
  } else {
    plan.kind = BroadcastPlan::Kind::general;
    plan.a_index = source_index(a, plan.out);
    plan.b_index = source_index(b, plan.out);
  }
  return plan;
}

struct IndexFns {
  const BroadcastPlan* plan;
  std::size_t na, nb;
  std::size_t ia(std::size_t i) const {
    switch (plan->kind) {
      case BroadcastPlan::Kind::same:
      case BroadcastPlan::Kind::scalar_b:
      case BroadcastPlan::Kind::suffix_b:
        return i;
      case BroadcastPlan::Kind::scalar_a:
        return 0;
      case BroadcastPlan::Kind::suffix_a:
        return i % na;
      case BroadcastPlan::Kind::general:
        return plan->a_index[i];
    }
    return 0;
  }
  std::size_t ib(std::size_t i) const {
    switch (plan->kind) {
      case BroadcastPlan::Kind::same:
      case BroadcastPlan::Kind::scalar_a:
      case BroadcastPlan::Kind::suffix_a:
        return i;
      case BroadcastPlan::Kind::scalar_b:
        return 0;
      case BroadcastPlan::Kind::suffix_b:
        return i % nb;
      case BroadcastPlan::Kind::general:
        return plan->b_index[i];
    }
    return 0;
  }
};

Real apply_unary(UnaryOp op, Real x) {
  switch (op) {
    case UnaryOp::tanh:
      return std::tanh(x);
    case UnaryOp::sigmoid:
      return x >= 0 ? Real{1} / (Real{1} + std::exp(-x)) : std::exp(x) / (Real{1} + std::exp(x));
    case UnaryOp::relu:
      return x > 0 ? x : Real{0};
    case UnaryOp::exp:
      return std::exp(x);
    case UnaryOp::neg:
      return -x;
    case UnaryOp::abs:
      return std::abs(x);
    case UnaryOp::log:
      return std::log(x);
    case UnaryOp::sqrt:
      return std::sqrt(x);
  }
  return x;
}

Real unary_derivative(UnaryOp op, Real x, Real y) {
  switch (op) {
    case UnaryOp::tanh:
      return Real{1} - y * y;
    case UnaryOp::sigmoid:
      return y * (Real{1} - y);
    case UnaryOp::relu:
      return x > 0 ? Real{1} : Real{0};
    case UnaryOp::exp:
      return y;
    case UnaryOp::neg:
      return Real{-1};
    case UnaryOp::abs:
      return x > 0 ? Real{1} : (x < 0 ? Real{-1} : Real{0});
    case UnaryOp::log:
      return Real{1} / x;
    case UnaryOp::sqrt:
      return y > 0 ? Real{0.5} / y : Real{0};
  }
  return 0;
}

}  // namespace

Tensor unary(UnaryOp op, const Tensor& x) {
  const auto& in = node_of(x);
  std::vector<Real> out(in.value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply_unary(op, in.value[i]);
  return make_result(in.shape, std::move(out), {x.node()}, [op](Node& self) {
    auto& p = *self.parents[0];
    Real* g = p.grad_buffer();
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      g[i] += self.grad[i] * unary_derivative(op, p.value[i], self.value[i]);
    }
  });
}

Tensor binary(BinaryOp op, const Tensor& a, const Tensor& b) {
  const auto& na = node_of(a);
  const auto& nb = node_of(b);
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(na.shape, nb.shape));
  IndexFns idx{plan.get(), na.value.size(), nb.value.size()};
  std::size_t n = shape_numel(plan->out);
  std::vector<Real> out(n);
  const Real* av = na.value.data();
  const Real* bv = nb.value.data();
  switch (op) {
    case BinaryOp::add:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[idx.ia(i)] + bv[idx.ib(i)];
      break;
    case BinaryOp::sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[idx.ia(i)] - bv[idx.ib(i)];
      break;
    case BinaryOp::mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[idx.ia(i)] * bv[idx.ib(i)];
      break;
    case BinaryOp::div:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[idx.ia(i)] / bv[idx.ib(i)];
      break;
  }
  Shape out_shape = plan->out;
  return make_result(std::move(out_shape), std::move(out), {a.node(), b.node()},
                     [op, plan](Node& self) {
                       auto& pa = *self.parents[0];
                       auto& pb = *self.parents[1];
                       IndexFns idx{plan.get(), pa.value.size(), pb.value.size()};
                       std::size_t n = self.value.size();
                       const Real* g = self.grad.data();
                       if (pa.requires_grad) {
                         Real* ga = pa.grad_buffer();
                         for (std::size_t i = 0; i < n; ++i) {
                           Real d = 0;
                           switch (op) {
                             case BinaryOp::add:
                             case BinaryOp::sub:
                               d = g[i];
                               break;
                             case BinaryOp::mul:
                               d = g[i] * pb.value[idx.ib(i)];
                               break;
                             case BinaryOp::div:
                               d = g[i] / pb.value[idx.ib(i)];
                               break;
                           }
                           ga[idx.ia(i)] += d;
                         }
                       }
                       if (pb.requires_grad) {
                         Real* gb = pb.grad_buffer();
                         for (std::size_t i = 0; i < n; ++i) {
                           Real d = 0;
                           switch (op) {
                             case BinaryOp::add:
                               d = g[i];
                               break;
                             case BinaryOp::sub:
                               d = -g[i];
                               break;
                             case BinaryOp::mul:
                               d = g[i] * pa.value[idx.ia(i)];
                               break;
                             case BinaryOp::div: {
                               Real bv = pb.value[idx.ib(i)];
                               d = -g[i] * pa.value[idx.ia(i)] / (bv * bv);
                               break;
                             }
                           }
                           gb[idx.ib(i)] += d;
                         }
                       }
                     });
}

Tensor affine(const Tensor& x, Real factor, Real offset) {
  const auto& in = node_of(x);
  std::vector<Real> out(in.value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in.value[i] * factor + offset;
  return make_result(in.shape, std::move(out), {x.node()}, [factor](Node& self) {
    auto& p = *self.parents[0];
    Real* g = p.grad_buffer();
    for (std::size_t i = 0; i < self.value.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& na = node_of(a);
  const auto& nb = node_of(b);
  const auto& sa = na.shape;
  const auto& sb = nb.shape;
  std::size_t batch = 1, m = 0, k = 0, n = 0;
  bool shared_b = false;
  Shape out_shape;
  if (sa.size() == 2 && sb.size() == 2) {
    m = sa[0];
    k = sa[1];
    n = sb[1];
    if (sb[0] != k) throw DimensionError("matmul: inner dimensions differ for " + pair_shapes(sa, sb));
    out_shape = {m, n};
  } else if (sa.size() == 3 && sb.size() == 3) {
    batch = sa[0];
    m = sa[1];
    k = sa[2];
    n = sb[2];
    if (sb[0] != batch || sb[1] != k) {
      throw DimensionError("matmul: incompatible batched shapes " + pair_shapes(sa, sb));
    }
    out_shape = {batch, m, n};
  } else if (sa.size() == 3 && sb.size() == 2) {
    // Shared right operand: fold the batch into rows.
    m = sa[0] * sa[1];
    k = sa[2];
    n = sb[1];
    shared_b = true;
    if (sb[0] != k) throw DimensionError("matmul: inner dimensions differ for " + pair_shapes(sa, sb));
    out_shape = {sa[0], sa[1], n};
  } else {
    throw DimensionError("matmul: unsupported ranks for " + pair_shapes(sa, sb));
  }
  std::vector<Real> out(batch * m * n);
  for (std::size_t t = 0; t < batch; ++t) {
    ConstMatMap A(na.value.data() + t * m * k, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
    ConstMatMap B(nb.value.data() + (shared_b ? 0 : t * k * n), static_cast<Eigen::Index>(k),
                  static_cast<Eigen::Index>(n));
    MatMap C(out.data() + t * m * n, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    C.noalias() = A * B;
  }
  return make_result(std::move(out_shape), std::move(out), {a.node(), b.node()},
                     [batch, m, k, n, shared_b](Node& self) {
                       auto& pa = *self.parents[0];
                       auto& pb = *self.parents[1];
                       auto E = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
                       for (std::size_t t = 0; t < batch; ++t) {
                         ConstMatMap G(self.grad.data() + t * m * n, E(m), E(n));
                         std::size_t boff = shared_b ? 0 : t * k * n;
                         if (pa.requires_grad) {
                           MatMap GA(pa.grad_buffer() + t * m * k, E(m), E(k));
                           ConstMatMap B(pb.value.data() + boff, E(k), E(n));
                           GA.noalias() += G * B.transpose();
                         }
                         if (pb.requires_grad) {
                           MatMap GB(pb.grad_buffer() + boff, E(k), E(n));
                           ConstMatMap A(pa.value.data() + t * m * k, E(m), E(k));
                           GB.noalias() += A.transpose() * G;
                         }
                       }
                     });
}

namespace {

Shape reduced_shape(const Shape& shape, std::size_t axis, bool keepdim) {
  Shape out = shape;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return out;
}

// Expands a broadcastable mask to the full shape of x (as 0/1 values).
std::vector<Real> expand_mask(const Shape& x_shape, const Tensor& mask) {
  const auto& nm = node_of(mask);
  Shape out = broadcast_shape(x_shape, nm.shape);
  if (out != x_shape) {
    throw DimensionError("mask of shape " + shape_string(nm.shape) + " does not broadcast to " +
                         shape_string(x_shape));
  }
  std::vector<Real> full(shape_numel(x_shape));
  if (nm.shape == x_shape) {
    for (std::size_t i = 0; i < full.size(); ++i) full[i] = nm.value[i] != 0 ? Real{1} : Real{0};
  } else {
    auto index = source_index(nm.shape, x_shape);
    for (std::size_t i = 0; i < full.size(); ++i) full[i] = nm.value[index[i]] != 0 ? Real{1} : Real{0};
  }
  return full;
}

Tensor reduce_impl(ReduceOp op, const Tensor& x, const std::vector<Real>* mask, std::size_t axis,
                   bool keepdim) {
  const auto& in = node_of(x);
  check_axis(in.shape, axis, "reduce");
  AxisView v = axis_view(in.shape, axis);
  std::vector<Real> out(v.outer * v.inner);
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  auto counts = std::make_shared<std::vector<Real>>();
  if (op == ReduceOp::max) argmax->resize(out.size());
  if (op == ReduceOp::mean) counts->resize(out.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      std::size_t slot = o * v.inner + i;
      Real acc = 0;
      Real count = 0;
      bool found = false;
      std::size_t best = 0;
      for (std::size_t e = 0; e < v.extent; ++e) {
        std::size_t flat = (o * v.extent + e) * v.inner + i;
        if (mask && (*mask)[flat] == 0) continue;
        Real val = in.value[flat];
        if (op == ReduceOp::max) {
          if (!found || val > acc) {
            acc = val;
            best = flat;
          }
        } else {
          acc += val;
        }
        count += 1;
        found = true;
      }
      if (!found) {
        if (mask || op != ReduceOp::sum) {
          throw DegenerateMaskError("reduction over a slice with no unmasked entries");
        }
      }
      if (op == ReduceOp::max) (*argmax)[slot] = best;
      if (op == ReduceOp::mean) {
        acc /= count;
        (*counts)[slot] = count;
      }
      out[slot] = acc;
    }
  }
  std::shared_ptr<std::vector<Real>> saved_mask;
  if (mask && op != ReduceOp::max) saved_mask = std::make_shared<std::vector<Real>>(*mask);
  return make_result(reduced_shape(in.shape, axis, keepdim), std::move(out), {x.node()},
                     [op, v, argmax, counts, saved_mask](Node& self) {
                       auto& p = *self.parents[0];
                       Real* g = p.grad_buffer();
                       for (std::size_t o = 0; o < v.outer; ++o) {
                         for (std::size_t i = 0; i < v.inner; ++i) {
                           std::size_t slot = o * v.inner + i;
                           Real gs = self.grad[slot];
                           if (op == ReduceOp::max) {
                             g[(*argmax)[slot]] += gs;
                             continue;
                           }
                           if (op == ReduceOp::mean) gs /= (*counts)[slot];
                           for (std::size_t e = 0; e < v.extent; ++e) {
                             std::size_t flat = (o * v.extent + e) * v.inner + i;
                             if (saved_mask && (*saved_mask)[flat] == 0) continue;
                             g[flat] += gs;
                           }
                         }
                       }
                     });
}

}  // namespace

Tensor reduce(ReduceOp op, const Tensor& x, std::size_t axis, bool keepdim) {
  return reduce_impl(op, x, nullptr, axis, keepdim);
}

Tensor masked_reduce(ReduceOp op, const Tensor& x, const Tensor& mask, std::size_t axis, bool keepdim) {
  auto full = expand_mask(node_of(x).shape, mask);
  return reduce_impl(op, x, &full, axis, keepdim);
}

Tensor sum_all(const Tensor& x) {
  const auto& in = node_of(x);
  Real acc = 0;
  for (auto v : in.value) acc += v;
  return make_result({}, {acc}, {x.node()}, [](Node& self) {
    auto& p = *self.parents[0];
    Real* g = p.grad_buffer();
    for (std::size_t i = 0; i < p.value.size(); ++i) g[i] += self.grad[0];
  });
}

Tensor mean_all(const Tensor& x) {
  auto n = static_cast<Real>(x.numel());
  return affine(sum_all(x), Real{1} / n);
}

Tensor softmax(const Tensor& x, std::size_t axis, const std::optional<Tensor>& mask) {
  const auto& in = node_of(x);
  check_axis(in.shape, axis, "softmax");
  std::vector<Real> full_mask;
  if (mask) full_mask = expand_mask(in.shape, *mask);
  AxisView v = axis_view(in.shape, axis);
  std::vector<Real> out(in.value.size(), Real{0});
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      auto flat = [&](std::size_t e) { return (o * v.extent + e) * v.inner + i; };
      auto live = [&](std::size_t e) { return full_mask.empty() || full_mask[flat(e)] != 0; };
      Real hi = -std::numeric_limits<Real>::infinity();
      bool any = false;
      for (std::size_t e = 0; e < v.extent; ++e) {
        if (!live(e)) continue;
        hi = std::max(hi, in.value[flat(e)]);
        any = true;
      }
      if (!any) throw DegenerateMaskError("softmax over a fully masked slice");
      Real total = 0;
      for (std::size_t e = 0; e < v.extent; ++e) {
        if (!live(e)) continue;
        Real ex = std::exp(in.value[flat(e)] - hi);
        out[flat(e)] = ex;
        total += ex;
      }
      for (std::size_t e = 0; e < v.extent; ++e) {
        if (live(e)) out[flat(e)] /= total;
      }
    }
  }
  return make_result(in.shape, std::move(out), {x.node()}, [v](Node& self) {
    auto& p = *self.parents[0];
    Real* g = p.grad_buffer();
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        Real dot = 0;
        for (std::size_t e = 0; e < v.extent; ++e) {
          std::size_t f = (o * v.extent + e) * v.inner + i;
          dot += self.grad[f] * self.value[f];
        }
        // Masked entries have value 0, so they receive no gradient.
        for (std::size_t e = 0; e < v.extent; ++e) {
          std::size_t f = (o * v.extent + e) * v.inner + i;
          g[f] += self.value[f] * (self.grad[f] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const auto& in = node_of(x);
  check_axis(in.shape, axis, "log_softmax");
  AxisView v = axis_view(in.shape, axis);
  std::vector<Real> out(in.value.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      auto flat = [&](std::size_t e) { return (o * v.extent + e) * v.inner + i; };
      Real hi = -std::numeric_limits<Real>::infinity();
      for (std::size_t e = 0; e < v.extent; ++e) hi = std::max(hi, in.value[flat(e)]);
      Real total = 0;
      for (std::size_t e = 0; e < v.extent; ++e) total += std::exp(in.value[flat(e)] - hi);
      Real lse = hi + std::log(total);
      for (std::size_t e = 0; e < v.extent; ++e) out[flat(e)] = in.value[flat(e)] - lse;
    }
  }
  return make_result(in.shape, std::move(out), {x.node()}, [v](Node& self) {
    auto& p = *self.parents[0];
    Real* g = p.grad_buffer();
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        Real total = 0;
        for (std::size_t e = 0; e < v.extent; ++e) total += self.grad[(o * v.extent + e) * v.inner + i];
        for (std::size_t e = 0; e < v.extent; ++e) {
          std::size_t f = (o * v.extent + e) * v.inner + i;
          g[f] += self.grad[f] - std::exp(self.value[f]) * total;
        }
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  const auto& in = node_of(x);
  if (shape_numel(shape) != in.value.size()) {
    throw DimensionError("reshape: cannot view " + pair_shapes(in.shape, shape));
  }
  return make_result(std::move(shape), in.value, {x.node()}, [](Node& self) {
    auto& p = *self.parents[0];
    Real* g = p.grad_buffer();
    for (std::size_t i = 0; i < self.value.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& x, std::size_t axis0, std::size_t axis1) {
  const auto& in = node_of(x);
  check_axis(in.shape, axis0, "transpose");
  check_axis(in.shape, axis1, "transpose");
  Shape out_shape = in.shape;
  std::swap(out_shape[axis0], out_shape[axis1]);
  Shape in_strides = row_major_strides(in.shape);
  Shape out_strides = row_major_strides(out_shape);
  std::size_t n = in.value.size();
  auto perm = std::make_shared<std::vector<std::size_t>>(n);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t rem = flat;
    std::size_t src = 0;
    for (std::size_t axis = 0; axis < out_shape.size(); ++axis) {
      std::size_t coord = rem / out_strides[axis];
      rem %= out_strides[axis];
      std::size_t src_axis = axis == axis0 ? axis1 : (axis == axis1 ? axis0 : axis);
      src += coord * in_strides[src_axis];
    }
    (*perm)[flat] = src;
  }
  std::vector<Real> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = in.value[(*perm)[i]];
  return make_result(std::move(out_shape), std::move(out), {x.node()}, [perm](Node& self) {
    auto& p = *self.parents[0];
    Real* g = p.grad_buffer();
    for (std::size_t i = 0; i < self.value.size(); ++i) g[(*perm)[i]] += self.grad[i];
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = node_of(parts[0]).shape;
  check_axis(first, axis, "concat");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  std::vector<NodePtr> parents;
  for (const auto& t : parts) {
    const auto& s = node_of(t).shape;
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw DimensionError("concat: mismatched shapes " + pair_shapes(first, s));
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
    parents.push_back(t.node());
  }
  AxisView v = axis_view(out_shape, axis);
  std::vector<Real> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& src = parents[p]->value;
    std::size_t w = extents[p] * v.inner;
    for (std::size_t o = 0; o < v.outer; ++o) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(o * v.extent * v.inner + offset * v.inner));
    }
    offset += extents[p];
  }
  return make_result(std::move(out_shape), std::move(out), std::move(parents), [v, extents](Node& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      auto& parent = *self.parents[p];
      std::size_t w = extents[p] * v.inner;
      if (parent.requires_grad) {
        Real* g = parent.grad_buffer();
        for (std::size_t o = 0; o < v.outer; ++o) {
          const Real* src = self.grad.data() + o * v.extent * v.inner + offset * v.inner;
          for (std::size_t i = 0; i < w; ++i) g[o * w + i] += src[i];
        }
      }
      offset += extents[p];
    }
  });
}

Tensor stack(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("stack: no inputs");
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const auto& t : parts) {
    Shape s = node_of(t).shape;
    if (axis > s.size()) throw DimensionError("stack: axis out of range for " + shape_string(s));
    s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), 1);
    expanded.push_back(reshape(t, s));
  }
  return concat(expanded, axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto& in = node_of(x);
  check_axis(in.shape, axis, "slice");
  if (begin > end || end > in.shape[axis]) {
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for " + shape_string(in.shape));
  }
  AxisView v = axis_view(in.shape, axis);
  Shape out_shape = in.shape;
  out_shape[axis] = end - begin;
  std::size_t w = (end - begin) * v.inner;
  std::vector<Real> out(v.outer * w);
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy_n(in.value.begin() + static_cast<std::ptrdiff_t>((o * v.extent + begin) * v.inner), w,
                out.begin() + static_cast<std::ptrdiff_t>(o * w));
  }
  return make_result(std::move(out_shape), std::move(out), {x.node()}, [v, begin, w](Node& self) {
    auto& p = *self.parents[0];
    Real* g = p.grad_buffer();
    for (std::size_t o = 0; o < v.outer; ++o) {
      Real* dst = g + (o * v.extent + begin) * v.inner;
      const Real* src = self.grad.data() + o * w;
      for (std::size_t i = 0; i < w; ++i) dst[i] += src[i];
    }
  });
}

Tensor select(const Tensor& x, std::size_t axis, std::size_t index) {
  Tensor s = slice(x, axis, index, index + 1);
  Shape shape = s.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  return reshape(s, std::move(shape));
}

Tensor gather_rows(const Tensor& x, std::span<const std::int64_t> rows) {
  const auto& in = node_of(x);
  if (in.shape.size() != 2) throw DimensionError("gather_rows expects a matrix, got " + shape_string(in.shape));
  std::size_t n = in.shape[0], d = in.shape[1];
  auto index = std::make_shared<std::vector<std::int64_t>>(rows.begin(), rows.end());
  std::vector<Real> out(index->size() * d);
  for (std::size_t r = 0; r < index->size(); ++r) {
    auto src = (*index)[r];
    if (src < 0 || static_cast<std::size_t>(src) >= n) {
      throw DimensionError("gather_rows: row " + std::to_string(src) + " out of range for " +
                           shape_string(in.shape));
    }
    std::copy_n(in.value.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(src) * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  return make_result({index->size(), d}, std::move(out), {x.node()}, [index, d](Node& self) {
    auto& p = *self.parents[0];
    Real* g = p.grad_buffer();
    for (std::size_t r = 0; r < index->size(); ++r) {
      Real* dst = g + static_cast<std::size_t>((*index)[r]) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += self.grad[r * d + j];
    }
  });
}

Tensor pairwise_similarity(const Tensor& a, const Tensor& b) {
  const auto& na = node_of(a);
  const auto& nb = node_of(b);
  if (na.shape.size() != 2 || nb.shape.size() != 2 || na.shape[1] != nb.shape[1] || na.shape[1] == 0) {
    throw DimensionError("pairwise_similarity: incompatible shapes " + pair_shapes(na.shape, nb.shape));
  }
  std::size_t m = na.shape[0], n = nb.shape[0], d = na.shape[1];
  const Real* A = na.value.data();
  const Real* B = nb.value.data();
  std::vector<Real> norm_a(m), norm_b(n);
  for (std::size_t i = 0; i < m; ++i) {
    Real s = 0;
    for (std::size_t k = 0; k < d; ++k) s += A[i * d + k] * A[i * d + k];
    norm_a[i] = std::sqrt(s);
  }
  for (std::size_t j = 0; j < n; ++j) {
    Real s = 0;
    for (std::size_t k = 0; k < d; ++k) s += B[j * d + k] * B[j * d + k];
    norm_b[j] = std::sqrt(s);
  }
  std::vector<Real> out(3 * m * n);
  std::size_t plane = m * n;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Real dot = 0, dist2 = 0;
      for (std::size_t k = 0; k < d; ++k) {
        Real x = A[i * d + k], y = B[j * d + k];
        dot += x * y;
        dist2 += (x - y) * (x - y);
      }
      Real denom = norm_a[i] * norm_b[j];
      out[i * n + j] = denom > 0 ? dot / denom : Real{0};
      out[plane + i * n + j] = -std::sqrt(dist2);
      out[2 * plane + i * n + j] = dot;
    }
  }
  auto saved = std::make_shared<std::pair<std::vector<Real>, std::vector<Real>>>(std::move(norm_a),
                                                                                 std::move(norm_b));
  return make_result({3, m, n}, std::move(out), {a.node(), b.node()}, [m, n, d, saved](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const Real* A = pa.value.data();
    const Real* B = pb.value.data();
    Real* GA = pa.requires_grad ? pa.grad_buffer() : nullptr;
    Real* GB = pb.requires_grad ? pb.grad_buffer() : nullptr;
    const auto& norm_a = saved->first;
    const auto& norm_b = saved->second;
    std::size_t plane = m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        Real g_cos = self.grad[i * n + j];
        Real g_neg_dist = self.grad[plane + i * n + j];
        Real g_dot = self.grad[2 * plane + i * n + j];
        Real cos = self.value[i * n + j];
        Real dist = -self.value[plane + i * n + j];
        Real na2 = norm_a[i] * norm_a[i];
        Real nb2 = norm_b[j] * norm_b[j];
        Real denom = norm_a[i] * norm_b[j];
        bool cos_live = denom > 0;
        bool dist_live = dist > 0;
        for (std::size_t k = 0; k < d; ++k) {
          Real x = A[i * d + k], y = B[j * d + k];
          Real da = g_dot * y;
          Real db = g_dot * x;
          if (cos_live) {
            da += g_cos * (y / denom - cos * x / na2);
            db += g_cos * (x / denom - cos * y / nb2);
          }
          if (dist_live) {
            Real r = (x - y) / dist;
            da -= g_neg_dist * r;
            db += g_neg_dist * r;
          }
          if (GA) GA[i * d + k] += da;
          if (GB) GB[j * d + k] += db;
        }
      }
    }
  });
}

SimilarityTriple similarity_triple(const Tensor& u, const Tensor& v) {
  const auto& su = node_of(u).shape;
  const auto& sv = node_of(v).shape;
  if (su.size() != 1 || su != sv || su[0] == 0) {
    throw DimensionError("similarity_triple: expected equal non-empty vectors, got " + pair_shapes(su, sv));
  }
  Tensor planes = pairwise_similarity(reshape(u, {1, su[0]}), reshape(v, {1, sv[0]}));
  Tensor flat = reshape(planes, {3});
  return {reshape(slice(flat, 0, 0, 1), {}), reshape(slice(flat, 0, 1, 2), {}),
          reshape(slice(flat, 0, 2, 3), {})};
}

Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  const auto& nx = node_of(x);
  const auto& nk = node_of(kernels);
  const auto& nbias = node_of(bias);
  if (nx.shape.size() != 3 || nk.shape.size() != 4 || nk.shape[1] != nx.shape[0] ||
      nbias.shape != Shape{nk.shape[0]}) {
    throw DimensionError("conv2d: incompatible input " + shape_string(nx.shape) + ", kernels " +
                         shape_string(nk.shape) + ", bias " + shape_string(nbias.shape));
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  std::size_t C = nx.shape[0], H = nx.shape[1], W = nx.shape[2];
  std::size_t O = nk.shape[0], KH = nk.shape[2], KW = nk.shape[3];
  if (KH > H + 2 * padding || KW > W + 2 * padding) {
    throw DimensionError("conv2d: kernel " + shape_string(nk.shape) + " larger than padded input " +
                         shape_string(nx.shape));
  }
  std::size_t HO = (H + 2 * padding - KH) / stride + 1;
  std::size_t WO = (W + 2 * padding - KW) / stride + 1;
  std::size_t rows = C * KH * KW, cols = HO * WO;
  // im2col: column (oy, ox) holds the receptive field flattened as (c, ky, kx).
  auto col_source = std::make_shared<std::vector<std::ptrdiff_t>>(rows * cols, -1);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ky = 0; ky < KH; ++ky) {
      for (std::size_t kx = 0; kx < KW; ++kx) {
        std::size_t r = (c * KH + ky) * KW + kx;
        for (std::size_t oy = 0; oy < HO; ++oy) {
          auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t ox = 0; ox < WO; ++ox) {
            auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
            (*col_source)[r * cols + oy * WO + ox] =
                static_cast<std::ptrdiff_t>((c * H + static_cast<std::size_t>(iy)) * W) + ix;
          }
        }
      }
    }
  }
  auto E = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  RowMatrix columns(E(rows), E(cols));
  for (std::size_t i = 0; i < rows * cols; ++i) {
    auto s = (*col_source)[i];
    columns.data()[i] = s < 0 ? Real{0} : nx.value[static_cast<std::size_t>(s)];
  }
  std::vector<Real> out(O * cols);
  MatMap Out(out.data(), E(O), E(cols));
  ConstMatMap K(nk.value.data(), E(O), E(rows));
  Out.noalias() = K * columns;
  for (std::size_t o = 0; o < O; ++o) {
    for (std::size_t p = 0; p < cols; ++p) out[o * cols + p] += nbias.value[o];
  }
  return make_result({O, HO, WO}, std::move(out), {x.node(), kernels.node(), bias.node()},
                     [O, rows, cols, col_source, E](Node& self) {
                       auto& px = *self.parents[0];
                       auto& pk = *self.parents[1];
                       auto& pb = *self.parents[2];
                       ConstMatMap G(self.grad.data(), E(O), E(cols));
                       if (pk.requires_grad) {
                         RowMatrix columns(E(rows), E(cols));
                         for (std::size_t i = 0; i < rows * cols; ++i) {
                           auto s = (*col_source)[i];
                           columns.data()[i] = s < 0 ? Real{0} : px.value[static_cast<std::size_t>(s)];
                         }
                         MatMap GK(pk.grad_buffer(), E(O), E(rows));
                         GK.noalias() += G * columns.transpose();
                       }
                       if (px.requires_grad) {
                         ConstMatMap K(pk.value.data(), E(O), E(rows));
                         RowMatrix gcols = K.transpose() * G;
                         Real* gx = px.grad_buffer();
                         for (std::size_t i = 0; i < rows * cols; ++i) {
                           auto s = (*col_source)[i];
                           if (s >= 0) gx[s] += gcols.data()[i];
                         }
                       }
                       if (pb.requires_grad) {
                         Real* gb = pb.grad_buffer();
                         for (std::size_t o = 0; o < O; ++o) {
                           for (std::size_t p = 0; p < cols; ++p) gb[o] += self.grad[o * cols + p];
                         }
                       }
                     });
}

Tensor maxpool2d(const Tensor& x, std::size_t window, std::size_t stride) {
  const auto& in = node_of(x);
  if (in.shape.size() != 3) throw DimensionError("maxpool2d expects [c x h x w], got " + shape_string(in.shape));
  if (window == 0 || stride == 0) throw DimensionError("maxpool2d: window and stride must be positive");
  std::size_t C = in.shape[0], H = in.shape[1], W = in.shape[2];
  if (window > H || window > W) {
    throw DimensionError("maxpool2d: window " + std::to_string(window) + " larger than input " +
                         shape_string(in.shape));
  }
  std::size_t HO = (H - window) / stride + 1;
  std::size_t WO = (W - window) / stride + 1;
  std::vector<Real> out(C * HO * WO);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t oy = 0; oy < HO; ++oy) {
      for (std::size_t ox = 0; ox < WO; ++ox) {
        std::size_t best = (c * H + oy * stride) * W + ox * stride;
        for (std::size_t ky = 0; ky < window; ++ky) {
          for (std::size_t kx = 0; kx < window; ++kx) {
            std::size_t f = (c * H + oy * stride + ky) * W + ox * stride + kx;
            if (in.value[f] > in.value[best]) best = f;
          }
        }
        std::size_t slot = (c * HO + oy) * WO + ox;
        out[slot] = in.value[best];
        (*argmax)[slot] = best;
      }
    }
  }
  return make_result({C, HO, WO}, std::move(out), {x.node()}, [argmax](Node& self) {
    auto& p = *self.parents[0];
    Real* g = p.grad_buffer();
    for (std::size_t i = 0; i < self.value.size(); ++i) g[(*argmax)[i]] += self.grad[i];
  });
}

Tensor fit2d(const Tensor& x, std::size_t height, std::size_t width) {
  const auto& in = node_of(x);
  if (in.shape.size() != 3) throw DimensionError("fit2d expects [c x h x w], got " + shape_string(in.shape));
  std::size_t C = in.shape[0], H = in.shape[1], W = in.shape[2];
  std::size_t h = std::min(H, height), w = std::min(W, width);
  std::vector<Real> out(C * height * width, Real{0});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t z = 0; z < w; ++z) out[(c * height + y) * width + z] = in.value[(c * H + y) * W + z];
    }
  }
  return make_result({C, height, width}, std::move(out), {x.node()}, [C, H, W, h, w, height, width](Node& self) {
    auto& p = *self.parents[0];
    Real* g = p.grad_buffer();
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t z = 0; z < w; ++z) g[(c * H + y) * W + z] += self.grad[(c * height + y) * width + z];
      }
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const auto& in = node_of(logits);
  if (in.shape.size() != 2 || in.shape[0] != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_string(in.shape) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  std::size_t B = in.shape[0], C = in.shape[1];
  auto probs = std::make_shared<std::vector<Real>>(B * C);
  auto saved_labels = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  Real loss = 0;
  for (std::size_t b = 0; b < B; ++b) {
    int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= C) {
      throw DimensionError("cross_entropy: label " + std::to_string(y) + " outside " + std::to_string(C) +
                           " classes");
    }
    const Real* row = in.value.data() + b * C;
    Real hi = *std::max_element(row, row + C);
    Real total = 0;
    for (std::size_t c = 0; c < C; ++c) total += std::exp(row[c] - hi);
    for (std::size_t c = 0; c < C; ++c) (*probs)[b * C + c] = std::exp(row[c] - hi) / total;
    loss -= row[static_cast<std::size_t>(y)] - hi - std::log(total);
  }
  loss /= static_cast<Real>(B);
  return make_result({}, {loss}, {logits.node()}, [B, C, probs, saved_labels](Node& self) {
    auto& p = *self.parents[0];
    Real* g = p.grad_buffer();
    Real scale = self.grad[0] / static_cast<Real>(B);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t c = 0; c < C; ++c) {
        Real target = static_cast<int>(c) == (*saved_labels)[b] ? Real{1} : Real{0};
        g[b * C + c] += scale * ((*probs)[b * C + c] - target);
      }
    }
  });
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  if (node_of(prediction).shape != node_of(target).shape) {
    throw DimensionError("mse_loss: shapes differ, " + pair_shapes(prediction.shape(), target.shape()));
  }
  Tensor diff = sub(prediction, target);
  return mean_all(mul(diff, diff));
}

Tensor dropout(const Tensor& x, Real rate, bool training, std::mt19937_64& rng) {
  if (!training || rate <= 0) return x;
  if (rate >= 1) throw std::invalid_argument("dropout rate must be below 1");
  std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
  std::vector<Real> mask(x.numel());
  Real scale = Real{1} / (Real{1} - rate);
  for (auto& m : mask) m = keep(rng) ? scale : Real{0};
  return mul(x, Tensor::from(x.shape(), std::move(mask)));
}

}  // namespace spm
