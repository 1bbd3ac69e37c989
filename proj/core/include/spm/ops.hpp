#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "spm/tensor.hpp"

namespace spm {

// Broadcasting: shapes are right-aligned; a dimension broadcasts when it is 1
// or missing. Anything else raises DimensionError naming both shapes.

enum class UnaryOp { tanh, sigmoid, relu, exp, neg, abs, log, sqrt };
enum class BinaryOp { add, sub, mul, div };
enum class ReduceOp { max, mean, sum };

Tensor unary(UnaryOp op, const Tensor& x);
Tensor binary(BinaryOp op, const Tensor& a, const Tensor& b);

inline Tensor tanh(const Tensor& x) { return unary(UnaryOp::tanh, x); }
inline Tensor sigmoid(const Tensor& x) { return unary(UnaryOp::sigmoid, x); }
inline Tensor relu(const Tensor& x) { return unary(UnaryOp::relu, x); }
inline Tensor exp(const Tensor& x) { return unary(UnaryOp::exp, x); }
inline Tensor neg(const Tensor& x) { return unary(UnaryOp::neg, x); }
inline Tensor abs(const Tensor& x) { return unary(UnaryOp::abs, x); }
inline Tensor log(const Tensor& x) { return unary(UnaryOp::log, x); }
inline Tensor sqrt(const Tensor& x) { return unary(UnaryOp::sqrt, x); }

inline Tensor add(const Tensor& a, const Tensor& b) { return binary(BinaryOp::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return binary(BinaryOp::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return binary(BinaryOp::mul, a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return binary(BinaryOp::div, a, b); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }

/// x * factor + offset with constant scalars.
Tensor affine(const Tensor& x, Real factor, Real offset = 0);

/// Matrix product. Supported ranks: (2,2), batched (3,3), and (3,2) where the
/// right operand is shared across the batch.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Reduction along one axis; the axis is removed unless keepdim.
/// max routes the gradient to the lowest-index maximum.
Tensor reduce(ReduceOp op, const Tensor& x, std::size_t axis, bool keepdim = false);

/// Reduction over entries whose mask is nonzero. The mask broadcasts to x.
Tensor masked_reduce(ReduceOp op, const Tensor& x, const Tensor& mask, std::size_t axis,
                     bool keepdim = false);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

/// Max-stabilised softmax along axis. Masked entries (mask == 0) come out as
/// exactly zero; a slice with no unmasked entry raises DegenerateMaskError.
Tensor softmax(const Tensor& x, std::size_t axis, const std::optional<Tensor>& mask = std::nullopt);
Tensor log_softmax(const Tensor& x, std::size_t axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, std::size_t axis0, std::size_t axis1);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor stack(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
/// Slice of width one with the axis removed.
Tensor select(const Tensor& x, std::size_t axis, std::size_t index);
/// Rows of a rank-2 tensor, in the given order (repeats allowed).
Tensor gather_rows(const Tensor& x, std::span<const std::int64_t> rows);

/// Pairwise similarity planes between the rows of a [m x d] and b [n x d].
/// Output [3 x m x n]: cosine, negated Euclidean distance, dot product.
/// Cosine against a zero row is 0; distance gradient at coincident rows is 0.
Tensor pairwise_similarity(const Tensor& a, const Tensor& b);

struct SimilarityTriple {
  Tensor cosine;
  Tensor neg_euclidean;
  Tensor dot;
};
/// Similarity of two vectors of length d, each channel a scalar tensor.
SimilarityTriple similarity_triple(const Tensor& u, const Tensor& v);

/// Cross-correlation of x [c x h x w] with kernels [o x c x kh x kw] plus a
/// per-output bias [o].
Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::size_t stride = 1,
              std::size_t padding = 0);
Tensor maxpool2d(const Tensor& x, std::size_t window, std::size_t stride);
/// Crops or zero-pads the two spatial axes of [c x h x w] to [c x height x width].
Tensor fit2d(const Tensor& x, std::size_t height, std::size_t width);

/// Mean negative log-likelihood of integer labels under logits [b x c].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
Tensor mse_loss(const Tensor& prediction, const Tensor& target);

/// Inverted dropout; identity when rate == 0 or training is false.
Tensor dropout(const Tensor& x, Real rate, bool training, std::mt19937_64& rng);

}  // namespace spm
