#include "spm/interaction.hpp"

#include <algorithm>
#include <numeric>

#include "spm/ops.hpp"

namespace spm {

namespace {

// Mask [.. x k] -> broadcastable over scores along the given trailing axis.
Tensor mask_for(const Tensor& mask, bool batched, bool over_rows) {
  if (!batched) return over_rows ? reshape(mask, {mask.dim(0), 1}) : reshape(mask, {1, mask.dim(0)});
  return over_rows ? reshape(mask, {mask.dim(0), mask.dim(1), 1}) : reshape(mask, {mask.dim(0), 1, mask.dim(1)});
}

void check_mask(const std::optional<Tensor>& mask, const Tensor& vecs, const char* which) {
  if (!mask) return;
  Shape expect(vecs.shape().begin(), vecs.shape().end() - 1);
  if (mask->shape() != expect) {
    throw DimensionError(std::string("soft_align: ") + which + " mask " + shape_string(mask->shape()) +
                         " does not match vectors " + shape_string(vecs.shape()));
  }
}

}  // namespace

AlignmentMatrix soft_align(const Tensor& a_vecs, const Tensor& b_vecs, const AlignmentScorer& scorer,
                           const std::optional<Tensor>& a_mask, const std::optional<Tensor>& b_mask) {
  std::size_t r = a_vecs.rank();
  if ((r != 2 && r != 3) || b_vecs.rank() != r || a_vecs.dim(r - 1) != b_vecs.dim(r - 1) ||
      (r == 3 && a_vecs.dim(0) != b_vecs.dim(0))) {
    throw DimensionError("soft_align: incompatible sentences " + shape_string(a_vecs.shape()) + " and " +
                         shape_string(b_vecs.shape()));
  }
  check_mask(a_mask, a_vecs, "a");
  check_mask(b_mask, b_vecs, "b");
  bool batched = r == 3;
  Tensor fa = scorer ? scorer(a_vecs) : a_vecs;
  Tensor fb = scorer ? scorer(b_vecs) : b_vecs;
  std::size_t last = r - 1;
  Tensor e = matmul(fa, transpose(fb, last - 1, last));

  std::optional<Tensor> over_b, over_a;
  if (b_mask) over_b = mask_for(*b_mask, batched, false);
  if (a_mask) over_a = mask_for(*a_mask, batched, true);
  Tensor to_b = softmax(e, last, over_b);       // rows sum to one over b
  Tensor to_a = softmax(e, last - 1, over_a);   // columns sum to one over a
  Tensor beta = matmul(to_b, b_vecs);
  Tensor alpha = matmul(transpose(to_a, last - 1, last), a_vecs);
  return {e, beta, alpha};
}

Tensor InteractionTensor::weighted() const {
  return mul(D, reshape(hard_weights, {1, rows(), cols()}));
}

InteractionTensor build_interaction_tensor(const Tensor& fwd_a, const Tensor& bwd_a, const Tensor& fwd_b,
                                           const Tensor& bwd_b) {
  for (const Tensor* t : {&fwd_a, &bwd_a, &fwd_b, &bwd_b}) {
    if (t->rank() != 2) throw DimensionError("build_interaction_tensor: states must be [len x h]");
  }
  if (fwd_a.shape() != bwd_a.shape() || fwd_b.shape() != bwd_b.shape() || fwd_a.dim(1) != fwd_b.dim(1)) {
    throw DimensionError("build_interaction_tensor: state shapes " + shape_string(fwd_a.shape()) + ", " +
                         shape_string(bwd_a.shape()) + ", " + shape_string(fwd_b.shape()) + ", " +
                         shape_string(bwd_b.shape()) + " are inconsistent");
  }
  std::size_t m = fwd_a.dim(0), n = fwd_b.dim(0);
  std::vector<Tensor> cat_a{fwd_a, bwd_a}, cat_b{fwd_b, bwd_b};
  std::vector<Tensor> planes{
      pairwise_similarity(fwd_a, fwd_b),
      pairwise_similarity(bwd_a, bwd_b),
      pairwise_similarity(concat(cat_a, 1), concat(cat_b, 1)),
      pairwise_similarity(add(fwd_a, bwd_a), add(fwd_b, bwd_b)),
      Tensor::full({1, m, n}, 1),
  };
  return {concat(planes, 0), Tensor::full({m, n}, 1)};
}

std::vector<std::pair<std::size_t, std::size_t>> greedy_alignment(const Tensor& scores) {
  if (scores.rank() != 2) throw DimensionError("greedy_alignment: scores must be [m x n]");
  std::size_t m = scores.dim(0), n = scores.dim(1);
  auto v = scores.data();
  std::vector<std::size_t> order(m * n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // stable sort keeps row-major order among equal scores
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return v[x] > v[y]; });
  std::vector<bool> row_used(m), col_used(n);
  std::vector<std::pair<std::size_t, std::size_t>> picked;
  for (std::size_t cell : order) {
    std::size_t i = cell / n, j = cell % n;
    if (row_used[i] || col_used[j]) continue;
    row_used[i] = col_used[j] = true;
    picked.emplace_back(i, j);
    if (picked.size() == std::min(m, n)) break;
  }
  return picked;
}

InteractionTensor hard_attention(const InteractionTensor& t) {
  std::size_t m = t.rows(), n = t.cols();
  Tensor scores;
  {
    NoGradGuard guard;
    scores = select(t.D, 0, kConcatCosineChannel);
  }
  std::vector<Real> w(m * n, Real{1});
  for (auto [i, j] : greedy_alignment(scores)) w[i * n + j] = kHardAttentionWeight;
  return {t.D, Tensor::from({m, n}, std::move(w))};
}

}  // namespace spm
