#pragma once

#include <functional>
#include <optional>

#include "spm/tensor.hpp"

namespace spm {

/// Soft alignment between two sentences. Unbatched shapes shown; a leading
/// batch axis is carried through when the inputs have one.
struct AlignmentMatrix {
  Tensor e;      // [m x n] unnormalised scores
  Tensor beta;   // [m x d] part of b aligned to each a token
  Tensor alpha;  // [n x d] part of a aligned to each b token
};

/// Maps token vectors to the space where scores are dot products.
using AlignmentScorer = std::function<Tensor(const Tensor&)>;

/// e_ij = F(a_i).F(b_j); beta_i = sum_j softmax_j(e_i.) b_j and
/// alpha_j = sum_i softmax_i(e_.j) a_i, both over unmasked positions only.
/// With no scorer the vectors are scored directly. Masks are [m] / [n]
/// (or [B x m] / [B x n]); absent means every position is live. Throws
/// DegenerateMaskError when a sentence is fully masked.
AlignmentMatrix soft_align(const Tensor& a_vecs, const Tensor& b_vecs, const AlignmentScorer& scorer = {},
                           const std::optional<Tensor>& a_mask = std::nullopt,
                           const std::optional<Tensor>& b_mask = std::nullopt);

inline constexpr std::size_t kInteractionChannels = 13;
/// Channel holding the cosine of concatenated states; drives hard attention.
inline constexpr std::size_t kConcatCosineChannel = 6;
inline constexpr Real kHardAttentionWeight = 10;

/// Channels 0-11 are, for the forward, backward, concatenated and summed
/// states in that order, the triple (cosine, -euclidean, dot). Channel 12 is
/// a plane of ones.
struct InteractionTensor {
  Tensor D;             // [13 x m x n]
  Tensor hard_weights;  // [m x n], entries 1 or 10

  std::size_t rows() const { return D.dim(1); }
  std::size_t cols() const { return D.dim(2); }
  /// D with every channel scaled by hard_weights.
  Tensor weighted() const;
};

/// States are [m x h] for sentence a and [n x h] for sentence b. Weights
/// start at all ones.
InteractionTensor build_interaction_tensor(const Tensor& fwd_a, const Tensor& bwd_a, const Tensor& fwd_b,
                                           const Tensor& bwd_b);

/// Greedy one-to-one alignment: cells are visited by decreasing
/// concatenated-state cosine (ties by lowest row, then column) and a cell is
/// accepted when its row and column are both still free. Accepted cells get
/// weight 10. Weights are constants; no gradient flows through selection.
InteractionTensor hard_attention(const InteractionTensor& t);

/// The accepted cells of hard_attention as (row, column) pairs in acceptance order.
std::vector<std::pair<std::size_t, std::size_t>> greedy_alignment(const Tensor& scores);

}  // namespace spm
