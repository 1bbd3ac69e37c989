#pragma once

#include <cstdint>
#include <vector>

#include "spm/tensor.hpp"
#include "spm/tree.hpp"

namespace spm {

/// A padded group of sentence pairs as token indices. Index 0 is padding.
struct Batch {
  std::size_t size = 0;
  std::size_t len_a = 0;
  std::size_t len_b = 0;
  std::vector<std::int64_t> ids_a;  // [size x len_a], row-major
  std::vector<std::int64_t> ids_b;  // [size x len_b]
  std::vector<std::size_t> lengths_a;
  std::vector<std::size_t> lengths_b;
  Tensor mask_a;  // [size x len_a], 1 iff position < length
  Tensor mask_b;
  std::vector<int> labels;    // class index or relevance bit
  std::vector<Real> targets;  // regression scores
  std::vector<ShiftReduceProgram> programs_a;  // empty when no trees
  std::vector<ShiftReduceProgram> programs_b;
  std::vector<std::size_t> indices;  // positions in the source example list

  bool has_trees() const { return !programs_a.empty(); }

  /// Pads the given token sequences. Every sequence must be non-empty.
  static Batch assemble(const std::vector<std::vector<std::int64_t>>& a,
                        const std::vector<std::vector<std::int64_t>>& b, std::vector<int> labels = {},
                        std::vector<Real> targets = {}, std::vector<ShiftReduceProgram> programs_a = {},
                        std::vector<ShiftReduceProgram> programs_b = {});

  /// The single pair at position i, unpadded.
  Batch example(std::size_t i) const;
};

}  // namespace spm
