#pragma once

#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace spm {

/// Binary tree over token positions. A leaf holds a token index; an internal
/// node has exactly two children.
struct BinaryTree {
  std::size_t token = 0;
  std::unique_ptr<BinaryTree> left;
  std::unique_ptr<BinaryTree> right;

  static BinaryTree leaf(std::size_t token);
  static BinaryTree join(BinaryTree left, BinaryTree right);
  /// (t0 (t1 (t2 ...))) over n tokens.
  static BinaryTree right_branching(std::size_t n);

  bool is_leaf() const { return !left && !right; }
  std::size_t leaf_count() const;
  std::size_t depth() const;
  /// Token indices in left-to-right order.
  std::vector<std::size_t> leaves() const;
  BinaryTree clone() const;
};

/// Raised for malformed shift-reduce programs.
class ProgramError : public std::invalid_argument {
 public:
  ProgramError(const std::string& what, std::size_t instruction)
      : std::invalid_argument(what + " at instruction " + std::to_string(instruction)),
        instruction_(instruction) {}
  std::size_t instruction() const { return instruction_; }

 private:
  std::size_t instruction_;
};

enum class StackOp : unsigned char { shift, reduce, noop };

struct Instruction {
  StackOp op = StackOp::noop;
  std::size_t token = 0;  // for shift

  bool operator==(const Instruction&) const = default;
};

/// Post-order linearisation of a binary tree: SHIFT pushes a leaf, REDUCE
/// pops right then left and pushes their composition.
class ShiftReduceProgram {
 public:
  ShiftReduceProgram() = default;
  explicit ShiftReduceProgram(std::vector<Instruction> steps);

  static ShiftReduceProgram from_tree(const BinaryTree& tree);

  const std::vector<Instruction>& steps() const { return steps_; }
  std::size_t size() const { return steps_.size(); }
  std::size_t leaf_count() const;
  std::size_t reduce_count() const;

  /// Throws ProgramError unless #SHIFT = leaves, #REDUCE = leaves - 1, the
  /// stack never underflows and ends at depth one.
  void validate() const;

  /// Rebuilds the tree the program encodes.
  BinaryTree to_tree() const;

  /// Copy padded with no-ops to the given length.
  ShiftReduceProgram padded(std::size_t length) const;

  /// Per-step masks for batched execution: 1 where the step composes a node.
  std::vector<unsigned char> reduce_mask() const;

 private:
  std::vector<Instruction> steps_;
};

}  // namespace spm
