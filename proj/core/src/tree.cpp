#include "spm/tree.hpp"

#include <algorithm>

namespace spm {

BinaryTree BinaryTree::leaf(std::size_t token) {
  BinaryTree t;
  t.token = token;
  return t;
}

BinaryTree BinaryTree::join(BinaryTree left, BinaryTree right) {
  BinaryTree t;
  t.left = std::make_unique<BinaryTree>(std::move(left));
  t.right = std::make_unique<BinaryTree>(std::move(right));
  return t;
}

BinaryTree BinaryTree::right_branching(std::size_t n) {
  if (n == 0) throw std::invalid_argument("right_branching needs at least one leaf");
  BinaryTree tree = leaf(n - 1);
  for (std::size_t i = n - 1; i-- > 0;) tree = join(leaf(i), std::move(tree));
  return tree;
}

std::size_t BinaryTree::leaf_count() const {
  if (is_leaf()) return 1;
  return left->leaf_count() + right->leaf_count();
}

std::size_t BinaryTree::depth() const {
  if (is_leaf()) return 1;
  return 1 + std::max(left->depth(), right->depth());
}

std::vector<std::size_t> BinaryTree::leaves() const {
  std::vector<std::size_t> out;
  std::vector<const BinaryTree*> pending{this};
  while (!pending.empty()) {
    const auto* n = pending.back();
    pending.pop_back();
    if (n->is_leaf()) {
      out.push_back(n->token);
    } else {
      pending.push_back(n->right.get());
      pending.push_back(n->left.get());
    }
  }
  return out;
}

BinaryTree BinaryTree::clone() const {
  if (is_leaf()) return leaf(token);
  return join(left->clone(), right->clone());
}

ShiftReduceProgram::ShiftReduceProgram(std::vector<Instruction> steps) : steps_(std::move(steps)) {}

namespace {
void emit(const BinaryTree& node, std::vector<Instruction>& out) {
  if (node.is_leaf()) {
    out.push_back({StackOp::shift, node.token});
    return;
  }
  emit(*node.left, out);
  emit(*node.right, out);
  out.push_back({StackOp::reduce, 0});
}
}  // namespace

ShiftReduceProgram ShiftReduceProgram::from_tree(const BinaryTree& tree) {
  std::vector<Instruction> steps;
  emit(tree, steps);
  return ShiftReduceProgram(std::move(steps));
}

std::size_t ShiftReduceProgram::leaf_count() const {
  return static_cast<std::size_t>(
      std::count_if(steps_.begin(), steps_.end(), [](auto& s) { return s.op == StackOp::shift; }));
}

std::size_t ShiftReduceProgram::reduce_count() const {
  return static_cast<std::size_t>(
      std::count_if(steps_.begin(), steps_.end(), [](auto& s) { return s.op == StackOp::reduce; }));
}

void ShiftReduceProgram::validate() const {
  std::size_t depth = 0;
  std::size_t leaves = 0;
  for (std::size_t i = 0; i < steps_.size(); ++i) {
    switch (steps_[i].op) {
      case StackOp::shift:
        ++depth;
        ++leaves;
        break;
      case StackOp::reduce:
        if (depth < 2) throw ProgramError("stack underflow", i);
        --depth;
        break;
      case StackOp::noop:
        break;
    }
  }
  if (leaves == 0) throw ProgramError("program has no leaves", 0);
  if (depth != 1) throw ProgramError("final stack depth " + std::to_string(depth) + " != 1", steps_.size());
}

BinaryTree ShiftReduceProgram::to_tree() const {
  validate();
  std::vector<BinaryTree> stack;
  for (const auto& s : steps_) {
    if (s.op == StackOp::shift) {
      stack.push_back(BinaryTree::leaf(s.token));
    } else if (s.op == StackOp::reduce) {
      BinaryTree right = std::move(stack.back());
      stack.pop_back();
      BinaryTree left = std::move(stack.back());
      stack.pop_back();
      stack.push_back(BinaryTree::join(std::move(left), std::move(right)));
    }
  }
  return std::move(stack.back());
}

ShiftReduceProgram ShiftReduceProgram::padded(std::size_t length) const {
  auto steps = steps_;
  if (steps.size() < length) steps.resize(length, Instruction{StackOp::noop, 0});
  return ShiftReduceProgram(std::move(steps));
}

std::vector<unsigned char> ShiftReduceProgram::reduce_mask() const {
  std::vector<unsigned char> mask(steps_.size());
  for (std::size_t i = 0; i < steps_.size(); ++i) mask[i] = steps_[i].op == StackOp::reduce ? 1 : 0;
  return mask;
}

}  // namespace spm
