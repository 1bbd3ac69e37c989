#pragma once

// Recursive Tree-LSTM in plain loops, plus a random bracketing generator.

#include <cmath>
#include <random>
#include <vector>

#include "spm/encoders.hpp"

namespace spm::testing {

struct PlainState {
  std::vector<double> hidden;
  std::vector<double> cell;
};

inline PlainState recursive_tree_lstm(const TreeLstmParams& p, const BinaryTree& node, const Tensor& leaves) {
  std::size_t h = p.hidden_dim, d = p.input_dim, G = 5 * h;
  auto W = p.input_weight.data();
  auto Ul = p.left_weight.data();
  auto Ur = p.right_weight.data();
  auto b = p.bias.data();
  std::vector<double> z(b.begin(), b.end());
  PlainState l, r;
  if (node.is_leaf()) {
    auto x = leaves.data();
    for (std::size_t g = 0; g < G; ++g) {
      for (std::size_t k = 0; k < d; ++k) z[g] += x[node.token * d + k] * W[k * G + g];
    }
  } else {
    l = recursive_tree_lstm(p, *node.left, leaves);
    r = recursive_tree_lstm(p, *node.right, leaves);
    for (std::size_t g = 0; g < G; ++g) {
      for (std::size_t k = 0; k < h; ++k) z[g] += l.hidden[k] * Ul[k * G + g] + r.hidden[k] * Ur[k * G + g];
    }
  }
  auto sg = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  PlainState s{std::vector<double>(h), std::vector<double>(h)};
  for (std::size_t j = 0; j < h; ++j) {
    double c = sg(z[j]) * std::tanh(z[4 * h + j]);
    if (!node.is_leaf()) c += sg(z[h + j]) * l.cell[j] + sg(z[2 * h + j]) * r.cell[j];
    s.cell[j] = c;
    s.hidden[j] = sg(z[3 * h + j]) * std::tanh(c);
  }
  return s;
}

namespace detail {
inline BinaryTree random_span(std::size_t lo, std::size_t hi, std::mt19937_64& rng) {
  if (hi - lo == 1) return BinaryTree::leaf(lo);
  std::uniform_int_distribution<std::size_t> split(lo + 1, hi - 1);
  std::size_t mid = split(rng);
  return BinaryTree::join(random_span(lo, mid, rng), random_span(mid, hi, rng));
}
}  // namespace detail

inline BinaryTree random_tree(std::size_t leaves, std::mt19937_64& rng) {
  return detail::random_span(0, leaves, rng);
}

}  // namespace spm::testing
