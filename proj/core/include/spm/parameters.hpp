#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "spm/tensor.hpp"

namespace spm {

/// Named, ordered collection of trainable tensors.
///
/// Registration order is preserved and defines the checkpoint layout.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}

  /// Uniform(-bound, bound).
  Tensor add_uniform(const std::string& name, Shape shape, Real bound);
  /// Glorot-uniform for a [fan_in x fan_out] matrix.
  Tensor add_glorot(const std::string& name, std::size_t fan_in, std::size_t fan_out);
  Tensor add_constant(const std::string& name, Shape shape, Real value);
  /// Registers an existing leaf (e.g. a sub-model's parameter) under a new name.
  Tensor adopt(const std::string& name, Tensor tensor);

  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t count() const;

  void zero_grad();
  std::mt19937_64& rng() { return rng_; }

 private:
  Tensor add(const std::string& name, Tensor tensor);

  std::vector<std::pair<std::string, Tensor>> items_;
  std::map<std::string, std::size_t> index_;
  std::mt19937_64 rng_;
};

/// Affine map x W + b over the last axis.
struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out], undefined when bias-free
  std::size_t in = 0;
  std::size_t out = 0;

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                       bool with_bias = true);
  Tensor operator()(const Tensor& x) const;
  std::size_t count() const { return in * out + (bias.defined() ? out : 0); }
};

enum class Activation { none, relu, tanh };

Tensor activate(Activation act, const Tensor& x);

/// Stack of Linear layers, each followed by an activation.
struct FeedForward {
  std::vector<Linear> layers;
  Activation activation = Activation::relu;

  static FeedForward create(ParameterStore& store, const std::string& name, std::size_t in,
                            const std::vector<std::size_t>& widths, Activation activation);
  Tensor operator()(const Tensor& x) const;
  std::size_t out() const { return layers.empty() ? 0 : layers.back().out; }
  std::size_t count() const;
};

}  // namespace spm
