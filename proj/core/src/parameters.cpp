#include "spm/parameters.hpp"

#include <cmath>
#include <stdexcept>

#include "spm/ops.hpp"

namespace spm {

Tensor ParameterStore::add(const std::string& name, Tensor tensor) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  tensor.set_requires_grad(true);
  index_[name] = items_.size();
  items_.emplace_back(name, tensor);
  return tensor;
}

Tensor ParameterStore::add_uniform(const std::string& name, Shape shape, Real bound) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
  std::vector<Real> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<Real>(dist(rng_));
  return add(name, Tensor::from(std::move(shape), std::move(values)));
}

Tensor ParameterStore::add_glorot(const std::string& name, std::size_t fan_in, std::size_t fan_out) {
  Real bound = static_cast<Real>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
  return add_uniform(name, {fan_in, fan_out}, bound);
}

Tensor ParameterStore::add_constant(const std::string& name, Shape shape, Real value) {
  return add(name, Tensor::full(std::move(shape), value));
}

Tensor ParameterStore::adopt(const std::string& name, Tensor tensor) { return add(name, std::move(tensor)); }

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return items_[it->second].second;
}

std::size_t ParameterStore::count() const {
  std::size_t total = 0;
  for (const auto& [name, t] : items_) total += t.numel();
  return total;
}

void ParameterStore::zero_grad() {
  for (auto& [name, t] : items_) t.zero_grad();
}

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                      bool with_bias) {
  Linear l;
  l.in = in;
  l.out = out;
  l.weight = store.add_glorot(name + ".weight", in, out);
  if (with_bias) l.bias = store.add_constant(name + ".bias", {out}, 0);
  return l;
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y;
  if (x.rank() == 1) {
    y = reshape(matmul(reshape(x, {1, x.dim(0)}), weight), {out});
  } else {
    y = matmul(x, weight);
  }
  return bias.defined() ? add(y, bias) : y;
}

Tensor activate(Activation act, const Tensor& x) {
  switch (act) {
    case Activation::relu:
      return relu(x);
    case Activation::tanh:
      return tanh(x);
    case Activation::none:
      return x;
  }
  return x;
}

FeedForward FeedForward::create(ParameterStore& store, const std::string& name, std::size_t in,
                                const std::vector<std::size_t>& widths, Activation activation) {
  FeedForward ff;
  ff.activation = activation;
  std::size_t width = in;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    ff.layers.push_back(Linear::create(store, name + "." + std::to_string(i), width, widths[i]));
    width = widths[i];
  }
  return ff;
}

Tensor FeedForward::operator()(const Tensor& x) const {
  Tensor h = x;
  for (const auto& layer : layers) h = activate(activation, layer(h));
  return h;
}

std::size_t FeedForward::count() const {
  std::size_t total = 0;
  for (const auto& l : layers) total += l.count();
  return total;
}

}  // namespace spm
