#include "spm/encoders.hpp"

#include <algorithm>
#include <cmath>

#include "spm/ops.hpp"

namespace spm {

namespace {

Real recurrent_bound(std::size_t hidden) { return static_cast<Real>(1.0 / std::sqrt(static_cast<double>(hidden))); }

Tensor gate_bias(ParameterStore& store, const std::string& name, std::size_t gates, std::size_t hidden,
                 std::initializer_list<std::size_t> forget_slots) {
  Tensor b = store.add_constant(name, {gates * hidden}, 0);
  auto values = b.mutable_data();
  for (auto slot : forget_slots) {
    std::fill(values.begin() + static_cast<std::ptrdiff_t>(slot * hidden),
              values.begin() + static_cast<std::ptrdiff_t>((slot + 1) * hidden), Real{1});
  }
  return b;
}

// Column t of a [B x L] mask as a [B x 1] constant; `all_on` reports a full column.
Tensor mask_column(const Tensor& mask, std::size_t t, bool& all_on) {
  std::size_t B = mask.dim(0), L = mask.dim(1);
  std::vector<Real> col(B);
  auto data = mask.data();
  all_on = true;
  for (std::size_t b = 0; b < B; ++b) {
    col[b] = data[b * L + t] != 0 ? Real{1} : Real{0};
    all_on = all_on && col[b] != 0;
  }
  return Tensor::from({B, 1}, std::move(col));
}

}  // namespace

LstmParams LstmParams::create(ParameterStore& store, const std::string& name, std::size_t input_dim,
                              std::size_t hidden_dim) {
  LstmParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  Real bound = recurrent_bound(hidden_dim);
  p.input_weight = store.add_uniform(name + ".input_weight", {input_dim, 4 * hidden_dim}, bound);
  p.recurrent_weight = store.add_uniform(name + ".recurrent_weight", {hidden_dim, 4 * hidden_dim}, bound);
  p.bias = gate_bias(store, name + ".bias", 4, hidden_dim, {1});
  return p;
}

BiLstmParams BiLstmParams::create(ParameterStore& store, const std::string& name, std::size_t input_dim,
                                  std::size_t hidden_dim) {
  return {LstmParams::create(store, name + ".fwd", input_dim, hidden_dim),
          LstmParams::create(store, name + ".bwd", input_dim, hidden_dim)};
}

Tensor BiLstmOutput::concat() const {
  std::vector<Tensor> parts{forward, backward};
  return spm::concat(parts, forward.rank() - 1);
}

Tensor lstm(const Tensor& seq, const LstmParams& params, const Tensor& mask, bool reverse) {
  if (seq.rank() != 3 || seq.dim(2) != params.input_dim) {
    throw DimensionError("lstm: input " + shape_string(seq.shape()) + " does not match input_dim " +
                         std::to_string(params.input_dim));
  }
  std::size_t B = seq.dim(0), L = seq.dim(1), h = params.hidden_dim;
  if (mask.shape() != Shape{B, L}) {
    throw DimensionError("lstm: mask " + shape_string(mask.shape()) + " does not match input " +
                         shape_string(seq.shape()));
  }
  if (L == 0) throw DimensionError("lstm: empty sequence");
  Tensor projected = add(matmul(seq, params.input_weight), params.bias);  // [B x L x 4h]
  Tensor hidden = Tensor::zeros({B, h});
  Tensor cell = Tensor::zeros({B, h});
  std::vector<Tensor> outputs(L);
  for (std::size_t step = 0; step < L; ++step) {
    std::size_t t = reverse ? L - 1 - step : step;
    Tensor gates = add(select(projected, 1, t), matmul(hidden, params.recurrent_weight));
    Tensor in_gate = sigmoid(slice(gates, 1, 0, h));
    Tensor forget_gate = sigmoid(slice(gates, 1, h, 2 * h));
    Tensor candidate = tanh(slice(gates, 1, 2 * h, 3 * h));
    Tensor out_gate = sigmoid(slice(gates, 1, 3 * h, 4 * h));
    Tensor new_cell = add(mul(forget_gate, cell), mul(in_gate, candidate));
    Tensor new_hidden = mul(out_gate, tanh(new_cell));
    bool all_on = false;
    Tensor m = mask_column(mask, t, all_on);
    if (all_on) {
      cell = new_cell;
      hidden = new_hidden;
      outputs[t] = new_hidden;
    } else {
      cell = add(cell, mul(m, sub(new_cell, cell)));
      hidden = add(hidden, mul(m, sub(new_hidden, hidden)));
      outputs[t] = mul(m, new_hidden);
    }
  }
  return stack(outputs, 1);
}

BiLstmOutput bilstm(const Tensor& seq, const BiLstmParams& params, const Tensor& mask) {
  if (seq.rank() == 2) {
    std::size_t L = seq.dim(0), d = seq.dim(1);
    if (mask.shape() != Shape{L}) {
      throw DimensionError("bilstm: mask " + shape_string(mask.shape()) + " does not match " +
                           shape_string(seq.shape()));
    }
    auto out = bilstm(reshape(seq, {1, L, d}), params, reshape(mask, {1, L}));
    return {reshape(out.forward, {L, params.hidden_dim()}), reshape(out.backward, {L, params.hidden_dim()})};
  }
  return {lstm(seq, params.forward, mask, false), lstm(seq, params.backward, mask, true)};
}

std::size_t ShortcutStack::layer_input_dim(std::size_t word_dim, const std::vector<std::size_t>& hidden_dims,
                                           std::size_t layer) {
  std::size_t width = word_dim;
  for (std::size_t j = 0; j < layer; ++j) width += 2 * hidden_dims[j];
  return width;
}

std::size_t ShortcutStack::count(std::size_t word_dim, const std::vector<std::size_t>& hidden_dims) {
  std::size_t total = 0;
  for (std::size_t k = 0; k < hidden_dims.size(); ++k) {
    total += BiLstmParams::count(layer_input_dim(word_dim, hidden_dims, k), hidden_dims[k]);
  }
  return total;
}

ShortcutStack ShortcutStack::create(ParameterStore& store, const std::string& name, std::size_t word_dim,
                                    const std::vector<std::size_t>& hidden_dims) {
  std::vector<BiLstmParams> layers;
  for (std::size_t k = 0; k < hidden_dims.size(); ++k) {
    layers.push_back(BiLstmParams::create(store, name + "." + std::to_string(k),
                                          layer_input_dim(word_dim, hidden_dims, k), hidden_dims[k]));
  }
  return ShortcutStack(word_dim, std::move(layers));
}

ShortcutStack::ShortcutStack(std::size_t word_dim, std::vector<BiLstmParams> layers)
    : word_dim_(word_dim), layers_(std::move(layers)) {
  if (layers_.empty()) throw DimensionError("shortcut stack needs at least one layer");
  std::size_t expected = word_dim_;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    if (layers_[k].input_dim() != expected || layers_[k].backward.input_dim != expected) {
      throw DimensionError("shortcut stack layer " + std::to_string(k) + " reads " +
                           std::to_string(layers_[k].input_dim()) + " features, expected " +
                           std::to_string(expected));
    }
    expected += 2 * layers_[k].hidden_dim();
  }
}

Tensor ShortcutStack::operator()(const Tensor& seq, const Tensor& mask) const {
  std::size_t axis = seq.rank() - 1;
  std::vector<Tensor> previous;  // most recent layer first
  Tensor out;
  for (const auto& layer : layers_) {
    std::vector<Tensor> parts{seq};
    parts.insert(parts.end(), previous.begin(), previous.end());
    Tensor input = parts.size() == 1 ? seq : concat(parts, axis);
    out = bilstm(input, layer, mask).concat();
    previous.insert(previous.begin(), out);
  }
  return out;
}

TreeLstmParams TreeLstmParams::create(ParameterStore& store, const std::string& name, std::size_t input_dim,
                                      std::size_t hidden_dim) {
  TreeLstmParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  Real bound = recurrent_bound(hidden_dim);
  p.input_weight = store.add_uniform(name + ".input_weight", {input_dim, 5 * hidden_dim}, bound);
  p.left_weight = store.add_uniform(name + ".left_weight", {hidden_dim, 5 * hidden_dim}, bound);
  p.right_weight = store.add_uniform(name + ".right_weight", {hidden_dim, 5 * hidden_dim}, bound);
  p.bias = gate_bias(store, name + ".bias", 5, hidden_dim, {1, 2});
  return p;
}

TreeState tree_lstm_node(const TreeLstmParams& params, const TreeState* left, const TreeState* right,
                         const Tensor* input) {
  if ((left == nullptr) != (right == nullptr)) {
    throw TreeShapeError("tree_lstm_node: a node needs zero or two children");
  }
  bool leaf = left == nullptr;
  if (leaf && input == nullptr) throw TreeShapeError("tree_lstm_node: a leaf needs an input vector");
  std::size_t h = params.hidden_dim;
  Tensor z;
  if (input) {
    if (input->rank() != 2 || input->dim(1) != params.input_dim) {
      throw DimensionError("tree_lstm_node: input " + shape_string(input->shape()) +
                           " does not match input_dim " + std::to_string(params.input_dim));
    }
    z = matmul(*input, params.input_weight);
  }
  if (!leaf) {
    if (left->hidden.shape() != right->hidden.shape() || left->hidden.rank() != 2 || left->hidden.dim(1) != h) {
      throw DimensionError("tree_lstm_node: child states " + shape_string(left->hidden.shape()) + " and " +
                           shape_string(right->hidden.shape()) + " do not match hidden " + std::to_string(h));
    }
    Tensor children = add(matmul(left->hidden, params.left_weight), matmul(right->hidden, params.right_weight));
    z = z.defined() ? add(z, children) : children;
  }
  z = add(z, params.bias);
  Tensor in_gate = sigmoid(slice(z, 1, 0, h));
  Tensor candidate = tanh(slice(z, 1, 4 * h, 5 * h));
  Tensor out_gate = sigmoid(slice(z, 1, 3 * h, 4 * h));
  Tensor cell = mul(in_gate, candidate);
  if (!leaf) {
    Tensor forget_left = sigmoid(slice(z, 1, h, 2 * h));
    Tensor forget_right = sigmoid(slice(z, 1, 2 * h, 3 * h));
    cell = add(cell, add(mul(forget_left, left->cell), mul(forget_right, right->cell)));
  }
  return {mul(out_gate, tanh(cell)), cell};
}

namespace {

struct StateRef {
  std::size_t block;
  std::size_t row;
};

Tensor gather_refs(const std::vector<TreeState>& blocks, const std::vector<StateRef>& refs, bool hidden) {
  std::vector<Tensor> rows;
  rows.reserve(refs.size());
  for (const auto& r : refs) {
    const Tensor& src = hidden ? blocks[r.block].hidden : blocks[r.block].cell;
    rows.push_back(slice(src, 0, r.row, r.row + 1));
  }
  return rows.size() == 1 ? rows[0] : concat(rows, 0);
}

}  // namespace

std::vector<TreeRun> run_shift_reduce(const TreeLstmParams& params, std::span<const ShiftReduceProgram> programs,
                                      std::span<const Tensor> leaf_inputs) {
  if (programs.size() != leaf_inputs.size()) {
    throw DimensionError("run_shift_reduce: " + std::to_string(programs.size()) + " programs but " +
                         std::to_string(leaf_inputs.size()) + " leaf inputs");
  }
  std::size_t P = programs.size();
  if (P == 0) return {};
  std::vector<std::size_t> offsets(P);
  std::size_t total_leaves = 0;
  std::size_t longest = 0;
  for (std::size_t p = 0; p < P; ++p) {
    programs[p].validate();
    std::size_t leaves = programs[p].leaf_count();
    if (leaf_inputs[p].rank() != 2 || leaf_inputs[p].dim(0) != leaves) {
      throw ProgramError("program " + std::to_string(p) + " shifts " + std::to_string(leaves) +
                             " leaves but " + shape_string(leaf_inputs[p].shape()) + " inputs were given",
                         0);
    }
    for (const auto& s : programs[p].steps()) {
      if (s.op == StackOp::shift && s.token >= leaves) {
        throw ProgramError("shift of token " + std::to_string(s.token) + " beyond " + std::to_string(leaves) +
                               " leaves",
                           0);
      }
    }
    offsets[p] = total_leaves;
    total_leaves += leaves;
    longest = std::max(longest, programs[p].size());
  }

  // All leaves in one batched call.
  Tensor all_inputs = P == 1 ? leaf_inputs[0] : concat(leaf_inputs, 0);
  std::vector<TreeState> blocks;
  blocks.push_back(tree_lstm_node(params, nullptr, nullptr, &all_inputs));

  std::vector<std::vector<StateRef>> stacks(P);
  std::vector<std::vector<StateRef>> created(P);
  for (std::size_t t = 0; t < longest; ++t) {
    std::vector<StateRef> lefts, rights;
    std::vector<std::size_t> reducing;
    for (std::size_t p = 0; p < P; ++p) {
      const auto& steps = programs[p].steps();
      if (t >= steps.size()) continue;  // implicit no-op padding
      const auto& s = steps[t];
      if (s.op == StackOp::shift) {
        StateRef ref{0, offsets[p] + s.token};
        stacks[p].push_back(ref);
        created[p].push_back(ref);
      } else if (s.op == StackOp::reduce) {
        rights.push_back(stacks[p].back());
        stacks[p].pop_back();
        lefts.push_back(stacks[p].back());
        stacks[p].pop_back();
        reducing.push_back(p);
      }
    }
    if (reducing.empty()) continue;
    TreeState left{gather_refs(blocks, lefts, true), gather_refs(blocks, lefts, false)};
    TreeState right{gather_refs(blocks, rights, true), gather_refs(blocks, rights, false)};
    blocks.push_back(tree_lstm_node(params, &left, &right, nullptr));
    std::size_t block = blocks.size() - 1;
    for (std::size_t k = 0; k < reducing.size(); ++k) {
      StateRef ref{block, k};
      stacks[reducing[k]].push_back(ref);
      created[reducing[k]].push_back(ref);
    }
  }

  std::vector<TreeRun> runs(P);
  for (std::size_t p = 0; p < P; ++p) {
    const StateRef root = stacks[p].back();
    runs[p].root = {slice(blocks[root.block].hidden, 0, root.row, root.row + 1),
                    slice(blocks[root.block].cell, 0, root.row, root.row + 1)};
    runs[p].node_hidden = gather_refs(blocks, created[p], true);
  }
  return runs;
}

}  // namespace spm
