#pragma once

#include <span>
#include <string>
#include <vector>

#include "spm/parameters.hpp"
#include "spm/tensor.hpp"
#include "spm/tree.hpp"

namespace spm {

/// Gate weights of one LSTM direction, packed as (input, forget, candidate, output).
struct LstmParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  Tensor input_weight;      // [input x 4h]
  Tensor recurrent_weight;  // [h x 4h]
  Tensor bias;              // [4h], forget slice starts at 1

  static LstmParams create(ParameterStore& store, const std::string& name, std::size_t input_dim,
                           std::size_t hidden_dim);
  static std::size_t count(std::size_t input_dim, std::size_t hidden_dim) {
    return 4 * (input_dim * hidden_dim + hidden_dim * hidden_dim + hidden_dim);
  }
};

struct BiLstmParams {
  LstmParams forward;
  LstmParams backward;

  static BiLstmParams create(ParameterStore& store, const std::string& name, std::size_t input_dim,
                             std::size_t hidden_dim);
  std::size_t input_dim() const { return forward.input_dim; }
  std::size_t hidden_dim() const { return forward.hidden_dim; }
  static std::size_t count(std::size_t input_dim, std::size_t hidden_dim) {
    return 2 * LstmParams::count(input_dim, hidden_dim);
  }
};

struct BiLstmOutput {
  Tensor forward;   // [B x L x h]
  Tensor backward;  // [B x L x h]

  /// [B x L x 2h], forward state first.
  Tensor concat() const;
};

/// Runs one LSTM direction over seq [B x L x d] with mask [B x L]. At masked
/// steps the state passes through unchanged and the output is zero, so right
/// padding never changes the states of real tokens. `reverse` walks from the
/// last position to the first.
Tensor lstm(const Tensor& seq, const LstmParams& params, const Tensor& mask, bool reverse);

/// Bidirectional LSTM. Accepts [L x d] (mask [L]) as a batch of one.
BiLstmOutput bilstm(const Tensor& seq, const BiLstmParams& params, const Tensor& mask);

/// Shortcut-stacked BiLSTM: layer k reads [word; h^{k-1}; ...; h^1].
class ShortcutStack {
 public:
  static ShortcutStack create(ParameterStore& store, const std::string& name, std::size_t word_dim,
                              const std::vector<std::size_t>& hidden_dims);
  /// Wraps existing layers; throws DimensionError if layer k's input width is
  /// not word_dim + sum of 2 h_j over earlier layers.
  ShortcutStack(std::size_t word_dim, std::vector<BiLstmParams> layers);

  /// Hidden sequence of the last layer, [B x L x 2 h_m].
  Tensor operator()(const Tensor& seq, const Tensor& mask) const;

  const std::vector<BiLstmParams>& layers() const { return layers_; }
  static std::size_t layer_input_dim(std::size_t word_dim, const std::vector<std::size_t>& hidden_dims,
                                     std::size_t layer);
  static std::size_t count(std::size_t word_dim, const std::vector<std::size_t>& hidden_dims);

 private:
  std::size_t word_dim_ = 0;
  std::vector<BiLstmParams> layers_;
};

/// Binary constituency Tree-LSTM with one forget gate per child. Gates are
/// packed as (input, forget-left, forget-right, output, candidate).
struct TreeLstmParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  Tensor input_weight;  // [input x 5h]
  Tensor left_weight;   // [h x 5h]
  Tensor right_weight;  // [h x 5h]
  Tensor bias;          // [5h], forget slices start at 1

  static TreeLstmParams create(ParameterStore& store, const std::string& name, std::size_t input_dim,
                               std::size_t hidden_dim);
  static std::size_t count(std::size_t input_dim, std::size_t hidden_dim) {
    return 5 * (input_dim * hidden_dim + 2 * hidden_dim * hidden_dim + hidden_dim);
  }
};

/// Hidden and cell rows of k nodes, each [k x h].
struct TreeState {
  Tensor hidden;
  Tensor cell;
};

/// Raised when a node does not have exactly zero or two children.
class TreeShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Composes k nodes at once. Leaves pass no children; internal nodes pass
/// both. `input` [k x input_dim] is optional for internal nodes.
TreeState tree_lstm_node(const TreeLstmParams& params, const TreeState* left, const TreeState* right,
                         const Tensor* input);

struct TreeRun {
  TreeState root;     // [1 x h]
  Tensor node_hidden; // [nodes x h] in creation order, root last
};

/// Executes several programs in lock step (shorter ones padded with no-ops).
/// leaf_inputs[p] is [leaves_p x input_dim]; every REDUCE of one step is
/// composed in a single batched call.
std::vector<TreeRun> run_shift_reduce(const TreeLstmParams& params, std::span<const ShiftReduceProgram> programs,
                                      std::span<const Tensor> leaf_inputs);

}  // namespace spm
