#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "spm/batch.hpp"
#include "spm/encoders.hpp"
#include "spm/errors.hpp"
#include "spm/interaction.hpp"
#include "spm/parameters.hpp"

namespace spm {

enum class Architecture { infersent, sse, decatt, esim_seq, esim_tree, esim_ensemble, pwim };
enum class TaskHead { classification, regression, ranking };

std::string to_string(Architecture a);
std::string to_string(TaskHead h);
Architecture parse_architecture(const std::string& s);  // throws ConfigError
TaskHead parse_head(const std::string& s);

/// Largest regression score; predictions are max_score * sigmoid(z).
inline constexpr Real kMaxScore = 5;

struct ModelConfig {
  Architecture architecture = Architecture::esim_seq;
  TaskHead head = TaskHead::classification;
  std::size_t embedding_dim = 300;
  std::size_t num_classes = 3;
  double dropout = 0;

  std::size_t hidden = 300;                                 // BiLSTM width (InferSent, ESIM, PWIM)
  std::vector<std::size_t> stack{512, 1024, 2048};          // SSE layer widths
  std::vector<std::size_t> mlp{300};                        // classifier hidden widths (DecAtt: H)
  Activation mlp_activation = Activation::tanh;

  // DecAtt
  std::size_t projection = 200;  // 0 feeds embeddings straight to F
  std::size_t ffn_width = 200;
  std::size_t ffn_depth = 2;

  // PWIM
  std::size_t crop = 32;
  std::vector<std::size_t> conv_channels{128, 164, 192, 192, 128};
  bool hard_attention = true;

  /// Width of the final layer: 1 for regression, 2 for ranking, else num_classes.
  std::size_t outputs() const;
  bool needs_trees() const {
    return architecture == Architecture::esim_tree || architecture == Architecture::esim_ensemble;
  }
  /// Throws ConfigError naming the offending field.
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  /// FNV-1a 64 of the canonical JSON, as 16 hex digits.
  std::string digest() const;
};

enum class PresetSize { appendix_b, toy };

/// Dimensions for an architecture: the published settings, or a tiny
/// configuration for gradient checks and smoke tests.
ModelConfig preset(Architecture a, PresetSize size, TaskHead head = TaskHead::classification,
                   std::size_t num_classes = 3);

/// Model output for a batch.
struct PairPrediction {
  Tensor logits;         // [B x C]; [B x 1] pre-sigmoid for regression
  Tensor probabilities;  // [B x C], undefined for regression
  std::vector<Real> scores;  // regression score, or P(relevant) for ranking
  std::vector<int> predicted;  // argmax class (classification, ranking)
};

/// Alignment artifacts for a single pair.
struct SoftInspection {
  Tensor weights_to_b;  // [m x n] row-normalised attention of a over b
  AlignmentMatrix alignment;
};
using Inspection = std::variant<SoftInspection, InteractionTensor>;

class NoAlignmentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class PairModel {
 public:
  PairModel(ModelConfig config, Tensor embedding, std::uint64_t seed);
  virtual ~PairModel() = default;
  PairModel(const PairModel&) = delete;
  PairModel& operator=(const PairModel&) = delete;

  /// Head input for the batch: class logits, or regression pre-activation.
  virtual Tensor forward(const Batch& batch, bool training) = 0;
  /// Training loss (mean over the batch).
  virtual Tensor loss(const Batch& batch, bool training);
  /// Evaluation-mode prediction, no graph recorded.
  virtual PairPrediction predict(const Batch& batch);
  /// Alignment artifacts of one pair; throws NoAlignmentError for encoders.
  virtual Inspection inspect(const Batch& single);

  /// Trainable tensors in registration order; the embedding is not among them.
  virtual std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::size_t parameter_count() const;

  const ModelConfig& config() const { return config_; }
  const Tensor& embedding() const { return embedding_; }
  ParameterStore& store() { return store_; }

 protected:
  /// [B x L x d] embedding lookup of padded ids.
  Tensor embed(const std::vector<std::int64_t>& ids, std::size_t batch, std::size_t length) const;
  /// Dropout, hidden MLP and output layer.
  Tensor classify(const Tensor& features, bool training);
  void build_classifier(std::size_t feature_dim);
  Tensor head_loss(const Tensor& output, const Batch& batch) const;

  ModelConfig config_;
  Tensor embedding_;
  ParameterStore store_;
  FeedForward mlp_;
  Linear out_;
  std::mt19937_64 dropout_rng_;
};

/// Prediction from head output (logits or regression pre-activation).
PairPrediction head_prediction(const ModelConfig& config, const Tensor& output);

/// [u; v; |u - v|; u * v] along the last axis.
Tensor pair_features(const Tensor& u, const Tensor& v);

/// Builds the model named by config.architecture. The embedding [V x d] is
/// frozen; row 0 must be the padding vector.
std::unique_ptr<PairModel> make_model(const ModelConfig& config, Tensor embedding, std::uint64_t seed);

/// Averages the class probabilities (or regression scores) of two trained
/// models. Throws ConfigError when their heads disagree.
PairPrediction ensemble_prediction(const PairPrediction& first, const PairPrediction& second);

struct ParameterComponent {
  std::string name;
  std::size_t count = 0;
};

struct ParameterAudit {
  std::vector<ParameterComponent> components;
  std::size_t trainable = 0;
  std::size_t embedding = 0;  // frozen vocabulary x dim
  std::size_t inclusive() const { return trainable + embedding; }
};

/// Closed-form parameter counts per component; matches the instantiated
/// model exactly. Component names are the parameter-name prefixes.
ParameterAudit audit_parameters(const ModelConfig& config, std::size_t vocab_size);

/// Binary checkpoint: header, vocabulary, named tensors.
struct Checkpoint {
  ModelConfig config;
  std::vector<std::string> vocabulary;
  Tensor embedding;
  std::vector<std::pair<std::string, Tensor>> parameters;
};

void save_checkpoint(const std::string& path, const PairModel& model, const std::vector<std::string>& vocabulary);
Checkpoint read_checkpoint(const std::string& path);
/// Rebuilds the model and copies every tensor, checking each shape.
std::unique_ptr<PairModel> load_model(const Checkpoint& checkpoint);

}  // namespace spm
