#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "spm/data.hpp"
#include "spm/evaluation.hpp"
#include "spm/models.hpp"

namespace spm {

/// Non-finite loss or gradient.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OptimizerKind { adam, adagrad, sgd };

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);  // throws ConfigError

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double adagrad_initial = 0.1;  // starting accumulator value
};

/// First-order update rules over a fixed parameter list, with one moment
/// buffer set per parameter.
class Optimizer {
 public:
  Optimizer(std::vector<std::pair<std::string, Tensor>> parameters, OptimizerConfig config);

  /// Applies the accumulated gradients; parameters without a gradient are skipped.
  void step();
  void zero_grad();

  double lr() const { return config_.lr; }
  void set_lr(double lr) { config_.lr = lr; }
  std::uint64_t steps() const { return steps_; }
  const OptimizerConfig& config() const { return config_; }

 private:
  std::vector<std::pair<std::string, Tensor>> parameters_;
  OptimizerConfig config_;
  std::vector<std::vector<double>> first_, second_;
  std::uint64_t steps_ = 0;
};

/// init_lr / 2^(epoch / 2) with a real exponent.
double sse_lr_schedule(double init_lr, std::size_t epoch);

struct ClipResult {
  double norm = 0;   // global norm before clipping
  double scale = 1;  // factor applied to every gradient
};

/// Scales all gradients by threshold / norm when the global L2 norm exceeds
/// the threshold. Throws DivergenceError naming the first non-finite gradient.
ClipResult clip_by_global_norm(const std::vector<std::pair<std::string, Tensor>>& parameters, double threshold);

enum class LrSchedule { constant, halving };  // halving = sse_lr_schedule

/// Stop after `patience` consecutive epochs without a strict improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}
  /// Records the metric of the next epoch; true when training should stop.
  bool update(double metric);
  std::size_t best_epoch() const { return best_epoch_; }  // 1-based, 0 before any update
  double best() const { return best_; }
  bool improved() const { return stale_ == 0; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0, best_epoch_ = 0, stale_ = 0;
  double best_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double dev_metric = 0;
  double lr = 0;
  double seconds = 0;

  std::string to_json() const;
};

struct TrainConfig {
  OptimizerConfig optimizer;
  LrSchedule schedule = LrSchedule::constant;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  std::size_t patience = 3;  // 0 disables early stopping
  double clip_norm = 0;      // 0 disables clipping
  std::uint64_t seed = 0;
  BatchStrategy strategy = BatchStrategy::bucketed;
  std::filesystem::path log_path;         // JSONL epoch log, optional
  std::filesystem::path checkpoint_path;  // best-dev checkpoint, optional
  bool restore_best = true;               // reload best-dev parameters at the end
  std::function<void(const EpochRecord&)> on_epoch;  // progress hook, optional
};

/// Architecture defaults: Adam for ESIM and PWIM, Adagrad with gradient
/// rescaling for DecAtt, SGD with the halving schedule for SSE, SGD for InferSent.
TrainConfig default_train_config(Architecture arch);

struct TrainRun {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_dev = 0;
  bool early_stopped = false;
};

/// Epoch loop: batches, loss, backward, optional clipping, optimizer step,
/// dev evaluation on the schema's headline metric (training loss negated
/// when there is no dev split). Throws DivergenceError on a non-finite loss
/// after flushing the log.
TrainRun train(PairModel& model, const Dataset& data, const Vocabulary& vocab, const TrainConfig& config);

/// Mean evaluation-mode loss of the model on the given examples.
double mean_loss(PairModel& model, const std::vector<PairExample>& examples, const Vocabulary& vocab,
                 const SchemaInfo& info, std::size_t batch_size = 32);

struct CurvePoint {
  double fraction = 0;
  std::size_t size = 0;
  double metric = 0;  // headline test metric
};

using ModelFactory = std::function<std::unique_ptr<PairModel>()>;

/// One training run per fraction on nested seeded subsets of train, ordered
/// by size; each fresh model comes from `factory`.
std::vector<CurvePoint> training_size_sweep(const ModelFactory& factory, const Dataset& data, const Vocabulary& vocab,
                                            const TrainConfig& config, std::vector<double> fractions);

}  // namespace spm
