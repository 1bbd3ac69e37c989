#include "spm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace spm {

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::adagrad: return "adagrad";
    case OptimizerKind::sgd: return "sgd";
  }
  return "?";
}

OptimizerKind parse_optimizer(const std::string& s) {
  for (auto k : {OptimizerKind::adam, OptimizerKind::adagrad, OptimizerKind::sgd}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown optimizer '" + s + "' (adam, adagrad, sgd)");
}

Optimizer::Optimizer(std::vector<std::pair<std::string, Tensor>> parameters, OptimizerConfig config)
    : parameters_(std::move(parameters)), config_(config) {
  if (!(config_.lr > 0)) throw ConfigError("learning rate must be positive");
  for (const auto& [name, p] : parameters_) {
    double init = config_.kind == OptimizerKind::adagrad ? config_.adagrad_initial : 0.0;
    first_.emplace_back(config_.kind == OptimizerKind::adam ? p.numel() : 0, 0.0);
    second_.emplace_back(config_.kind == OptimizerKind::sgd ? 0 : p.numel(), init);
  }
}

void Optimizer::zero_grad() {
  for (auto& [name, p] : parameters_) p.zero_grad();
}

void Optimizer::step() {
  ++steps_;
  const double lr = config_.lr;
  const double b1 = config_.beta1, b2 = config_.beta2, eps = config_.epsilon;
  const double c1 = 1 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < parameters_.size(); ++k) {
    auto& p = parameters_[k].second;
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = first_[k];
    auto& v = second_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      double update = 0;
      switch (config_.kind) {
        case OptimizerKind::sgd:
          update = lr * gi;
          break;
        case OptimizerKind::adagrad:
          v[i] += gi * gi;
          update = lr * gi / (std::sqrt(v[i]) + eps);
          break;
        case OptimizerKind::adam:
          m[i] = b1 * m[i] + (1 - b1) * gi;
          v[i] = b2 * v[i] + (1 - b2) * gi * gi;
          update = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
          break;
      }
      w[i] = static_cast<Real>(static_cast<double>(w[i]) - update);
    }
  }
}

double sse_lr_schedule(double init_lr, std::size_t epoch) {
  return init_lr / std::pow(2.0, static_cast<double>(epoch) / 2.0);
}

ClipResult clip_by_global_norm(const std::vector<std::pair<std::string, Tensor>>& parameters, double threshold) {
  if (!(threshold > 0)) throw ConfigError("clipping threshold must be positive");
  double sum = 0;
  for (const auto& [name, p] : parameters) {
    if (!p.has_grad()) continue;
    for (Real g : p.grad()) {
      if (!std::isfinite(static_cast<double>(g))) throw DivergenceError("non-finite gradient in " + name);
      sum += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  ClipResult out{std::sqrt(sum), 1.0};
  if (out.norm <= threshold) return out;
  out.scale = threshold / out.norm;
  for (const auto& [name, p] : parameters) {
    if (!p.has_grad()) continue;
    for (Real& g : const_cast<Tensor&>(p).mutable_grad()) g = static_cast<Real>(static_cast<double>(g) * out.scale);
  }
  return out;
}

bool EarlyStopping::update(double metric) {
  ++epoch_;
  if (epoch_ == 1 || metric > best_) {
    best_ = metric;
    best_epoch_ = epoch_;
    stale_ = 0;
  } else {
    ++stale_;
  }
  return patience_ > 0 && stale_ >= patience_;
}

TrainConfig default_train_config(Architecture arch) {
  TrainConfig c;
  switch (arch) {
    case Architecture::infersent:
      c.optimizer = {OptimizerKind::sgd, 0.1};
      c.batch_size = 64;
      break;
    case Architecture::sse:
      c.optimizer = {OptimizerKind::sgd, 0.1};
      c.schedule = LrSchedule::halving;
      break;
    case Architecture::decatt:
      c.optimizer = {OptimizerKind::adagrad, 0.05};
      c.clip_norm = 5;
      break;
    case Architecture::esim_seq:
    case Architecture::esim_tree:
    case Architecture::esim_ensemble:
      c.optimizer = {OptimizerKind::adam, 1e-3};
      c.clip_norm = 10;
      break;
    case Architecture::pwim:
      c.optimizer = {OptimizerKind::adam, 1e-3};
      c.batch_size = 8;
      break;
  }
  return c;
}

std::string EpochRecord::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["train_loss"] = train_loss;
  j["dev_metric"] = dev_metric;
  j["lr"] = lr;
  j["seconds"] = seconds;
  return j.dump();
}

double mean_loss(PairModel& model, const std::vector<PairExample>& examples, const Vocabulary& vocab,
                 const SchemaInfo& info, std::size_t batch_size) {
  NoGradGuard guard;
  double total = 0;
  for (const auto& b : make_batches(examples, vocab, info, batch_size, BatchStrategy::sequential, 0,
                                    model.config().needs_trees())) {
    total += static_cast<double>(model.loss(b, false).item()) * static_cast<double>(b.size);
  }
  return examples.empty() ? 0 : total / static_cast<double>(examples.size());
}

namespace {

using Snapshot = std::vector<std::vector<Real>>;

Snapshot snapshot(const PairModel& model) {
  Snapshot s;
  for (const auto& [name, p] : model.named_parameters()) s.push_back(p.to_vector());
  return s;
}

void restore(PairModel& model, const Snapshot& s) {
  auto params = model.named_parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto dst = params[k].second.mutable_data();
    std::copy(s[k].begin(), s[k].end(), dst.begin());
  }
}

double dev_metric(PairModel& model, const Dataset& data, const Vocabulary& vocab, std::size_t batch_size) {
  try {
    return evaluate(model, data.schema, data.dev, vocab, false, batch_size).headline();
  } catch (const MetricError&) {
    return 0;  // e.g. constant regression output early in training
  }
}

}  // namespace

TrainRun train(PairModel& model, const Dataset& data, const Vocabulary& vocab, const TrainConfig& config) {
  if (data.train.empty()) throw DataError("no training examples");
  if (config.epochs == 0) throw ConfigError("epochs must be at least 1");
  const auto& info = schema_info(data.schema);
  const bool trees = model.config().needs_trees();
  const auto parameters = model.named_parameters();
  Optimizer optimizer(parameters, config.optimizer);
  EarlyStopping stopping(config.patience);
  std::ofstream log;
  if (!config.log_path.empty()) {
    log.open(config.log_path, std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write " + config.log_path.string());
  }
  TrainRun run;
  Snapshot best;
  const auto vocab_tokens = vocab.tokens();
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    auto start = std::chrono::steady_clock::now();
    double lr = config.schedule == LrSchedule::halving ? sse_lr_schedule(config.optimizer.lr, epoch - 1)
                                                       : config.optimizer.lr;
    optimizer.set_lr(lr);
    auto batches = make_batches(data.train, vocab, info, config.batch_size, config.strategy,
                                config.seed * 1000003 + epoch, trees);
    double total = 0;
    for (const auto& batch : batches) {
      optimizer.zero_grad();
      auto loss = model.loss(batch, true);
      double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        if (log) log.flush();
        throw DivergenceError("non-finite training loss in epoch " + std::to_string(epoch));
      }
      loss.backward();
      if (config.clip_norm > 0) clip_by_global_norm(parameters, config.clip_norm);
      optimizer.step();
      total += value * static_cast<double>(batch.size);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = total / static_cast<double>(data.train.size());
    rec.dev_metric = data.dev.empty() ? -rec.train_loss : dev_metric(model, data, vocab, config.batch_size);
    rec.lr = lr;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    run.epochs.push_back(rec);
    if (log) log << rec.to_json() << "\n" << std::flush;
    if (config.on_epoch) config.on_epoch(rec);
    bool stop = stopping.update(rec.dev_metric);
    if (stopping.improved()) {
      best = snapshot(model);
      if (!config.checkpoint_path.empty()) save_checkpoint(config.checkpoint_path.string(), model, vocab_tokens);
    }
    if (stop) {
      run.early_stopped = true;
      break;
    }
  }
  run.best_epoch = stopping.best_epoch();
  run.best_dev = stopping.best();
  if (config.restore_best && !best.empty()) restore(model, best);
  return run;
}

std::vector<CurvePoint> training_size_sweep(const ModelFactory& factory, const Dataset& data, const Vocabulary& vocab,
                                            const TrainConfig& config, std::vector<double> fractions) {
  if (fractions.empty()) throw ConfigError("no training fractions given");
  std::sort(fractions.begin(), fractions.end());
  std::vector<CurvePoint> out;
  for (double f : fractions) {
    Dataset subset = data;
    subset.train = training_subset(data.train, f, config.seed);
    if (!out.empty() && subset.train.size() == out.back().size) {
      throw ConfigError("fractions " + std::to_string(out.back().fraction) + " and " + std::to_string(f) +
                        " select the same " + std::to_string(subset.train.size()) + " examples");
    }
    TrainConfig c = config;
    c.log_path.clear();
    c.checkpoint_path.clear();
    auto model = factory();
    train(*model, subset, vocab, c);
    out.push_back({f, subset.train.size(), evaluate(*model, data.schema, data.test, vocab).headline()});
  }
  return out;
}

}  // namespace spm
