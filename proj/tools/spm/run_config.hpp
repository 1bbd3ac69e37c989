#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "spm/data.hpp"
#include "spm/models.hpp"
#include "spm/training.hpp"

namespace spm::cli {

/// Experiment description read from a JSON file:
///
///   { "seed": 1,
///     "model":    { "architecture": "esim_seq", "preset": "toy", ... },
///     "data":     { "dir": "data/url", "schema": "twitter_url", "embeddings": "glove.txt" },
///     "training": { "optimizer": "adam", "lr": 0.001, "batch_size": 32, "epochs": 20, ... },
///     "output":   { "run_dir": "url-esim" } }
///
/// The model head and class count follow the schema unless given. Training
/// fields default per architecture. Relative paths are resolved against the
/// config file's directory; run_dir against the run root.
struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  Schema schema = Schema::snli;
  std::filesystem::path data_dir;
  std::filesystem::path embeddings;  // empty: every vector is drawn
  std::optional<bool> lowercase;
  double dev_fraction = 0.1;
  TrainConfig training;
  std::filesystem::path run_dir;

  std::string to_json() const;
  /// FNV-1a 64 of to_json().
  std::string digest() const;
};

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& file);

/// $SPM_RUN_ROOT, or ./runs.
std::filesystem::path run_root();

}  // namespace spm::cli
