#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "run_config.hpp"
#include "spm/evaluation.hpp"
#include "spm/training.hpp"

namespace spm::cli {

/// Dataset, vocabulary over all splits and embedding matrix of a run.
struct Prepared {
  Dataset data;
  Vocabulary vocab;
  Tensor embedding;
};

/// Checks every referenced path, then loads. Throws before any training.
Prepared prepare(const RunConfig& config);

/// Trains into config.run_dir: config.json, epochs.jsonl, best.ckpt,
/// test_report.txt and test_report.csv. A failure leaves FAILED with the reason.
MetricReport cmd_train(const RunConfig& config, std::ostream& out);

struct EvalOptions {
  Schema schema = Schema::snli;
  std::string split = "test";
  bool categorical = false;
  std::filesystem::path embeddings;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;  // report.txt and report.csv when set
};

MetricReport cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                      const EvalOptions& options, std::ostream& out);

struct TransferSpec {
  std::string name;
  Schema schema;
  std::filesystem::path dir;
};

/// Parses NAME=SCHEMA:DIR.
TransferSpec parse_transfer_spec(const std::string& text);

std::vector<MetricReport> cmd_transfer(const std::filesystem::path& checkpoint, const std::vector<TransferSpec>& targets,
                                       const std::filesystem::path& embeddings, std::uint64_t seed,
                                       const std::filesystem::path& out_csv, std::ostream& out);

/// `component,parameters` rows, then trainable, embedding and inclusive totals.
ParameterAudit cmd_params(const ModelConfig& config, std::size_t vocab_size, std::ostream& out);

/// Writes alignment.csv and scores.csv (soft attention), or interaction.csv
/// with one section per channel plus hard_attention.csv (PWIM). Trees for
/// tree encoders default to right-branching.
void cmd_inspect_align(const std::filesystem::path& checkpoint, const std::string& sentence_a,
                       const std::string& sentence_b, const std::filesystem::path& out_dir, std::ostream& out,
                       const std::string& tree_a = {}, const std::string& tree_b = {});

/// `fraction,size,metric` rows into <run_dir>/curve.csv and `out`.
std::vector<CurvePoint> cmd_curve(const RunConfig& config, const std::vector<double>& fractions, std::ostream& out);

/// Parses arguments and dispatches; returns the process exit code:
/// 0 success, 1 configuration error, 2 data error, 3 runtime failure.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace spm::cli
