#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "spm/data.hpp"
#include "spm/models.hpp"

namespace spm {

/// Raised when a metric is undefined for its input (e.g. constant vectors).
class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

double accuracy(const std::vector<int>& predicted, const std::vector<int>& gold);

/// F1 of the `positive` class; zero when precision or recall has no support.
double f1_positive(const std::vector<int>& predicted, const std::vector<int>& gold, int positive = 1);

double pearson_r(const std::vector<double>& x, const std::vector<double>& y);

struct RankedCandidate {
  std::string group;
  double score = 0;
  bool relevant = false;
};

struct MapMrr {
  double map = 0;
  double mrr = 0;
  std::size_t groups = 0;  // groups with at least one relevant candidate
};

/// Candidates are ranked within their group by descending score; ties keep
/// input order. Groups without a relevant candidate are skipped.
MapMrr map_mrr(const std::vector<RankedCandidate>& candidates);

/// Model outputs for a list of examples, in example order.
struct Predictions {
  std::vector<int> classes;     // argmax class; empty for regression
  std::vector<double> scores;   // regression score or P(class 1)
};

Predictions predict_examples(PairModel& model, const std::vector<PairExample>& examples, const Vocabulary& vocab,
                             const SchemaInfo& info, std::size_t batch_size = 32);

struct CategoryRow {
  std::string category;
  std::size_t count = 0;
  double value = 0;  // accuracy
};

struct CategoryTable {
  std::string name;  // genre, overlap, length
  std::vector<CategoryRow> rows;
};

struct MetricReport {
  std::string task;
  std::size_t count = 0;
  std::vector<std::pair<std::string, double>> metrics;  // headline first
  std::vector<CategoryTable> categories;

  double headline() const { return metrics.at(0).second; }
  double get(const std::string& name) const;
  /// `key = value` lines, category rows as `category.<table>.<name> = value (n=count)`.
  std::string to_text() const;
  /// `section,category,count,metric,value` rows.
  std::string to_csv() const;
};

/// Metric(s) of the schema: accuracy, F1 (with accuracy), Pearson's r on
/// scores clipped to [0, 5], or MAP and MRR.
MetricReport score_predictions(Schema schema, const std::vector<PairExample>& examples, const Predictions& predictions);

/// Accuracy per genre (when examples carry one), overlap bucket and length bucket.
std::vector<CategoryTable> categorical_tables(const std::vector<int>& predicted, const std::vector<PairExample>& examples,
                                              OverlapMode mode = OverlapMode::jaccard);

/// Evaluation of a model on examples; `categorical` appends the breakdowns.
MetricReport evaluate(PairModel& model, Schema schema, const std::vector<PairExample>& examples,
                      const Vocabulary& vocab, bool categorical = false, std::size_t batch_size = 32);

struct LoadedModel {
  std::unique_ptr<PairModel> model;
  Vocabulary vocab;
};

/// Rebuilds a checkpoint whose vocabulary is extended by every token of the
/// given examples; new rows come from `embedding_path` (or are drawn) with `seed`.
LoadedModel load_for_examples(const Checkpoint& checkpoint,
                              const std::vector<const std::vector<PairExample>*>& examples,
                              const std::filesystem::path& embedding_path, std::uint64_t seed);

struct TransferTarget {
  std::string name;
  Schema schema;
  std::vector<PairExample> test;
};

/// Applies a trained checkpoint to other corpora without retraining. The
/// vocabulary becomes the union of the checkpoint's and the targets'; new
/// rows come from `embedding_path` (or are drawn) with `seed`. Throws
/// ConfigError when a target's label space differs from the checkpoint head.
std::vector<MetricReport> transfer_eval(const Checkpoint& checkpoint, const std::vector<TransferTarget>& targets,
                                        const std::filesystem::path& embedding_path, std::uint64_t seed);

}  // namespace spm
