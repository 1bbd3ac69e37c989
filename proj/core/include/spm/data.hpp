#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spm/batch.hpp"
#include "spm/errors.hpp"
#include "spm/models.hpp"
#include "spm/tree.hpp"

namespace spm {

enum class Schema { snli, multinli, quora, twitter_url, pit2015, sts2014, wikiqa, trecqa };

std::string to_string(Schema s);
Schema parse_schema(const std::string& s);  // throws ConfigError

enum class Metric { accuracy, f1, pearson, map_mrr };

/// What a schema's labels mean and how it is scored.
struct SchemaInfo {
  TaskHead head;
  std::size_t num_classes;  // 1 for regression
  Metric metric;
  bool lowercase;       // whitespace tokens are lowercased (tweets)
  bool grouped;         // fifth column is a question id
  bool genre;           // fifth column is a genre tag
  std::vector<std::string> class_names;  // label strings in class-index order, empty for scores
};

const SchemaInfo& schema_info(Schema s);

struct PairExample {
  std::string id;
  std::vector<std::string> tokens_a;
  std::vector<std::string> tokens_b;
  int label = -1;      // class index or relevance bit
  double score = 0;    // regression target in [0, 5]
  std::string group;   // question id (ranking) or genre (multinli)
  std::optional<ShiftReduceProgram> tree_a;
  std::optional<ShiftReduceProgram> tree_b;

  bool operator==(const PairExample& o) const {
    return id == o.id && tokens_a == o.tokens_a && tokens_b == o.tokens_b && label == o.label && score == o.score &&
           group == o.group;
  }
};

struct LoadOptions {
  std::uint64_t seed = 0;
  double dev_fraction = 0.1;     // carved from train when dev.tsv is absent
  std::optional<bool> lowercase; // overrides the schema default
  std::size_t answer_limit = 40; // WikiQA answer truncation
};

struct Dataset {
  Schema schema = Schema::snli;
  std::vector<PairExample> train, dev, test;
  bool dev_carved = false;
  bool has_trees = false;
  std::size_t tree_fallbacks = 0;  // pairs whose trees did not match their tokens
  std::vector<std::string> warnings;
};

/// Reads <dir>/{train,dev,test}.tsv in the layout
///   id \t sentence_a \t sentence_b \t label [\t group]
/// with space-separated tokens. Tree sidecars <split>.trees_a/.trees_b are
/// picked up when present. Throws DataError with file and line on bad rows.
Dataset load_dataset(const std::filesystem::path& dir, Schema schema, const LoadOptions& options = {});

/// One split file; warnings (e.g. an empty file) are appended to `warnings`.
std::vector<PairExample> load_split(const std::filesystem::path& file, Schema schema, const LoadOptions& options,
                                    std::vector<std::string>& warnings);

/// Inverse of load_split for the label columns (trees are not written).
void write_split(const std::filesystem::path& file, Schema schema, const std::vector<PairExample>& examples);

/// Parses one bracketed constituency tree; unary chains are collapsed and
/// wider nodes right-binarised. `leaves` receives the tokens in order.
BinaryTree parse_bracketed(const std::string& text, std::vector<std::string>& leaves);

/// Reads one tree per line. Throws DataError naming the line on bad brackets.
std::vector<std::pair<BinaryTree, std::vector<std::string>>> ingest_trees(const std::filesystem::path& file);

class Vocabulary {
 public:
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kUnknown = 1;

  Vocabulary();
  explicit Vocabulary(std::vector<std::string> tokens);  // must start with <pad>, <unk>

  /// Every token of the examples in first-appearance order.
  static Vocabulary build(const std::vector<const std::vector<PairExample>*>& splits);

  std::int64_t add(const std::string& token);
  std::int64_t index(const std::string& token) const;  // kUnknown if absent
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::vector<std::int64_t> encode(const std::vector<std::string>& tokens) const;

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::int64_t> index_;
};

struct EmbeddingStats {
  std::size_t found = 0;  // vocabulary entries read from the file
  std::size_t drawn = 0;  // entries given random vectors
};

/// [vocab x dim] matrix. Rows come from the text file `token v1 .. v_dim`
/// when the token is in the vocabulary; every other row except padding is
/// drawn from normal(0, 1) in index order with the given seed. An empty path
/// draws every row. Throws DataError on a line of the wrong width.
Tensor load_embeddings(const std::filesystem::path& path, std::size_t dim, const Vocabulary& vocab,
                       std::uint64_t seed, EmbeddingStats* stats = nullptr);

/// Keeps the first base.dim(0) rows and fills the rest as load_embeddings does.
Tensor extend_embeddings(const Tensor& base, const std::filesystem::path& path, const Vocabulary& vocab,
                         std::uint64_t seed);

enum class BatchStrategy {
  bucketed,    // similar lengths together, batch order shuffled
  uniform,     // global shuffle
  sequential,  // file order, for evaluation
};

/// Partitions the examples into padded batches. Every example appears once.
std::vector<Batch> make_batches(const std::vector<PairExample>& examples, const Vocabulary& vocab,
                                const SchemaInfo& info, std::size_t batch_size, BatchStrategy strategy,
                                std::uint64_t seed, bool with_trees = false);

enum class OverlapMode { jaccard, shorter };

struct PairStats {
  double overlap = 0;
  std::size_t length = 0;  // tokens in the longer sentence
  std::string overlap_bucket;
  std::string length_bucket;
};

PairStats overlap_and_length_stats(const PairExample& example, OverlapMode mode = OverlapMode::jaccard);

inline const std::vector<std::string>& overlap_buckets() {
  static const std::vector<std::string> b{"<30%", "30%~60%", ">60%"};
  return b;
}
inline const std::vector<std::string>& length_buckets() {
  static const std::vector<std::string> b{"<10", "10~20", ">20"};
  return b;
}

/// Seeded nested subsets: the first round(f * n) entries of one fixed
/// permutation, so smaller fractions are contained in larger ones.
std::vector<PairExample> training_subset(const std::vector<PairExample>& train, double fraction, std::uint64_t seed);

}  // namespace spm
