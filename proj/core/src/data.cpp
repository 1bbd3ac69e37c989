#include "spm/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace spm {

namespace fs = std::filesystem;

namespace {

const std::map<Schema, std::string> kSchemaNames{
    {Schema::snli, "snli"},       {Schema::multinli, "multinli"}, {Schema::quora, "quora"},
    {Schema::twitter_url, "twitter_url"}, {Schema::pit2015, "pit2015"}, {Schema::sts2014, "sts2014"},
    {Schema::wikiqa, "wikiqa"},   {Schema::trecqa, "trecqa"},
};

const std::vector<std::string> kNli{"entailment", "neutral", "contradiction"};
const std::vector<std::string> kBinary{"0", "1"};

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    cols.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return cols;
}

std::vector<std::string> tokenize(const std::string& text, bool lowercase) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    if (lowercase) {
      std::transform(tok.begin(), tok.end(), tok.begin(), [](unsigned char c) { return std::tolower(c); });
    }
    out.push_back(tok);
  }
  return out;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string s;
  for (const auto& t : tokens) s += (s.empty() ? "" : " ") + t;
  return s;
}

[[noreturn]] void fail(const fs::path& file, std::size_t line, const std::string& what) {
  throw DataError(file.string() + ":" + std::to_string(line) + ": " + what);
}

int parse_label(const std::string& text, const SchemaInfo& info, const fs::path& file, std::size_t line) {
  for (std::size_t i = 0; i < info.class_names.size(); ++i) {
    if (text == info.class_names[i]) return static_cast<int>(i);
  }
  // NLI files may carry the class index instead of its name
  int value = -1;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec == std::errc() && p == text.data() + text.size() && value >= 0 &&
      static_cast<std::size_t>(value) < info.class_names.size()) {
    return value;
  }
  fail(file, line, "unknown label '" + text + "'");
}

double parse_score(const std::string& text, const fs::path& file, std::size_t line) {
  double v = 0;
  try {
    std::size_t used = 0;
    v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
  } catch (const std::exception&) {
    fail(file, line, "score '" + text + "' is not a number");
  }
  if (!(v >= 0 && v <= kMaxScore)) fail(file, line, "score " + text + " outside [0, 5]");
  return v;
}

// Ranking datasets keep only questions with at least one correct answer.
void drop_unanswered(std::vector<PairExample>& examples) {
  std::set<std::string> answered;
  for (const auto& e : examples) {
    if (e.label == 1) answered.insert(e.group);
  }
  std::erase_if(examples, [&](const PairExample& e) { return !answered.count(e.group); });
}

void attach_trees(Dataset& d, std::vector<PairExample>& split, const fs::path& dir, const std::string& name) {
  fs::path ta = dir / (name + ".trees_a"), tb = dir / (name + ".trees_b");
  if (!fs::exists(ta) || !fs::exists(tb)) return;
  auto trees_a = ingest_trees(ta);
  auto trees_b = ingest_trees(tb);
  if (trees_a.size() != split.size() || trees_b.size() != split.size()) {
    throw DataError(ta.string() + ": " + std::to_string(trees_a.size()) + "/" + std::to_string(trees_b.size()) +
                    " trees for " + std::to_string(split.size()) + " pairs");
  }
  auto program = [&](std::pair<BinaryTree, std::vector<std::string>>& t, const std::vector<std::string>& tokens,
                     bool lowercase) {
    auto leaves = t.second;
    if (lowercase) {
      for (auto& l : leaves) std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return std::tolower(c); });
    }
    if (leaves != tokens) {
      ++d.tree_fallbacks;
      return ShiftReduceProgram::from_tree(BinaryTree::right_branching(tokens.size()));
    }
    return ShiftReduceProgram::from_tree(t.first);
  };
  bool lower = schema_info(d.schema).lowercase;
  for (std::size_t i = 0; i < split.size(); ++i) {
    split[i].tree_a = program(trees_a[i], split[i].tokens_a, lower);
    split[i].tree_b = program(trees_b[i], split[i].tokens_b, lower);
  }
}

}  // namespace

std::string to_string(Schema s) { return kSchemaNames.at(s); }

Schema parse_schema(const std::string& s) {
  for (const auto& [k, v] : kSchemaNames) {
    if (v == s) return k;
  }
  throw ConfigError("unknown dataset schema '" + s + "'");
}

const SchemaInfo& schema_info(Schema s) {
  static const std::map<Schema, SchemaInfo> info{
      {Schema::snli, {TaskHead::classification, 3, Metric::accuracy, false, false, false, kNli}},
      {Schema::multinli, {TaskHead::classification, 3, Metric::accuracy, false, false, true, kNli}},
      {Schema::quora, {TaskHead::classification, 2, Metric::accuracy, false, false, false, kBinary}},
      {Schema::twitter_url, {TaskHead::classification, 2, Metric::f1, true, false, false, kBinary}},
      {Schema::pit2015, {TaskHead::classification, 2, Metric::f1, true, false, false, kBinary}},
      {Schema::sts2014, {TaskHead::regression, 1, Metric::pearson, false, false, false, {}}},
      {Schema::wikiqa, {TaskHead::ranking, 2, Metric::map_mrr, false, true, false, kBinary}},
      {Schema::trecqa, {TaskHead::ranking, 2, Metric::map_mrr, false, true, false, kBinary}},
  };
  return info.at(s);
}

std::vector<PairExample> load_split(const fs::path& file, Schema schema, const LoadOptions& options,
                                    std::vector<std::string>& warnings) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open " + file.string());
  const auto& info = schema_info(schema);
  bool lower = options.lowercase.value_or(info.lowercase);
  std::vector<PairExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    std::size_t want = info.grouped ? 5 : 4;
    if (cols.size() != want && !(info.genre && cols.size() == 5)) {
      fail(file, lineno, "expected " + std::to_string(want) + " tab-separated columns, found " + std::to_string(cols.size()));
    }
    PairExample e;
    e.id = cols[0];
    e.tokens_a = tokenize(cols[1], lower);
    e.tokens_b = tokenize(cols[2], lower);
    if (e.tokens_a.empty() || e.tokens_b.empty()) fail(file, lineno, "empty sentence");
    if (info.head == TaskHead::regression) {
      e.score = parse_score(cols[3], file, lineno);
    } else {
      e.label = parse_label(cols[3], info, file, lineno);
    }
    if (cols.size() == 5) e.group = cols[4];
    if (info.grouped && e.group.empty()) fail(file, lineno, "ranking rows need a question id");
    out.push_back(std::move(e));
  }
  if (out.empty()) warnings.push_back(file.string() + " contains no examples");
  if (schema == Schema::wikiqa) {
    drop_unanswered(out);
    for (auto& e : out) {
      if (e.tokens_b.size() > options.answer_limit) e.tokens_b.resize(options.answer_limit);
    }
  }
  return out;
}

void write_split(const fs::path& file, Schema schema, const std::vector<PairExample>& examples) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write " + file.string());
  const auto& info = schema_info(schema);
  char buf[32];
  for (const auto& e : examples) {
    out << e.id << '\t' << join(e.tokens_a) << '\t' << join(e.tokens_b) << '\t';
    if (info.head == TaskHead::regression) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof buf, e.score);
      out << std::string(buf, p);
    } else {
      out << info.class_names.at(static_cast<std::size_t>(e.label));
    }
    if (info.grouped || (info.genre && !e.group.empty())) out << '\t' << e.group;
    out << '\n';
  }
}

Dataset load_dataset(const fs::path& dir, Schema schema, const LoadOptions& options) {
  if (!fs::is_directory(dir)) throw DataError("dataset directory " + dir.string() + " does not exist");
  Dataset d;
  d.schema = schema;
  for (const char* required : {"train.tsv", "test.tsv"}) {
    if (!fs::exists(dir / required)) throw DataError("missing " + (dir / required).string());
  }
  d.train = load_split(dir / "train.tsv", schema, options, d.warnings);
  d.test = load_split(dir / "test.tsv", schema, options, d.warnings);
  if (fs::exists(dir / "dev.tsv")) {
    d.dev = load_split(dir / "dev.tsv", schema, options, d.warnings);
    attach_trees(d, d.dev, dir, "dev");
  }
  attach_trees(d, d.train, dir, "train");
  attach_trees(d, d.test, dir, "test");
  d.has_trees = !d.train.empty() && d.train.front().tree_a.has_value() &&
                (d.test.empty() || d.test.front().tree_a.has_value());

  if (!fs::exists(dir / "dev.tsv")) {
    // seeded carve-out; ranking data moves whole questions
    d.dev_carved = true;
    std::vector<std::string> keys;
    for (const auto& e : d.train) keys.push_back(schema_info(schema).grouped ? e.group : e.id);
    std::vector<std::string> unique = keys;
    std::sort(unique.begin(), unique.end());
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
    std::mt19937_64 rng(options.seed);
    std::shuffle(unique.begin(), unique.end(), rng);
    auto take = static_cast<std::size_t>(std::llround(options.dev_fraction * static_cast<double>(unique.size())));
    if (take == 0 && unique.size() > 1) take = 1;
    std::set<std::string> held(unique.begin(), unique.begin() + static_cast<std::ptrdiff_t>(take));
    std::vector<PairExample> keep;
    for (std::size_t i = 0; i < d.train.size(); ++i) {
      (held.count(keys[i]) ? d.dev : keep).push_back(std::move(d.train[i]));
    }
    d.train = std::move(keep);
  }
  return d;
}

namespace {

struct TreeParser {
  const std::string& s;
  std::size_t pos = 0;
  std::vector<std::string>& leaves;

  void skip() {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  }
  std::string atom() {
    std::size_t start = pos;
    while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos])) && s[pos] != '(' && s[pos] != ')') ++pos;
    return s.substr(start, pos - start);
  }
  BinaryTree node() {
    skip();
    if (pos >= s.size()) throw std::invalid_argument("unexpected end of tree");
    if (s[pos] == ')') throw std::invalid_argument("unbalanced ')' at column " + std::to_string(pos + 1));
    if (s[pos] != '(') {
      leaves.push_back(atom());
      return BinaryTree::leaf(leaves.size() - 1);
    }
    ++pos;
    skip();
    if (pos < s.size() && s[pos] != '(') atom();  // constituent label
    std::vector<BinaryTree> kids;
    while (true) {
      skip();
      if (pos >= s.size()) throw std::invalid_argument("unbalanced '(': missing ')'");
      if (s[pos] == ')') {
        ++pos;
        break;
      }
      kids.push_back(node());
    }
    if (kids.empty()) throw std::invalid_argument("empty constituent at column " + std::to_string(pos));
    // right-binarise; a single child replaces its parent
    BinaryTree t = std::move(kids.back());
    for (std::size_t i = kids.size() - 1; i-- > 0;) t = BinaryTree::join(std::move(kids[i]), std::move(t));
    return t;
  }
};

}  // namespace

BinaryTree parse_bracketed(const std::string& text, std::vector<std::string>& leaves) {
  leaves.clear();
  TreeParser p{text, 0, leaves};
  BinaryTree t = p.node();
  p.skip();
  if (p.pos != text.size()) throw std::invalid_argument("trailing text after tree at column " + std::to_string(p.pos + 1));
  return t;
}

std::vector<std::pair<BinaryTree, std::vector<std::string>>> ingest_trees(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open " + file.string());
  std::vector<std::pair<BinaryTree, std::vector<std::string>>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> leaves;
    try {
      auto tree = parse_bracketed(line, leaves);
      out.emplace_back(std::move(tree), std::move(leaves));
    } catch (const std::invalid_argument& e) {
      fail(file, lineno, e.what());
    }
  }
  return out;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{"<pad>", "<unk>"}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  if (tokens.size() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>") {
    throw DataError("vocabulary must start with <pad> and <unk>");
  }
  for (const auto& t : tokens) add(t);
}

std::int64_t Vocabulary::add(const std::string& token) {
  auto [it, inserted] = index_.emplace(token, static_cast<std::int64_t>(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::int64_t Vocabulary::index(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnknown : it->second;
}

std::vector<std::int64_t> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<std::int64_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(index(t));
  return ids;
}

Vocabulary Vocabulary::build(const std::vector<const std::vector<PairExample>*>& splits) {
  Vocabulary v;
  for (const auto* split : splits) {
    for (const auto& e : *split) {
      for (const auto& t : e.tokens_a) v.add(t);
      for (const auto& t : e.tokens_b) v.add(t);
    }
  }
  return v;
}

namespace {

// Reads rows for vocabulary entries from start_row on; returns which rows were found.
std::vector<bool> read_vectors(const fs::path& path, std::size_t dim, const Vocabulary& vocab, std::size_t start_row,
                               std::vector<Real>& values) {
  std::vector<bool> found(vocab.size(), false);
  if (path.empty()) return found;
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embeddings " + path.string());
  std::string line;
  std::size_t lineno = 0;
  std::vector<Real> row(dim);
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string token;
    ss >> token;
    std::size_t n = 0;
    double v;
    while (ss >> v) {
      if (n < dim) row[n] = static_cast<Real>(v);
      ++n;
    }
    if (!ss.eof() || n != dim) {
      fail(path, lineno, "vector for '" + token + "' has " + std::to_string(n) + " values, expected " + std::to_string(dim));
    }
    if (!vocab.contains(token)) continue;
    auto idx = static_cast<std::size_t>(vocab.index(token));
    if (idx < start_row || idx == static_cast<std::size_t>(Vocabulary::kPad) || found[idx]) continue;
    found[idx] = true;
    std::copy(row.begin(), row.end(), values.begin() + static_cast<std::ptrdiff_t>(idx * dim));
  }
  return found;
}

void draw_missing(std::vector<Real>& values, std::size_t dim, const std::vector<bool>& found, std::size_t start_row,
                  std::uint64_t seed, EmbeddingStats* stats) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0, 1);
  for (std::size_t r = std::max<std::size_t>(start_row, 1); r < found.size(); ++r) {
    if (found[r]) {
      if (stats) ++stats->found;
      continue;
    }
    for (std::size_t k = 0; k < dim; ++k) values[r * dim + k] = static_cast<Real>(normal(rng));
    if (stats) ++stats->drawn;
  }
}

}  // namespace

Tensor load_embeddings(const fs::path& path, std::size_t dim, const Vocabulary& vocab, std::uint64_t seed,
                       EmbeddingStats* stats) {
  if (dim == 0) throw ConfigError("embedding dimension must be positive");
  std::vector<Real> values(vocab.size() * dim, Real{0});
  auto found = read_vectors(path, dim, vocab, 0, values);
  draw_missing(values, dim, found, 0, seed, stats);
  return Tensor::from({vocab.size(), dim}, std::move(values));
}

Tensor extend_embeddings(const Tensor& base, const fs::path& path, const Vocabulary& vocab, std::uint64_t seed) {
  std::size_t keep = base.dim(0), dim = base.dim(1);
  if (vocab.size() < keep) throw DimensionError("extend_embeddings: vocabulary shrank");
  std::vector<Real> values(vocab.size() * dim, Real{0});
  std::copy(base.data().begin(), base.data().end(), values.begin());
  auto found = read_vectors(path, dim, vocab, keep, values);
  draw_missing(values, dim, found, keep, seed, nullptr);
  return Tensor::from({vocab.size(), dim}, std::move(values));
}

std::vector<Batch> make_batches(const std::vector<PairExample>& examples, const Vocabulary& vocab,
                                const SchemaInfo& info, std::size_t batch_size, BatchStrategy strategy,
                                std::uint64_t seed, bool with_trees) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  auto key = [&](std::size_t i) { return std::max(examples[i].tokens_a.size(), examples[i].tokens_b.size()); };
  if (strategy != BatchStrategy::sequential) std::shuffle(order.begin(), order.end(), rng);
  if (strategy == BatchStrategy::bucketed) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return key(x) < key(y); });
  }
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    std::size_t end = std::min(order.size(), start + batch_size);
    std::vector<std::vector<std::int64_t>> a, b;
    std::vector<int> labels;
    std::vector<Real> targets;
    std::vector<ShiftReduceProgram> pa, pb;
    std::vector<std::size_t> idx;
    for (std::size_t k = start; k < end; ++k) {
      const auto& e = examples[order[k]];
      a.push_back(vocab.encode(e.tokens_a));
      b.push_back(vocab.encode(e.tokens_b));
      if (info.head == TaskHead::regression) {
        targets.push_back(static_cast<Real>(e.score));
      } else {
        labels.push_back(e.label);
      }
      if (with_trees) {
        if (!e.tree_a || !e.tree_b) throw ConfigError("example " + e.id + " has no parse trees");
        pa.push_back(*e.tree_a);
        pb.push_back(*e.tree_b);
      }
      idx.push_back(order[k]);
    }
    Batch batch = Batch::assemble(a, b, std::move(labels), std::move(targets), std::move(pa), std::move(pb));
    batch.indices = std::move(idx);
    batches.push_back(std::move(batch));
  }
  if (strategy == BatchStrategy::bucketed) std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

PairStats overlap_and_length_stats(const PairExample& e, OverlapMode mode) {
  std::set<std::string> a(e.tokens_a.begin(), e.tokens_a.end()), b(e.tokens_b.begin(), e.tokens_b.end());
  std::size_t shared = 0;
  for (const auto& t : a) shared += b.count(t);
  std::size_t denom = mode == OverlapMode::jaccard ? a.size() + b.size() - shared : std::min(a.size(), b.size());
  PairStats s;
  s.overlap = denom == 0 ? 0.0 : static_cast<double>(shared) / static_cast<double>(denom);
  s.overlap_bucket = s.overlap < 0.3 ? overlap_buckets()[0] : s.overlap <= 0.6 ? overlap_buckets()[1] : overlap_buckets()[2];
  s.length = std::max(e.tokens_a.size(), e.tokens_b.size());
  s.length_bucket = s.length < 10 ? length_buckets()[0] : s.length <= 20 ? length_buckets()[1] : length_buckets()[2];
  return s;
}

std::vector<PairExample> training_subset(const std::vector<PairExample>& train, double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction <= 1)) throw ConfigError("training fraction must lie in (0, 1]");
  auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(train.size())));
  if (n == 0) throw ConfigError("fraction " + std::to_string(fraction) + " selects no training examples");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(n);
  std::sort(order.begin(), order.end());  // keep file order inside the subset
  std::vector<PairExample> out;
  for (auto i : order) out.push_back(train[i]);
  return out;
}

}  // namespace spm
