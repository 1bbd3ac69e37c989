#include "spm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

namespace spm {

namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) throw std::invalid_argument("length mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
  if (a == 0) throw std::invalid_argument("empty input");
}

std::string format(double v) {
  std::ostringstream out;
  out << std::setprecision(6) << std::fixed << v;
  return out.str();
}

}  // namespace

double accuracy(const std::vector<int>& predicted, const std::vector<int>& gold) {
  check_lengths(predicted.size(), gold.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += predicted[i] == gold[i];
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

double f1_positive(const std::vector<int>& predicted, const std::vector<int>& gold, int positive) {
  check_lengths(predicted.size(), gold.size());
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    bool p = predicted[i] == positive, g = gold[i] == positive;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  if (tp == 0) return 0;
  double precision = tp / (tp + fp), recall = tp / (tp + fn);
  return 2 * precision * recall / (precision + recall);
}

double pearson_r(const std::vector<double>& x, const std::vector<double>& y) {
  check_lengths(x.size(), y.size());
  if (x.size() < 2) throw MetricError("Pearson's r needs at least two points");
  double n = static_cast<double>(x.size());
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / n, my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) throw MetricError("Pearson's r is undefined for a constant input");
  return sxy / std::sqrt(sxx * syy);
}

MapMrr map_mrr(const std::vector<RankedCandidate>& candidates) {
  std::map<std::string, std::vector<std::size_t>> groups;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    auto [it, inserted] = groups.try_emplace(candidates[i].group);
    if (inserted) order.push_back(candidates[i].group);
    it->second.push_back(i);
  }
  MapMrr out;
  for (const auto& g : order) {
    auto idx = groups[g];
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return candidates[a].score > candidates[b].score; });
    double hits = 0, precision_sum = 0, reciprocal = 0;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (!candidates[idx[r]].relevant) continue;
      hits += 1;
      precision_sum += hits / static_cast<double>(r + 1);
      if (reciprocal == 0) reciprocal = 1.0 / static_cast<double>(r + 1);
    }
    if (hits == 0) continue;
    out.map += precision_sum / hits;
    out.mrr += reciprocal;
    ++out.groups;
  }
  if (out.groups == 0) throw MetricError("no group has a relevant candidate");
  out.map /= static_cast<double>(out.groups);
  out.mrr /= static_cast<double>(out.groups);
  return out;
}

Predictions predict_examples(PairModel& model, const std::vector<PairExample>& examples, const Vocabulary& vocab,
                             const SchemaInfo& info, std::size_t batch_size) {
  Predictions out;
  out.scores.resize(examples.size());
  if (info.head != TaskHead::regression) out.classes.resize(examples.size());
  bool trees = model.config().needs_trees();
  for (const auto& batch : make_batches(examples, vocab, info, batch_size, BatchStrategy::sequential, 0, trees)) {
    auto p = model.predict(batch);
    for (std::size_t i = 0; i < batch.size; ++i) {
      std::size_t k = batch.indices[i];
      if (info.head == TaskHead::regression) {
        out.scores[k] = static_cast<double>(p.scores[i]);
      } else {
        out.classes[k] = p.predicted[i];
        out.scores[k] = static_cast<double>(p.probabilities.at({i, p.probabilities.dim(1) - 1}));
      }
    }
  }
  return out;
}

double MetricReport::get(const std::string& name) const {
  for (const auto& [k, v] : metrics) {
    if (k == name) return v;
  }
  throw std::out_of_range("no metric " + name);
}

std::string MetricReport::to_text() const {
  std::ostringstream out;
  out << "task = " << task << "\n";
  out << "count = " << count << "\n";
  for (const auto& [k, v] : metrics) out << k << " = " << format(v) << "\n";
  for (const auto& table : categories) {
    for (const auto& row : table.rows) {
      out << "category." << table.name << "." << row.category << " = " << format(row.value) << " (n=" << row.count
          << ")\n";
    }
  }
  return out.str();
}

std::string MetricReport::to_csv() const {
  std::ostringstream out;
  out << "section,category,count,metric,value\n";
  for (const auto& [k, v] : metrics) out << "overall,all," << count << "," << k << "," << format(v) << "\n";
  for (const auto& table : categories) {
    for (const auto& row : table.rows) {
      out << table.name << "," << row.category << "," << row.count << ",accuracy," << format(row.value) << "\n";
    }
  }
  return out.str();
}

MetricReport score_predictions(Schema schema, const std::vector<PairExample>& examples, const Predictions& p) {
  const auto& info = schema_info(schema);
  MetricReport report;
  report.task = to_string(schema);
  report.count = examples.size();
  if (examples.empty()) throw MetricError("no examples to score");
  std::vector<int> gold;
  for (const auto& e : examples) gold.push_back(e.label);
  switch (info.metric) {
    case Metric::accuracy:
      report.metrics.emplace_back("accuracy", accuracy(p.classes, gold));
      break;
    case Metric::f1:
      report.metrics.emplace_back("f1", f1_positive(p.classes, gold));
      report.metrics.emplace_back("accuracy", accuracy(p.classes, gold));
      break;
    case Metric::pearson: {
      std::vector<double> scores, targets;
      for (std::size_t i = 0; i < examples.size(); ++i) {
        scores.push_back(std::clamp(p.scores[i], 0.0, static_cast<double>(kMaxScore)));
        targets.push_back(examples[i].score);
      }
      report.metrics.emplace_back("pearson", pearson_r(scores, targets));
      break;
    }
    case Metric::map_mrr: {
      std::vector<RankedCandidate> c;
      for (std::size_t i = 0; i < examples.size(); ++i) c.push_back({examples[i].group, p.scores[i], gold[i] == 1});
      auto m = map_mrr(c);
      report.metrics.emplace_back("map", m.map);
      report.metrics.emplace_back("mrr", m.mrr);
      break;
    }
  }
  return report;
}

std::vector<CategoryTable> categorical_tables(const std::vector<int>& predicted, const std::vector<PairExample>& examples,
                                              OverlapMode mode) {
  check_lengths(predicted.size(), examples.size());
  struct Tally {
    std::size_t n = 0, hits = 0;
  };
  std::vector<std::string> genres;
  std::map<std::string, Tally> genre, overlap, length;
  bool has_genre = false;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& e = examples[i];
    bool hit = predicted[i] == e.label;
    auto s = overlap_and_length_stats(e, mode);
    for (auto* t : {&overlap[s.overlap_bucket], &length[s.length_bucket]}) {
      ++t->n;
      t->hits += hit;
    }
    if (!e.group.empty()) {
      has_genre = true;
      if (!genre.count(e.group)) genres.push_back(e.group);
      ++genre[e.group].n;
      genre[e.group].hits += hit;
    }
  }
  auto table = [](const std::string& name, const std::vector<std::string>& keys, std::map<std::string, Tally>& t) {
    CategoryTable out{name, {}};
    for (const auto& k : keys) {
      auto it = t.find(k);
      if (it == t.end()) continue;
      out.rows.push_back({k, it->second.n, static_cast<double>(it->second.hits) / static_cast<double>(it->second.n)});
    }
    return out;
  };
  std::vector<CategoryTable> out;
  if (has_genre) {
    std::sort(genres.begin(), genres.end());
    out.push_back(table("genre", genres, genre));
  }
  out.push_back(table("overlap", overlap_buckets(), overlap));
  out.push_back(table("length", length_buckets(), length));
  return out;
}

MetricReport evaluate(PairModel& model, Schema schema, const std::vector<PairExample>& examples,
                      const Vocabulary& vocab, bool categorical, std::size_t batch_size) {
  const auto& info = schema_info(schema);
  if (model.config().head != info.head || (info.head != TaskHead::regression && model.config().num_classes != info.num_classes)) {
    throw ConfigError("model head (" + to_string(model.config().head) + ", " +
                      std::to_string(model.config().num_classes) + " classes) does not fit " + to_string(schema) +
                      " (" + to_string(info.head) + ", " + std::to_string(info.num_classes) + " classes)");
  }
  auto p = predict_examples(model, examples, vocab, info, batch_size);
  auto report = score_predictions(schema, examples, p);
  if (categorical) {
    if (info.head != TaskHead::classification) throw ConfigError("categorical analysis needs a classification task");
    report.categories = categorical_tables(p.classes, examples);
  }
  return report;
}

LoadedModel load_for_examples(const Checkpoint& checkpoint,
                              const std::vector<const std::vector<PairExample>*>& examples,
                              const std::filesystem::path& embedding_path, std::uint64_t seed) {
  Vocabulary vocab(checkpoint.vocabulary);
  for (const auto* split : examples) {
    for (const auto& e : *split) {
      for (const auto& w : e.tokens_a) vocab.add(w);
      for (const auto& w : e.tokens_b) vocab.add(w);
    }
  }
  Checkpoint extended = checkpoint;
  if (vocab.size() != checkpoint.vocabulary.size()) {
    extended.embedding = extend_embeddings(checkpoint.embedding, embedding_path, vocab, seed);
    extended.vocabulary = vocab.tokens();
  }
  return {load_model(extended), std::move(vocab)};
}

std::vector<MetricReport> transfer_eval(const Checkpoint& checkpoint, const std::vector<TransferTarget>& targets,
                                        const std::filesystem::path& embedding_path, std::uint64_t seed) {
  std::vector<const std::vector<PairExample>*> splits;
  for (const auto& t : targets) {
    const auto& info = schema_info(t.schema);
    if (info.head != checkpoint.config.head || info.num_classes != checkpoint.config.num_classes) {
      throw ConfigError("checkpoint predicts " + std::to_string(checkpoint.config.num_classes) + " classes (" +
                        to_string(checkpoint.config.head) + "), target " + t.name + " has " +
                        std::to_string(info.num_classes) + " (" + to_string(info.head) + ")");
    }
    splits.push_back(&t.test);
  }
  auto loaded = load_for_examples(checkpoint, splits, embedding_path, seed);
  std::vector<MetricReport> out;
  for (const auto& t : targets) {
    auto report = evaluate(*loaded.model, t.schema, t.test, loaded.vocab);
    report.task = t.name;
    out.push_back(std::move(report));
  }
  return out;
}

}  // namespace spm
