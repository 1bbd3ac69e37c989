#include "commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

namespace spm::cli {

namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::vector<std::string> tokenize(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

ShiftReduceProgram right_branching(std::size_t leaves) {
  std::vector<Instruction> steps;
  for (std::size_t i = 0; i < leaves; ++i) steps.push_back({StackOp::shift, i});
  for (std::size_t i = 1; i < leaves; ++i) steps.push_back({StackOp::reduce, 0});
  return ShiftReduceProgram(std::move(steps));
}

ShiftReduceProgram tree_for(const std::string& bracketed, const std::vector<std::string>& tokens) {
  if (bracketed.empty()) return right_branching(tokens.size());
  std::vector<std::string> leaves;
  BinaryTree tree;
  try {
    tree = parse_bracketed(bracketed, leaves);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("tree: ") + e.what());
  }
  if (leaves != tokens) throw DataError("tree leaves do not match the sentence tokens");
  return ShiftReduceProgram::from_tree(tree);
}

std::string fixed(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << std::fixed << v;
  return s.str();
}

void write_matrix(std::ostream& out, const Tensor& m, const std::vector<std::string>& rows,
                  const std::vector<std::string>& cols, std::size_t offset = 0) {
  out << "token";
  for (const auto& c : cols) out << "," << c;
  out << "\n";
  auto data = m.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << rows[i];
    for (std::size_t j = 0; j < cols.size(); ++j) {
      out << "," << fixed(static_cast<double>(data[offset + i * cols.size() + j]));
    }
    out << "\n";
  }
}

const std::vector<std::string>& channel_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const char* state : {"forward", "backward", "concat", "sum"}) {
      for (const char* measure : {"cosine", "neg_l2", "dot"}) n.push_back(std::string(state) + "_" + measure);
    }
    n.push_back("bias");
    return n;
  }();
  return names;
}

std::vector<double> parse_fractions(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--fractions: '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw ConfigError("--fractions: no values");
  return out;
}

}  // namespace

Prepared prepare(const RunConfig& config) {
  if (!fs::is_directory(config.data_dir)) throw DataError("dataset directory " + config.data_dir.string() + " does not exist");
  if (!config.embeddings.empty() && !fs::is_regular_file(config.embeddings)) {
    throw DataError("embedding file " + config.embeddings.string() + " does not exist");
  }
  LoadOptions options;
  options.seed = config.seed;
  options.dev_fraction = config.dev_fraction;
  options.lowercase = config.lowercase;
  Prepared p;
  p.data = load_dataset(config.data_dir, config.schema, options);
  if (config.model.needs_trees() && !p.data.has_trees) {
    throw DataError(to_string(config.model.architecture) + " needs .trees_a/.trees_b files for every split in " +
                    config.data_dir.string());
  }
  p.vocab = Vocabulary::build({&p.data.train, &p.data.dev, &p.data.test});
  p.embedding = load_embeddings(config.embeddings, config.model.embedding_dim, p.vocab, config.seed);
  return p;
}

MetricReport cmd_train(const RunConfig& config, std::ostream& out) {
  auto prepared = prepare(config);
  const auto& dir = config.run_dir;
  fs::create_directories(dir);
  fs::remove(dir / "FAILED");
  try {
    nlohmann::ordered_json meta;
    meta["digest"] = config.digest();
    meta["config"] = nlohmann::ordered_json::parse(config.to_json());
    write_file(dir / "config.json", meta.dump(2) + "\n");
    for (const auto& w : prepared.data.warnings) out << "warning: " << w << "\n";
    if (prepared.data.tree_fallbacks) {
      out << "warning: " << prepared.data.tree_fallbacks << " pairs use right-branching trees\n";
    }
    auto model = make_model(config.model, prepared.embedding, config.seed);
    out << to_string(config.model.architecture) << ": " << model->parameter_count() << " trainable parameters, "
        << prepared.data.train.size() << " training pairs\n";
    TrainConfig tc = config.training;
    tc.log_path = dir / "epochs.jsonl";
    tc.checkpoint_path = dir / "best.ckpt";
    tc.on_epoch = [&](const EpochRecord& r) {
      out << "epoch " << r.epoch << "  loss " << fixed(r.train_loss) << "  dev " << fixed(r.dev_metric) << "  lr "
          << r.lr << "  " << std::setprecision(3) << r.seconds << "s\n"
          << std::flush;
    };
    auto run = train(*model, prepared.data, prepared.vocab, tc);
    auto report = evaluate(*model, config.schema, prepared.data.test, prepared.vocab);
    write_file(dir / "test_report.txt", report.to_text() + "best_epoch = " + std::to_string(run.best_epoch) +
                                            "\nconfig_digest = " + config.digest() + "\n");
    write_file(dir / "test_report.csv", report.to_csv());
    out << report.to_text();
    return report;
  } catch (const std::exception& e) {
    write_file(dir / "FAILED", std::string(e.what()) + "\n");
    throw;
  }
}

MetricReport cmd_eval(const fs::path& checkpoint, const fs::path& data_dir, const EvalOptions& options,
                      std::ostream& out) {
  auto ck = read_checkpoint(checkpoint.string());
  LoadOptions lo;
  lo.seed = options.seed;
  auto data = load_dataset(data_dir, options.schema, lo);
  const std::vector<PairExample>* split = nullptr;
  if (options.split == "test") split = &data.test;
  else if (options.split == "dev") split = &data.dev;
  else if (options.split == "train") split = &data.train;
  else throw ConfigError("--split: expected train, dev or test");
  if (ck.config.needs_trees() && !data.has_trees) throw DataError("checkpoint needs parse trees for " + data_dir.string());
  auto loaded = load_for_examples(ck, {split}, options.embeddings, options.seed);
  auto report = evaluate(*loaded.model, options.schema, *split, loaded.vocab, options.categorical);
  out << report.to_text();
  if (!options.out_dir.empty()) {
    fs::create_directories(options.out_dir);
    write_file(options.out_dir / "report.txt", report.to_text());
    write_file(options.out_dir / "report.csv", report.to_csv());
  }
  return report;
}

TransferSpec parse_transfer_spec(const std::string& text) {
  auto eq = text.find('='), colon = text.find(':', eq == std::string::npos ? 0 : eq);
  if (eq == std::string::npos || colon == std::string::npos || eq == 0) {
    throw ConfigError("--target: expected NAME=SCHEMA:DIR, got '" + text + "'");
  }
  return {text.substr(0, eq), parse_schema(text.substr(eq + 1, colon - eq - 1)), text.substr(colon + 1)};
}

std::vector<MetricReport> cmd_transfer(const fs::path& checkpoint, const std::vector<TransferSpec>& targets,
                                       const fs::path& embeddings, std::uint64_t seed, const fs::path& out_csv,
                                       std::ostream& out) {
  if (targets.empty()) throw ConfigError("no transfer targets");
  auto ck = read_checkpoint(checkpoint.string());
  std::vector<TransferTarget> loaded;
  for (const auto& t : targets) {
    LoadOptions lo;
    lo.seed = seed;
    auto data = load_dataset(t.dir, t.schema, lo);
    if (ck.config.needs_trees() && !data.has_trees) throw DataError("checkpoint needs parse trees for " + t.dir.string());
    loaded.push_back({t.name, t.schema, std::move(data.test)});
  }
  auto reports = transfer_eval(ck, loaded, embeddings, seed);
  std::ostringstream csv;
  csv << "target,schema,count,metric,value\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    for (const auto& [k, v] : reports[i].metrics) {
      csv << targets[i].name << "," << to_string(targets[i].schema) << "," << reports[i].count << "," << k << ","
          << fixed(v) << "\n";
    }
  }
  out << csv.str();
  if (!out_csv.empty()) write_file(out_csv, csv.str());
  return reports;
}

ParameterAudit cmd_params(const ModelConfig& config, std::size_t vocab_size, std::ostream& out) {
  auto audit = audit_parameters(config, vocab_size);
  out << "component,parameters\n";
  for (const auto& c : audit.components) out << c.name << "," << c.count << "\n";
  out << "trainable," << audit.trainable << "\n";
  out << "embedding," << audit.embedding << "\n";
  out << "inclusive," << audit.inclusive() << "\n";
  return audit;
}

void cmd_inspect_align(const fs::path& checkpoint, const std::string& sentence_a, const std::string& sentence_b,
                       const fs::path& out_dir, std::ostream& out, const std::string& tree_a,
                       const std::string& tree_b) {
  auto ck = read_checkpoint(checkpoint.string());
  PairExample pair;
  pair.tokens_a = tokenize(sentence_a);
  pair.tokens_b = tokenize(sentence_b);
  if (pair.tokens_a.empty() || pair.tokens_b.empty()) throw DataError("both sentences need at least one token");
  std::vector<PairExample> one{pair};
  auto loaded = load_for_examples(ck, {&one}, {}, 0);
  std::vector<ShiftReduceProgram> pa, pb;
  if (ck.config.needs_trees()) {
    pa.push_back(tree_for(tree_a, pair.tokens_a));
    pb.push_back(tree_for(tree_b, pair.tokens_b));
  }
  auto batch = Batch::assemble({loaded.vocab.encode(pair.tokens_a)}, {loaded.vocab.encode(pair.tokens_b)}, {}, {},
                               std::move(pa), std::move(pb));
  auto inspection = loaded.model->inspect(batch);
  fs::create_directories(out_dir);
  if (const auto* soft = std::get_if<SoftInspection>(&inspection)) {
    std::ofstream weights(out_dir / "alignment.csv"), scores(out_dir / "scores.csv");
    write_matrix(weights, soft->weights_to_b, pair.tokens_a, pair.tokens_b);
    write_matrix(scores, soft->alignment.e, pair.tokens_a, pair.tokens_b);
    out << "wrote " << (out_dir / "alignment.csv").string() << " and " << (out_dir / "scores.csv").string() << "\n";
  } else {
    const auto& t = std::get<InteractionTensor>(inspection);
    std::ofstream channels(out_dir / "interaction.csv"), hard(out_dir / "hard_attention.csv");
    const std::size_t plane = t.rows() * t.cols();
    for (std::size_t k = 0; k < kInteractionChannels; ++k) {
      channels << "# channel " << k << " " << channel_names()[k] << "\n";
      write_matrix(channels, t.D, pair.tokens_a, pair.tokens_b, k * plane);
    }
    write_matrix(hard, t.hard_weights, pair.tokens_a, pair.tokens_b);
    out << "wrote " << (out_dir / "interaction.csv").string() << " and " << (out_dir / "hard_attention.csv").string()
        << "\n";
  }
}

std::vector<CurvePoint> cmd_curve(const RunConfig& config, const std::vector<double>& fractions, std::ostream& out) {
  auto prepared = prepare(config);
  ModelFactory factory = [&] { return make_model(config.model, prepared.embedding, config.seed); };
  auto points = training_size_sweep(factory, prepared.data, prepared.vocab, config.training, fractions);
  std::ostringstream csv;
  csv << "fraction,size,metric\n";
  for (const auto& p : points) csv << p.fraction << "," << p.size << "," << fixed(p.metric) << "\n";
  fs::create_directories(config.run_dir);
  write_file(config.run_dir / "curve.csv", csv.str());
  out << csv.str();
  return points;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sentence pair modeling: train, evaluate and inspect pair models"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::size_t epochs = 0, batch_size = 0;
  double lr = 0;
  std::string run_dir;
  auto overrides = [&](CLI::App* cmd) {
    cmd->add_option("config", config_path, "JSON run configuration")->required();
    cmd->add_option("--seed", seed, "Override the seed");
    cmd->add_option("--epochs", epochs, "Override training.epochs");
    cmd->add_option("--batch-size", batch_size, "Override training.batch_size");
    cmd->add_option("--lr", lr, "Override training.lr");
    cmd->add_option("--run-dir", run_dir, "Override output.run_dir");
  };
  auto load = [&](CLI::App* cmd) {
    auto c = load_run_config(config_path);
    if (cmd->count("--seed")) c.seed = c.training.seed = seed;
    if (cmd->count("--epochs")) c.training.epochs = epochs;
    if (cmd->count("--batch-size")) c.training.batch_size = batch_size;
    if (cmd->count("--lr")) c.training.optimizer.lr = lr;
    if (cmd->count("--run-dir")) {
      c.run_dir = fs::absolute(fs::path(run_dir).is_absolute() ? fs::path(run_dir) : run_root() / run_dir);
    }
    if (c.training.epochs == 0 || c.training.batch_size == 0 || !(c.training.optimizer.lr > 0)) {
      throw ConfigError("epochs, batch size and learning rate must be positive");
    }
    return c;
  };

  auto* train_cmd = app.add_subcommand("train", "Train a model and evaluate it on the test split");
  overrides(train_cmd);

  std::string checkpoint, data_dir, schema, split = "test", embeddings, out_dir, out_csv;
  bool categorical = false;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval_cmd->add_option("checkpoint", checkpoint)->required();
  eval_cmd->add_option("data", data_dir, "Dataset directory")->required();
  eval_cmd->add_option("--schema", schema, "Dataset schema")->required();
  eval_cmd->add_option("--split", split, "train, dev or test");
  eval_cmd->add_flag("--categorical", categorical, "Add genre, overlap and length breakdowns");
  eval_cmd->add_option("--embeddings", embeddings, "Vectors for words the checkpoint has not seen");
  eval_cmd->add_option("--seed", seed, "Seed for unseen-word vectors and dev carving");
  eval_cmd->add_option("--out", out_dir, "Directory for report.txt and report.csv");

  std::vector<std::string> targets;
  auto* transfer_cmd = app.add_subcommand("transfer", "Apply a checkpoint to other corpora without retraining");
  transfer_cmd->add_option("checkpoint", checkpoint)->required();
  transfer_cmd->add_option("--target", targets, "NAME=SCHEMA:DIR, repeatable")->required();
  transfer_cmd->add_option("--embeddings", embeddings, "Vectors for words the checkpoint has not seen");
  transfer_cmd->add_option("--seed", seed, "Seed for unseen-word vectors");
  transfer_cmd->add_option("--out", out_csv, "CSV file for the results");

  std::string architecture, preset_name = "appendix_b";
  std::size_t vocab_size = 0;
  auto* params_cmd = app.add_subcommand("params", "Per-component parameter counts");
  params_cmd->add_option("config", config_path, "JSON run configuration");
  params_cmd->add_option("--architecture", architecture, "Architecture when no config is given");
  params_cmd->add_option("--preset", preset_name, "appendix_b or toy");
  params_cmd->add_option("--vocab-size", vocab_size, "Vocabulary size for the embedding count");

  std::string sentence_a, sentence_b, tree_a, tree_b;
  auto* inspect_cmd = app.add_subcommand("inspect-align", "Write alignment matrices of one sentence pair as CSV");
  inspect_cmd->add_option("checkpoint", checkpoint)->required();
  inspect_cmd->add_option("sentence_a", sentence_a)->required();
  inspect_cmd->add_option("sentence_b", sentence_b)->required();
  inspect_cmd->add_option("--out", out_dir, "Output directory")->required();
  inspect_cmd->add_option("--tree-a", tree_a, "Bracketed parse of sentence a");
  inspect_cmd->add_option("--tree-b", tree_b, "Bracketed parse of sentence b");

  std::string fractions = "0.1,0.25,0.5,1.0";
  auto* curve_cmd = app.add_subcommand("curve", "Test metric against training-set size");
  overrides(curve_cmd);
  curve_cmd->add_option("--fractions", fractions, "Comma-separated fractions of the training set");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train_cmd) {
      cmd_train(load(train_cmd), out);
    } else if (*eval_cmd) {
      EvalOptions o;
      o.schema = parse_schema(schema);
      o.split = split;
      o.categorical = categorical;
      o.embeddings = embeddings;
      o.seed = seed;
      o.out_dir = out_dir;
      cmd_eval(checkpoint, data_dir, o, out);
    } else if (*transfer_cmd) {
      std::vector<TransferSpec> specs;
      for (const auto& t : targets) specs.push_back(parse_transfer_spec(t));
      cmd_transfer(checkpoint, specs, embeddings, seed, out_csv, out);
    } else if (*params_cmd) {
      ModelConfig config;
      if (!config_path.empty()) {
        config = load_run_config(config_path).model;
      } else if (!architecture.empty()) {
        PresetSize size = preset_name == "toy" ? PresetSize::toy : PresetSize::appendix_b;
        if (preset_name != "toy" && preset_name != "appendix_b") throw ConfigError("--preset: expected appendix_b or toy");
        config = preset(parse_architecture(architecture), size, TaskHead::classification, 3);
      } else {
        throw ConfigError("params needs a config file or --architecture");
      }
      cmd_params(config, vocab_size, out);
    } else if (*inspect_cmd) {
      cmd_inspect_align(checkpoint, sentence_a, sentence_b, out_dir, out, tree_a, tree_b);
    } else if (*curve_cmd) {
      cmd_curve(load(curve_cmd), parse_fractions(fractions), out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const NoAlignmentError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

}  // namespace spm::cli
