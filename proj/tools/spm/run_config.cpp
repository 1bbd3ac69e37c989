#include "run_config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace spm::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string strategy_name(BatchStrategy s) {
  switch (s) {
    case BatchStrategy::bucketed: return "bucketed";
    case BatchStrategy::uniform: return "uniform";
    case BatchStrategy::sequential: return "sequential";
  }
  return "?";
}

BatchStrategy parse_strategy(const std::string& s) {
  for (auto k : {BatchStrategy::bucketed, BatchStrategy::uniform, BatchStrategy::sequential}) {
    if (strategy_name(k) == s) return k;
  }
  throw ConfigError("training.strategy: expected bucketed, uniform or sequential, got '" + s + "'");
}

LrSchedule parse_schedule(const std::string& s) {
  if (s == "constant") return LrSchedule::constant;
  if (s == "halving") return LrSchedule::halving;
  throw ConfigError("training.schedule: expected constant or halving, got '" + s + "'");
}

void only_known(const json& section, const std::string& name, std::initializer_list<const char*> known) {
  if (!section.is_object()) throw ConfigError(name + " must be an object");
  for (auto it = section.begin(); it != section.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError(name + "." + it.key() + ": unknown field");
  }
}

template <typename T>
T field(const json& section, const std::string& name, const char* key, T fallback) {
  if (!section.contains(key)) return fallback;
  try {
    return section.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(name + "." + key + ": wrong type (" + section.at(key).dump() + ")");
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

fs::path run_root() {
  const char* env = std::getenv("SPM_RUN_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

RunConfig parse_run_config(const std::string& text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  only_known(j, "config", {"seed", "model", "data", "training", "output"});
  for (const char* required : {"seed", "model", "data"}) {
    if (!j.contains(required)) throw ConfigError(std::string("config.") + required + ": required field is missing");
  }
  RunConfig c;
  if (!j.at("seed").is_number_unsigned()) throw ConfigError("config.seed: expected a non-negative integer");
  c.seed = j.at("seed").get<std::uint64_t>();

  const auto& data = j.at("data");
  only_known(data, "data", {"dir", "schema", "embeddings", "embedding_dim", "lowercase", "dev_fraction"});
  if (!data.contains("dir") || !data.contains("schema")) throw ConfigError("data.dir and data.schema are required");
  c.schema = parse_schema(field<std::string>(data, "data", "schema", ""));
  c.data_dir = resolve(base_dir, field<std::string>(data, "data", "dir", ""));
  c.embeddings = resolve(base_dir, field<std::string>(data, "data", "embeddings", ""));
  if (data.contains("lowercase")) c.lowercase = field<bool>(data, "data", "lowercase", false);
  c.dev_fraction = field<double>(data, "data", "dev_fraction", 0.1);
  if (!(c.dev_fraction > 0 && c.dev_fraction < 1)) throw ConfigError("data.dev_fraction must lie in (0, 1)");

  const auto& info = schema_info(c.schema);
  json model = j.at("model");
  if (!model.is_object()) throw ConfigError("model must be an object");
  if (model.contains("head") && model.at("head") != to_string(info.head)) {
    throw ConfigError("model.head: " + model.at("head").dump() + " does not fit schema " + to_string(c.schema) +
                      " (" + to_string(info.head) + ")");
  }
  if (model.contains("num_classes") && model.at("num_classes") != info.num_classes) {
    throw ConfigError("model.num_classes: " + model.at("num_classes").dump() + " does not fit schema " +
                      to_string(c.schema) + " (" + std::to_string(info.num_classes) + ")");
  }
  model["head"] = to_string(info.head);
  model["num_classes"] = info.num_classes;
  c.model = ModelConfig::from_json(model.dump());
  if (data.contains("embedding_dim") && field<std::size_t>(data, "data", "embedding_dim", 0) != c.model.embedding_dim) {
    throw ConfigError("data.embedding_dim: " + data.at("embedding_dim").dump() + " differs from the model's " +
                      std::to_string(c.model.embedding_dim));
  }

  c.training = default_train_config(c.model.architecture);
  c.training.seed = c.seed;
  if (j.contains("training")) {
    const auto& t = j.at("training");
    only_known(t, "training", {"optimizer", "lr", "batch_size", "epochs", "patience", "clip_norm", "schedule",
                               "strategy"});
    auto& tc = c.training;
    if (t.contains("optimizer")) tc.optimizer.kind = parse_optimizer(field<std::string>(t, "training", "optimizer", ""));
    tc.optimizer.lr = field<double>(t, "training", "lr", tc.optimizer.lr);
    tc.batch_size = field<std::size_t>(t, "training", "batch_size", tc.batch_size);
    tc.epochs = field<std::size_t>(t, "training", "epochs", tc.epochs);
    tc.patience = field<std::size_t>(t, "training", "patience", tc.patience);
    tc.clip_norm = field<double>(t, "training", "clip_norm", tc.clip_norm);
    if (t.contains("schedule")) tc.schedule = parse_schedule(field<std::string>(t, "training", "schedule", ""));
    if (t.contains("strategy")) tc.strategy = parse_strategy(field<std::string>(t, "training", "strategy", ""));
  }
  if (!(c.training.optimizer.lr > 0)) throw ConfigError("training.lr must be positive");
  if (c.training.batch_size == 0) throw ConfigError("training.batch_size must be at least 1");
  if (c.training.epochs == 0) throw ConfigError("training.epochs must be at least 1");
  if (c.training.clip_norm < 0) throw ConfigError("training.clip_norm must not be negative");

  std::string run_dir = to_string(c.schema) + "-" + to_string(c.model.architecture);
  if (j.contains("output")) {
    const auto& o = j.at("output");
    only_known(o, "output", {"run_dir"});
    run_dir = field<std::string>(o, "output", "run_dir", run_dir);
  }
  c.run_dir = fs::absolute(fs::path(run_dir).is_absolute() ? fs::path(run_dir) : run_root() / run_dir);
  return c;
}

RunConfig load_run_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config " + file.string());
  std::stringstream text;
  text << in.rdbuf();
  try {
    return parse_run_config(text.str(), file.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
}

std::string RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["model"] = json::parse(model.to_json());
  j["data"] = {{"dir", data_dir.string()},
               {"schema", to_string(schema)},
               {"embeddings", embeddings.string()},
               {"dev_fraction", dev_fraction}};
  if (lowercase) j["data"]["lowercase"] = *lowercase;
  j["training"] = {{"optimizer", to_string(training.optimizer.kind)},
                   {"lr", training.optimizer.lr},
                   {"batch_size", training.batch_size},
                   {"epochs", training.epochs},
                   {"patience", training.patience},
                   {"clip_norm", training.clip_norm},
                   {"schedule", training.schedule == LrSchedule::halving ? "halving" : "constant"},
                   {"strategy", strategy_name(training.strategy)}};
  j["output"] = {{"run_dir", run_dir.string()}};
  return j.dump(2);
}

std::string RunConfig::digest() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : to_json()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace spm::cli
