#include <cstdio>
#include <map>

#include "json.hpp"
#include "spm/models.hpp"

namespace spm {

namespace {

const std::map<Architecture, std::string> kArchNames{
    {Architecture::infersent, "infersent"}, {Architecture::sse, "sse"},
    {Architecture::decatt, "decatt"},       {Architecture::esim_seq, "esim_seq"},
    {Architecture::esim_tree, "esim_tree"}, {Architecture::esim_ensemble, "esim_ensemble"},
    {Architecture::pwim, "pwim"},
};
const std::map<TaskHead, std::string> kHeadNames{
    {TaskHead::classification, "classification"}, {TaskHead::regression, "regression"}, {TaskHead::ranking, "ranking"}};
const std::map<Activation, std::string> kActNames{
    {Activation::none, "none"}, {Activation::relu, "relu"}, {Activation::tanh, "tanh"}};

template <class E>
E lookup(const std::map<E, std::string>& names, const std::string& s, const char* what) {
  for (const auto& [k, v] : names) {
    if (v == s) return k;
  }
  std::string options;
  for (const auto& [k, v] : names) options += (options.empty() ? "" : ", ") + v;
  throw ConfigError(std::string("unknown ") + what + " '" + s + "' (expected one of: " + options + ")");
}

void require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw ConfigError("model." + field + ": " + why);
}

bool positive(const std::vector<std::size_t>& v) {
  for (auto x : v) {
    if (x == 0) return false;
  }
  return true;
}

}  // namespace

std::string to_string(Architecture a) { return kArchNames.at(a); }
std::string to_string(TaskHead h) { return kHeadNames.at(h); }
Architecture parse_architecture(const std::string& s) { return lookup(kArchNames, s, "architecture"); }
TaskHead parse_head(const std::string& s) { return lookup(kHeadNames, s, "head"); }

std::size_t ModelConfig::outputs() const {
  switch (head) {
    case TaskHead::regression:
      return 1;
    case TaskHead::ranking:
      return 2;
    default:
      return num_classes;
  }
}

void ModelConfig::validate() const {
  require(embedding_dim > 0, "embedding_dim", "must be positive");
  require(head != TaskHead::classification || num_classes >= 2, "num_classes", "classification needs at least 2");
  require(dropout >= 0 && dropout < 1, "dropout", "must lie in [0, 1)");
  require(positive(mlp), "mlp", "widths must be positive");
  switch (architecture) {
    case Architecture::sse:
      require(!stack.empty() && positive(stack), "stack", "needs at least one positive layer width");
      break;
    case Architecture::decatt:
      require(ffn_width > 0 && ffn_depth > 0, "ffn_width", "F and G need positive width and depth");
      break;
    case Architecture::pwim: {
      require(hidden > 0, "hidden", "must be positive");
      require(!conv_channels.empty() && positive(conv_channels), "conv_channels", "needs positive widths");
      std::size_t side = crop;
      for (std::size_t i = 0; i < conv_channels.size(); ++i) side /= 2;
      require(side >= 1, "crop",
              std::to_string(crop) + " is too small for " + std::to_string(conv_channels.size()) + " pooling stages");
      break;
    }
    default:
      require(hidden > 0, "hidden", "must be positive");
  }
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["architecture"] = to_string(architecture);
  j["head"] = to_string(head);
  j["embedding_dim"] = embedding_dim;
  j["num_classes"] = num_classes;
  j["dropout"] = dropout;
  j["hidden"] = hidden;
  j["stack"] = stack;
  j["mlp"] = mlp;
  j["mlp_activation"] = kActNames.at(mlp_activation);
  j["projection"] = projection;
  j["ffn_width"] = ffn_width;
  j["ffn_depth"] = ffn_depth;
  j["crop"] = crop;
  j["conv_channels"] = conv_channels;
  j["hard_attention"] = hard_attention;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  if (!j.contains("architecture") || !j.at("architecture").is_string()) {
    throw ConfigError("model.architecture is required and must be a string");
  }
  if (j.contains("head") && !j.at("head").is_string()) throw ConfigError("model.head must be a string");
  if (j.contains("num_classes") && !j.at("num_classes").is_number_unsigned()) {
    throw ConfigError("model.num_classes must be a non-negative integer");
  }
  auto arch = parse_architecture(j.at("architecture").get<std::string>());
  TaskHead head = j.contains("head") ? parse_head(j.at("head").get<std::string>()) : TaskHead::classification;
  std::size_t classes = j.value("num_classes", std::size_t{3});
  // unspecified fields take the defaults of the chosen preset
  PresetSize size = PresetSize::appendix_b;
  if (j.contains("preset")) {
    auto name = j.at("preset").is_string() ? j.at("preset").get<std::string>() : "";
    if (name == "toy") size = PresetSize::toy;
    else if (name != "appendix_b") throw ConfigError("model.preset: expected 'appendix_b' or 'toy'");
  }
  ModelConfig c = preset(arch, size, head, classes);
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      const auto& v = it.value();
      if (k == "architecture" || k == "head" || k == "num_classes" || k == "preset") continue;
      if (k == "embedding_dim") c.embedding_dim = v.get<std::size_t>();
      else if (k == "dropout") c.dropout = v.get<double>();
      else if (k == "hidden") c.hidden = v.get<std::size_t>();
      else if (k == "stack") c.stack = v.get<std::vector<std::size_t>>();
      else if (k == "mlp") c.mlp = v.get<std::vector<std::size_t>>();
      else if (k == "mlp_activation") c.mlp_activation = lookup(kActNames, v.get<std::string>(), "activation");
      else if (k == "projection") c.projection = v.get<std::size_t>();
      else if (k == "ffn_width") c.ffn_width = v.get<std::size_t>();
      else if (k == "ffn_depth") c.ffn_depth = v.get<std::size_t>();
      else if (k == "crop") c.crop = v.get<std::size_t>();
      else if (k == "conv_channels") c.conv_channels = v.get<std::vector<std::size_t>>();
      else if (k == "hard_attention") c.hard_attention = v.get<bool>();
      else {
        throw ConfigError("model." + k + ": unknown field");
      }
    }
  } catch (const nlohmann::json::type_error& e) {
    throw ConfigError(std::string("model config has a field of the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

std::string ModelConfig::digest() const {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : to_json()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ModelConfig preset(Architecture a, PresetSize size, TaskHead head, std::size_t num_classes) {
  ModelConfig c;
  c.architecture = a;
  c.head = head;
  c.num_classes = num_classes;
  bool toy = size == PresetSize::toy;
  c.embedding_dim = toy ? 5 : 300;
  switch (a) {
    case Architecture::infersent:
      c.hidden = toy ? 4 : 2048;
      c.mlp = {toy ? 6u : 512u};
      c.mlp_activation = Activation::tanh;
      break;
    case Architecture::sse:
      c.stack = toy ? std::vector<std::size_t>{8, 8, 8} : std::vector<std::size_t>{512, 1024, 2048};
      c.mlp = toy ? std::vector<std::size_t>{6} : std::vector<std::size_t>{1600, 1600};
      c.mlp_activation = Activation::relu;
      break;
    case Architecture::decatt:
      c.projection = toy ? 4 : 200;
      c.ffn_width = toy ? 6 : 200;
      c.ffn_depth = 2;
      c.mlp = {c.ffn_width, c.ffn_width};
      c.mlp_activation = Activation::relu;
      break;
    case Architecture::esim_seq:
    case Architecture::esim_tree:
    case Architecture::esim_ensemble:
      c.hidden = toy ? 4 : 300;
      c.mlp = {toy ? 6u : 300u};
      c.mlp_activation = Activation::tanh;
      break;
    case Architecture::pwim:
      c.hidden = toy ? 6 : 200;
      c.crop = toy ? 8 : 32;
      c.conv_channels = toy ? std::vector<std::size_t>{4, 6, 8} : std::vector<std::size_t>{128, 164, 192, 192, 128};
      c.mlp = {toy ? 8u : 128u};
      c.mlp_activation = Activation::relu;
      break;
  }
  return c;
}

namespace {

std::size_t linear(std::size_t in, std::size_t out, bool bias = true) { return in * out + (bias ? out : 0); }

std::size_t ffn(std::size_t in, const std::vector<std::size_t>& widths) {
  std::size_t total = 0;
  for (auto w : widths) {
    total += linear(in, w);
    in = w;
  }
  return total;
}

void classifier(ParameterAudit& a, const ModelConfig& c, std::size_t features) {
  a.components.push_back({"mlp", ffn(features, c.mlp)});
  a.components.push_back({"out", linear(c.mlp.empty() ? features : c.mlp.back(), c.outputs())});
}

ParameterAudit audit_single(const ModelConfig& c) {
  ParameterAudit a;
  std::size_t d = c.embedding_dim, h = c.hidden;
  switch (c.architecture) {
    case Architecture::infersent:
      a.components.push_back({"encoder", BiLstmParams::count(d, h)});
      classifier(a, c, 8 * h);
      break;
    case Architecture::sse:
      a.components.push_back({"encoder", ShortcutStack::count(d, c.stack)});
      classifier(a, c, 8 * c.stack.back());
      break;
    case Architecture::decatt: {
      std::size_t in = d;
      if (c.projection > 0) {
        a.components.push_back({"projection", linear(d, c.projection, false)});
        in = c.projection;
      }
      std::vector<std::size_t> widths(c.ffn_depth, c.ffn_width);
      a.components.push_back({"attend", ffn(in, widths)});
      a.components.push_back({"compare", ffn(2 * in, widths)});
      classifier(a, c, 2 * c.ffn_width);
      break;
    }
    case Architecture::esim_seq:
      a.components.push_back({"encoder", BiLstmParams::count(d, h)});
      a.components.push_back({"projection", linear(8 * h, h)});
      a.components.push_back({"composition", BiLstmParams::count(h, h)});
      classifier(a, c, 8 * h);
      break;
    case Architecture::esim_tree:
      a.components.push_back({"encoder", BiLstmParams::count(d, h)});
      a.components.push_back({"composition", TreeLstmParams::count(8 * h, h)});
      classifier(a, c, 4 * h);
      break;
    case Architecture::pwim: {
      a.components.push_back({"encoder", BiLstmParams::count(d, h)});
      std::size_t conv = 0, in = kInteractionChannels, side = c.crop;
      for (auto o : c.conv_channels) {
        conv += o * in * 9 + o;
        in = o;
        side /= 2;
      }
      a.components.push_back({"conv", conv});
      classifier(a, c, in * side * side);
      break;
    }
    case Architecture::esim_ensemble:
      break;
  }
  for (const auto& comp : a.components) a.trainable += comp.count;
  return a;
}

}  // namespace

ParameterAudit audit_parameters(const ModelConfig& config, std::size_t vocab_size) {
  config.validate();
  ParameterAudit a;
  if (config.architecture == Architecture::esim_ensemble) {
    for (auto [prefix, arch] : {std::pair{"seq", Architecture::esim_seq}, std::pair{"tree", Architecture::esim_tree}}) {
      ModelConfig member = config;
      member.architecture = arch;
      for (const auto& comp : audit_single(member).components) {
        a.components.push_back({std::string(prefix) + "." + comp.name, comp.count});
        a.trainable += comp.count;
      }
    }
  } else {
    a = audit_single(config);
  }
  a.embedding = vocab_size * config.embedding_dim;
  return a;
}

}  // namespace spm
