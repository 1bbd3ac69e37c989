#include <bit>
#include <cstring>
#include <fstream>

#include "spm/models.hpp"

namespace spm {

static_assert(std::endian::native == std::endian::little, "checkpoints are written little-endian");

namespace {

constexpr char kMagic[8] = {'S', 'P', 'M', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot write checkpoint " + path);
  }
  void raw(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void tensor(const std::string& name, const Tensor& t) {
    str(name);
    u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) u64(d);
    for (Real v : t.data()) {
      float f = static_cast<float>(v);
      raw(&f, 4);
    }
  }
  void finish() {
    out_.flush();
    if (!out_) throw std::runtime_error("checkpoint write failed");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw DataError("cannot open checkpoint " + path);
  }
  void raw(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw DataError("checkpoint " + path_ + " is truncated");
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, 8);
    return v;
  }
  std::string str() {
    std::string s(u32(), '\0');
    raw(s.data(), s.size());
    return s;
  }
  std::pair<std::string, Tensor> tensor() {
    std::string name = str();
    Shape shape(u32());
    for (auto& d : shape) d = u64();
    std::vector<float> f(shape_numel(shape));
    raw(f.data(), f.size() * 4);
    return {name, Tensor::from(shape, std::vector<Real>(f.begin(), f.end()))};
  }

 private:
  std::ifstream in_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const std::string& path, const PairModel& model, const std::vector<std::string>& vocabulary) {
  if (vocabulary.size() != model.embedding().dim(0)) {
    throw DimensionError("save_checkpoint: " + std::to_string(vocabulary.size()) + " tokens for " +
                         std::to_string(model.embedding().dim(0)) + " embedding rows");
  }
  Writer w(path);
  w.raw(kMagic, sizeof kMagic);
  w.u32(kVersion);
  const auto& config = model.config();
  w.str(to_string(config.architecture));
  w.str(config.digest());
  w.str(config.to_json());
  w.u32(static_cast<std::uint32_t>(vocabulary.size()));
  for (const auto& t : vocabulary) w.str(t);
  auto params = model.named_parameters();
  w.u32(static_cast<std::uint32_t>(params.size() + 1));
  w.tensor("embedding", model.embedding());
  for (const auto& [name, t] : params) w.tensor(name, t);
  w.finish();
}

Checkpoint read_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw DataError(path + " is not a checkpoint");
  if (auto v = r.u32(); v != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(v));
  std::string arch = r.str();
  std::string digest = r.str();
  Checkpoint c;
  c.config = ModelConfig::from_json(r.str());
  if (to_string(c.config.architecture) != arch || c.config.digest() != digest) {
    throw DataError("checkpoint header does not match its configuration");
  }
  c.vocabulary.resize(r.u32());
  for (auto& t : c.vocabulary) t = r.str();
  std::uint32_t blobs = r.u32();
  for (std::uint32_t i = 0; i < blobs; ++i) {
    auto blob = r.tensor();
    if (blob.first == "embedding") {
      c.embedding = blob.second;
    } else {
      c.parameters.push_back(std::move(blob));
    }
  }
  if (!c.embedding.defined()) throw DataError("checkpoint has no embedding");
  if (c.embedding.dim(0) != c.vocabulary.size()) throw DataError("checkpoint vocabulary and embedding disagree");
  return c;
}

std::unique_ptr<PairModel> load_model(const Checkpoint& checkpoint) {
  auto model = make_model(checkpoint.config, checkpoint.embedding, 0);
  auto params = model->named_parameters();
  if (params.size() != checkpoint.parameters.size()) {
    throw DataError("checkpoint has " + std::to_string(checkpoint.parameters.size()) + " tensors, model expects " +
                    std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, target] = params[i];
    const auto& [stored_name, stored] = checkpoint.parameters[i];
    if (name != stored_name || target.shape() != stored.shape()) {
      throw DataError("checkpoint tensor " + stored_name + " " + shape_string(stored.shape()) + " does not match " +
                      name + " " + shape_string(target.shape()));
    }
    auto dst = const_cast<Tensor&>(target).mutable_data();
    std::copy(stored.data().begin(), stored.data().end(), dst.begin());
  }
  return model;
}

}  // namespace spm
