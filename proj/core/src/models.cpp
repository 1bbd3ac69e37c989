#include "spm/models.hpp"

#include <algorithm>
#include <cmath>

#include "spm/ops.hpp"

namespace spm {

Tensor pair_features(const Tensor& u, const Tensor& v) {
  std::size_t last = u.rank() - 1;
  std::vector<Tensor> parts{u, v, abs(sub(u, v)), mul(u, v)};
  return concat(parts, last);
}

PairModel::PairModel(ModelConfig config, Tensor embedding, std::uint64_t seed)
    : config_(std::move(config)), embedding_(std::move(embedding)), store_(seed), dropout_rng_(seed ^ 0x9e3779b97f4a7c15ull) {
  config_.validate();
  if (embedding_.rank() != 2 || embedding_.dim(1) != config_.embedding_dim || embedding_.dim(0) == 0) {
    throw ConfigError("model.embedding_dim: embedding matrix " + shape_string(embedding_.shape()) +
                      " does not match embedding_dim " + std::to_string(config_.embedding_dim));
  }
  embedding_.set_requires_grad(false);
}

Tensor PairModel::embed(const std::vector<std::int64_t>& ids, std::size_t batch, std::size_t length) const {
  return reshape(gather_rows(embedding_, ids), {batch, length, config_.embedding_dim});
}

void PairModel::build_classifier(std::size_t feature_dim) {
  mlp_ = FeedForward::create(store_, "mlp", feature_dim, config_.mlp, config_.mlp_activation);
  out_ = Linear::create(store_, "out", config_.mlp.empty() ? feature_dim : config_.mlp.back(), config_.outputs());
}

Tensor PairModel::classify(const Tensor& features, bool training) {
  Tensor x = dropout(features, static_cast<Real>(config_.dropout), training, dropout_rng_);
  if (!mlp_.layers.empty()) x = mlp_(x);
  return out_(x);
}

Tensor PairModel::head_loss(const Tensor& output, const Batch& batch) const {
  if (config_.head == TaskHead::regression) {
    if (batch.targets.size() != batch.size) throw DataError("regression head needs a score for every pair");
    Tensor score = affine(sigmoid(reshape(output, {batch.size})), kMaxScore);
    return mse_loss(score, Tensor::from({batch.size}, batch.targets));
  }
  if (batch.labels.size() != batch.size) throw DataError("classification head needs a label for every pair");
  for (int l : batch.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= config_.outputs()) {
      throw DataError("label " + std::to_string(l) + " outside the " + std::to_string(config_.outputs()) +
                      "-class head");
    }
  }
  return cross_entropy(output, batch.labels);
}

Tensor PairModel::loss(const Batch& batch, bool training) { return head_loss(forward(batch, training), batch); }

PairPrediction head_prediction(const ModelConfig& config, const Tensor& output) {
  PairPrediction p;
  p.logits = output;
  std::size_t B = output.dim(0);
  if (config.head == TaskHead::regression) {
    for (std::size_t i = 0; i < B; ++i) {
      p.scores.push_back(kMaxScore / (1 + std::exp(-output.data()[i])));
    }
    return p;
  }
  p.probabilities = softmax(output, 1);
  std::size_t C = output.dim(1);
  auto probs = p.probabilities.data();
  for (std::size_t i = 0; i < B; ++i) {
    auto row = probs.subspan(i * C, C);
    p.predicted.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    if (config.head == TaskHead::ranking) p.scores.push_back(row[1]);
  }
  return p;
}

PairPrediction PairModel::predict(const Batch& batch) {
  NoGradGuard guard;
  return head_prediction(config_, forward(batch, false));
}

Inspection PairModel::inspect(const Batch&) {
  throw NoAlignmentError("no alignment to inspect: " + to_string(config_.architecture) +
                         " encodes each sentence independently");
}

std::vector<std::pair<std::string, Tensor>> PairModel::named_parameters() const { return store_.items(); }

std::size_t PairModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

namespace {

Tensor mask3(const Tensor& mask) { return reshape(mask, {mask.dim(0), mask.dim(1), 1}); }

Tensor max_pool(const Tensor& seq, const Tensor& mask) { return masked_reduce(ReduceOp::max, seq, mask3(mask), 1); }

Tensor mean_max_pool(const Tensor& seq, const Tensor& mask) {
  std::vector<Tensor> parts{masked_reduce(ReduceOp::mean, seq, mask3(mask), 1),
                            masked_reduce(ReduceOp::max, seq, mask3(mask), 1)};
  return concat(parts, 1);
}

Tensor enhance(const Tensor& h, const Tensor& aligned) {
  std::vector<Tensor> parts{h, aligned, sub(h, aligned), mul(h, aligned)};
  return concat(parts, h.rank() - 1);
}

void require_single(const Batch& b) {
  if (b.size != 1) throw DimensionError("inspect expects a single pair");
}

SoftInspection soft_inspection(const AlignmentMatrix& batched) {
  SoftInspection s;
  s.alignment = {select(batched.e, 0, 0), select(batched.beta, 0, 0), select(batched.alpha, 0, 0)};
  s.weights_to_b = softmax(s.alignment.e, 1);
  return s;
}

class InferSent : public PairModel {
 public:
  InferSent(const ModelConfig& c, Tensor emb, std::uint64_t seed) : PairModel(c, std::move(emb), seed) {
    encoder_ = BiLstmParams::create(store_, "encoder", c.embedding_dim, c.hidden);
    build_classifier(8 * c.hidden);
  }

  Tensor forward(const Batch& b, bool training) override {
    Tensor u = max_pool(bilstm(embed(b.ids_a, b.size, b.len_a), encoder_, b.mask_a).concat(), b.mask_a);
    Tensor v = max_pool(bilstm(embed(b.ids_b, b.size, b.len_b), encoder_, b.mask_b).concat(), b.mask_b);
    return classify(pair_features(u, v), training);
  }

 private:
  BiLstmParams encoder_;
};

class Sse : public PairModel {
 public:
  Sse(const ModelConfig& c, Tensor emb, std::uint64_t seed)
      : PairModel(c, std::move(emb), seed), encoder_(ShortcutStack::create(store_, "encoder", c.embedding_dim, c.stack)) {
    build_classifier(8 * c.stack.back());
  }

  Tensor forward(const Batch& b, bool training) override {
    Tensor u = max_pool(encoder_(embed(b.ids_a, b.size, b.len_a), b.mask_a), b.mask_a);
    Tensor v = max_pool(encoder_(embed(b.ids_b, b.size, b.len_b), b.mask_b), b.mask_b);
    return classify(pair_features(u, v), training);
  }

 private:
  ShortcutStack encoder_;
};

class DecAtt : public PairModel {
 public:
  DecAtt(const ModelConfig& c, Tensor emb, std::uint64_t seed) : PairModel(c, std::move(emb), seed) {
    std::size_t in = c.embedding_dim;
    if (c.projection > 0) {
      projection_ = Linear::create(store_, "projection", in, c.projection, false);
      in = c.projection;
    }
    std::vector<std::size_t> widths(c.ffn_depth, c.ffn_width);
    attend_ = FeedForward::create(store_, "attend", in, widths, Activation::relu);
    compare_ = FeedForward::create(store_, "compare", 2 * in, widths, Activation::relu);
    build_classifier(2 * c.ffn_width);
  }

  Tensor forward(const Batch& b, bool training) override {
    Tensor a = words(b.ids_a, b.size, b.len_a);
    Tensor w = words(b.ids_b, b.size, b.len_b);
    auto al = align(a, w, b);
    std::vector<Tensor> ca{a, al.beta}, cb{w, al.alpha};
    Tensor va = masked_reduce(ReduceOp::sum, compare_(concat(ca, 2)), mask3(b.mask_a), 1);
    Tensor vb = masked_reduce(ReduceOp::sum, compare_(concat(cb, 2)), mask3(b.mask_b), 1);
    std::vector<Tensor> both{va, vb};
    return classify(concat(both, 1), training);
  }

  Inspection inspect(const Batch& b) override {
    require_single(b);
    NoGradGuard guard;
    return soft_inspection(align(words(b.ids_a, 1, b.len_a), words(b.ids_b, 1, b.len_b), b));
  }

 private:
  Tensor words(const std::vector<std::int64_t>& ids, std::size_t B, std::size_t L) const {
    Tensor e = embed(ids, B, L);
    return projection_.weight.defined() ? projection_(e) : e;
  }
  AlignmentMatrix align(const Tensor& a, const Tensor& w, const Batch& b) const {
    return soft_align(a, w, [this](const Tensor& x) { return attend_(x); }, b.mask_a, b.mask_b);
  }

  Linear projection_;
  FeedForward attend_;
  FeedForward compare_;
};

// Encoder and alignment shared by both ESIM variants.
struct EsimInput {
  Tensor enhanced_a;  // [B x m x 8h]
  Tensor enhanced_b;
  AlignmentMatrix alignment;
};

EsimInput esim_input(const BiLstmParams& encoder, const Tensor& ea, const Tensor& eb, const Batch& b) {
  Tensor ha = bilstm(ea, encoder, b.mask_a).concat();
  Tensor hb = bilstm(eb, encoder, b.mask_b).concat();
  auto al = soft_align(ha, hb, {}, b.mask_a, b.mask_b);
  return {enhance(ha, al.beta), enhance(hb, al.alpha), al};
}

class EsimSeq : public PairModel {
 public:
  EsimSeq(const ModelConfig& c, Tensor emb, std::uint64_t seed) : PairModel(c, std::move(emb), seed) {
    encoder_ = BiLstmParams::create(store_, "encoder", c.embedding_dim, c.hidden);
    projection_ = Linear::create(store_, "projection", 8 * c.hidden, c.hidden);
    composition_ = BiLstmParams::create(store_, "composition", c.hidden, c.hidden);
    build_classifier(8 * c.hidden);
  }

  Tensor forward(const Batch& b, bool training) override {
    auto in = esim_input(encoder_, embed(b.ids_a, b.size, b.len_a), embed(b.ids_b, b.size, b.len_b), b);
    Tensor va = mean_max_pool(compose(in.enhanced_a, b.mask_a), b.mask_a);
    Tensor vb = mean_max_pool(compose(in.enhanced_b, b.mask_b), b.mask_b);
    std::vector<Tensor> both{va, vb};
    return classify(concat(both, 1), training);
  }

  Inspection inspect(const Batch& b) override {
    require_single(b);
    NoGradGuard guard;
    return soft_inspection(esim_input(encoder_, embed(b.ids_a, 1, b.len_a), embed(b.ids_b, 1, b.len_b), b).alignment);
  }

 private:
  Tensor compose(const Tensor& m, const Tensor& mask) const {
    return bilstm(relu(projection_(m)), composition_, mask).concat();
  }

  BiLstmParams encoder_;
  Linear projection_;
  BiLstmParams composition_;
};

class EsimTree : public PairModel {
 public:
  EsimTree(const ModelConfig& c, Tensor emb, std::uint64_t seed) : PairModel(c, std::move(emb), seed) {
    encoder_ = BiLstmParams::create(store_, "encoder", c.embedding_dim, c.hidden);
    composition_ = TreeLstmParams::create(store_, "composition", 8 * c.hidden, c.hidden);
    build_classifier(4 * c.hidden);
  }

  Tensor forward(const Batch& b, bool training) override {
    if (!b.has_trees()) throw ConfigError("esim_tree needs parse trees for every pair");
    auto in = esim_input(encoder_, embed(b.ids_a, b.size, b.len_a), embed(b.ids_b, b.size, b.len_b), b);
    // every a tree and every b tree run together in one lock-step pass
    std::vector<ShiftReduceProgram> programs;
    std::vector<Tensor> leaves;
    for (std::size_t i = 0; i < b.size; ++i) {
      programs.push_back(b.programs_a[i]);
      leaves.push_back(slice(select(in.enhanced_a, 0, i), 0, 0, b.lengths_a[i]));
    }
    for (std::size_t i = 0; i < b.size; ++i) {
      programs.push_back(b.programs_b[i]);
      leaves.push_back(slice(select(in.enhanced_b, 0, i), 0, 0, b.lengths_b[i]));
    }
    auto runs = run_shift_reduce(composition_, programs, leaves);
    std::vector<Tensor> rows;
    for (std::size_t i = 0; i < b.size; ++i) {
      std::vector<Tensor> parts{pool(runs[i].node_hidden), pool(runs[b.size + i].node_hidden)};
      rows.push_back(concat(parts, 0));
    }
    return classify(stack(rows, 0), training);
  }

  Inspection inspect(const Batch& b) override {
    require_single(b);
    NoGradGuard guard;
    return soft_inspection(esim_input(encoder_, embed(b.ids_a, 1, b.len_a), embed(b.ids_b, 1, b.len_b), b).alignment);
  }

 private:
  // average and max over every node of the tree
  static Tensor pool(const Tensor& nodes) {
    std::vector<Tensor> parts{reduce(ReduceOp::mean, nodes, 0), reduce(ReduceOp::max, nodes, 0)};
    return concat(parts, 0);
  }

  BiLstmParams encoder_;
  TreeLstmParams composition_;
};

class Pwim : public PairModel {
 public:
  Pwim(const ModelConfig& c, Tensor emb, std::uint64_t seed) : PairModel(c, std::move(emb), seed) {
    encoder_ = BiLstmParams::create(store_, "encoder", c.embedding_dim, c.hidden);
    std::size_t in = kInteractionChannels, side = c.crop;
    for (std::size_t k = 0; k < c.conv_channels.size(); ++k) {
      std::size_t out = c.conv_channels[k];
      std::string name = "conv." + std::to_string(k);
      Real bound = static_cast<Real>(std::sqrt(6.0 / (9.0 * static_cast<double>(in + out))));
      kernels_.push_back(store_.add_uniform(name + ".kernel", {out, in, 3, 3}, bound));
      biases_.push_back(store_.add_constant(name + ".bias", {out}, 0));
      in = out;
      side /= 2;
    }
    build_classifier(in * side * side);
  }

  Tensor forward(const Batch& b, bool training) override {
    auto ha = bilstm(embed(b.ids_a, b.size, b.len_a), encoder_, b.mask_a);
    auto hb = bilstm(embed(b.ids_b, b.size, b.len_b), encoder_, b.mask_b);
    std::vector<Tensor> rows;
    for (std::size_t i = 0; i < b.size; ++i) {
      auto t = interaction(ha, hb, b, i);
      Tensor x = fit2d(config_.hard_attention ? t.weighted() : t.D, config_.crop, config_.crop);
      for (std::size_t k = 0; k < kernels_.size(); ++k) {
        x = maxpool2d(relu(conv2d(x, kernels_[k], biases_[k], 1, 1)), 2, 2);
      }
      rows.push_back(reshape(x, {x.numel()}));
    }
    return classify(stack(rows, 0), training);
  }

  Inspection inspect(const Batch& b) override {
    require_single(b);
    NoGradGuard guard;
    auto ha = bilstm(embed(b.ids_a, 1, b.len_a), encoder_, b.mask_a);
    auto hb = bilstm(embed(b.ids_b, 1, b.len_b), encoder_, b.mask_b);
    return interaction(ha, hb, b, 0);
  }

 private:
  InteractionTensor interaction(const BiLstmOutput& ha, const BiLstmOutput& hb, const Batch& b, std::size_t i) const {
    auto rows = [&](const Tensor& t, std::size_t len) { return slice(select(t, 0, i), 0, 0, len); };
    std::size_t m = b.lengths_a[i], n = b.lengths_b[i];
    auto t = build_interaction_tensor(rows(ha.forward, m), rows(ha.backward, m), rows(hb.forward, n),
                                      rows(hb.backward, n));
    return config_.hard_attention ? hard_attention(t) : t;
  }

  BiLstmParams encoder_;
  std::vector<Tensor> kernels_;
  std::vector<Tensor> biases_;
};

class EsimEnsemble : public PairModel {
 public:
  EsimEnsemble(const ModelConfig& c, Tensor emb, std::uint64_t seed) : PairModel(c, emb, seed) {
    ModelConfig s = c, t = c;
    s.architecture = Architecture::esim_seq;
    t.architecture = Architecture::esim_tree;
    seq_ = std::make_unique<EsimSeq>(s, emb, seed);
    tree_ = std::make_unique<EsimTree>(t, emb, seed + 1);
  }

  // log of the averaged probabilities (or the logit of the averaged score)
  Tensor forward(const Batch& b, bool training) override {
    Tensor x = seq_->forward(b, training);
    Tensor y = tree_->forward(b, training);
    if (config_.head == TaskHead::regression) {
      Tensor s = affine(add(sigmoid(x), sigmoid(y)), 0.5);
      return log(div(s, affine(s, -1, 1)));
    }
    return log(affine(add(softmax(x, 1), softmax(y, 1)), 0.5));
  }

  // members are trained side by side on their own losses
  Tensor loss(const Batch& b, bool training) override { return add(seq_->loss(b, training), tree_->loss(b, training)); }

  PairPrediction predict(const Batch& b) override {
    PairPrediction p = ensemble_prediction(seq_->predict(b), tree_->predict(b));
    NoGradGuard guard;
    p.logits = forward(b, false);
    return p;
  }

  Inspection inspect(const Batch& b) override { return seq_->inspect(b); }

  std::vector<std::pair<std::string, Tensor>> named_parameters() const override {
    std::vector<std::pair<std::string, Tensor>> all;
    for (const auto& [n, t] : seq_->named_parameters()) all.emplace_back("seq." + n, t);
    for (const auto& [n, t] : tree_->named_parameters()) all.emplace_back("tree." + n, t);
    return all;
  }

 private:
  std::unique_ptr<EsimSeq> seq_;
  std::unique_ptr<EsimTree> tree_;
};

}  // namespace

PairPrediction ensemble_prediction(const PairPrediction& first, const PairPrediction& second) {
  bool regression = !first.probabilities.defined();
  if (regression != !second.probabilities.defined() || first.scores.size() != second.scores.size() ||
      (!regression && first.probabilities.shape() != second.probabilities.shape())) {
    throw ConfigError("ensemble members disagree on the prediction head");
  }
  PairPrediction p;
  if (!regression) {
    NoGradGuard guard;
    p.probabilities = affine(add(first.probabilities, second.probabilities), 0.5);
    std::size_t B = p.probabilities.dim(0), C = p.probabilities.dim(1);
    auto probs = p.probabilities.data();
    for (std::size_t i = 0; i < B; ++i) {
      auto row = probs.subspan(i * C, C);
      p.predicted.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  for (std::size_t i = 0; i < first.scores.size(); ++i) p.scores.push_back((first.scores[i] + second.scores[i]) / 2);
  return p;
}

std::unique_ptr<PairModel> make_model(const ModelConfig& config, Tensor embedding, std::uint64_t seed) {
  switch (config.architecture) {
    case Architecture::infersent:
      return std::make_unique<InferSent>(config, std::move(embedding), seed);
    case Architecture::sse:
      return std::make_unique<Sse>(config, std::move(embedding), seed);
    case Architecture::decatt:
      return std::make_unique<DecAtt>(config, std::move(embedding), seed);
    case Architecture::esim_seq:
      return std::make_unique<EsimSeq>(config, std::move(embedding), seed);
    case Architecture::esim_tree:
      return std::make_unique<EsimTree>(config, std::move(embedding), seed);
    case Architecture::esim_ensemble:
      return std::make_unique<EsimEnsemble>(config, std::move(embedding), seed);
    case Architecture::pwim:
      return std::make_unique<Pwim>(config, std::move(embedding), seed);
  }
  throw ConfigError("unknown architecture");
}

}  // namespace spm
