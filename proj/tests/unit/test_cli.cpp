#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "doctest.h"
#include "json.hpp"
#include "toy_corpus.hpp"

using namespace spm;
using namespace spm::cli;
namespace fs = std::filesystem;

namespace {

struct Workspace {
  fs::path root;
  explicit Workspace(const std::string& name) : root(fs::temp_directory_path() / ("spm_cli_" + name)) {
    fs::remove_all(root);
    fs::create_directories(root / "data");
    ::setenv("SPM_RUN_ROOT", (root / "runs").c_str(), 1);
  }
  ~Workspace() { fs::remove_all(root); }

  void write(const fs::path& rel, const std::string& text) const {
    fs::create_directories((root / rel).parent_path());
    std::ofstream(root / rel) << text;
  }

  /// Toy binary corpus with flat bracketed trees for every split.
  void dataset(const std::string& dir, std::uint64_t seed, Schema schema = Schema::quora) const {
    auto d = testing::toy_corpus(48, seed, 5);
    if (schema_info(schema).genre) {
      for (std::size_t i = 0; i < d.train.size(); ++i) d.train[i].group = i % 3 ? "fiction" : "travel";
    }
    std::vector<PairExample> splits[3] = {{d.train.begin(), d.train.begin() + 32},
                                          {d.train.begin() + 32, d.train.begin() + 40},
                                          {d.train.begin() + 40, d.train.end()}};
    const char* names[3] = {"train", "dev", "test"};
    for (int s = 0; s < 3; ++s) {
      fs::create_directories(root / dir);
      write_split(root / dir / (std::string(names[s]) + ".tsv"), schema, splits[s]);
      std::ofstream ta(root / dir / (std::string(names[s]) + ".trees_a")), tb(root / dir / (std::string(names[s]) + ".trees_b"));
      for (const auto& e : splits[s]) {
        ta << "(S";
        for (const auto& w : e.tokens_a) ta << " " << w;
        ta << ")\n";
        tb << "(S";
        for (const auto& w : e.tokens_b) tb << " " << w;
        tb << ")\n";
      }
    }
  }

  std::string config(const std::string& arch, const std::string& extra = "") const {
    return R"({"seed": 5, "model": {"architecture": ")" + arch +
           R"(", "preset": "toy"}, "data": {"dir": "data", "schema": "quora"},
               "training": {"epochs": 3, "lr": 0.01, "batch_size": 8)" +
           extra + R"(}, "output": {"run_dir": ")" + arch + R"("}})";
  }
};

struct Result {
  int code;
  std::string out, err;
};

Result spm_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "spm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("run configuration parsing") {
  auto c = parse_run_config(R"({"seed": 4, "model": {"architecture": "decatt"},
                                 "data": {"dir": "d", "schema": "twitter_url"}})",
                            "/base");
  CHECK(c.model.head == TaskHead::classification);
  CHECK(c.model.num_classes == 2);
  CHECK(c.data_dir == fs::path("/base/d"));
  CHECK(c.training.optimizer.kind == OptimizerKind::adagrad);
  CHECK(c.training.clip_norm == 5);
  CHECK(c.training.seed == 4);
  CHECK(c.run_dir.filename() == "twitter_url-decatt");
  auto sts = parse_run_config(R"({"seed": 1, "model": {"architecture": "sse", "preset": "toy"},
                                   "data": {"dir": "d", "schema": "sts2014"}, "training": {"epochs": 2}})");
  CHECK(sts.model.head == TaskHead::regression);
  CHECK(sts.training.schedule == LrSchedule::halving);
  CHECK(sts.training.epochs == 2);
  CHECK(parse_run_config(c.to_json()).to_json() == c.to_json());
  CHECK(c.digest().size() == 16);

  auto bad = [](const std::string& text, const std::string& needle) {
    try {
      parse_run_config(text);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK_MESSAGE(std::string(e.what()).find(needle) != std::string::npos, e.what());
    }
  };
  bad(R"({"model": {"architecture": "decatt"}, "data": {"dir": "d", "schema": "quora"}})", "config.seed");
  bad(R"({"seed": 1, "model": {"architecture": "decatt"}, "data": {"dir": "d", "schema": "quora"}, "extra": 1})",
      "config.extra");
  bad(R"({"seed": 1, "model": {"architecture": "decatt"}, "data": {"dir": "d", "schema": "quora"},
          "training": {"momentum": 0.9}})",
      "training.momentum");
  bad(R"({"seed": 1, "model": {"architecture": "decatt"}, "data": {"dir": "d", "schema": "quora"},
          "training": {"lr": "fast"}})",
      "training.lr");
  bad(R"({"seed": 1, "model": {"architecture": "decatt", "num_classes": 3}, "data": {"dir": "d", "schema": "quora"}})",
      "model.num_classes");
  bad(R"({"seed": 1, "model": {"architecture": "decatt"}, "data": {"dir": "d", "schema": "imdb"}})", "imdb");
  bad("{\"seed\": 1,\n \"model\": }", "line 2");
}

TEST_CASE("train writes every artifact and is reproducible") {
  Workspace ws("train");
  ws.dataset("data", 1);
  ws.write("esim.json", ws.config("esim_seq"));
  auto first = spm_cli({"train", (ws.root / "esim.json").string()});
  REQUIRE_MESSAGE(first.code == 0, first.err);
  auto dir = ws.root / "runs" / "esim_seq";
  for (const char* f : {"config.json", "epochs.jsonl", "best.ckpt", "test_report.txt", "test_report.csv"}) {
    CHECK_MESSAGE(fs::exists(dir / f), f);
  }
  CHECK_FALSE(fs::exists(dir / "FAILED"));
  auto meta = nlohmann::json::parse(slurp(dir / "config.json"));
  CHECK(slurp(dir / "test_report.txt").find(meta["digest"].get<std::string>()) != std::string::npos);
  auto log1 = slurp(dir / "epochs.jsonl");
  auto csv1 = slurp(dir / "test_report.csv");
  std::string line1 = log1.substr(0, log1.find("\"seconds\""));

  auto second = spm_cli({"train", (ws.root / "esim.json").string()});
  REQUIRE(second.code == 0);
  auto log2 = slurp(dir / "epochs.jsonl");
  CHECK(log2.substr(0, log2.find("\"seconds\"")) == line1);
  CHECK(slurp(dir / "test_report.csv") == csv1);

  // the checkpoint on its own test split reproduces the train-time report
  auto eval = spm_cli({"eval", (dir / "best.ckpt").string(), (ws.root / "data").string(), "--schema", "quora", "--out",
                   (ws.root / "eval").string()});
  REQUIRE_MESSAGE(eval.code == 0, eval.err);
  CHECK(slurp(ws.root / "eval" / "report.csv") == csv1);

  auto flags = spm_cli({"train", (ws.root / "esim.json").string(), "--epochs", "1", "--run-dir", "short"});
  REQUIRE(flags.code == 0);
  auto short_log = slurp(ws.root / "runs" / "short" / "epochs.jsonl");
  CHECK(std::count(short_log.begin(), short_log.end(), '\n') == 1);
}

TEST_CASE("train preconditions and failures") {
  Workspace ws("pre");
  ws.dataset("data", 2);
  ws.write("emb.json", R"({"seed": 1, "model": {"architecture": "decatt", "preset": "toy"},
                           "data": {"dir": "data", "schema": "quora", "embeddings": "missing.vec"}})");
  auto r = spm_cli({"train", (ws.root / "emb.json").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("missing.vec") != std::string::npos);
  CHECK_FALSE(fs::exists(ws.root / "runs"));

  ws.write("nodata.json", R"({"seed": 1, "model": {"architecture": "decatt", "preset": "toy"},
                              "data": {"dir": "nowhere", "schema": "quora"}})");
  CHECK(spm_cli({"train", (ws.root / "nodata.json").string()}).code == 2);
  CHECK(spm_cli({"train", (ws.root / "absent.json").string()}).code == 1);
  ws.write("typo.json", R"({"seed": 1, "model": {"architecture": "decatt", "hiden": 3},
                           "data": {"dir": "data", "schema": "quora"}})");
  auto typo = spm_cli({"train", (ws.root / "typo.json").string()});
  CHECK(typo.code == 1);
  CHECK(typo.err.find("model.hiden") != std::string::npos);

  // divergence mid-run leaves the log and a failure marker
  ws.write("diverge.json", ws.config("infersent", R"(, "lr": 1e300, "optimizer": "sgd")"));
  auto d = spm_cli({"train", (ws.root / "diverge.json").string()});
  CHECK(d.code == 3);
  CHECK(fs::exists(ws.root / "runs" / "infersent" / "FAILED"));
  CHECK(fs::exists(ws.root / "runs" / "infersent" / "config.json"));
}

TEST_CASE("eval, categorical tables and missing checkpoints") {
  Workspace ws("eval");
  ws.dataset("data", 3, Schema::multinli);
  ws.write("nli.json", R"({"seed": 1, "model": {"architecture": "decatt", "preset": "toy"},
                           "data": {"dir": "data", "schema": "multinli"}, "training": {"epochs": 1}})");
  REQUIRE(spm_cli({"train", (ws.root / "nli.json").string()}).code == 0);
  auto ckpt = (ws.root / "runs" / "multinli-decatt" / "best.ckpt").string();
  auto r = spm_cli({"eval", ckpt, (ws.root / "data").string(), "--schema", "multinli", "--categorical"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (const char* table : {"category.genre.", "category.overlap.", "category.length."}) {
    CHECK_MESSAGE(r.out.find(table) != std::string::npos, table);
  }
  CHECK(spm_cli({"eval", (ws.root / "none.ckpt").string(), (ws.root / "data").string(), "--schema", "multinli"}).code == 2);
  // rows in the wrong layout are a data error, a head mismatch a config error
  CHECK(spm_cli({"eval", ckpt, (ws.root / "data").string(), "--schema", "quora"}).code == 2);
  ws.dataset("binary", 4);
  CHECK(spm_cli({"eval", ckpt, (ws.root / "binary").string(), "--schema", "quora"}).code == 1);
}

TEST_CASE("params tables") {
  auto r = spm_cli({"params", "--architecture", "decatt"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("trainable,381803") != std::string::npos);
  auto esim = spm_cli({"params", "--architecture", "esim_seq", "--vocab-size", "1000"});
  CHECK(esim.out.find("trainable,4326303") != std::string::npos);
  CHECK(esim.out.find("embedding,300000") != std::string::npos);
  CHECK(esim.out.find("inclusive,4626303") != std::string::npos);
  // toy counts equal the hand-summed encoder gates: 2 * 4(h(5 + 4) + h)
  auto toy = spm_cli({"params", "--architecture", "infersent", "--preset", "toy"});
  CHECK(toy.out.find("encoder,320") != std::string::npos);
  CHECK(spm_cli({"params"}).code == 1);
  CHECK(spm_cli({"params", "--architecture", "bimpm"}).code == 1);
}

TEST_CASE("inspect-align artifacts") {
  Workspace ws("inspect");
  // ESIM at a realistic width: self-alignment peaks on the diagonal
  Vocabulary vocab;
  std::vector<std::string> words{"a", "man", "is", "playing", "the", "guitar"};
  for (const auto& w : words) vocab.add(w);
  auto emb = load_embeddings({}, 50, vocab, 1);
  auto esim_cfg = preset(Architecture::esim_seq, PresetSize::appendix_b, TaskHead::classification, 2);
  esim_cfg.embedding_dim = 50;
  esim_cfg.hidden = 64;
  auto esim = make_model(esim_cfg, emb, 2);
  save_checkpoint((ws.root / "esim.ckpt").string(), *esim, vocab.tokens());
  auto r = spm_cli({"inspect-align", (ws.root / "esim.ckpt").string(), "a man is playing the guitar",
                "a man is playing the guitar", "--out", (ws.root / "esim").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  std::ifstream in(ws.root / "esim" / "alignment.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "token,a,man,is,playing,the,guitar");
  for (std::size_t row = 0; std::getline(in, line); ++row) {
    std::stringstream cells(line);
    std::string cell;
    std::getline(cells, cell, ',');
    CHECK(cell == words[row]);
    std::vector<double> v;
    while (std::getline(cells, cell, ',')) v.push_back(std::stod(cell));
    CHECK(std::max_element(v.begin(), v.end()) - v.begin() == static_cast<std::ptrdiff_t>(row));
  }

  auto pwim = make_model(preset(Architecture::pwim, PresetSize::toy, TaskHead::classification, 2),
                         load_embeddings({}, 5, vocab, 1), 2);
  save_checkpoint((ws.root / "pwim.ckpt").string(), *pwim, vocab.tokens());
  REQUIRE(spm_cli({"inspect-align", (ws.root / "pwim.ckpt").string(), "a man", "the man is", "--out",
               (ws.root / "pwim").string()})
              .code == 0);
  auto channels = slurp(ws.root / "pwim" / "interaction.csv");
  std::size_t sections = 0;
  for (std::size_t p = channels.find("# channel"); p != std::string::npos; p = channels.find("# channel", p + 1)) {
    ++sections;
  }
  CHECK(sections == 13);
  auto hard = slurp(ws.root / "pwim" / "hard_attention.csv");
  CHECK(std::count(hard.begin(), hard.end(), '\n') == 3);

  auto tree = make_model(preset(Architecture::esim_tree, PresetSize::toy, TaskHead::classification, 2),
                         load_embeddings({}, 5, vocab, 1), 2);
  save_checkpoint((ws.root / "tree.ckpt").string(), *tree, vocab.tokens());
  CHECK(spm_cli({"inspect-align", (ws.root / "tree.ckpt").string(), "a man is", "the man", "--out",
             (ws.root / "tree").string(), "--tree-a", "(S (NP a man) (VP is))"})
            .code == 0);
  CHECK(spm_cli({"inspect-align", (ws.root / "tree.ckpt").string(), "a man is", "the man", "--out",
             (ws.root / "tree").string(), "--tree-a", "(S a guitar)"})
            .code == 2);

  auto sse = make_model(preset(Architecture::sse, PresetSize::toy, TaskHead::classification, 2),
                        load_embeddings({}, 5, vocab, 1), 2);
  save_checkpoint((ws.root / "sse.ckpt").string(), *sse, vocab.tokens());
  auto refused = spm_cli({"inspect-align", (ws.root / "sse.ckpt").string(), "a", "a", "--out", (ws.root / "sse").string()});
  CHECK(refused.code == 1);
  CHECK(refused.err.find("no alignment to inspect") != std::string::npos);
}

TEST_CASE("transfer and curve") {
  Workspace ws("transfer");
  ws.dataset("data", 4);
  ws.dataset("other", 9, Schema::twitter_url);
  ws.write("decatt.json", ws.config("decatt"));
  REQUIRE(spm_cli({"train", (ws.root / "decatt.json").string()}).code == 0);
  auto ckpt = (ws.root / "runs" / "decatt" / "best.ckpt").string();
  auto t = spm_cli({"transfer", ckpt, "--target", "self=quora:" + (ws.root / "data").string(), "--target",
                "url=twitter_url:" + (ws.root / "other").string(), "--out", (ws.root / "transfer.csv").string()});
  REQUIRE_MESSAGE(t.code == 0, t.err);
  CHECK(t.out.rfind("target,schema,count,metric,value\n", 0) == 0);
  CHECK(t.out.find("url,twitter_url,8,f1,") != std::string::npos);
  auto in_domain = slurp(ws.root / "runs" / "decatt" / "test_report.csv");
  auto acc_line = in_domain.substr(in_domain.find("accuracy,") + 9, 8);
  CHECK(t.out.find("self,quora,8,accuracy," + acc_line) != std::string::npos);
  CHECK(spm_cli({"transfer", ckpt, "--target", "bad"}).code == 1);

  auto curve = spm_cli({"curve", (ws.root / "decatt.json").string(), "--fractions", "0.25,1.0,0.5"});
  REQUIRE_MESSAGE(curve.code == 0, curve.err);
  std::istringstream rows(slurp(ws.root / "runs" / "decatt" / "curve.csv"));
  std::string line;
  std::getline(rows, line);
  CHECK(line == "fraction,size,metric");
  std::vector<std::size_t> sizes;
  while (std::getline(rows, line)) sizes.push_back(std::stoul(line.substr(line.find(',') + 1)));
  CHECK(sizes == std::vector<std::size_t>{8, 16, 32});

  auto single = spm_cli({"curve", (ws.root / "decatt.json").string(), "--fractions", "1.0"});
  REQUIRE(single.code == 0);
  auto metric = single.out.substr(single.out.rfind(',') + 1, 8);
  CHECK(in_domain.find(metric) != std::string::npos);
  CHECK(spm_cli({"curve", (ws.root / "decatt.json").string(), "--fractions", "0"}).code == 1);
  CHECK(spm_cli({"curve", (ws.root / "decatt.json").string(), "--fractions", "x"}).code == 1);
}

TEST_CASE("shipped configurations parse") {
  std::size_t seen = 0;
  for (const auto& entry : fs::directory_iterator(SPM_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    CAPTURE(entry.path().string());
    auto c = load_run_config(entry.path());
    CHECK(c.data_dir.is_absolute());
    CHECK(c.model.head == schema_info(c.schema).head);
    ++seen;
  }
  CHECK(seen >= 8);
}
