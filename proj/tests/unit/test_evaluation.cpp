#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "metric_oracle.hpp"
#include "model_fixtures.hpp"
#include "spm/evaluation.hpp"
#include "spm/training.hpp"
#include "toy_corpus.hpp"

using namespace spm;
using namespace spm::testing;

TEST_CASE("accuracy and F1 examples") {
  CHECK(accuracy({1, 0, 1}, {1, 0, 1}) == 1.0);
  CHECK(f1_positive({1, 0, 1}, {1, 0, 1}) == 1.0);
  CHECK(f1_positive({1, 1, 0, 0}, {1, 0, 1, 0}) == 0.5);
  CHECK(accuracy({1, 1, 0, 0}, {1, 0, 1, 0}) == 0.5);
  CHECK(f1_positive({0, 0, 0}, {1, 0, 1}) == 0.0);
  CHECK(f1_positive({0, 0}, {0, 0}) == 0.0);
  CHECK_THROWS_AS(accuracy({1}, {1, 0}), std::invalid_argument);
  CHECK_THROWS_AS(f1_positive({}, {}), std::invalid_argument);
}

TEST_CASE("Pearson examples") {
  std::vector<double> g{0.5, 1.5, 4.0, 2.0};
  std::vector<double> neg;
  for (double v : g) neg.push_back(-v);
  CHECK(pearson_r(g, g) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pearson_r(neg, g) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(std::abs(pearson_r({1, 2, 3}, {1, 2, 4}) - 0.9820) < 1e-4);
  CHECK_THROWS_AS(pearson_r({2, 2, 2}, {1, 2, 3}), MetricError);
  CHECK_THROWS_AS(pearson_r({1}, {1}), MetricError);
}

TEST_CASE("MAP and MRR examples") {
  auto single = map_mrr({{"q", 0.9, true}, {"q", 0.1, false}});
  CHECK(single.map == 1.0);
  CHECK(single.mrr == 1.0);
  auto by_rank = map_mrr({{"q", 0.4, false}, {"q", 0.3, true}, {"q", 0.2, false}, {"q", 0.1, true}});
  CHECK(by_rank.map == 0.5);
  CHECK(by_rank.mrr == 0.5);
  // ties keep input order
  auto tied = map_mrr({{"q", 0.5, false}, {"q", 0.5, true}});
  CHECK(tied.mrr == 0.5);
  // groups without an answer are skipped
  auto skip = map_mrr({{"a", 0.1, true}, {"b", 0.9, false}});
  CHECK(skip.groups == 1);
  CHECK_THROWS_AS(map_mrr({}), MetricError);
  CHECK_THROWS_AS(map_mrr({{"b", 0.9, false}}), MetricError);
}

TEST_CASE("ranking order from probabilities") {
  std::vector<RankedCandidate> c{{"q", 0.9, false}, {"q", 0.3, true}, {"q", 0.6, false}};
  // ranks 1, 3, 2: the relevant candidate is third
  auto m = map_mrr(c);
  CHECK(m.mrr == doctest::Approx(1.0 / 3));
}

TEST_CASE("random instances match brute force") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    std::size_t n = 2 + rng() % 12;
    std::vector<int> p(n), g(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<int>(rng() % 2);
      g[i] = static_cast<int>(rng() % 2);
    }
    CHECK(std::abs(f1_positive(p, g) - oracle_f1(p, g)) < 1e-9);

    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<double>(rng() % 7);
      y[i] = std::uniform_real_distribution<double>(-2, 2)(rng);
    }
    if (std::adjacent_find(x.begin(), x.end(), std::not_equal_to<>()) != x.end()) {
      CHECK(std::abs(pearson_r(x, y) - oracle_pearson(x, y)) < 1e-9);
    }

    auto cands = random_candidates(rng);
    auto got = map_mrr(cands);
    auto want = oracle_map_mrr(cands);
    CHECK(std::abs(got.map - want.first) < 1e-9);
    CHECK(std::abs(got.mrr - want.second) < 1e-9);
  }
}

TEST_CASE("metric invariances") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t n = 3 + rng() % 10;
    std::vector<int> p(n), g(n);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<int>(rng() % 2);
      g[i] = static_cast<int>(rng() % 2);
      x[i] = std::uniform_real_distribution<double>(0, 5)(rng);
      y[i] = std::uniform_real_distribution<double>(0, 5)(rng);
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> pp, gp;
    std::vector<double> xp, yp, xa;
    for (auto i : perm) {
      pp.push_back(p[i]);
      gp.push_back(g[i]);
      xp.push_back(x[i]);
      yp.push_back(y[i]);
    }
    CHECK(std::abs(f1_positive(p, g) - f1_positive(pp, gp)) < 1e-12);
    CHECK(std::abs(accuracy(p, g) - accuracy(pp, gp)) < 1e-12);
    CHECK(std::abs(pearson_r(x, y) - pearson_r(xp, yp)) < 1e-9);
    for (double v : x) xa.push_back(3.5 * v - 2);
    CHECK(std::abs(pearson_r(xa, y) - pearson_r(x, y)) < 1e-9);

    // swapping labels equals scoring the negative class
    std::vector<int> ps, gs;
    for (std::size_t i = 0; i < n; ++i) {
      ps.push_back(1 - p[i]);
      gs.push_back(1 - g[i]);
    }
    CHECK(f1_positive(ps, gs) == doctest::Approx(f1_positive(p, g, 0)));

    auto cands = random_candidates(rng);
    auto reordered = cands;
    std::stable_sort(reordered.begin(), reordered.end(),
                     [](const auto& a, const auto& b) { return a.group > b.group; });
    CHECK(map_mrr(cands).map == doctest::Approx(map_mrr(reordered).map).epsilon(1e-12));
    for (auto& c : cands) c.relevant = true;
    CHECK(map_mrr(cands).map == 1.0);
    CHECK(map_mrr(cands).mrr == 1.0);
  }
}

TEST_CASE("categorical tables") {
  std::vector<PairExample> ex;
  std::vector<int> pred;
  auto add = [&](const std::string& a, const std::string& b, int label, int p, const std::string& genre) {
    PairExample e;
    std::istringstream sa(a), sb(b);
    for (std::string w; sa >> w;) e.tokens_a.push_back(w);
    for (std::string w; sb >> w;) e.tokens_b.push_back(w);
    e.label = label;
    e.group = genre;
    ex.push_back(e);
    pred.push_back(p);
  };
  // high overlap pairs are right, low overlap pairs mostly wrong
  add("a b c", "a b c", 1, 1, "fiction");
  add("a b c d", "a b c d", 0, 0, "fiction");
  add("a b", "x y", 0, 1, "fiction");
  add("p q", "r s", 1, 0, "fiction");
  add("p q", "r q t u", 1, 1, "fiction");
  auto tables = categorical_tables(pred, ex);
  REQUIRE(tables.size() == 3);
  CHECK(tables[0].name == "genre");
  REQUIRE(tables[0].rows.size() == 1);
  CHECK(tables[0].rows[0].value == doctest::Approx(accuracy(pred, [&] {
          std::vector<int> g;
          for (auto& e : ex) g.push_back(e.label);
          return g;
        }())));
  for (const auto& t : tables) {
    std::size_t total = 0;
    for (const auto& r : t.rows) total += r.count;
    CHECK(total == ex.size());
  }
  const auto& overlap = tables[1];
  CHECK(overlap.rows.front().category == "<30%");
  CHECK(overlap.rows.back().category == ">60%");
  CHECK(overlap.rows.back().value > overlap.rows.front().value);

  for (auto& e : ex) e.group.clear();
  CHECK(categorical_tables(pred, ex).size() == 2);
}

TEST_CASE("reports serialise") {
  MetricReport r;
  r.task = "quora";
  r.count = 4;
  r.metrics = {{"f1", 0.5}, {"accuracy", 0.75}};
  r.categories = {{"overlap", {{"<30%", 4, 0.75}}}};
  CHECK(r.headline() == 0.5);
  CHECK(r.get("accuracy") == 0.75);
  CHECK(r.to_text() == "task = quora\ncount = 4\nf1 = 0.500000\naccuracy = 0.750000\n"
                       "category.overlap.<30% = 0.750000 (n=4)\n");
  CHECK(r.to_csv() == "section,category,count,metric,value\noverall,all,4,f1,0.500000\n"
                      "overall,all,4,accuracy,0.750000\noverlap,<30%,4,accuracy,0.750000\n");
}

TEST_CASE("schema scoring") {
  std::vector<PairExample> ex(4);
  Predictions p;
  p.classes = {1, 1, 0, 0};
  p.scores = {0.9, 0.8, 0.2, 0.1};
  std::vector<int> gold{1, 0, 1, 0};
  for (std::size_t i = 0; i < 4; ++i) {
    ex[i].label = gold[i];
    ex[i].group = i < 2 ? "q1" : "q2";
    ex[i].score = static_cast<double>(i);
  }
  CHECK(score_predictions(Schema::quora, ex, p).headline() == 0.5);
  auto url = score_predictions(Schema::twitter_url, ex, p);
  CHECK(url.metrics[0].first == "f1");
  auto qa = score_predictions(Schema::wikiqa, ex, p);
  CHECK(qa.get("map") == 1.0);
  CHECK(qa.get("mrr") == 1.0);
  // regression clips to [0, 5] before correlating
  Predictions s;
  s.scores = {-3, 1, 2, 9};
  auto sts = score_predictions(Schema::sts2014, ex, s);
  CHECK(sts.headline() == doctest::Approx(pearson_r({0, 1, 2, 5}, {0, 1, 2, 3})));
}

TEST_CASE("evaluation and transfer through a model") {
  auto data = toy_corpus(24, 3);
  auto vocab = Vocabulary::build({&data.train});
  auto model = make_model(preset(Architecture::decatt, PresetSize::toy, TaskHead::classification, 2),
                          load_embeddings({}, 5, vocab, 1), 4);
  TrainConfig tc;
  tc.optimizer = {OptimizerKind::adam, 0.01};
  tc.epochs = 5;
  tc.batch_size = 8;
  train(*model, data, vocab, tc);
  auto in_domain = evaluate(*model, Schema::quora, data.test, vocab);

  auto path = std::filesystem::temp_directory_path() / "spm_eval_transfer.ckpt";
  save_checkpoint(path.string(), *model, vocab.tokens());
  auto ck = read_checkpoint(path.string());
  auto same = transfer_eval(ck, {{"quora", Schema::quora, data.test}}, {}, 9);
  REQUIRE(same.size() == 1);
  CHECK(same[0].headline() == doctest::Approx(in_domain.headline()));

  // unseen words extend the vocabulary
  auto other = toy_corpus(10, 99, 4, 40);
  auto cross = transfer_eval(ck, {{"url", Schema::twitter_url, other.test}}, {}, 9);
  CHECK(cross[0].task == "url");
  CHECK(cross[0].count == 10);

  CHECK_THROWS_AS(transfer_eval(ck, {{"snli", Schema::snli, data.test}}, {}, 9), ConfigError);
  CHECK_THROWS_AS(evaluate(*model, Schema::snli, data.test, vocab), ConfigError);
  auto categorical = evaluate(*model, Schema::quora, data.test, vocab, true);
  CHECK(categorical.categories.size() == 2);
  CHECK(categorical.headline() == in_domain.headline());
  std::filesystem::remove(path);
}
