#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "spm/interaction.hpp"
#include "spm/ops.hpp"

using namespace spm;
using spm::testing::check_gradients;
using spm::testing::random_tensor;

namespace {

using Matrix = std::vector<std::vector<double>>;

Matrix to_matrix(const Tensor& t) {
  Matrix m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at({i, j});
  }
  return m;
}

// beta/alpha by explicit double loops
void loop_align(const Matrix& a, const Matrix& b, const std::vector<int>& am, const std::vector<int>& bm,
                Matrix& beta, Matrix& alpha) {
  std::size_t m = a.size(), n = b.size(), d = a[0].size();
  Matrix e(m, std::vector<double>(n));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < d; ++k) e[i][j] += a[i][k] * b[j][k];
    }
  }
  beta.assign(m, std::vector<double>(d));
  alpha.assign(n, std::vector<double>(d));
  for (std::size_t i = 0; i < m; ++i) {
    double z = 0;
    for (std::size_t j = 0; j < n; ++j) z += bm[j] ? std::exp(e[i][j]) : 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!bm[j]) continue;
      for (std::size_t k = 0; k < d; ++k) beta[i][k] += std::exp(e[i][j]) / z * b[j][k];
    }
  }
  for (std::size_t j = 0; j < n; ++j) {
    double z = 0;
    for (std::size_t i = 0; i < m; ++i) z += am[i] ? std::exp(e[i][j]) : 0;
    for (std::size_t i = 0; i < m; ++i) {
      if (!am[i]) continue;
      for (std::size_t k = 0; k < d; ++k) alpha[j][k] += std::exp(e[i][j]) / z * a[i][k];
    }
  }
}

Tensor mask_tensor(const std::vector<int>& m) {
  std::vector<Real> v(m.begin(), m.end());
  return Tensor::from({m.size()}, v);
}

InteractionTensor with_cosines(const Matrix& cos) {
  std::size_t m = cos.size(), n = cos[0].size();
  auto D = Tensor::zeros({kInteractionChannels, m, n});
  auto data = D.mutable_data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      data[(kConcatCosineChannel * m + i) * n + j] = cos[i][j];
      data[(12 * m + i) * n + j] = 1;
    }
  }
  return {D, Tensor::full({m, n}, 1)};
}

// Greedy by repeated global maximum over the still-free rows and columns.
std::vector<std::pair<std::size_t, std::size_t>> rescan_greedy(const Matrix& s) {
  std::size_t m = s.size(), n = s[0].size();
  std::vector<bool> ru(m), cu(n);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  while (out.size() < std::min(m, n)) {
    std::size_t bi = m, bj = n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (ru[i] || cu[j]) continue;
        if (bi == m || s[i][j] > s[bi][bj]) bi = i, bj = j;
      }
    }
    ru[bi] = cu[bj] = true;
    out.emplace_back(bi, bj);
  }
  return out;
}

// Best total score over all one-to-one matchings of size min(m, n).
double best_matching(const Matrix& s) {
  std::size_t m = s.size(), n = s[0].size();
  bool flip = m > n;
  std::size_t small = flip ? n : m, large = flip ? m : n;
  std::vector<std::size_t> perm(large);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best = -1e300;
  do {
    double total = 0;
    for (std::size_t k = 0; k < small; ++k) total += flip ? s[perm[k]][k] : s[k][perm[k]];
    best = std::max(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST_CASE("uniform scores average the other sentence") {
  std::mt19937_64 rng(1);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({5, 4}, rng);
  auto zero = [](const Tensor& x) { return affine(x, 0); };
  auto al = soft_align(a, b, zero, std::nullopt, mask_tensor({1, 1, 0, 1, 0}));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      double mean = (b.at({0, k}) + b.at({1, k}) + b.at({3, k})) / 3;
      CHECK(std::abs(al.beta.at({i, k}) - mean) < 1e-12);
    }
  }
}

TEST_CASE("dominant diagonal picks the matching token") {
  auto a = Tensor::from({3, 3}, {10, 0, 0, 0, 10, 0, 0, 0, 10});
  auto al = soft_align(a, a);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(al.beta.at({i, k}) - a.at({i, k})) < 1e-6 * 10);
  }
}

TEST_CASE("soft alignment matches loops, with and without masks") {
  std::mt19937_64 rng(2);
  for (auto [am, bm] : std::vector<std::pair<std::vector<int>, std::vector<int>>>{
           {{1, 1, 1}, {1, 1, 1, 1}}, {{1, 0, 1}, {0, 1, 1, 0}}}) {
    auto a = random_tensor({3, 2}, rng);
    auto b = random_tensor({4, 2}, rng);
    auto al = soft_align(a, b, {}, mask_tensor(am), mask_tensor(bm));
    Matrix beta, alpha;
    loop_align(to_matrix(a), to_matrix(b), am, bm, beta, alpha);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t k = 0; k < 2; ++k) CHECK(std::abs(al.beta.at({i, k}) - beta[i][k]) < 1e-6);
    }
    for (std::size_t j = 0; j < 4; ++j) {
      for (std::size_t k = 0; k < 2; ++k) CHECK(std::abs(al.alpha.at({j, k}) - alpha[j][k]) < 1e-6);
    }
  }
}

TEST_CASE("soft alignment properties") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_tensor({4, 3}, rng, false, 2.0);
    auto b = random_tensor({3, 3}, rng, false, 2.0);
    std::vector<int> bm{1, trial % 2, 1};
    auto al = soft_align(a, b, {}, std::nullopt, mask_tensor(bm));
    // beta inside the envelope of the live b rows
    for (std::size_t k = 0; k < 3; ++k) {
      double lo = 1e9, hi = -1e9;
      for (std::size_t j = 0; j < 3; ++j) {
        if (!bm[j]) continue;
        lo = std::min(lo, double(b.at({j, k})));
        hi = std::max(hi, double(b.at({j, k})));
      }
      for (std::size_t i = 0; i < 4; ++i) {
        CHECK(al.beta.at({i, k}) >= lo - 1e-12);
        CHECK(al.beta.at({i, k}) <= hi + 1e-12);
      }
    }
    // swapping the sentences swaps the roles
    auto sw = soft_align(b, a);
    auto un = soft_align(a, b);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(sw.e.at({j, i}) - un.e.at({i, j})) < 1e-12);
    }
    for (std::size_t x = 0; x < un.beta.numel(); ++x) CHECK(std::abs(un.beta.data()[x] - sw.alpha.data()[x]) < 1e-12);
    for (std::size_t x = 0; x < un.alpha.numel(); ++x) CHECK(std::abs(un.alpha.data()[x] - sw.beta.data()[x]) < 1e-12);
  }
}

TEST_CASE("batched soft alignment equals per-example") {
  std::mt19937_64 rng(4);
  auto a = random_tensor({2, 3, 2}, rng);
  auto b = random_tensor({2, 4, 2}, rng);
  auto am = Tensor::from({2, 3}, {1, 1, 1, 1, 1, 0});
  auto bm = Tensor::from({2, 4}, {1, 1, 0, 0, 1, 1, 1, 1});
  auto al = soft_align(a, b, {}, am, bm);
  for (std::size_t p = 0; p < 2; ++p) {
    auto one = soft_align(select(a, 0, p), select(b, 0, p), {}, select(am, 0, p), select(bm, 0, p));
    auto beta = select(al.beta, 0, p);
    for (std::size_t x = 0; x < beta.numel(); ++x) CHECK(std::abs(beta.data()[x] - one.beta.data()[x]) < 1e-12);
    // alpha rows of padded b positions are not used; compare the live ones
    auto alpha = select(al.alpha, 0, p);
    for (std::size_t j = 0; j < (p == 0 ? 2u : 4u); ++j) {
      for (std::size_t k = 0; k < 2; ++k) CHECK(std::abs(alpha.at({j, k}) - one.alpha.at({j, k})) < 1e-12);
    }
  }
}

TEST_CASE("soft alignment errors and gradients") {
  std::mt19937_64 rng(5);
  auto a = random_tensor({3, 2}, rng, true);
  auto b = random_tensor({2, 2}, rng, true);
  CHECK_THROWS_AS(soft_align(a, b, {}, std::nullopt, mask_tensor({0, 0})), DegenerateMaskError);
  CHECK_THROWS_AS(soft_align(a, random_tensor({2, 3}, rng)), DimensionError);
  auto w = random_tensor({2, 2}, rng);
  auto scorer = [&](const Tensor& x) { return tanh(matmul(x, w)); };
  auto r = check_gradients(
      [&] {
        auto al = soft_align(a, b, scorer, mask_tensor({1, 0, 1}), std::nullopt);
        return sum_all(mul(al.beta, al.beta)) + sum_all(al.alpha);
      },
      {{"a", a}, {"b", b}});
  CHECK(r.max_error < 1e-6);
}

TEST_CASE("interaction tensor layout") {
  std::mt19937_64 rng(6);
  SUBCASE("self pair of one token") {
    auto f = random_tensor({1, 3}, rng), g = random_tensor({1, 3}, rng);
    auto t = build_interaction_tensor(f, g, f, g);
    CHECK(t.D.shape() == Shape{13, 1, 1});
    for (std::size_t v = 0; v < 4; ++v) {
      CHECK(std::abs(t.D.at({3 * v, 0, 0}) - 1) < 1e-12);
      CHECK(t.D.at({3 * v + 1, 0, 0}) == 0);
    }
    CHECK(t.D.at({12, 0, 0}) == 1);
  }
  SUBCASE("random pair against per-pair loops") {
    auto fa = random_tensor({2, 3}, rng), ba = random_tensor({2, 3}, rng);
    auto fb = random_tensor({3, 3}, rng), bb = random_tensor({3, 3}, rng);
    auto t = build_interaction_tensor(fa, ba, fb, bb);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        for (std::size_t v = 0; v < 4; ++v) {
          std::vector<double> u, w;
          for (std::size_t k = 0; k < 3; ++k) {
            double f1 = fa.at({i, k}), b1 = ba.at({i, k}), f2 = fb.at({j, k}), b2 = bb.at({j, k});
            if (v == 0) u.push_back(f1), w.push_back(f2);
            if (v == 1) u.push_back(b1), w.push_back(b2);
            if (v == 3) u.push_back(f1 + b1), w.push_back(f2 + b2);
          }
          if (v == 2) {
            for (std::size_t k = 0; k < 3; ++k) u.push_back(fa.at({i, k})), w.push_back(fb.at({j, k}));
            for (std::size_t k = 0; k < 3; ++k) u.push_back(ba.at({i, k})), w.push_back(bb.at({j, k}));
          }
          double dot = 0, nu = 0, nw = 0, dist = 0;
          for (std::size_t k = 0; k < u.size(); ++k) {
            dot += u[k] * w[k];
            nu += u[k] * u[k];
            nw += w[k] * w[k];
            dist += (u[k] - w[k]) * (u[k] - w[k]);
          }
          CHECK(std::abs(t.D.at({3 * v, i, j}) - dot / std::sqrt(nu * nw)) < 1e-6);
          CHECK(std::abs(t.D.at({3 * v + 1, i, j}) + std::sqrt(dist)) < 1e-6);
          CHECK(std::abs(t.D.at({3 * v + 2, i, j}) - dot) < 1e-6);
        }
        CHECK(t.D.at({12, i, j}) == 1);
        CHECK(t.hard_weights.at({i, j}) == 1);
      }
    }
    auto swapped = build_interaction_tensor(fb, bb, fa, ba);
    for (std::size_t c = 0; c < 13; ++c) {
      for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(swapped.D.at({c, j, i}) - t.D.at({c, i, j})) < 1e-12);
      }
    }
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(build_interaction_tensor(random_tensor({2, 3}, rng), random_tensor({2, 4}, rng),
                                             random_tensor({2, 3}, rng), random_tensor({2, 4}, rng)),
                    DimensionError);
  }
}

TEST_CASE("hard attention examples") {
  auto one = hard_attention(with_cosines({{0.3}}));
  CHECK(one.hard_weights.at({0, 0}) == 10);

  Matrix two{{0.9, 0.1}, {0.2, 0.8}};
  auto t = hard_attention(with_cosines(two));
  CHECK(t.hard_weights.to_vector() == std::vector<Real>{10, 1, 1, 10});
  CHECK(std::abs(best_matching(two) - 1.7) < 1e-12);

  auto wide = hard_attention(with_cosines({{0.1, 0.5, 0.2}, {0.4, 0.6, 0.3}}));
  auto w = wide.hard_weights.to_vector();
  CHECK(std::count(w.begin(), w.end(), Real{10}) == 2);
  CHECK(w == std::vector<Real>{1, 1, 10, 1, 10, 1});

  // ties go to the lowest (row, column)
  auto tie = hard_attention(with_cosines({{0.5, 0.5}, {0.5, 0.5}}));
  CHECK(tie.hard_weights.to_vector() == std::vector<Real>{10, 1, 1, 10});
}

TEST_CASE("hard attention properties on random tensors") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t m = 1 + rng() % 4, n = 1 + rng() % 4;
    Matrix s(m, std::vector<double>(n));
    for (auto& row : s) {
      for (auto& x : row) x = std::round(u(rng) * 4) / 4;  // coarse values force ties
    }
    auto t = hard_attention(with_cosines(s));
    auto expect = rescan_greedy(s);
    CHECK(greedy_alignment(select(t.D, 0, kConcatCosineChannel)) == expect);
    std::size_t tens = 0;
    std::vector<int> per_row(m), per_col(n);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        auto wv = t.hard_weights.at({i, j});
        CHECK((wv == 1 || wv == 10));
        if (wv == 10) ++tens, ++per_row[i], ++per_col[j];
      }
    }
    CHECK(tens == std::min(m, n));
    CHECK(*std::max_element(per_row.begin(), per_row.end()) <= 1);
    CHECK(*std::max_element(per_col.begin(), per_col.end()) <= 1);
    auto again = hard_attention(t);
    CHECK(again.hard_weights.to_vector() == t.hard_weights.to_vector());
    // weighting scales every channel
    auto wd = t.weighted();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(wd.at({12, i, j}) == t.hard_weights.at({i, j}));
        CHECK(wd.at({6, i, j}) == doctest::Approx(s[i][j] * t.hard_weights.at({i, j})));
      }
    }
  }
}
