#pragma once

// Brute-force metric recomputations written independently of the library.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <tuple>
#include <utility>
#include <vector>

#include "spm/evaluation.hpp"

namespace spm::testing {

inline double oracle_f1(const std::vector<int>& p, const std::vector<int>& g) {
  std::vector<std::size_t> predicted, actual, both;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 1) predicted.push_back(i);
    if (g[i] == 1) actual.push_back(i);
    if (p[i] == 1 && g[i] == 1) both.push_back(i);
  }
  if (both.empty()) return 0;
  // F1 = 2TP / (2TP + FP + FN) = 2|both| / (|predicted| + |actual|)
  return 2.0 * static_cast<double>(both.size()) / static_cast<double>(predicted.size() + actual.size());
}

inline double oracle_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  long double n = static_cast<long double>(x.size()), sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += static_cast<long double>(x[i]) * x[i];
    syy += static_cast<long double>(y[i]) * y[i];
    sxy += static_cast<long double>(x[i]) * y[i];
  }
  return static_cast<double>((n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy)));
}

/// Up to five groups with coarse scores so that ties occur.
inline std::vector<RankedCandidate> random_candidates(std::mt19937_64& rng) {
  std::vector<RankedCandidate> c;
  std::size_t groups = 1 + rng() % 5;
  for (std::size_t g = 0; g < groups; ++g) {
    std::size_t n = 1 + rng() % 6;
    for (std::size_t k = 0; k < n; ++k) {
      c.push_back({"g" + std::to_string(g), static_cast<double>(rng() % 5) / 4.0, rng() % 3 == 0});
    }
    if (rng() % 4 != 0) c[c.size() - 1 - rng() % n].relevant = true;
  }
  std::shuffle(c.begin(), c.end(), rng);
  bool any = std::any_of(c.begin(), c.end(), [](const auto& x) { return x.relevant; });
  if (!any) c.front().relevant = true;
  return c;
}

/// (MAP, MRR) via an explicit (−score, position) sort per group.
inline std::pair<double, double> oracle_map_mrr(const std::vector<RankedCandidate>& c) {
  std::map<std::string, std::vector<std::tuple<double, std::size_t, bool>>> groups;
  for (std::size_t i = 0; i < c.size(); ++i) groups[c[i].group].emplace_back(-c[i].score, i, c[i].relevant);
  double map = 0, mrr = 0;
  std::size_t counted = 0;
  for (auto& [name, items] : groups) {
    std::sort(items.begin(), items.end());
    std::vector<std::size_t> relevant_ranks;
    for (std::size_t r = 0; r < items.size(); ++r) {
      if (std::get<2>(items[r])) relevant_ranks.push_back(r + 1);
    }
    if (relevant_ranks.empty()) continue;
    double ap = 0;
    for (std::size_t k = 0; k < relevant_ranks.size(); ++k) {
      ap += static_cast<double>(k + 1) / static_cast<double>(relevant_ranks[k]);
    }
    map += ap / static_cast<double>(relevant_ranks.size());
    mrr += 1.0 / static_cast<double>(relevant_ranks.front());
    ++counted;
  }
  return {map / static_cast<double>(counted), mrr / static_cast<double>(counted)};
}

}  // namespace spm::testing
