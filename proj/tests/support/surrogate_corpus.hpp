#pragma once

// Seeded stand-ins for the Twitter-URL and Quora paraphrase corpora, used when
// the real files are not available. Both draw from one topical vocabulary and
// differ in how hard their pairs are:
//   url:   positives keep most words of the source, negatives are unrelated
//          posts on the same topic (low overlap); about a quarter positive.
//   quora: negatives keep most of the question and swap a few key words,
//          positives are light rewordings (high overlap); half positive.
// A model fitted to one overlap regime therefore misplaces its boundary on the
// other, which is the in-domain versus out-of-domain gap in miniature.

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "spm/data.hpp"

namespace spm::testing {

namespace detail {

inline constexpr std::size_t kTopics = 30;
inline constexpr std::size_t kTopicWords = 16;

inline std::string topic_word(std::size_t topic, std::size_t k) {
  return "t" + std::to_string(topic) + "w" + std::to_string(k);
}

inline const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> f{"the", "a",    "of",  "to",   "in",  "is",   "on",  "for",
                                          "rt",  "lol",  "via", "new",  "now", "just", "this", "omg",
                                          "and", "with", "at",  "from", "it",  "so",   "via", "watch"};
  return f;
}

inline const std::vector<std::string>& question_words() {
  static const std::vector<std::string> q{"how", "what", "why", "which", "can", "do", "i", "you", "should", "best"};
  return q;
}

template <typename Rng>
std::vector<std::string> topical_sentence(std::size_t topic, std::size_t content, std::size_t filler, Rng& rng) {
  std::vector<std::size_t> idx(kTopicWords);
  for (std::size_t k = 0; k < kTopicWords; ++k) idx[k] = k;
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::string> out;
  for (std::size_t k = 0; k < content; ++k) out.push_back(topic_word(topic, idx[k]));
  const auto& f = filler_words();
  for (std::size_t k = 0; k < filler; ++k) out.push_back(f[rng() % f.size()]);
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

// Keeps each content word with probability `keep`, replaces the rest with
// other words of the topic, reshuffles fillers and locally reorders.
template <typename Rng>
std::vector<std::string> reword(const std::vector<std::string>& src, std::size_t topic, double keep, Rng& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  const auto& f = filler_words();
  std::vector<std::string> out;
  for (const auto& w : src) {
    bool content = w[0] == 't' && w.find('w') != std::string::npos && w.size() > 2 && std::isdigit(w[1]);
    if (content) {
      out.push_back(u(rng) < keep ? w : topic_word(topic, rng() % kTopicWords));
    } else if (u(rng) < 0.7) {
      out.push_back(u(rng) < 0.5 ? w : f[rng() % f.size()]);
    }
  }
  if (u(rng) < 0.5) out.push_back(f[rng() % f.size()]);
  for (std::size_t i = 0; i + 1 < out.size(); ++i) {
    if (u(rng) < 0.3) std::swap(out[i], out[i + 1]);
  }
  if (out.empty()) out.push_back(topic_word(topic, rng() % kTopicWords));
  return out;
}

template <typename Rng>
std::vector<PairExample> url_pairs(std::size_t n, const std::string& prefix, Rng& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<PairExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t topic = rng() % kTopics;
    PairExample e;
    e.id = prefix + std::to_string(i);
    e.tokens_a = topical_sentence(topic, 4 + rng() % 4, 3 + rng() % 5, rng);
    e.label = u(rng) < 0.25 ? 1 : 0;
    if (e.label == 1) {
      e.tokens_b = reword(e.tokens_a, topic, 0.75, rng);
    } else {
      e.tokens_b = topical_sentence(topic, 4 + rng() % 4, 3 + rng() % 5, rng);
    }
    out.push_back(std::move(e));
  }
  return out;
}

template <typename Rng>
std::vector<PairExample> quora_pairs(std::size_t n, const std::string& prefix, Rng& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  const auto& q = question_words();
  std::vector<PairExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t topic = rng() % kTopics;
    PairExample e;
    e.id = prefix + std::to_string(i);
    e.tokens_a = topical_sentence(topic, 4 + rng() % 3, 2 + rng() % 3, rng);
    e.tokens_a.insert(e.tokens_a.begin(), q[rng() % q.size()]);
    e.label = u(rng) < 0.5 ? 1 : 0;
    if (e.label == 1) {
      e.tokens_b = reword(e.tokens_a, topic, 0.9, rng);
    } else {
      e.tokens_b = e.tokens_a;
      std::size_t swaps = 2 + rng() % 2;
      for (std::size_t k = 0; k < swaps; ++k) {
        e.tokens_b[1 + rng() % (e.tokens_b.size() - 1)] = topic_word(topic, rng() % kTopicWords);
      }
    }
    e.tokens_b.insert(e.tokens_b.begin(), q[rng() % q.size()]);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace detail

/// train / dev (10% of `train_size`, carved off) / test pairs.
inline Dataset url_surrogate(std::size_t train_size, std::size_t test_size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset d;
  d.schema = Schema::twitter_url;
  auto all = detail::url_pairs(train_size, "url-train-", rng);
  std::size_t dev = train_size / 10;
  d.dev.assign(all.end() - static_cast<std::ptrdiff_t>(dev), all.end());
  d.train.assign(all.begin(), all.end() - static_cast<std::ptrdiff_t>(dev));
  d.test = detail::url_pairs(test_size, "url-test-", rng);
  d.dev_carved = true;
  return d;
}

inline Dataset quora_surrogate(std::size_t train_size, std::size_t test_size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset d;
  d.schema = Schema::quora;
  auto all = detail::quora_pairs(train_size, "quora-train-", rng);
  std::size_t dev = train_size / 10;
  d.dev.assign(all.end() - static_cast<std::ptrdiff_t>(dev), all.end());
  d.train.assign(all.begin(), all.end() - static_cast<std::ptrdiff_t>(dev));
  d.test = detail::quora_pairs(test_size, "quora-test-", rng);
  return d;
}

}  // namespace spm::testing
