#pragma once

// Generated token-overlap corpora for end-to-end checks. Each query gets a
// fixed-size candidate pool in which exactly one passage has the highest
// word overlap with the query; that passage is the only relevant one.

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "psgrank/corpus.hpp"
#include "psgrank/retrieval.hpp"

namespace psgrank {

struct SyntheticConfig {
  std::size_t num_queries = 200;
  std::size_t candidates_per_query = 10;
  std::size_t vocab_words = 200;
  std::size_t query_len = 3;
  std::size_t passage_len = 12;
  // Negatives share between 0 and this many words with the query (capped at query_len - 1).
  std::size_t max_negative_overlap = 2;
  std::uint64_t seed = 7;
  std::string id_prefix;  // keeps ids distinct between generated corpora
};

struct SyntheticCorpus {
  Dataset dataset;
  std::map<std::string, Candidates> pools;  // candidate order is shuffled
};

inline std::string synthetic_word(std::size_t i) { return "w" + std::to_string(i); }

inline std::size_t word_overlap(const std::string& a, const std::string& b) {
  auto wa = split_whitespace(a), wb = split_whitespace(b);
  std::set<std::string_view> sa(wa.begin(), wa.end()), sb(wb.begin(), wb.end());
  std::size_t n = 0;
  for (auto w : sa) n += sb.count(w);
  return n;
}

inline SyntheticCorpus make_synthetic_corpus(const SyntheticConfig& cfg) {
  if (cfg.query_len < 1 || cfg.passage_len < cfg.query_len || cfg.vocab_words < cfg.query_len + cfg.passage_len)
    throw ArgumentError("synthetic corpus dimensions are inconsistent");
  std::mt19937_64 rng(cfg.seed);
  auto below = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };

  std::vector<Query> queries;
  std::vector<Passage> passages;
  std::vector<Judgment> judgments;
  std::map<std::string, Candidates> pools;
  for (std::size_t q = 0; q < cfg.num_queries; ++q) {
    std::set<std::size_t> qwords;
    while (qwords.size() < cfg.query_len) qwords.insert(below(cfg.vocab_words));
    std::vector<std::size_t> qlist(qwords.begin(), qwords.end());
    std::shuffle(qlist.begin(), qlist.end(), rng);
    auto filler = [&]() {
      std::size_t w;
      do w = below(cfg.vocab_words);
      while (qwords.contains(w));
      return w;
    };
    auto make_text = [&](std::size_t overlap) {
      std::vector<std::size_t> words(qlist.begin(), qlist.begin() + static_cast<long>(overlap));
      while (words.size() < cfg.passage_len) words.push_back(filler());
      std::shuffle(words.begin(), words.end(), rng);
      std::string text;
      for (auto w : words) text += (text.empty() ? "" : " ") + synthetic_word(w);
      return text;
    };

    const std::string qid = cfg.id_prefix + "q" + std::to_string(q);
    std::string qtext;
    for (auto w : qlist) qtext += (qtext.empty() ? "" : " ") + synthetic_word(w);
    queries.push_back({qid, qtext});

    Candidates pool{qid, {}};
    const std::size_t positive_slot = below(cfg.candidates_per_query);
    for (std::size_t c = 0; c < cfg.candidates_per_query; ++c) {
      const bool positive = c == positive_slot;
      const std::size_t overlap =
          positive ? cfg.query_len : below(std::min(cfg.max_negative_overlap, cfg.query_len - 1) + 1);
      const std::string pid = qid + "_p" + std::to_string(c);
      passages.push_back(Passage::make(pid, make_text(overlap)));
      judgments.push_back({qid, pid, positive ? 1 : 0});
      pool.ranked.push_back({pid, 0.0});
    }
    pools.emplace(qid, std::move(pool));
  }
  return {Dataset(std::move(queries), std::move(passages), std::move(judgments)), std::move(pools)};
}

}  // namespace psgrank
