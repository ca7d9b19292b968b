#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <random>

#include "psgrank/retrieval.hpp"
#include "support.hpp"

using namespace psgrank;

using testsupport::OracleBm25;
using testsupport::random_passages;

TEST(RetrievalTerms, LowercaseAndPunctuation) {
  EXPECT_EQ(retrieval_terms("Hello, World! x-y 42"), (std::vector<std::string>{"hello", "world", "x", "y", "42"}));
  EXPECT_TRUE(retrieval_terms(" .,; ").empty());
}

TEST(BuildIndex, DirectConstruction) {
  std::vector<Passage> ps{Passage::make("p1", "a b"), Passage::make("p2", "b c")};
  auto idx = build_index(ps);
  EXPECT_EQ(idx.num_docs(), 2u);
  EXPECT_DOUBLE_EQ(idx.avg_doc_length(), 2.0);
  auto docs = [&](const std::string& t) {
    std::vector<std::string> out;
    for (const auto& p : *idx.find_postings(t)) out.push_back(idx.doc_ids()[p.doc]);
    return out;
  };
  EXPECT_EQ(docs("a"), (std::vector<std::string>{"p1"}));
  EXPECT_EQ(docs("b"), (std::vector<std::string>{"p1", "p2"}));
  EXPECT_EQ(docs("c"), (std::vector<std::string>{"p2"}));
}

TEST(BuildIndex, EmptyCollection) {
  auto idx = build_index(std::vector<Passage>{});
  EXPECT_EQ(idx.num_docs(), 0u);
  EXPECT_TRUE(top_k(idx, {"q", "anything"}, 5).ranked.empty());
}

TEST(BuildIndex, TermFrequency) {
  auto idx = build_index(std::vector<Passage>{Passage::make("p", "a a a")});
  ASSERT_EQ(idx.find_postings("a")->size(), 1u);
  EXPECT_EQ(idx.find_postings("a")->front().tf, 3u);
  EXPECT_EQ(idx.doc_lengths()[0], 3u);
}

TEST(BuildIndex, Errors) {
  std::vector<Passage> dup{Passage::make("p", "a"), Passage::make("p", "b")};
  EXPECT_THROW(build_index(dup), ArgumentError);
  std::vector<Passage> ok{Passage::make("p", "a")};
  EXPECT_THROW(build_index(ok, {0.0, 0.75}), ArgumentError);
  EXPECT_THROW(build_index(ok, {1.2, 1.5}), ArgumentError);
}

TEST(Bm25, HandEvaluatedExample) {
  std::vector<Passage> ps{Passage::make("p1", "a"), Passage::make("p2", "b")};
  auto idx = build_index(ps);
  std::vector<std::string> q{"a"};
  EXPECT_NEAR(bm25_score(idx, q, "p1"), std::log(2.0), 1e-12);
  EXPECT_NEAR(bm25_score(idx, q, "p1"), OracleBm25(ps)(q, "p1"), 1e-12);
  EXPECT_NEAR(bm25_score(idx, q, "p1"), 0.6931, 5e-5);
}

TEST(Bm25, ZeroCases) {
  std::vector<Passage> ps{Passage::make("p1", "a"), Passage::make("p2", "b")};
  auto idx = build_index(ps);
  std::vector<std::string> absent{"zzz"}, none;
  EXPECT_EQ(bm25_score(idx, absent, "p1"), 0.0);
  EXPECT_EQ(bm25_score(idx, none, "p1"), 0.0);
  EXPECT_EQ(bm25_score(idx, std::vector<std::string>{"b"}, "p1"), 0.0);
  EXPECT_THROW(bm25_score(idx, none, "nope"), ArgumentError);
}

TEST(Bm25, MonotoneInTfAndLength) {
  std::vector<std::string> q{"x"};
  auto score_of = [&](const std::string& text) {
    std::vector<Passage> ps{Passage::make("d", text), Passage::make("o1", "y z w"), Passage::make("o2", "x v")};
    return bm25_score(build_index(ps), q, "d");
  };
  EXPECT_LT(score_of("x y y y"), score_of("x x y y"));
  EXPECT_GT(score_of("x y"), score_of("x y y y y y"));
}

TEST(Bm25, IdfNonNegative) {
  std::vector<Passage> ps{Passage::make("p1", "a"), Passage::make("p2", "a"), Passage::make("p3", "a b")};
  auto idx = build_index(ps);
  for (std::size_t df = 0; df <= idx.num_docs(); ++df) EXPECT_GE(idx.idf(df), 0.0);
}

TEST(TopK, ReturnsAllMatchesWhenKIsLarge) {
  std::vector<Passage> ps{Passage::make("p1", "a"), Passage::make("p2", "a b"), Passage::make("p3", "c")};
  auto c = top_k(build_index(ps), {"q", "a"}, 100);
  ASSERT_EQ(c.ranked.size(), 2u);
  EXPECT_EQ(c.ranked[0].passage_id, "p1");
  EXPECT_THROW(top_k(build_index(ps), {"q", "a"}, 0), ArgumentError);
}

TEST(TopK, TiesByAscendingId) {
  std::vector<Passage> ps{Passage::make("zeta", "a b"), Passage::make("alpha", "a c"), Passage::make("mid", "b a")};
  auto c = top_k(build_index(ps), {"q", "a"}, 3);
  ASSERT_EQ(c.ranked.size(), 3u);
  EXPECT_EQ(c.ranked[0].passage_id, "alpha");
  EXPECT_EQ(c.ranked[1].passage_id, "mid");
  EXPECT_EQ(c.ranked[2].passage_id, "zeta");
}

TEST(TopK, MatchesExhaustiveOracle) {
  const auto start = std::chrono::steady_clock::now();
  auto ps = random_passages(500, 60, 17);
  auto idx = build_index(ps);
  const OracleBm25 oracle(ps);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::string qtext;
    for (int w = 0; w < 3; ++w) qtext += (w ? " " : "") + std::string("t") + std::to_string(rng() % 70);
    auto terms = retrieval_terms(qtext);
    std::vector<ScoredId> all;
    for (const auto& p : ps) {
      double s = oracle(terms, p.id);
      ASSERT_NEAR(s, bm25_score(idx, terms, p.id), 1e-12);
      s = bm25_score(idx, terms, p.id);
      if (s > 0) all.push_back({p.id, s});
    }
    std::sort(all.begin(), all.end(), [](const ScoredId& a, const ScoredId& b) {
      return a.score != b.score ? a.score > b.score : a.passage_id < b.passage_id;
    });
    all.resize(std::min<std::size_t>(all.size(), 10));
    EXPECT_EQ(top_k(idx, {"q", qtext}, 10).ranked, all) << qtext;
  }
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 60.0);
}

TEST(TopK, TieOrderWithDuplicateTexts) {
  std::vector<Passage> ps;
  for (int i = 9; i >= 0; --i) ps.push_back(Passage::make("d" + std::to_string(i), "same words here"));
  auto c = top_k(build_index(ps), {"q", "words"}, 4);
  ASSERT_EQ(c.ranked.size(), 4u);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(c.ranked[static_cast<std::size_t>(i)].passage_id, "d" + std::to_string(i));
}

TEST(InvertedIndex, SaveLoadRoundTrip) {
  testsupport::TempDir dir;
  auto idx = build_index(random_passages(50, 20, 2), {1.5, 0.5});
  idx.save(dir / "index.bin");
  auto back = InvertedIndex::load(dir / "index.bin");
  EXPECT_EQ(back, idx);
  EXPECT_DOUBLE_EQ(back.params().k1, 1.5);
}

TEST(InvertedIndex, CorruptFileRejected) {
  testsupport::TempDir dir;
  testsupport::write_text(dir / "bad.bin", "not an index");
  EXPECT_THROW(InvertedIndex::load(dir / "bad.bin"), Error);
  auto idx = build_index(random_passages(10, 5, 2));
  idx.save(dir / "ok.bin");
  auto bytes = testsupport::read_text(dir / "ok.bin");
  testsupport::write_text(dir / "short.bin", bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(InvertedIndex::load(dir / "short.bin"), Error);
}
