#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "psgrank/tokenizer.hpp"
#include "support.hpp"

using namespace psgrank;

namespace {

Vocabulary vocab_of(std::vector<std::string> tokens) { return Vocabulary::from_tokens(tokens); }

// Vocabulary with single-letter tokens a..e so ids are easy to read back.
Vocabulary letters() { return vocab_of({"a", "b", "c", "d", "e"}); }

}  // namespace

TEST(Vocabulary, ReservedTokensComeFirst) {
  Vocabulary v;
  ASSERT_EQ(v.size(), 4u);
  EXPECT_EQ(v.token(0), "[PAD]");
  EXPECT_EQ(v.token(1), "[UNK]");
  EXPECT_EQ(v.token(2), "[CLS]");
  EXPECT_EQ(v.token(3), "[SEP]");
  EXPECT_EQ(v.id("[SEP]"), Vocabulary::kSep);
}

TEST(Vocabulary, BuildCountsWords) {
  std::vector<std::string> texts{"a a a b"};
  auto v = build_vocab(texts, 10, 1);
  EXPECT_TRUE(v.contains("a"));
  EXPECT_TRUE(v.contains("b"));
  EXPECT_LE(v.size(), 10u);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(v.id(v.token(static_cast<int>(i))), static_cast<int>(i));
}

TEST(Vocabulary, EmptyStreamGivesReservedOnly) {
  std::vector<std::string> texts;
  EXPECT_EQ(build_vocab(texts, 100).size(), 4u);
}

TEST(Vocabulary, RejectsTinyMaxSize) {
  std::vector<std::string> texts{"a"};
  EXPECT_THROW(build_vocab(texts, 3), ArgumentError);
}

TEST(Vocabulary, RareWordFallsBackToCharacters) {
  std::vector<std::string> texts{"common common common rare"};
  auto v = build_vocab(texts, 100, 2);
  EXPECT_TRUE(v.contains("common"));
  EXPECT_FALSE(v.contains("rare"));
  auto ids = tokenize(v, "rare");
  EXPECT_EQ(ids.size(), 4u);
  EXPECT_EQ(std::count(ids.begin(), ids.end(), Vocabulary::kUnk), 0);
  EXPECT_EQ(decode(v, ids), (std::vector<std::string>{"r", "##a", "##r", "##e"}));
}

TEST(Vocabulary, BuildIsDeterministicAndLowercases) {
  std::vector<std::string> texts{"The cat", "the Dog", "CAT"};
  auto a = build_vocab(texts, 64), b = build_vocab(texts, 64);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(a.contains("cat"));
  EXPECT_FALSE(a.contains("Cat"));
}

TEST(Vocabulary, SaveLoadRoundTrip) {
  testsupport::TempDir dir;
  std::vector<std::string> texts{"héllo wörld", "hello world again"};
  auto v = build_vocab(texts, 200);
  v.save(dir / "vocab.txt");
  EXPECT_EQ(Vocabulary::load(dir / "vocab.txt"), v);
  auto lines = testsupport::read_text(dir / "vocab.txt");
  EXPECT_EQ(lines.substr(0, 24), "[PAD]\n[UNK]\n[CLS]\n[SEP]\n");
}

TEST(Vocabulary, DuplicateTokenRejected) { EXPECT_THROW(vocab_of({"x", "x"}), ArgumentError); }

TEST(Tokenize, ExactMatch) {
  auto v = vocab_of({"hello"});
  EXPECT_EQ(tokenize(v, "hello"), (std::vector<int>{v.id("hello")}));
}

TEST(Tokenize, GreedyLongestMatch) {
  auto v = vocab_of({"he", "h", "##llo", "##l", "##o"});
  EXPECT_EQ(tokenize(v, "hello"), (std::vector<int>{v.id("he"), v.id("##llo")}));
}

TEST(Tokenize, EmptyText) {
  EXPECT_TRUE(tokenize(letters(), "").empty());
  EXPECT_TRUE(tokenize(letters(), "   \t").empty());
}

TEST(Tokenize, UnknownCharactersBecomeUnk) {
  auto v = vocab_of({"a", "##b"});
  EXPECT_EQ(tokenize(v, "axb"), (std::vector<int>{v.id("a"), Vocabulary::kUnk, v.id("##b")}));
  EXPECT_EQ(tokenize(v, "é"), (std::vector<int>{Vocabulary::kUnk}));
}

TEST(Tokenize, NeverEmitsFramingTokens) {
  auto v = build_vocab(std::vector<std::string>{"alpha beta"}, 64);
  for (int id : tokenize(v, "[CLS] [SEP] [PAD] alpha zeta")) {
    EXPECT_NE(id, Vocabulary::kCls);
    EXPECT_NE(id, Vocabulary::kSep);
    EXPECT_NE(id, Vocabulary::kPad);
  }
}

TEST(Tokenize, EveryBuildTimeStringIsEncodable) {
  std::mt19937_64 rng(3);
  std::vector<std::string> texts;
  for (int i = 0; i < 50; ++i) {
    std::string t;
    for (int w = 0; w < 6; ++w) {
      if (w) t += ' ';
      for (int c = 0; c < 1 + static_cast<int>(rng() % 7); ++c) t += static_cast<char>('a' + rng() % 26);
    }
    texts.push_back(t);
  }
  texts.push_back("naïve café ☕");
  auto v = build_vocab(texts, 120, 3);
  for (const auto& t : texts) {
    auto ids = tokenize(v, t);
    EXPECT_EQ(std::count(ids.begin(), ids.end(), Vocabulary::kUnk), 0) << t;
  }
}

TEST(Tokenize, RetokenizingWholeWordsIsStable) {
  auto v = build_vocab(std::vector<std::string>{"one two three two one"}, 64);
  auto ids = tokenize(v, "one two three");
  std::string text;
  for (const auto& t : decode(v, ids)) text += (text.empty() ? "" : " ") + t;
  EXPECT_EQ(tokenize(v, text), ids);
}

TEST(EncodePair, FullLayout) {
  auto v = letters();
  auto e = encode_pair(v, "a b", "c d e", 8);
  const int a = v.id("a"), b = v.id("b"), c = v.id("c"), d = v.id("d"), ee = v.id("e");
  EXPECT_EQ(e.token_ids, (std::vector<int>{Vocabulary::kCls, a, b, Vocabulary::kSep, c, d, ee, Vocabulary::kSep}));
  EXPECT_EQ(e.segment_ids, (std::vector<int>{0, 0, 0, 0, 1, 1, 1, 1}));
  EXPECT_EQ(e.mask, std::vector<int>(8, 1));
  EXPECT_EQ(e.seq_len, 8);
}

TEST(EncodePair, TruncatesPassageTail) {
  auto v = letters();
  auto e = encode_pair(v, "a b", "c d e", 7);
  EXPECT_EQ(e.token_ids, (std::vector<int>{Vocabulary::kCls, v.id("a"), v.id("b"), Vocabulary::kSep, v.id("c"),
                                           v.id("d"), Vocabulary::kSep}));
  EXPECT_EQ(e.mask, std::vector<int>(7, 1));
}

TEST(EncodePair, PadsShortPairs) {
  auto v = letters();
  auto e = encode_pair(v, "a", "b", 8);
  EXPECT_EQ(e.mask, (std::vector<int>{1, 1, 1, 1, 1, 0, 0, 0}));
  EXPECT_EQ(e.length(), 5u);
  for (int i = 5; i < 8; ++i) EXPECT_EQ(e.token_ids[static_cast<std::size_t>(i)], Vocabulary::kPad);
}

TEST(EncodePair, QueryTooLongNamesQuery) {
  auto v = letters();
  try {
    encode_pair(v, "a b c d e", "a", 8, "q42");
    FAIL() << "expected EncodingError";
  } catch (const EncodingError& e) {
    EXPECT_NE(std::string(e.what()).find("q42"), std::string::npos);
  }
  EXPECT_NO_THROW(encode_pair(v, "a b c d", "a", 8));
}

TEST(EncodePair, FramingInvariantsOnRandomPairs) {
  std::mt19937_64 rng(11);
  std::vector<std::string> words{"alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"};
  auto v = build_vocab(words, 64);
  auto phrase = [&](std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + words[rng() % words.size()];
    return s;
  };
  for (int trial = 0; trial < 200; ++trial) {
    const std::string q = phrase(1 + rng() % 3), p = phrase(rng() % 20);
    const int seq_len = 8 + static_cast<int>(rng() % 24);
    auto qt = tokenize(v, q), pt = tokenize(v, p);
    auto e = encode_pair(v, q, p, seq_len);
    ASSERT_EQ(e.token_ids.size(), static_cast<std::size_t>(seq_len));
    EXPECT_EQ(e.token_ids[0], Vocabulary::kCls);
    const std::size_t len = e.length();
    EXPECT_TRUE(std::is_sorted(e.mask.begin(), e.mask.end(), std::greater<>()));
    std::size_t seps = 0, first_sep = 0;
    for (std::size_t i = 0; i < len; ++i)
      if (e.token_ids[i] == Vocabulary::kSep && seps++ == 0) first_sep = i;
    EXPECT_EQ(seps, 2u);
    for (std::size_t i = 0; i < e.segment_ids.size(); ++i) {
      if (i < len) EXPECT_EQ(e.segment_ids[i], i <= first_sep ? 0 : 1);
      else EXPECT_EQ(e.token_ids[i], Vocabulary::kPad);
    }
    std::vector<int> passage_part(e.token_ids.begin() + static_cast<long>(first_sep) + 1,
                                  e.token_ids.begin() + static_cast<long>(len) - 1);
    ASSERT_LE(passage_part.size(), pt.size());
    EXPECT_TRUE(std::equal(passage_part.begin(), passage_part.end(), pt.begin()));
    const std::size_t budget = static_cast<std::size_t>(seq_len) - 3 - qt.size();
    if (pt.size() <= budget) EXPECT_EQ(len, 3 + qt.size() + pt.size());
  }
}
