#pragma once

// Corpus-trained subword vocabulary (whole words plus character fallback),
// greedy longest-match tokenization and [CLS] q [SEP] p [SEP] pair framing.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "psgrank/corpus.hpp"
#include "psgrank/errors.hpp"

namespace psgrank {

inline constexpr std::string_view kContinuationPrefix = "##";

inline std::string ascii_lower(std::string_view text) {
  std::string out(text);
  for (auto& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

/// Byte offsets of UTF-8 code point starts in `word`, plus word.size() as a sentinel.
inline std::vector<std::size_t> codepoint_boundaries(std::string_view word) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < word.size(); ++i)
    if ((static_cast<unsigned char>(word[i]) & 0xC0) != 0x80) out.push_back(i);
  out.push_back(word.size());
  return out;
}

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr std::size_t kNumReserved = 4;

  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

  /// Builds a vocabulary from an explicit token list. Reserved tokens are
  /// prepended unless the list already starts with them.
  static Vocabulary from_tokens(std::span<const std::string> tokens) {
    std::vector<std::string> list(tokens.begin(), tokens.end());
    return Vocabulary(std::move(list));
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  std::optional<int> find(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  int id(std::string_view token) const {
    auto f = find(token);
    if (!f) throw ArgumentError("token '" + std::string(token) + "' not in vocabulary");
    return *f;
  }
  bool contains(std::string_view token) const { return find(token).has_value(); }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    for (const auto& t : tokens_) out << t << '\n';
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) tokens.push_back(line);
    for (std::size_t i = 0; i < kNumReserved; ++i)
      if (tokens.size() <= i || tokens[i] != reserved()[i])
        throw ParseError(path.string(), i + 1, "expected reserved token " + reserved()[i]);
    return Vocabulary(std::move(tokens));
  }

  static const std::vector<std::string>& reserved() {
    static const std::vector<std::string> r{"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
    return r;
  }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  explicit Vocabulary(std::vector<std::string> tokens) {
    const auto& res = reserved();
    bool has_reserved = tokens.size() >= kNumReserved &&
                        std::equal(res.begin(), res.end(), tokens.begin());
    if (!has_reserved) tokens.insert(tokens.begin(), res.begin(), res.end());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (!index_.emplace(tokens[i], static_cast<int>(i)).second)
        throw ArgumentError("duplicate vocabulary token '" + tokens[i] + "'");
    }
    tokens_ = std::move(tokens);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Frequent whole words plus every observed character (initial and "##"
/// continuation form), so every string seen at build time is encodable.
/// Characters take priority over words when `max_size` is tight; ties break
/// by first occurrence.
template <typename Range>
Vocabulary build_vocab(const Range& texts, std::size_t max_size, std::size_t min_freq = 1) {
  if (max_size < Vocabulary::kNumReserved)
    throw ArgumentError("max_size must be at least 4 (reserved tokens)");
  struct Count {
    std::size_t freq = 0;
    std::size_t first = 0;
  };
  std::unordered_map<std::string, Count> words, chars;
  std::size_t order = 0;
  auto bump = [&order](std::unordered_map<std::string, Count>& m, std::string key) {
    auto [it, fresh] = m.try_emplace(std::move(key), Count{0, order});
    if (fresh) ++order;
    ++it->second.freq;
  };
  for (const auto& raw : texts) {
    std::string text = ascii_lower(raw);
    for (auto w : split_whitespace(text)) {
      bump(words, std::string(w));
      auto b = codepoint_boundaries(w);
      for (std::size_t i = 0; i + 1 < b.size(); ++i)
        bump(chars, std::string(w.substr(b[i], b[i + 1] - b[i])));
    }
  }
  auto ranked = [](const std::unordered_map<std::string, Count>& m) {
    std::vector<std::pair<std::string, Count>> v(m.begin(), m.end());
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
      if (a.second.freq != b.second.freq) return a.second.freq > b.second.freq;
      return a.second.first < b.second.first;
    });
    return v;
  };

  std::vector<std::string> tokens(Vocabulary::reserved());
  std::unordered_map<std::string, bool> present;
  for (const auto& t : tokens) present[t] = true;
  auto add = [&](const std::string& t) {
    if (tokens.size() >= max_size || present.contains(t)) return;
    present[t] = true;
    tokens.push_back(t);
  };
  for (const auto& [c, cnt] : ranked(chars)) {
    add(c);
    add(std::string(kContinuationPrefix) + c);
  }
  for (const auto& [w, cnt] : ranked(words))
    if (cnt.freq >= min_freq) add(w);
  return Vocabulary::from_tokens(tokens);
}

/// Greedy longest-match-first subword segmentation of each lowercased
/// whitespace word. A code point with no matching piece becomes [UNK].
inline std::vector<int> tokenize(const Vocabulary& vocab, std::string_view text) {
  std::vector<int> ids;
  std::string lowered = ascii_lower(text);
  std::string piece;
  for (auto word : split_whitespace(lowered)) {
    auto b = codepoint_boundaries(word);
    std::size_t start = 0;  // index into b
    while (start + 1 < b.size()) {
      std::optional<int> match;
      std::size_t end = b.size() - 1;
      for (; end > start; --end) {
        piece.clear();
        if (start > 0) piece += kContinuationPrefix;
        piece += word.substr(b[start], b[end] - b[start]);
        if ((match = vocab.find(piece))) break;
      }
      if (match) {
        ids.push_back(*match);
        start = end;
      } else {
        ids.push_back(Vocabulary::kUnk);
        ++start;
      }
    }
  }
  return ids;
}

inline std::vector<std::string> decode(const Vocabulary& vocab, std::span<const int> ids) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(vocab.token(id));
  return out;
}

struct EncodedPair {
  std::vector<int> token_ids;
  std::vector<int> segment_ids;
  std::vector<int> mask;
  int seq_len = 0;

  /// Number of real (unmasked) positions.
  std::size_t length() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
  }
  bool operator==(const EncodedPair&) const = default;
};

/// Frames pre-tokenized ids as [CLS] q [SEP] p [SEP] [PAD]*. The query is kept
/// whole; the passage tail is dropped to fit `seq_len`.
inline EncodedPair encode_pair_ids(std::span<const int> query_ids, std::span<const int> passage_ids,
                                   int seq_len, std::string_view query_id = {}) {
  const long budget = static_cast<long>(seq_len) - 3 - static_cast<long>(query_ids.size());
  if (budget < 1)
    throw EncodingError("query '" + std::string(query_id) + "' (" +
                        std::to_string(query_ids.size()) + " tokens) does not fit seq_len " +
                        std::to_string(seq_len));
  const std::size_t n = static_cast<std::size_t>(seq_len);
  const std::size_t keep = std::min(passage_ids.size(), static_cast<std::size_t>(budget));
  EncodedPair e;
  e.seq_len = seq_len;
  e.token_ids.assign(n, Vocabulary::kPad);
  e.segment_ids.assign(n, 0);
  e.mask.assign(n, 0);
  std::size_t pos = 0;
  auto put = [&](int id, int seg) {
    e.token_ids[pos] = id;
    e.segment_ids[pos] = seg;
    e.mask[pos] = 1;
    ++pos;
  };
  put(Vocabulary::kCls, 0);
  for (int id : query_ids) put(id, 0);
  put(Vocabulary::kSep, 0);
  for (std::size_t i = 0; i < keep; ++i) put(passage_ids[i], 1);
  put(Vocabulary::kSep, 1);
  return e;
}

inline EncodedPair encode_pair(const Vocabulary& vocab, std::string_view query,
                               std::string_view passage, int seq_len,
                               std::string_view query_id = {}) {
  auto q = tokenize(vocab, query);
  auto p = tokenize(vocab, passage);
  return encode_pair_ids(q, p, seq_len, query_id);
}

}  // namespace psgrank
