#pragma once

// BM25 first-stage retrieval over an in-memory inverted index.

#include <algorithm>
#include <array>
#include <cmath>
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

#include "psgrank/binio.hpp"
#include "psgrank/corpus.hpp"
#include "psgrank/errors.hpp"

namespace psgrank {

/// Lowercased ASCII-alphanumeric runs; bytes >= 0x80 count as word characters.
inline std::vector<std::string> retrieval_terms(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : ch;
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

struct Posting {
  std::uint32_t doc = 0;  // index into InvertedIndex::doc_ids()
  std::uint32_t tf = 0;
  bool operator==(const Posting&) const = default;
};

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

class InvertedIndex {
 public:
  static constexpr std::array<char, 8> kMagic{'P', 'S', 'G', 'B', 'M', '2', '5', '\0'};
  static constexpr std::uint32_t kVersion = 1;

  InvertedIndex() = default;

  std::size_t num_docs() const noexcept { return doc_ids_.size(); }
  double avg_doc_length() const noexcept { return avg_len_; }
  const Bm25Params& params() const noexcept { return params_; }
  const std::vector<std::string>& doc_ids() const noexcept { return doc_ids_; }
  const std::vector<std::uint32_t>& doc_lengths() const noexcept { return doc_lengths_; }
  const std::map<std::string, std::vector<Posting>>& postings() const noexcept { return postings_; }

  std::optional<std::uint32_t> doc_index(const std::string& passage_id) const {
    auto it = std::lower_bound(doc_ids_.begin(), doc_ids_.end(), passage_id);
    if (it == doc_ids_.end() || *it != passage_id) return std::nullopt;
    return static_cast<std::uint32_t>(it - doc_ids_.begin());
  }

  const std::vector<Posting>* find_postings(const std::string& term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? nullptr : &it->second;
  }

  double idf(std::size_t df) const {
    const double n = static_cast<double>(num_docs());
    const double d = static_cast<double>(df);
    return std::log(1.0 + (n - d + 0.5) / (d + 0.5));
  }

  /// BM25 contribution of one query term occurring `tf` times in doc `doc`.
  double term_weight(double idf_value, std::uint32_t tf, std::uint32_t doc) const {
    const double f = static_cast<double>(tf);
    const double ratio = avg_len_ > 0 ? static_cast<double>(doc_lengths_[doc]) / avg_len_ : 0.0;
    const double norm = params_.k1 * (1.0 - params_.b + params_.b * ratio);
    return idf_value * f * (params_.k1 + 1.0) / (f + norm);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out.write(kMagic.data(), kMagic.size());
    binio::put<std::uint32_t>(out, kVersion);
    binio::put<std::uint64_t>(out, num_docs());
    binio::put<double>(out, params_.k1);
    binio::put<double>(out, params_.b);
    for (std::size_t i = 0; i < num_docs(); ++i) {
      binio::put_string(out, doc_ids_[i]);
      binio::put<std::uint32_t>(out, doc_lengths_[i]);
    }
    binio::put<std::uint64_t>(out, postings_.size());
    for (const auto& [term, list] : postings_) {
      binio::put_string(out, term);
      binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(list.size()));
      for (const auto& p : list) {
        binio::put<std::uint32_t>(out, p.doc);
        binio::put<std::uint32_t>(out, p.tf);
      }
    }
    if (!out) throw IoError("failed writing '" + path.string() + "'");
  }

  static InvertedIndex load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw IoError("'" + path.string() + "' is not a BM25 index");
    auto version = binio::get<std::uint32_t>(in);
    if (version != kVersion)
      throw IoError("unsupported index version " + std::to_string(version));
    InvertedIndex idx;
    auto n = binio::get<std::uint64_t>(in);
    idx.params_.k1 = binio::get<double>(in);
    idx.params_.b = binio::get<double>(in);
    double total = 0;
    for (std::uint64_t i = 0; i < n; ++i) {
      idx.doc_ids_.push_back(binio::get_string(in));
      idx.doc_lengths_.push_back(binio::get<std::uint32_t>(in));
      total += idx.doc_lengths_.back();
    }
    idx.avg_len_ = n ? total / static_cast<double>(n) : 0.0;
    auto terms = binio::get<std::uint64_t>(in);
    for (std::uint64_t t = 0; t < terms; ++t) {
      auto term = binio::get_string(in);
      auto count = binio::get<std::uint32_t>(in);
      auto& list = idx.postings_[term];
      list.reserve(count);
      for (std::uint32_t i = 0; i < count; ++i) {
        Posting p;
        p.doc = binio::get<std::uint32_t>(in);
        p.tf = binio::get<std::uint32_t>(in);
        if (p.doc >= n) throw IoError("posting references document " + std::to_string(p.doc));
        list.push_back(p);
      }
    }
    return idx;
  }

  bool operator==(const InvertedIndex& o) const {
    return doc_ids_ == o.doc_ids_ && doc_lengths_ == o.doc_lengths_ && postings_ == o.postings_ &&
           params_.k1 == o.params_.k1 && params_.b == o.params_.b;
  }

 private:
  friend InvertedIndex build_index(std::span<const Passage>, Bm25Params);

  std::vector<std::string> doc_ids_;  // ascending
  std::vector<std::uint32_t> doc_lengths_;
  std::map<std::string, std::vector<Posting>> postings_;
  double avg_len_ = 0;
  Bm25Params params_;
};

inline InvertedIndex build_index(std::span<const Passage> passages, Bm25Params params = {}) {
  if (!(params.k1 > 0)) throw ArgumentError("k1 must be positive");
  if (!(params.b >= 0 && params.b <= 1)) throw ArgumentError("b must lie in [0, 1]");
  std::vector<const Passage*> sorted;
  for (const auto& p : passages) sorted.push_back(&p);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->id < b->id; });
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i]->id == sorted[i - 1]->id)
      throw ArgumentError("duplicate passage id '" + sorted[i]->id + "'");

  InvertedIndex idx;
  idx.params_ = params;
  double total = 0;
  for (std::size_t d = 0; d < sorted.size(); ++d) {
    auto terms = retrieval_terms(sorted[d]->text);
    idx.doc_ids_.push_back(sorted[d]->id);
    idx.doc_lengths_.push_back(static_cast<std::uint32_t>(terms.size()));
    total += static_cast<double>(terms.size());
    std::map<std::string, std::uint32_t> tf;
    for (auto& t : terms) ++tf[t];
    for (auto& [t, f] : tf) idx.postings_[t].push_back({static_cast<std::uint32_t>(d), f});
  }
  idx.avg_len_ = sorted.empty() ? 0.0 : total / static_cast<double>(sorted.size());
  return idx;
}

inline double bm25_score(const InvertedIndex& idx, std::span<const std::string> query_terms,
                         const std::string& passage_id) {
  auto doc = idx.doc_index(passage_id);
  if (!doc) throw ArgumentError("passage '" + passage_id + "' is not in the index");
  double score = 0;
  for (const auto& term : query_terms) {
    const auto* list = idx.find_postings(term);
    if (!list) continue;
    auto it = std::lower_bound(list->begin(), list->end(), *doc,
                               [](const Posting& p, std::uint32_t d) { return p.doc < d; });
    if (it == list->end() || it->doc != *doc) continue;
    score += idx.term_weight(idx.idf(list->size()), it->tf, *doc);
  }
  return score;
}

struct ScoredId {
  std::string passage_id;
  double score = 0;
  bool operator==(const ScoredId&) const = default;
};

struct Candidates {
  std::string query_id;
  std::vector<ScoredId> ranked;  // score descending, ties by ascending passage id
};

/// Term-at-a-time BM25 over the postings. Accumulation follows query-term
/// order so scores are bit-identical to bm25_score.
inline Candidates top_k(const InvertedIndex& idx, const Query& query, std::size_t k) {
  if (k < 1) throw ArgumentError("k must be at least 1");
  Candidates out{query.id, {}};
  if (idx.num_docs() == 0) return out;
  auto terms = retrieval_terms(query.text);
  std::vector<double> acc(idx.num_docs(), 0.0);
  std::vector<std::uint32_t> touched;
  for (const auto& term : terms) {
    const auto* list = idx.find_postings(term);
    if (!list) continue;
    const double w = idx.idf(list->size());
    for (const auto& p : *list) {
      if (acc[p.doc] == 0.0) touched.push_back(p.doc);
      acc[p.doc] += idx.term_weight(w, p.tf, p.doc);
    }
  }
  std::vector<std::uint32_t> hits;
  for (auto d : touched)
    if (acc[d] > 0) hits.push_back(d);
  auto better = [&](std::uint32_t a, std::uint32_t b) {
    if (acc[a] != acc[b]) return acc[a] > acc[b];
    return a < b;
  };
  const std::size_t keep = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<long>(keep), hits.end(), better);
  for (std::size_t i = 0; i < keep; ++i) out.ranked.push_back({idx.doc_ids()[hits[i]], acc[hits[i]]});
  return out;
}

}  // namespace psgrank
