#pragma once

// Queries, passages and graded judgments; loading, statistics, fold
// assignment and normal-length splitting of irrelevant sequences.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "psgrank/errors.hpp"

namespace psgrank {

inline std::vector<std::string_view> split_whitespace(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.push_back(text.substr(start, i - start));
  }
  return out;
}

inline std::size_t count_whitespace_tokens(std::string_view text) {
  return split_whitespace(text).size();
}

struct Query {
  std::string id;
  std::string text;
  bool operator==(const Query&) const = default;
};

struct Passage {
  std::string id;
  std::string text;
  std::size_t token_count = 0;

  static Passage make(std::string id, std::string text) {
    Passage p{std::move(id), std::move(text), 0};
    p.token_count = count_whitespace_tokens(p.text);
    return p;
  }
  bool operator==(const Passage&) const = default;
};

struct Judgment {
  std::string query_id;
  std::string passage_id;
  int grade = 0;
  bool operator==(const Judgment&) const = default;
};

/// Immutable collection of queries, passages and judgments. The constructor
/// enforces id uniqueness and referential integrity.
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::vector<Query> queries, std::vector<Passage> passages,
          std::vector<Judgment> judgments, int positivity_threshold = 1)
      : queries_(std::move(queries)),
        passages_(std::move(passages)),
        judgments_(std::move(judgments)),
        positivity_threshold_(positivity_threshold) {
    for (std::size_t i = 0; i < queries_.size(); ++i) {
      const auto& q = queries_[i];
      if (q.id.empty()) throw IntegrityError("query with empty id");
      if (q.text.empty()) throw IntegrityError("query '" + q.id + "' has empty text");
      if (!query_index_.emplace(q.id, i).second)
        throw IntegrityError("duplicate query id '" + q.id + "'");
    }
    for (std::size_t i = 0; i < passages_.size(); ++i) {
      auto& p = passages_[i];
      if (p.id.empty()) throw IntegrityError("passage with empty id");
      if (p.text.empty()) throw IntegrityError("passage '" + p.id + "' has empty text");
      p.token_count = count_whitespace_tokens(p.text);
      if (!passage_index_.emplace(p.id, i).second)
        throw IntegrityError("duplicate passage id '" + p.id + "'");
    }
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& j : judgments_) {
      if (j.grade < 0 || j.grade > 4)
        throw IntegrityError("grade " + std::to_string(j.grade) + " outside 0..4 for (" +
                             j.query_id + ", " + j.passage_id + ")");
      if (!query_index_.contains(j.query_id))
        throw IntegrityError("judgment references unknown query id '" + j.query_id + "'");
      if (!passage_index_.contains(j.passage_id))
        throw IntegrityError("judgment references unknown passage id '" + j.passage_id + "'");
      if (!seen.emplace(j.query_id, j.passage_id).second)
        throw IntegrityError("duplicate judgment (" + j.query_id + ", " + j.passage_id + ")");
      grades_[j.query_id][j.passage_id] = j.grade;
    }
  }

  const std::vector<Query>& queries() const noexcept { return queries_; }
  const std::vector<Passage>& passages() const noexcept { return passages_; }
  const std::vector<Judgment>& judgments() const noexcept { return judgments_; }
  int positivity_threshold() const noexcept { return positivity_threshold_; }

  const Query* find_query(const std::string& id) const {
    auto it = query_index_.find(id);
    return it == query_index_.end() ? nullptr : &queries_[it->second];
  }
  const Passage* find_passage(const std::string& id) const {
    auto it = passage_index_.find(id);
    return it == passage_index_.end() ? nullptr : &passages_[it->second];
  }
  const Query& query(const std::string& id) const {
    if (auto* q = find_query(id)) return *q;
    throw ArgumentError("unknown query id '" + id + "'");
  }
  const Passage& passage(const std::string& id) const {
    if (auto* p = find_passage(id)) return *p;
    throw ArgumentError("unknown passage id '" + id + "'");
  }

  std::optional<int> grade(const std::string& query_id, const std::string& passage_id) const {
    auto q = grades_.find(query_id);
    if (q == grades_.end()) return std::nullopt;
    auto p = q->second.find(passage_id);
    if (p == q->second.end()) return std::nullopt;
    return p->second;
  }

  bool is_relevant(const std::string& query_id, const std::string& passage_id) const {
    auto g = grade(query_id, passage_id);
    return g && *g >= positivity_threshold_;
  }

  /// Relevant passage ids for a query, in ascending id order.
  std::vector<std::string> relevant_passages(const std::string& query_id) const {
    std::vector<std::string> out;
    auto q = grades_.find(query_id);
    if (q == grades_.end()) return out;
    for (const auto& [pid, g] : q->second)
      if (g >= positivity_threshold_) out.push_back(pid);
    return out;
  }

  bool operator==(const Dataset& o) const {
    return queries_ == o.queries_ && passages_ == o.passages_ && judgments_ == o.judgments_ &&
           positivity_threshold_ == o.positivity_threshold_;
  }

 private:
  std::vector<Query> queries_;
  std::vector<Passage> passages_;
  std::vector<Judgment> judgments_;
  int positivity_threshold_ = 1;
  std::unordered_map<std::string, std::size_t> query_index_;
  std::unordered_map<std::string, std::size_t> passage_index_;
  std::unordered_map<std::string, std::map<std::string, int>> grades_;
};

namespace detail {

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return in;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

inline bool is_blank(std::string_view line) {
  return std::all_of(line.begin(), line.end(),
                     [](unsigned char c) { return std::isspace(c); });
}

inline void check_id(const std::string& id, const std::string& path, std::size_t line) {
  if (id.find_first_of("\t\n\r") != std::string::npos)
    throw ParseError(path, line, "id contains a tab or newline");
}

}  // namespace detail

/// Reads a JSON-lines file of {"id": ..., "text": ...} records. Blank lines are skipped.
inline std::vector<std::pair<std::string, std::string>> read_records(
    const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::is_blank(line)) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(path.string(), line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!rec.is_object() || !rec.contains("id") || !rec.contains("text") ||
        !rec["id"].is_string() || !rec["text"].is_string())
      throw ParseError(path.string(), line_no, "expected string fields 'id' and 'text'");
    auto id = rec["id"].get<std::string>();
    detail::check_id(id, path.string(), line_no);
    out.emplace_back(std::move(id), rec["text"].get<std::string>());
  }
  return out;
}

inline std::vector<Judgment> read_qrels(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::vector<Judgment> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::is_blank(line)) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() != 3)
      throw ParseError(path.string(), line_no,
                       "expected 3 tab-separated fields, got " + std::to_string(fields.size()));
    int grade = 0;
    try {
      std::size_t used = 0;
      grade = std::stoi(fields[2], &used);
      if (used != fields[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError(path.string(), line_no, "grade '" + fields[2] + "' is not an integer");
    }
    if (grade < 0 || grade > 4)
      throw ParseError(path.string(), line_no, "grade " + fields[2] + " outside 0..4");
    out.push_back({fields[0], fields[1], grade});
  }
  return out;
}

inline Dataset load_dataset(const std::filesystem::path& queries_path,
                            const std::filesystem::path& passages_path,
                            const std::filesystem::path& qrels_path,
                            int positivity_threshold = 1) {
  std::vector<Query> queries;
  for (auto& [id, text] : read_records(queries_path)) queries.push_back({id, text});
  std::vector<Passage> passages;
  for (auto& [id, text] : read_records(passages_path))
    passages.push_back(Passage::make(id, text));
  return Dataset(std::move(queries), std::move(passages), read_qrels(qrels_path),
                 positivity_threshold);
}

template <typename Record>
void write_records(const std::filesystem::path& path, std::span<const Record> records) {
  auto out = detail::open_output(path);
  for (const auto& r : records) out << nlohmann::json{{"id", r.id}, {"text", r.text}}.dump() << '\n';
}

inline void write_qrels(const std::filesystem::path& path, std::span<const Judgment> judgments) {
  auto out = detail::open_output(path);
  for (const auto& j : judgments) out << j.query_id << '\t' << j.passage_id << '\t' << j.grade << '\n';
}

inline void save_dataset(const Dataset& d, const std::filesystem::path& queries_path,
                         const std::filesystem::path& passages_path,
                         const std::filesystem::path& qrels_path) {
  write_records<Query>(queries_path, d.queries());
  write_records<Passage>(passages_path, d.passages());
  write_qrels(qrels_path, d.judgments());
}

struct CorpusStats {
  std::size_t num_queries = 0;
  std::size_t num_passages = 0;
  std::optional<std::size_t> min_tokens;  // empty when there are no passages
  std::optional<std::size_t> max_tokens;
  std::optional<double> avg_tokens;
};

inline CorpusStats stats(const Dataset& d) {
  CorpusStats s;
  s.num_queries = d.queries().size();
  s.num_passages = d.passages().size();
  if (d.passages().empty()) return s;
  std::size_t lo = SIZE_MAX, hi = 0;
  double sum = 0;
  for (const auto& p : d.passages()) {
    lo = std::min(lo, p.token_count);
    hi = std::max(hi, p.token_count);
    sum += static_cast<double>(p.token_count);
  }
  s.min_tokens = lo;
  s.max_tokens = hi;
  s.avg_tokens = sum / static_cast<double>(d.passages().size());
  return s;
}

struct FoldAssignment {
  int num_folds = 0;
  std::uint64_t seed = 0;
  std::map<std::string, int> assignment;

  /// Query ids in fold `f`, in ascending id order.
  std::vector<std::string> fold(int f) const {
    std::vector<std::string> out;
    for (const auto& [q, k] : assignment)
      if (k == f) out.push_back(q);
    return out;
  }
  std::vector<std::string> outside(int f) const {
    std::vector<std::string> out;
    for (const auto& [q, k] : assignment)
      if (k != f) out.push_back(q);
    return out;
  }
  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> out(static_cast<std::size_t>(num_folds), 0);
    for (const auto& [q, k] : assignment) ++out[static_cast<std::size_t>(k)];
    return out;
  }
};

/// Seeded shuffle of the dataset's query ids, dealt round-robin into folds.
inline FoldAssignment split_folds(std::span<const std::string> query_ids, int num_folds,
                                  std::uint64_t seed) {
  if (num_folds < 2) throw ArgumentError("num_folds must be at least 2");
  if (static_cast<std::size_t>(num_folds) > query_ids.size())
    throw ArgumentError("num_folds (" + std::to_string(num_folds) + ") exceeds query count (" +
                        std::to_string(query_ids.size()) + ")");
  std::vector<std::string> order(query_ids.begin(), query_ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  FoldAssignment fa{num_folds, seed, {}};
  for (std::size_t i = 0; i < order.size(); ++i)
    fa.assignment[order[i]] = static_cast<int>(i % static_cast<std::size_t>(num_folds));
  return fa;
}

inline FoldAssignment split_folds(const Dataset& d, int num_folds, std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& q : d.queries()) ids.push_back(q.id);
  return split_folds(ids, num_folds, seed);
}

struct LengthDistribution {
  double mu = 0;
  double sigma = 0;
};

/// Mean and sample (n-1) standard deviation of whitespace token counts.
inline LengthDistribution estimate_length_distribution(std::span<const Passage> positives) {
  if (positives.size() < 2)
    throw ArgumentError("length estimation needs at least 2 passages");
  const double n = static_cast<double>(positives.size());
  double mean = 0;
  for (const auto& p : positives) mean += static_cast<double>(p.token_count);
  mean /= n;
  double ss = 0;
  for (const auto& p : positives) {
    double d = static_cast<double>(p.token_count) - mean;
    ss += d * d;
  }
  return {mean, std::sqrt(ss / (n - 1))};
}

/// Cuts an irrelevant sequence into contiguous pseudo-passages whose lengths
/// follow Normal(mu, sigma), rounded and clipped to [1, remaining].
inline std::vector<Passage> split_negative_sequences(const Passage& sequence, double mu,
                                                     double sigma, std::uint64_t seed) {
  if (!(mu > 0)) throw ArgumentError("mu must be positive");
  if (sigma < 0) throw ArgumentError("sigma must be non-negative");
  auto tokens = split_whitespace(sequence.text);
  std::vector<Passage> out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::size_t pos = 0;
  while (pos < tokens.size()) {
    const std::size_t remaining = tokens.size() - pos;
    double draw = sigma > 0 ? mu + sigma * normal(rng) : mu;
    double rounded = std::round(draw);
    std::size_t len = rounded < 1 ? 1
                      : rounded >= static_cast<double>(remaining)
                          ? remaining
                          : static_cast<std::size_t>(rounded);
    std::string text;
    for (std::size_t i = 0; i < len; ++i) {
      if (i) text += ' ';
      text += tokens[pos + i];
    }
    out.push_back(Passage::make(sequence.id + "#" + std::to_string(out.size()), std::move(text)));
    pos += len;
  }
  return out;
}

}  // namespace psgrank
