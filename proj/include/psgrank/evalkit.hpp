#pragma once

// P@1 / MAP / MRR, gold injection, run files and k-fold cross-validation.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "psgrank/corpus.hpp"
#include "psgrank/errors.hpp"

namespace psgrank {

struct RankedEntry {
  std::string passage_id;
  double score = 0;
  bool relevant = false;
  bool operator==(const RankedEntry&) const = default;
};

struct RankedList {
  std::string query_id;
  std::vector<RankedEntry> entries;
  // Relevant passages judged for the query, retrieved or not (AP denominator).
  std::size_t total_relevant = 0;
  bool operator==(const RankedList&) const = default;
};

/// Fills the relevance flags and total_relevant from the judgments.
inline void resolve_relevance(RankedList& list, const Dataset& d) {
  for (auto& e : list.entries) e.relevant = d.is_relevant(list.query_id, e.passage_id);
  list.total_relevant = d.relevant_passages(list.query_id).size();
}

/// Truncates to k; if no gold id is among the first k entries, the lowest gold
/// id takes rank k (or is appended when the list is shorter than k).
inline RankedList inject_gold(const RankedList& ranked, const std::set<std::string>& gold_ids,
                              std::size_t k) {
  if (k < 1) throw ArgumentError("k must be at least 1");
  RankedList out = ranked;
  if (out.entries.size() > k) out.entries.resize(k);
  if (gold_ids.empty()) return out;
  for (const auto& e : out.entries)
    if (gold_ids.contains(e.passage_id)) return out;
  RankedEntry gold{*gold_ids.begin(), 0.0, true};
  if (out.entries.size() == k) {
    gold.score = out.entries.back().score;
    out.entries.back() = gold;
  } else {
    if (!out.entries.empty()) gold.score = out.entries.back().score;
    out.entries.push_back(gold);
  }
  return out;
}

inline double precision_at_1(const RankedList& r) {
  return !r.entries.empty() && r.entries.front().relevant ? 1.0 : 0.0;
}

/// Mean over relevant ranks of precision-at-rank, divided by the total number
/// of relevant passages for the query (missing ones contribute zero).
inline double average_precision(const RankedList& r) {
  std::size_t hits = 0;
  double sum = 0;
  for (std::size_t i = 0; i < r.entries.size(); ++i) {
    if (!r.entries[i].relevant) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  const std::size_t denom = std::max(r.total_relevant, hits);
  return denom ? sum / static_cast<double>(denom) : 0.0;
}

inline double reciprocal_rank(const RankedList& r) {
  for (std::size_t i = 0; i < r.entries.size(); ++i)
    if (r.entries[i].relevant) return 1.0 / static_cast<double>(i + 1);
  return 0.0;
}

struct QueryMetrics {
  double p_at_1 = 0;
  double average_precision = 0;
  double reciprocal_rank = 0;
};

struct MetricReport {
  std::map<std::string, QueryMetrics> per_query;
  std::size_t num_queries = 0;
  // Undefined (nullopt) when no query has a relevant passage.
  std::optional<double> p_at_1;
  std::optional<double> map;
  std::optional<double> mrr;
  // Queries without any relevant passage; reported but kept out of the means.
  std::vector<std::string> excluded;
};

inline MetricReport evaluate_run(std::span<const RankedList> lists) {
  MetricReport rep;
  double p1 = 0, ap = 0, rr = 0;
  for (const auto& l : lists) {
    const bool any_relevant =
        l.total_relevant > 0 ||
        std::any_of(l.entries.begin(), l.entries.end(), [](const RankedEntry& e) { return e.relevant; });
    if (!any_relevant) {
      rep.excluded.push_back(l.query_id);
      continue;
    }
    QueryMetrics m{precision_at_1(l), average_precision(l), reciprocal_rank(l)};
    if (!rep.per_query.emplace(l.query_id, m).second)
      throw ArgumentError("query '" + l.query_id + "' appears twice in the run");
  }
  // Sum in query-id order so the means do not depend on list order.
  for (const auto& [q, m] : rep.per_query) {
    p1 += m.p_at_1;
    ap += m.average_precision;
    rr += m.reciprocal_rank;
  }
  rep.num_queries = rep.per_query.size();
  if (rep.num_queries) {
    const double n = static_cast<double>(rep.num_queries);
    rep.p_at_1 = p1 / n;
    rep.map = ap / n;
    rep.mrr = rr / n;
  }
  return rep;
}

// ---- run files ------------------------------------------------------------

inline std::string format_score(double s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", s);
  return buf;
}

/// Six-column run format: `query_id Q0 passage_id rank score tag`.
inline void write_run(std::ostream& out, std::span<const RankedList> lists, const std::string& tag) {
  for (const auto& l : lists)
    for (std::size_t i = 0; i < l.entries.size(); ++i)
      out << l.query_id << " Q0 " << l.entries[i].passage_id << ' ' << (i + 1) << ' '
          << format_score(l.entries[i].score) << ' ' << tag << '\n';
}

inline void write_run(const std::filesystem::path& path, std::span<const RankedList> lists,
                      const std::string& tag) {
  auto out = detail::open_output(path);
  write_run(out, lists, tag);
}

/// Parses a run file. Lists keep first-appearance query order; entries are
/// ordered by the rank column.
inline std::vector<RankedList> read_run(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::vector<RankedList> lists;
  std::map<std::string, std::size_t> where;
  std::map<std::string, std::vector<std::pair<long, RankedEntry>>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::is_blank(line)) continue;
    std::istringstream ss(line);
    std::string qid, q0, pid, rank_s, score_s, tag, extra;
    if (!(ss >> qid >> q0 >> pid >> rank_s >> score_s >> tag) || (ss >> extra))
      throw ParseError(path.string(), line_no, "expected 6 space-separated columns");
    long rank = 0;
    double score = 0;
    try {
      rank = std::stol(rank_s);
      score = std::stod(score_s);
    } catch (const std::exception&) {
      throw ParseError(path.string(), line_no, "rank/score not numeric");
    }
    if (!where.contains(qid)) {
      where[qid] = lists.size();
      lists.push_back({qid, {}, 0});
    }
    rows[qid].push_back({rank, {pid, score, false}});
  }
  for (auto& l : lists) {
    auto& r = rows[l.query_id];
    std::stable_sort(r.begin(), r.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::set<std::string> seen;
    for (auto& [rank, e] : r) {
      if (!seen.insert(e.passage_id).second)
        throw ParseError(path.string(), 0, "duplicate passage '" + e.passage_id + "' for query '" + l.query_id + "'");
      l.entries.push_back(e);
    }
  }
  return lists;
}

// ---- reports --------------------------------------------------------------

enum class Metric { kPAt1, kMap, kMrr };

inline std::vector<Metric> parse_metrics(const std::string& csv) {
  std::vector<Metric> out;
  std::stringstream ss(csv);
  std::string m;
  while (std::getline(ss, m, ',')) {
    if (m == "p1" || m == "p@1") out.push_back(Metric::kPAt1);
    else if (m == "map") out.push_back(Metric::kMap);
    else if (m == "mrr") out.push_back(Metric::kMrr);
    else throw ArgumentError("unknown metric '" + m + "' (expected p1, map, mrr)");
  }
  if (out.empty()) throw ArgumentError("no metrics selected");
  return out;
}

inline const char* metric_name(Metric m) {
  switch (m) {
    case Metric::kPAt1: return "P@1";
    case Metric::kMap: return "MAP";
    case Metric::kMrr: return "MRR";
  }
  return "?";
}

inline std::optional<double> metric_value(const MetricReport& r, Metric m) {
  switch (m) {
    case Metric::kPAt1: return r.p_at_1;
    case Metric::kMap: return r.map;
    case Metric::kMrr: return r.mrr;
  }
  return std::nullopt;
}

inline std::string format_metric(std::optional<double> v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

/// Tab-separated table with one row per labelled report.
inline std::string metric_table(std::span<const std::pair<std::string, MetricReport>> rows,
                                std::span<const Metric> metrics, const std::string& label_header = "run") {
  std::ostringstream out;
  out << label_header;
  for (auto m : metrics) out << '\t' << metric_name(m);
  out << "\tqueries\n";
  for (const auto& [label, rep] : rows) {
    out << label;
    for (auto m : metrics) out << '\t' << format_metric(metric_value(rep, m));
    out << '\t' << rep.num_queries << '\n';
  }
  return out.str();
}

inline nlohmann::json to_json(const MetricReport& r) {
  auto opt = [](std::optional<double> v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json j;
  j["num_queries"] = r.num_queries;
  j["p_at_1"] = opt(r.p_at_1);
  j["map"] = opt(r.map);
  j["mrr"] = opt(r.mrr);
  j["excluded"] = r.excluded;
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [q, m] : r.per_query)
    per[q] = {{"p_at_1", m.p_at_1}, {"average_precision", m.average_precision},
              {"reciprocal_rank", m.reciprocal_rank}};
  j["per_query"] = per;
  return j;
}

// ---- cross-validation -----------------------------------------------------

struct CrossValidationReport {
  std::vector<MetricReport> folds;
  MetricReport pooled;  // every evaluated query weighted equally
};

/// For each fold f: model = train_fn(f, queries outside f);
/// lists = eval_fn(f, model, queries in f). Folds run sequentially.
template <typename TrainFn, typename EvalFn>
CrossValidationReport cross_validate(const Dataset& d, const FoldAssignment& folds, TrainFn&& train_fn,
                                     EvalFn&& eval_fn) {
  for (const auto& q : d.queries())
    if (!folds.assignment.contains(q.id))
      throw ArgumentError("fold assignment does not cover query '" + q.id + "'");
  CrossValidationReport rep;
  std::vector<RankedList> all;
  for (int f = 0; f < folds.num_folds; ++f) {
    std::vector<RankedList> lists;
    try {
      auto model = train_fn(f, folds.outside(f));
      lists = eval_fn(f, model, folds.fold(f));
    } catch (const std::exception& e) {
      throw TrainingError("fold " + std::to_string(f) + " failed: " + e.what());
    }
    rep.folds.push_back(evaluate_run(lists));
    all.insert(all.end(), lists.begin(), lists.end());
  }
  rep.pooled = evaluate_run(all);
  return rep;
}

}  // namespace psgrank
