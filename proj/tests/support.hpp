#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "psgrank/synthetic.hpp"
#include "psgrank/training.hpp"

namespace testsupport {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "psgrank") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<std::string> all_texts(const psgrank::Dataset& d) {
  std::vector<std::string> texts;
  for (const auto& q : d.queries()) texts.push_back(q.text);
  for (const auto& p : d.passages()) texts.push_back(p.text);
  return texts;
}

inline std::vector<std::string> query_ids(const psgrank::Dataset& d) {
  std::vector<std::string> ids;
  for (const auto& q : d.queries()) ids.push_back(q.id);
  return ids;
}

// Straight transcription of the scoring formula over raw passage text.
struct OracleBm25 {
  explicit OracleBm25(const std::vector<psgrank::Passage>& passages, double k1 = 1.2, double b = 0.75)
      : k1(k1), b(b) {
    double total = 0;
    for (const auto& p : passages) {
      terms[p.id] = psgrank::retrieval_terms(p.text);
      total += static_cast<double>(terms[p.id].size());
    }
    n = static_cast<double>(passages.size());
    avg = total / n;
  }

  double operator()(const std::vector<std::string>& query_terms, const std::string& passage_id) const {
    const auto& doc = terms.at(passage_id);
    double score = 0;
    for (const auto& t : query_terms) {
      auto [it, fresh] = df_cache.try_emplace(t, 0.0);
      if (fresh)
        for (const auto& [id, ts] : terms) it->second += std::count(ts.begin(), ts.end(), t) > 0 ? 1 : 0;
      const double df = it->second;
      const double tf = static_cast<double>(std::count(doc.begin(), doc.end(), t));
      if (tf == 0) continue;
      const double idf = std::log(1 + (n - df + 0.5) / (df + 0.5));
      score += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * static_cast<double>(doc.size()) / avg));
    }
    return score;
  }

  double k1, b, n = 0, avg = 0;
  std::map<std::string, std::vector<std::string>> terms;
  mutable std::map<std::string, double> df_cache;
};

inline std::vector<psgrank::Passage> random_passages(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<psgrank::Passage> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string text;
    const std::size_t len = 3 + rng() % 25;
    for (std::size_t w = 0; w < len; ++w) text += (w ? " " : "") + std::string("t") + std::to_string(rng() % vocab);
    char id[16];
    std::snprintf(id, sizeof id, "p%04zu", (i * 7919) % n);
    out.push_back(psgrank::Passage::make(id, text));
  }
  return out;
}

// Mean of precision-at-rank over relevant ranks, by explicit prefix counts.
inline double oracle_average_precision(const std::vector<bool>& rel, std::size_t total) {
  if (total == 0) return 0;
  double sum = 0;
  for (std::size_t k = 0; k < rel.size(); ++k) {
    if (!rel[k]) continue;
    std::size_t prefix = 0;
    for (std::size_t j = 0; j <= k; ++j) prefix += rel[j];
    sum += static_cast<double>(prefix) / static_cast<double>(k + 1);
  }
  return sum / static_cast<double>(total);
}

struct GradCheckResult {
  double worst = 0;
  std::string worst_name;
  std::size_t checked = 0;
  std::map<std::string, double> per_tensor;
};

// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central differences over every parameter of `model` for the summed loss of
/// `ex` (dropout masks fixed by `dropout_seed`), compared with accumulate_examples.
inline GradCheckResult gradient_check(psgrank::Ranker<double> model, const psgrank::TrainingExamples& ex,
                                      const psgrank::PairInputs& inputs, double margin,
                                      std::uint64_t dropout_seed, double eps = 1e-5) {
  using namespace psgrank;
  std::vector<std::size_t> idx(ex.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  auto loss = [&](const Ranker<double>& m) {
    double s = 0;
    for (double l : accumulate_examples<double>(m, ex, idx, inputs, margin, true, dropout_seed, nullptr, 1.0)) s += l;
    return s;
  };
  auto grads = model.zeros_like();
  accumulate_examples<double>(model, ex, idx, inputs, margin, true, dropout_seed, &grads, 1.0);

  GradCheckResult r;
  auto params = model.tensors();
  auto g = std::as_const(grads).tensors();
  for (std::size_t t = 0; t < params.size(); ++t) {
    double worst = 0;
    auto& w = *params[t].tensor;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double old = w.data()[i];
      w.data()[i] = old + eps;
      const double up = loss(model);
      w.data()[i] = old - eps;
      const double down = loss(model);
      w.data()[i] = old;
      const double numeric = (up - down) / (2 * eps);
      worst = std::max(worst, relative_error(g[t].tensor->data()[i], numeric));
      ++r.checked;
    }
    r.per_tensor[params[t].name] = worst;
    if (worst >= r.worst) {
      r.worst = worst;
      r.worst_name = params[t].name;
    }
  }
  return r;
}

/// Small double-precision model and examples for gradient checks: 2 layers,
/// H=32, 4 heads, seq_len 16. Weights are scaled up so every gradient is well
/// away from zero.
struct GradCheckSetup {
  psgrank::SyntheticCorpus corpus;
  psgrank::Vocabulary vocab;
  psgrank::Ranker<double> model;
  psgrank::TrainingExamples examples;
  std::optional<psgrank::SegmentationConfig> segmentation;
};

inline GradCheckSetup make_grad_check_setup(psgrank::HeadKind kind,
                                            std::optional<psgrank::SegmentationConfig> seg = std::nullopt,
                                            std::uint64_t seed = 5) {
  using namespace psgrank;
  SyntheticConfig sc;
  sc.num_queries = 1;
  sc.candidates_per_query = 3;
  sc.vocab_words = 30;
  sc.passage_len = 8;
  sc.seed = seed;
  GradCheckSetup s{make_synthetic_corpus(sc), {}, {}, {}, seg};
  s.vocab = build_vocab(all_texts(s.corpus.dataset), 4096);
  EncoderConfig ec;
  ec.num_layers = 2;
  ec.hidden_dim = 32;
  ec.num_heads = 4;
  ec.ffn_dim = 64;
  ec.vocab_size = static_cast<int>(s.vocab.size());
  ec.max_seq_len = 16;
  ec.dropout_rate = 0.1;
  ec.seed = seed;
  s.model = make_ranker<double>(ec, kind, seg);
  for (auto& t : s.model.tensors()) {
    const bool gain_or_bias = t.name.find("ln") != std::string::npos || t.name.find(".b") != std::string::npos;
    if (!gain_or_bias) *t.tensor *= 4.0;
  }
  s.examples = build_training_examples(s.corpus.dataset, s.corpus.pools, query_ids(s.corpus.dataset), kind,
                                       std::nullopt, seed);
  return s;
}

}  // namespace testsupport
