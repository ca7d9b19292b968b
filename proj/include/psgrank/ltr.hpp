#pragma once

// Ranking heads, the three training objectives (point-wise cross-entropy,
// triplet hinge on softmax-normalized scores, pair-wise NLL) and the
// construction of triplets / point-wise examples from a candidate pool.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "psgrank/errors.hpp"
#include "psgrank/linalg.hpp"

namespace psgrank {

enum class HeadKind { kPointwise, kBertlets, kPairwiseCe };

inline std::string to_string(HeadKind k) {
  switch (k) {
    case HeadKind::kPointwise: return "pointwise";
    case HeadKind::kBertlets: return "bertlets";
    case HeadKind::kPairwiseCe: return "pairwise_ce";
  }
  return "?";
}

inline HeadKind parse_head_kind(const std::string& s) {
  if (s == "pointwise" || s == "pw") return HeadKind::kPointwise;
  if (s == "bertlets" || s == "triplet") return HeadKind::kBertlets;
  if (s == "pairwise_ce" || s == "ce") return HeadKind::kPairwiseCe;
  throw ConfigError("unknown head kind '" + s + "' (expected pointwise, bertlets or pairwise_ce)");
}

/// Scoring head on top of the pooled representation. The pair-wise heads use
/// a single vector v (score = pooled . v, no bias); the point-wise head is a
/// two-label classifier.
template <typename T>
struct RankHead {
  HeadKind kind = HeadKind::kBertlets;
  Mat<T> v;      // 1 x H
  Mat<T> w_cls;  // 2 x H
  Mat<T> b_cls;  // 1 x 2

  bool uses_vector() const { return kind != HeadKind::kPointwise; }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    if (self.kind == HeadKind::kPointwise) {
      f("head.W_cls", self.w_cls);
      f("head.b_cls", self.b_cls);
    } else {
      f("head.v", self.v);
    }
  }
};

template <typename T>
RankHead<T> init_head(HeadKind kind, int hidden_dim, std::uint64_t seed, double std_dev = 0.02) {
  RankHead<T> h;
  h.kind = kind;
  std::mt19937_64 rng(seed);
  if (kind == HeadKind::kPointwise) {
    h.w_cls.resize(2, hidden_dim);
    fill_truncated_normal(h.w_cls, std_dev, rng);
    h.b_cls = Mat<T>::Zero(1, 2);
  } else {
    h.v.resize(1, hidden_dim);
    fill_truncated_normal(h.v, std_dev, rng);
  }
  return h;
}

// ---- losses -------------------------------------------------------------

struct NormalizedPair {
  double positive = 0;
  double negative = 0;
};

/// Two-way softmax of (s+, s-), stabilized by subtracting the max.
inline NormalizedPair normalize_pair(double s_plus, double s_minus) {
  const double mx = std::max(s_plus, s_minus);
  const double ep = std::exp(s_plus - mx), en = std::exp(s_minus - mx);
  const double z = ep + en;
  return {ep / z, en / z};
}

/// max(m - (s^+ - s^-), 0) on normalized scores.
inline double hinge_loss(double norm_plus, double norm_minus, double margin) {
  return std::max(margin - (norm_plus - norm_minus), 0.0);
}

inline double nll_loss(double norm_plus) { return -std::log(norm_plus); }

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// -log(softmax(s+, s-)[0]) evaluated in log space; finite for any finite scores.
inline double nll_loss_from_scores(double s_plus, double s_minus) { return softplus(s_minus - s_plus); }

inline double pointwise_loss(std::array<double, 2> logits, int label) {
  if (label != 0 && label != 1) throw ArgumentError("point-wise label must be 0 or 1");
  const double mx = std::max(logits[0], logits[1]);
  const double lse = mx + std::log(std::exp(logits[0] - mx) + std::exp(logits[1] - mx));
  return lse - logits[static_cast<std::size_t>(label)];
}

/// Probability of label 1 under softmax(logits).
inline double pointwise_probability(std::array<double, 2> logits) {
  return 1.0 / (1.0 + std::exp(logits[0] - logits[1]));
}

/// d(loss)/d(s+), d(loss)/d(s-).
struct PairGrad {
  double d_plus = 0;
  double d_minus = 0;
};

inline PairGrad hinge_loss_grad(double s_plus, double s_minus, double margin) {
  auto n = normalize_pair(s_plus, s_minus);
  if (margin - (n.positive - n.negative) <= 0) return {};
  const double k = 2.0 * n.positive * n.negative;
  return {-k, k};
}

inline PairGrad nll_loss_grad(double s_plus, double s_minus) {
  auto n = normalize_pair(s_plus, s_minus);
  return {-n.negative, n.negative};
}

inline std::array<double, 2> pointwise_loss_grad(std::array<double, 2> logits, int label) {
  const double p1 = pointwise_probability(logits);
  return {(1.0 - p1) - (label == 0 ? 1.0 : 0.0), p1 - (label == 1 ? 1.0 : 0.0)};
}

// ---- training example construction -------------------------------------

struct Triplet {
  std::string query_id;
  std::string positive_id;
  std::string negative_id;
  bool operator==(const Triplet&) const = default;
};

struct PointwiseExample {
  std::string query_id;
  std::string passage_id;
  int label = 0;
  bool operator==(const PointwiseExample&) const = default;
};

/// Maximum negatives per positive; nullopt keeps every negative.
using NegativeCap = std::optional<std::size_t>;

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace detail {

/// Seeded subsample of `keep` items from `items`, preserving their order.
template <typename V>
std::vector<V> subsample(const std::vector<V>& items, std::size_t keep, std::uint64_t seed) {
  if (keep >= items.size()) return items;
  std::vector<std::size_t> idx(items.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < keep; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  std::vector<V> out;
  for (auto i : idx) out.push_back(items[i]);
  return out;
}

}  // namespace detail

/// Deals the n negatives round-robin over the m positives (each positive gets
/// floor(n/m) or ceil(n/m) of them, every negative used once), then caps each
/// positive's share by seeded random subsampling.
inline std::vector<Triplet> build_triplets(const std::string& query_id,
                                           std::span<const std::string> positives,
                                           std::span<const std::string> negatives, NegativeCap cap,
                                           std::uint64_t seed) {
  std::vector<Triplet> out;
  if (positives.empty() || negatives.empty()) return out;
  std::vector<std::vector<std::string>> share(positives.size());
  for (std::size_t j = 0; j < negatives.size(); ++j) share[j % positives.size()].push_back(negatives[j]);
  const std::uint64_t qseed = mix_seed(seed, fnv1a(query_id));
  for (std::size_t i = 0; i < positives.size(); ++i) {
    auto kept = cap ? detail::subsample(share[i], *cap, mix_seed(qseed, i)) : share[i];
    for (auto& neg : kept) out.push_back({query_id, positives[i], neg});
  }
  return out;
}

/// One label-1 example per positive and label-0 examples for the negatives,
/// capped at cap * max(1, positives) by seeded subsampling.
inline std::vector<PointwiseExample> build_pointwise_examples(const std::string& query_id,
                                                              std::span<const std::string> positives,
                                                              std::span<const std::string> negatives,
                                                              NegativeCap cap, std::uint64_t seed) {
  std::vector<PointwiseExample> out;
  for (const auto& p : positives) out.push_back({query_id, p, 1});
  std::vector<std::string> negs(negatives.begin(), negatives.end());
  if (cap) negs = detail::subsample(negs, *cap * std::max<std::size_t>(1, positives.size()),
                                    mix_seed(seed, fnv1a(query_id)));
  for (auto& n : negs) out.push_back({query_id, n, 0});
  return out;
}

}  // namespace psgrank
