#pragma once

// Equal-size chunking of a passage's subword sequence and the two chunk
// aggregators: additive (context-vector) attention and componentwise max.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "psgrank/errors.hpp"
#include "psgrank/linalg.hpp"

namespace psgrank {

enum class Aggregator { kAttention, kMax };

inline std::string to_string(Aggregator a) { return a == Aggregator::kAttention ? "attention" : "max"; }

inline Aggregator parse_aggregator(const std::string& s) {
  if (s == "attention") return Aggregator::kAttention;
  if (s == "max") return Aggregator::kMax;
  throw ConfigError("unknown aggregator '" + s + "' (expected attention or max)");
}

struct ChunkSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool operator==(const ChunkSpan&) const = default;
};

struct ChunkSet {
  std::string passage_id;
  std::vector<ChunkSpan> chunks;
  std::size_t num_chunks() const { return chunks.size(); }
};

/// Splits `length` tokens into `num_chunks` contiguous spans whose sizes
/// differ by at most one; the earliest chunks take the remainder.
inline ChunkSet chunk_passage(std::size_t length, std::size_t num_chunks, std::string passage_id = {}) {
  if (num_chunks < 1) throw ArgumentError("num_chunks must be at least 1");
  if (length == 0) throw ArgumentError("cannot chunk an empty sequence");
  if (num_chunks > length)
    throw ArgumentError("num_chunks (" + std::to_string(num_chunks) + ") exceeds sequence length (" +
                        std::to_string(length) + ")");
  ChunkSet set{std::move(passage_id), {}};
  const std::size_t base = length / num_chunks, extra = length % num_chunks;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < num_chunks; ++i) {
    std::size_t n = base + (i < extra ? 1 : 0);
    set.chunks.push_back({pos, pos + n});
    pos += n;
  }
  return set;
}

template <typename T>
struct AttentionPoolParams {
  Mat<T> w_a;  // attention_size x H
  Mat<T> b_a;  // 1 x attention_size
  Mat<T> u_a;  // 1 x attention_size

  Eigen::Index attention_size() const { return w_a.rows(); }
  bool empty() const { return w_a.size() == 0; }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("seg.W_a", self.w_a);
    f("seg.b_a", self.b_a);
    f("seg.u_a", self.u_a);
  }
};

template <typename T>
AttentionPoolParams<T> init_attention_pool(int attention_size, int hidden_dim, std::uint64_t seed,
                                           double std_dev = 0.02) {
  if (attention_size < 1) throw ConfigError("attention_size must be at least 1");
  AttentionPoolParams<T> ap;
  ap.w_a.resize(attention_size, hidden_dim);
  ap.b_a = Mat<T>::Zero(1, attention_size);
  ap.u_a.resize(1, attention_size);
  std::mt19937_64 rng(seed);
  fill_truncated_normal(ap.w_a, std_dev, rng);
  fill_truncated_normal(ap.u_a, std_dev, rng);
  return ap;
}

template <typename T>
struct PoolResult {
  RowVec<T> output;
  ColVec<T> weights;  // attention: alpha per chunk
  Mat<T> hidden;      // attention: tanh(W_a h_i + b_a), one row per chunk
  std::vector<Eigen::Index> argmax;  // max-pool: winning chunk per component
};

/// alpha_i = softmax_i(u_a . tanh(W_a h_i + b_a)); output = sum_i alpha_i h_i.
template <typename T>
PoolResult<T> attention_pool(const AttentionPoolParams<T>& ap, const Mat<T>& chunk_vectors) {
  if (chunk_vectors.rows() == 0) throw ArgumentError("attention_pool needs at least one chunk vector");
  PoolResult<T> r;
  r.hidden = chunk_vectors * ap.w_a.transpose();
  r.hidden.rowwise() += ap.b_a.row(0);
  r.hidden = r.hidden.array().tanh().matrix();
  ColVec<T> e = r.hidden * ap.u_a.row(0).transpose();
  const T mx = e.maxCoeff();
  r.weights = (e.array() - mx).exp().matrix();
  r.weights /= r.weights.sum();
  r.output = r.weights.transpose() * chunk_vectors;
  return r;
}

template <typename T>
PoolResult<T> max_pool(const Mat<T>& chunk_vectors) {
  if (chunk_vectors.rows() == 0) throw ArgumentError("max_pool needs at least one chunk vector");
  PoolResult<T> r;
  r.output.resize(chunk_vectors.cols());
  r.argmax.resize(static_cast<std::size_t>(chunk_vectors.cols()));
  for (Eigen::Index j = 0; j < chunk_vectors.cols(); ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < chunk_vectors.rows(); ++i)
      if (chunk_vectors(i, j) > chunk_vectors(best, j)) best = i;
    r.argmax[static_cast<std::size_t>(j)] = best;
    r.output(j) = chunk_vectors(best, j);
  }
  return r;
}

/// Returns d(loss)/d(chunk vectors); attention parameter gradients are added into `g`.
template <typename T>
Mat<T> attention_pool_backward(const AttentionPoolParams<T>& ap, const Mat<T>& chunk_vectors,
                               const PoolResult<T>& r, const RowVec<T>& d_out,
                               AttentionPoolParams<T>& g) {
  const auto& alpha = r.weights;
  Mat<T> dh = alpha * d_out;  // direct path through the convex combination
  ColVec<T> dalpha = chunk_vectors * d_out.transpose();
  const T mean = alpha.dot(dalpha);
  ColVec<T> de = alpha.array() * (dalpha.array() - mean);
  g.u_a += Mat<T>(de.transpose() * r.hidden);
  Mat<T> dz = (de * ap.u_a.row(0)).array() * (T(1) - r.hidden.array().square());
  g.w_a += Mat<T>(dz.transpose() * chunk_vectors);
  g.b_a += Mat<T>(dz.colwise().sum());
  dh += dz * ap.w_a;
  return dh;
}

template <typename T>
Mat<T> max_pool_backward(const Mat<T>& chunk_vectors, const PoolResult<T>& r, const RowVec<T>& d_out) {
  Mat<T> dh = Mat<T>::Zero(chunk_vectors.rows(), chunk_vectors.cols());
  for (Eigen::Index j = 0; j < chunk_vectors.cols(); ++j) dh(r.argmax[static_cast<std::size_t>(j)], j) = d_out(j);
  return dh;
}

}  // namespace psgrank
