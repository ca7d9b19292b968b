#pragma once

// Full scoring model: encoder + ranking head + optional chunk aggregation.
// A passage is encoded either as one (query, passage) pair or as one pair
// per chunk, aggregated into a single representation before the head.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "psgrank/encoder.hpp"
#include "psgrank/errors.hpp"
#include "psgrank/ltr.hpp"
#include "psgrank/segmentation.hpp"
#include "psgrank/tokenizer.hpp"

namespace psgrank {

struct SegmentationConfig {
  int num_chunks = 2;
  int chunk_seq_len = 128;
  Aggregator aggregator = Aggregator::kAttention;
  int attention_size = 192;

  bool operator==(const SegmentationConfig&) const = default;
};

template <typename T>
struct Ranker {
  EncoderParams<T> encoder;
  RankHead<T> head;
  std::optional<SegmentationConfig> segmentation;
  AttentionPoolParams<T> attention;  // allocated only for the attention aggregator

  bool uses_attention() const {
    return segmentation && segmentation->aggregator == Aggregator::kAttention;
  }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    EncoderParams<T>::visit(self.encoder, f);
    RankHead<T>::visit(self.head, f);
    if (self.uses_attention()) AttentionPoolParams<T>::visit(self.attention, f);
  }

  std::vector<NamedTensor<Mat<T>>> tensors() {
    std::vector<NamedTensor<Mat<T>>> out;
    visit(*this, [&](const std::string& n, Mat<T>& m) { out.push_back({n, &m}); });
    return out;
  }
  std::vector<NamedTensor<const Mat<T>>> tensors() const {
    std::vector<NamedTensor<const Mat<T>>> out;
    visit(*this, [&](const std::string& n, const Mat<T>& m) { out.push_back({n, &m}); });
    return out;
  }

  Ranker zeros_like() const {
    Ranker z = *this;
    visit(z, [](const std::string&, Mat<T>& m) { m.setZero(); });
    return z;
  }

  template <typename U>
  Ranker<U> cast() const {
    Ranker<U> out;
    out.encoder = encoder.template cast<U>();
    out.head.kind = head.kind;
    out.segmentation = segmentation;
    auto src = tensors();
    auto dst = out.tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].tensor = src[i].tensor->template cast<U>();
    return out;
  }
};

template <typename T>
Ranker<T> make_ranker(const EncoderConfig& cfg, HeadKind kind,
                      std::optional<SegmentationConfig> segmentation = std::nullopt) {
  Ranker<T> r;
  r.encoder = init_params<T>(cfg);
  r.head = init_head<T>(kind, cfg.hidden_dim, mix_seed(cfg.seed, 1), cfg.init_std);
  r.segmentation = segmentation;
  if (segmentation) {
    if (segmentation->num_chunks < 1) throw ConfigError("num_chunks must be at least 1");
    if (segmentation->chunk_seq_len > cfg.max_seq_len)
      throw ConfigError("chunk_seq_len exceeds encoder max_seq_len");
    if (r.uses_attention())
      r.attention = init_attention_pool<T>(segmentation->attention_size, cfg.hidden_dim, mix_seed(cfg.seed, 2), cfg.init_std);
  }
  return r;
}

/// Encoded pairs for one (query, passage): a single pair, or one per chunk.
struct PassageInput {
  std::vector<EncodedPair> pairs;
  bool segmented = false;
};

inline PassageInput make_passage_input(std::span<const int> query_ids, std::span<const int> passage_ids,
                                       int seq_len, const std::optional<SegmentationConfig>& seg,
                                       std::string_view query_id = {}) {
  PassageInput in;
  if (!seg) {
    in.pairs.push_back(encode_pair_ids(query_ids, passage_ids, seq_len, query_id));
    return in;
  }
  in.segmented = true;
  if (passage_ids.empty()) {
    in.pairs.push_back(encode_pair_ids(query_ids, passage_ids, seg->chunk_seq_len, query_id));
    return in;
  }
  // Passages shorter than num_chunks get one chunk per token.
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(seg->num_chunks), passage_ids.size());
  for (const auto& span : chunk_passage(passage_ids.size(), n).chunks)
    in.pairs.push_back(
        encode_pair_ids(query_ids, passage_ids.subspan(span.begin, span.size()), seg->chunk_seq_len, query_id));
  return in;
}

template <typename T>
struct PassageForward {
  ForwardResult<T> encoded;  // one pooled row per chunk
  PoolResult<T> pool;
  RowVec<T> repr;
};

template <typename T>
PassageForward<T> forward_passage(const Ranker<T>& model, const PassageInput& in, bool train_mode,
                                  std::uint64_t dropout_seed = 0) {
  PassageForward<T> f;
  f.encoded = forward_pooled(model.encoder, std::span<const EncodedPair>(in.pairs), train_mode, dropout_seed);
  if (!in.segmented) {
    f.repr = f.encoded.pooled.row(0);
    return f;
  }
  if (!model.segmentation) throw UsageError("segmented input given to an unsegmented model");
  f.pool = model.uses_attention() ? attention_pool(model.attention, f.encoded.pooled) : max_pool(f.encoded.pooled);
  f.repr = f.pool.output;
  return f;
}

template <typename T>
void backward_passage(const Ranker<T>& model, const PassageInput& in, const PassageForward<T>& f,
                      const RowVec<T>& d_repr, Ranker<T>& grads) {
  Mat<T> d_chunks;
  if (!in.segmented) {
    d_chunks = d_repr;
  } else if (model.uses_attention()) {
    d_chunks = attention_pool_backward(model.attention, f.encoded.pooled, f.pool, d_repr, grads.attention);
  } else {
    d_chunks = max_pool_backward(f.encoded.pooled, f.pool, d_repr);
  }
  backward(model.encoder, f.encoded.cache, d_chunks, grads.encoder);
}

template <typename T>
T head_dot(const RankHead<T>& head, const RowVec<T>& repr) {
  if (!head.uses_vector()) throw UsageError("head kind " + to_string(head.kind) + " has no scoring vector");
  return repr.dot(head.v.row(0));
}

template <typename T>
std::array<double, 2> head_logits(const RankHead<T>& head, const RowVec<T>& repr) {
  if (head.kind != HeadKind::kPointwise) throw UsageError("head kind " + to_string(head.kind) + " has no classifier");
  Mat<T> l = repr * head.w_cls.transpose() + head.b_cls;
  return {static_cast<double>(l(0, 0)), static_cast<double>(l(0, 1))};
}

/// Ranking score under the head's rule: pooled . v, or P(label 1) for the classifier.
template <typename T>
double head_score(const RankHead<T>& head, const RowVec<T>& repr) {
  if (head.kind == HeadKind::kPointwise) return pointwise_probability(head_logits(head, repr));
  return static_cast<double>(head_dot(head, repr));
}

/// score(q; p) = pooled(q, p) . v
template <typename T>
double score_pair(const EncoderParams<T>& params, const RankHead<T>& head, const EncodedPair& pair) {
  if (!head.uses_vector()) throw UsageError("score_pair requires a bertlets or pairwise_ce head");
  auto r = forward_pooled(params, std::span<const EncodedPair>(&pair, 1), false);
  return static_cast<double>(head_dot(head, RowVec<T>(r.pooled.row(0))));
}

template <typename T>
double pointwise_score(const EncoderParams<T>& params, const RankHead<T>& head, const EncodedPair& pair) {
  if (head.kind != HeadKind::kPointwise) throw UsageError("pointwise_score requires a pointwise head");
  auto r = forward_pooled(params, std::span<const EncodedPair>(&pair, 1), false);
  return pointwise_probability(head_logits(head, RowVec<T>(r.pooled.row(0))));
}

/// Encodes (q, chunk_i) for each chunk at chunk_seq_len, aggregates the pooled
/// vectors and applies the head.
template <typename T>
double score_segmented(const EncoderParams<T>& params, const RankHead<T>& head,
                       const AttentionPoolParams<T>& ap, std::span<const int> query_ids,
                       std::span<const int> passage_ids, int num_chunks, int chunk_seq_len,
                       Aggregator aggregator) {
  if (chunk_seq_len > params.config.max_seq_len) throw ShapeError("chunk_seq_len exceeds encoder max_seq_len");
  SegmentationConfig seg{num_chunks, chunk_seq_len, aggregator, static_cast<int>(ap.attention_size())};
  auto in = make_passage_input(query_ids, passage_ids, chunk_seq_len, seg);
  auto enc = forward_pooled(params, std::span<const EncodedPair>(in.pairs), false);
  auto pooled = aggregator == Aggregator::kAttention ? attention_pool(ap, enc.pooled) : max_pool(enc.pooled);
  return head_score(head, pooled.output);
}

template <typename T>
double score_passage(const Ranker<T>& model, const PassageInput& in) {
  return head_score(model.head, forward_passage(model, in, false).repr);
}

}  // namespace psgrank
