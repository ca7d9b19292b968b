#pragma once

// Fine-tuning loop for the three heads and inference-time re-ranking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "psgrank/corpus.hpp"
#include "psgrank/evalkit.hpp"
#include "psgrank/ltr.hpp"
#include "psgrank/optim.hpp"
#include "psgrank/ranker.hpp"
#include "psgrank/retrieval.hpp"
#include "psgrank/tokenizer.hpp"

namespace psgrank {

struct TrainConfig {
  HeadKind head = HeadKind::kBertlets;
  double margin = 0.2;
  int epochs = 3;
  double learning_rate = 1e-3;
  // Full-scale fine-tuning rate; kept for provenance, not used by the desk-scale model.
  double reference_learning_rate = 2e-5;
  int batch_size = 16;
  // Linear warm-up over this fraction of all steps, then linear decay to zero.
  double warmup_fraction = 0.1;
  int seq_len = 256;
  NegativeCap neg_per_pos_cap;
  std::uint64_t seed = 42;

  void validate(int max_seq_len) const {
    if (margin < 0) throw ConfigError("margin must be non-negative");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(learning_rate >= 0)) throw ConfigError("learning_rate must be non-negative");
    if (!(warmup_fraction >= 0 && warmup_fraction <= 1)) throw ConfigError("warmup_fraction must lie in [0, 1]");
    if (seq_len > max_seq_len)
      throw ConfigError("seq_len " + std::to_string(seq_len) + " exceeds encoder max_seq_len " +
                        std::to_string(max_seq_len));
  }
};

/// Subword ids for queries and passages, tokenized on first use.
class PairInputs {
 public:
  PairInputs(const Vocabulary& vocab, const Dataset& dataset, int seq_len,
             std::optional<SegmentationConfig> segmentation = std::nullopt)
      : vocab_(&vocab), dataset_(&dataset), seq_len_(seq_len), segmentation_(std::move(segmentation)) {}

  PassageInput input(const std::string& query_id, const std::string& passage_id) const {
    return make_passage_input(query_tokens(query_id), passage_tokens(passage_id), seq_len_, segmentation_, query_id);
  }

  const std::vector<int>& query_tokens(const std::string& id) const {
    auto it = queries_.find(id);
    if (it == queries_.end()) it = queries_.emplace(id, tokenize(*vocab_, dataset_->query(id).text)).first;
    return it->second;
  }
  const std::vector<int>& passage_tokens(const std::string& id) const {
    auto it = passages_.find(id);
    if (it == passages_.end()) it = passages_.emplace(id, tokenize(*vocab_, dataset_->passage(id).text)).first;
    return it->second;
  }

  int seq_len() const { return seq_len_; }
  const std::optional<SegmentationConfig>& segmentation() const { return segmentation_; }
  const Dataset& dataset() const { return *dataset_; }

 private:
  const Vocabulary* vocab_;
  const Dataset* dataset_;
  int seq_len_;
  std::optional<SegmentationConfig> segmentation_;
  mutable std::unordered_map<std::string, std::vector<int>> queries_;
  mutable std::unordered_map<std::string, std::vector<int>> passages_;
};

struct TrainingExamples {
  HeadKind kind = HeadKind::kBertlets;
  std::vector<Triplet> triplets;           // bertlets, pairwise_ce
  std::vector<PointwiseExample> pointwise;  // pointwise

  std::size_t size() const { return kind == HeadKind::kPointwise ? pointwise.size() : triplets.size(); }
  const std::string& query_of(std::size_t i) const {
    return kind == HeadKind::kPointwise ? pointwise[i].query_id : triplets[i].query_id;
  }
};

/// Positives and negatives are taken from each query's candidate pool; queries
/// whose pool holds no relevant passage contribute nothing.
inline TrainingExamples build_training_examples(const Dataset& d, const std::map<std::string, Candidates>& pools,
                                                std::span<const std::string> query_ids, HeadKind kind,
                                                NegativeCap cap, std::uint64_t seed) {
  TrainingExamples ex;
  ex.kind = kind;
  for (const auto& qid : query_ids) {
    auto it = pools.find(qid);
    if (it == pools.end()) continue;
    std::vector<std::string> pos, neg;
    for (const auto& c : it->second.ranked) (d.is_relevant(qid, c.passage_id) ? pos : neg).push_back(c.passage_id);
    if (pos.empty()) continue;
    if (kind == HeadKind::kPointwise) {
      auto e = build_pointwise_examples(qid, pos, neg, cap, seed);
      ex.pointwise.insert(ex.pointwise.end(), e.begin(), e.end());
    } else {
      auto t = build_triplets(qid, pos, neg, cap, seed);
      ex.triplets.insert(ex.triplets.end(), t.begin(), t.end());
    }
  }
  return ex;
}

/// Forward (and, when `grads` is given, backward) over a set of examples.
/// Returns per-example losses; gradients are scaled by `grad_scale`.
/// Example i draws dropout masks from mix_seed(dropout_seed, 2i) and 2i+1.
template <typename T>
std::vector<double> accumulate_examples(const Ranker<T>& model, const TrainingExamples& ex,
                                        std::span<const std::size_t> indices, const PairInputs& inputs,
                                        double margin, bool train_mode, std::uint64_t dropout_seed,
                                        std::type_identity_t<Ranker<T>>* grads, double grad_scale) {
  if (model.head.kind != ex.kind) throw UsageError("examples were built for a different head kind");
  std::vector<double> losses;
  losses.reserve(indices.size());
  const T scale = static_cast<T>(grad_scale);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const std::size_t i = indices[b];
    if (ex.kind == HeadKind::kPointwise) {
      const auto& e = ex.pointwise[i];
      auto in = inputs.input(e.query_id, e.passage_id);
      auto f = forward_passage(model, in, train_mode, mix_seed(dropout_seed, 2 * b));
      auto logits = head_logits(model.head, f.repr);
      losses.push_back(pointwise_loss(logits, e.label));
      if (!grads) continue;
      auto dl = pointwise_loss_grad(logits, e.label);
      Mat<T> dlog(1, 2);
      dlog << static_cast<T>(dl[0]) * scale, static_cast<T>(dl[1]) * scale;
      grads->head.w_cls += Mat<T>(dlog.transpose() * f.repr);
      grads->head.b_cls += dlog;
      RowVec<T> d_repr = dlog * model.head.w_cls;
      backward_passage(model, in, f, d_repr, *grads);
    } else {
      const auto& t = ex.triplets[i];
      auto in_pos = inputs.input(t.query_id, t.positive_id);
      auto in_neg = inputs.input(t.query_id, t.negative_id);
      auto fp = forward_passage(model, in_pos, train_mode, mix_seed(dropout_seed, 2 * b));
      auto fn = forward_passage(model, in_neg, train_mode, mix_seed(dropout_seed, 2 * b + 1));
      const double sp = static_cast<double>(head_dot(model.head, fp.repr));
      const double sn = static_cast<double>(head_dot(model.head, fn.repr));
      PairGrad g;
      if (ex.kind == HeadKind::kBertlets) {
        auto n = normalize_pair(sp, sn);
        losses.push_back(hinge_loss(n.positive, n.negative, margin));
        if (grads) g = hinge_loss_grad(sp, sn, margin);
      } else {
        losses.push_back(nll_loss_from_scores(sp, sn));
        if (grads) g = nll_loss_grad(sp, sn);
      }
      if (!grads) continue;
      const T dp = static_cast<T>(g.d_plus) * scale, dn = static_cast<T>(g.d_minus) * scale;
      grads->head.v += Mat<T>(dp * fp.repr + dn * fn.repr);
      backward_passage(model, in_pos, fp, RowVec<T>(dp * model.head.v.row(0)), *grads);
      backward_passage(model, in_neg, fn, RowVec<T>(dn * model.head.v.row(0)), *grads);
    }
  }
  return losses;
}

template <typename T>
struct TrainState {
  AdamState<T> adam;
  int epochs_completed = 0;
  std::uint64_t step = 0;
  std::vector<double> loss_trace;  // mean training loss per completed epoch
};

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

inline constexpr std::uint64_t kShuffleStream = 0x5348554646ull;
inline constexpr std::uint64_t kDropoutStream = 0x44524f50ull;

/// Learning rate for 0-based `step` out of `total_steps`.
inline double scheduled_learning_rate(const TrainConfig& cfg, std::uint64_t step, std::uint64_t total_steps) {
  if (total_steps == 0) return cfg.learning_rate;
  const double t = static_cast<double>(step) + 1.0, total = static_cast<double>(total_steps);
  const double warmup = std::floor(cfg.warmup_fraction * total);
  if (t <= warmup) return cfg.learning_rate * t / warmup;
  return cfg.learning_rate * std::max(0.0, (total - t + 1.0) / (total - warmup));
}

/// Mini-batch Adam over shuffled examples, continuing from `state`
/// (epochs_completed .. cfg.epochs - 1). The trajectory depends only on
/// cfg.seed, the examples and the starting state.
template <typename T>
void train(Ranker<T>& model, TrainState<T>& state, const TrainingExamples& ex, const PairInputs& inputs,
           const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate(model.encoder.config.max_seq_len);
  if (model.head.kind != cfg.head || ex.kind != cfg.head)
    throw ConfigError("model, examples and config disagree on the head kind");
  if (inputs.seq_len() != cfg.seq_len) throw ConfigError("pair inputs were built for a different seq_len");
  if (ex.size() == 0) throw TrainingError("no training examples (no query has a relevant candidate)");

  const std::uint64_t steps_per_epoch = (ex.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                        static_cast<std::size_t>(cfg.batch_size);
  const std::uint64_t total_steps = steps_per_epoch * static_cast<std::uint64_t>(cfg.epochs);
  Ranker<T> grads = model.zeros_like();
  for (int epoch = state.epochs_completed; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(ex.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(cfg.seed ^ kShuffleStream, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<double> example_loss(ex.size(), 0.0);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::span<const std::size_t> batch(order.data() + start, end - start);
      for (auto& t : grads.tensors()) t.tensor->setZero();
      auto losses = accumulate_examples(model, ex, batch, inputs, cfg.margin, true,
                                        mix_seed(cfg.seed ^ kDropoutStream, state.step), &grads,
                                        1.0 / static_cast<double>(batch.size()));
      for (std::size_t b = 0; b < batch.size(); ++b) {
        if (!std::isfinite(losses[b])) {
          std::ostringstream msg;
          msg << "non-finite loss at step " << state.step << " (epoch " << epoch << "); batch queries:";
          for (auto i : batch) msg << ' ' << ex.query_of(i);
          throw TrainingError(msg.str());
        }
        example_loss[batch[b]] = losses[b];
      }
      auto params = model.tensors();
      auto g = std::as_const(grads).tensors();
      const AdamConfig adam{scheduled_learning_rate(cfg, state.step, total_steps), 0.9, 0.999, 1e-8};
      adam_step<T>(params, g, state.adam, adam);
      ++model.encoder.version;
      ++state.step;
    }
    // Summed in example-index order.
    double sum = 0;
    for (double l : example_loss) sum += l;
    const double mean = sum / static_cast<double>(ex.size());
    state.loss_trace.push_back(mean);
    state.epochs_completed = epoch + 1;
    if (on_epoch) on_epoch(epoch, mean);
  }
}

/// Scores every candidate and sorts by descending score; ties keep the
/// incoming (first-stage) order.
template <typename T>
RankedList rank(const Ranker<T>& model, const PairInputs& inputs, const std::string& query_id,
                std::span<const RankedEntry> candidates) {
  RankedList out{query_id, {}, 0};
  out.entries.assign(candidates.begin(), candidates.end());
  for (auto& e : out.entries) e.score = score_passage(model, inputs.input(query_id, e.passage_id));
  std::stable_sort(out.entries.begin(), out.entries.end(),
                   [](const RankedEntry& a, const RankedEntry& b) { return a.score > b.score; });
  return out;
}

/// First-stage candidates as a RankedList (BM25 scores, relevance unresolved).
inline RankedList to_ranked_list(const Candidates& c) {
  RankedList l{c.query_id, {}, 0};
  for (const auto& s : c.ranked) l.entries.push_back({s.passage_id, s.score, false});
  return l;
}

}  // namespace psgrank
