#include <gtest/gtest.h>

#include "psgrank/checkpoint.hpp"
#include "support.hpp"

using namespace psgrank;

namespace {

struct Fixture {
  SyntheticCorpus corpus;
  Vocabulary vocab;
  EncoderConfig enc;
  TrainConfig train;
  std::vector<std::string> qids;

  explicit Fixture(std::size_t queries = 12) {
    SyntheticConfig sc;
    sc.num_queries = queries;
    sc.candidates_per_query = 4;
    sc.vocab_words = 60;
    sc.passage_len = 8;
    corpus = make_synthetic_corpus(sc);
    vocab = build_vocab(testsupport::all_texts(corpus.dataset), 4096);
    enc.num_layers = 1;
    enc.hidden_dim = 16;
    enc.num_heads = 2;
    enc.ffn_dim = 32;
    enc.vocab_size = static_cast<int>(vocab.size());
    enc.max_seq_len = 16;
    train.seq_len = 16;
    train.batch_size = 4;
    train.epochs = 2;
    qids = testsupport::query_ids(corpus.dataset);
  }

  TrainingExamples examples(HeadKind kind) const {
    return build_training_examples(corpus.dataset, corpus.pools, qids, kind, std::nullopt, 3);
  }
  PairInputs inputs() const { return PairInputs(vocab, corpus.dataset, train.seq_len); }
};

template <typename T>
bool same_params(const Ranker<T>& a, const Ranker<T>& b) {
  auto x = a.tensors(), y = b.tensors();
  if (x.size() != y.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (*x[i].tensor != *y[i].tensor) return false;
  return true;
}

}  // namespace

TEST(Schedule, WarmupThenLinearDecay) {
  TrainConfig c;
  c.learning_rate = 1.0;
  c.warmup_fraction = 0.2;
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(c, 0, 10), 0.5);
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(c, 1, 10), 1.0);
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(c, 2, 10), 1.0);
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(c, 9, 10), 0.125);
  c.warmup_fraction = 0;
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(c, 0, 4), 1.0);
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(c, 3, 4), 0.25);
  for (std::uint64_t s = 1; s < 4; ++s) EXPECT_LT(scheduled_learning_rate(c, s, 4), scheduled_learning_rate(c, s - 1, 4));
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.seq_len = 16;
  EXPECT_NO_THROW(c.validate(16));
  EXPECT_THROW(c.validate(8), ConfigError);
  auto bad = [&](auto mutate) {
    TrainConfig b = c;
    mutate(b);
    EXPECT_THROW(b.validate(16), ConfigError);
  };
  bad([](TrainConfig& b) { b.epochs = 0; });
  bad([](TrainConfig& b) { b.batch_size = 0; });
  bad([](TrainConfig& b) { b.margin = -1; });
  bad([](TrainConfig& b) { b.learning_rate = -1e-3; });
  bad([](TrainConfig& b) { b.warmup_fraction = 1.5; });
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  Fixture f;
  f.train.learning_rate = 0;
  auto ex = f.examples(HeadKind::kBertlets);
  auto inputs = f.inputs();
  auto model = make_ranker<float>(f.enc, HeadKind::kBertlets);
  const auto before = model;
  TrainState<float> st;
  train(model, st, ex, inputs, f.train);
  EXPECT_TRUE(same_params(model, before));
  ASSERT_EQ(st.loss_trace.size(), 2u);
  f.enc.dropout_rate = 0;
  auto plain = make_ranker<float>(f.enc, HeadKind::kBertlets);
  TrainState<float> st2;
  train(plain, st2, ex, inputs, f.train);
  EXPECT_EQ(st2.loss_trace[0], st2.loss_trace[1]);
}

TEST(Train, SameSeedSameTrajectory) {
  Fixture f;
  for (auto kind : {HeadKind::kPointwise, HeadKind::kBertlets, HeadKind::kPairwiseCe}) {
    f.train.head = kind;
    auto ex = f.examples(kind);
    auto inputs = f.inputs();
    auto a = make_ranker<float>(f.enc, kind), b = a;
    TrainState<float> sa, sb;
    train(a, sa, ex, inputs, f.train);
    train(b, sb, ex, inputs, f.train);
    EXPECT_TRUE(same_params(a, b)) << to_string(kind);
    EXPECT_EQ(sa.loss_trace, sb.loss_trace);

    auto c = make_ranker<float>(f.enc, kind);
    TrainState<float> sc;
    auto other = f.train;
    other.seed = 43;
    train(c, sc, ex, inputs, other);
    EXPECT_FALSE(same_params(a, c)) << to_string(kind);
  }
}

TEST(Train, ResumeFromCheckpointIsBitIdentical) {
  Fixture f;
  testsupport::TempDir dir;
  f.train.epochs = 3;
  auto ex = f.examples(HeadKind::kPairwiseCe);
  f.train.head = HeadKind::kPairwiseCe;
  auto inputs = f.inputs();
  auto straight = make_ranker<float>(f.enc, HeadKind::kPairwiseCe);
  auto resumed = straight;
  TrainState<float> s1;
  train(straight, s1, ex, inputs, f.train);

  auto first = f.train;
  TrainState<float> s2;
  std::vector<int> seen;
  // Stop after one epoch by interrupting from the callback.
  struct Stop {};
  try {
    train(resumed, s2, ex, inputs, first, [&](int e, double) {
      seen.push_back(e);
      throw Stop{};
    });
  } catch (const Stop&) {
  }
  ASSERT_EQ(s2.epochs_completed, 1);
  save_checkpoint(dir / "ck.bin", Checkpoint{resumed, s2, f.vocab, f.train.seq_len});
  auto ck = load_checkpoint(dir / "ck.bin");
  EXPECT_TRUE(same_params(ck.model, resumed));
  EXPECT_EQ(ck.vocab, f.vocab);
  EXPECT_EQ(ck.state.step, s2.step);
  train(ck.model, ck.state, ex, inputs, f.train, [&](int e, double) { seen.push_back(e); });
  EXPECT_EQ(seen, (std::vector<int>{0, 1, 2}));
  EXPECT_TRUE(same_params(ck.model, straight));
  EXPECT_EQ(ck.state.loss_trace, s1.loss_trace);
}

TEST(Train, HingeLossDecreasesOnSyntheticData) {
  Fixture f(40);
  f.enc.hidden_dim = 32;
  f.enc.num_heads = 4;
  f.enc.ffn_dim = 64;
  f.enc.dropout_rate = 0;
  f.enc.init_std = 0.2;
  f.enc.tie_query_key_init = true;
  f.train.epochs = 3;
  f.train.learning_rate = 2e-3;
  f.train.batch_size = 8;
  auto ex = f.examples(HeadKind::kBertlets);
  auto inputs = f.inputs();
  auto model = make_ranker<float>(f.enc, HeadKind::kBertlets);
  TrainState<float> st;
  train(model, st, ex, inputs, f.train);
  ASSERT_EQ(st.loss_trace.size(), 3u);
  EXPECT_LT(st.loss_trace[1], st.loss_trace[0]);
  EXPECT_LT(st.loss_trace[2], st.loss_trace[1]);
}

TEST(Train, MismatchesRejected) {
  Fixture f;
  auto ex = f.examples(HeadKind::kBertlets);
  auto inputs = f.inputs();
  auto model = make_ranker<float>(f.enc, HeadKind::kPairwiseCe);
  TrainState<float> st;
  EXPECT_THROW(train(model, st, ex, inputs, f.train), ConfigError);
  auto ok = make_ranker<float>(f.enc, HeadKind::kBertlets);
  auto cfg = f.train;
  cfg.epochs = 0;
  EXPECT_THROW(train(ok, st, ex, inputs, cfg), ConfigError);
  PairInputs wrong(f.vocab, f.corpus.dataset, 12);
  EXPECT_THROW(train(ok, st, ex, wrong, f.train), ConfigError);
  TrainingExamples empty;
  empty.kind = HeadKind::kBertlets;
  EXPECT_THROW(train(ok, st, empty, inputs, f.train), TrainingError);
}

TEST(Checkpoint, CorruptOrForeignFilesRejected) {
  Fixture f;
  testsupport::TempDir dir;
  testsupport::write_text(dir / "junk.bin", "hello");
  EXPECT_THROW(load_checkpoint(dir / "junk.bin"), IoError);
  EXPECT_THROW(load_checkpoint(dir / "absent.bin"), IoError);
  auto model = make_ranker<float>(f.enc, HeadKind::kPointwise, SegmentationConfig{2, 8, Aggregator::kAttention, 6});
  save_checkpoint(dir / "ok.bin", Checkpoint{model, {}, f.vocab, 16});
  auto back = load_checkpoint(dir / "ok.bin");
  EXPECT_TRUE(same_params(back.model, model));
  EXPECT_EQ(back.model.segmentation, model.segmentation);
  EXPECT_FALSE(back.state.adam.initialized());
  auto bytes = testsupport::read_text(dir / "ok.bin");
  testsupport::write_text(dir / "short.bin", bytes.substr(0, bytes.size() - 10));
  EXPECT_THROW(load_checkpoint(dir / "short.bin"), Error);
}

TEST(Rank, TrainedModelBeatsChanceOnTrainingQueries) {
  Fixture f(40);
  f.enc.hidden_dim = 32;
  f.enc.num_heads = 4;
  f.enc.ffn_dim = 64;
  f.enc.dropout_rate = 0;
  f.enc.init_std = 0.2;
  f.enc.tie_query_key_init = true;
  f.train.epochs = 3;
  f.train.learning_rate = 2e-3;
  f.train.batch_size = 8;
  auto ex = f.examples(HeadKind::kBertlets);
  auto inputs = f.inputs();
  auto model = make_ranker<float>(f.enc, HeadKind::kBertlets);
  TrainState<float> st;
  train(model, st, ex, inputs, f.train);
  std::vector<RankedList> lists;
  for (const auto& q : f.qids) {
    auto l = to_ranked_list(f.corpus.pools.at(q));
    resolve_relevance(l, f.corpus.dataset);
    lists.push_back(rank(model, inputs, q, l.entries));
    lists.back().total_relevant = l.total_relevant;
  }
  auto rep = evaluate_run(lists);
  RecordProperty("p_at_1", std::to_string(*rep.p_at_1));
  EXPECT_GT(*rep.p_at_1, 0.5);
}
