#pragma once

// Compact post-norm transformer cross-encoder. Maps an EncodedPair to the
// tanh-pooled [CLS] vector and back-propagates exact gradients to every
// parameter.
//
// Shapes use the row-vector convention: activations are (tokens x hidden),
// dense layers compute X * W + b with W stored (in x out).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "psgrank/errors.hpp"
#include "psgrank/linalg.hpp"
#include "psgrank/tokenizer.hpp"

namespace psgrank {

enum class Activation { kGelu, kRelu };

inline std::string to_string(Activation a) { return a == Activation::kGelu ? "gelu" : "relu"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "gelu") return Activation::kGelu;
  if (s == "relu") return Activation::kRelu;
  throw ConfigError("unknown activation '" + s + "'");
}

struct EncoderConfig {
  int num_layers = 2;
  int hidden_dim = 64;
  int num_heads = 4;
  int ffn_dim = 256;
  int vocab_size = 4096;
  int max_seq_len = 128;
  double dropout_rate = 0.1;
  Activation activation = Activation::kGelu;
  double init_std = 0.02;  // truncated-normal std for weights and embeddings
  bool tie_query_key_init = false;  // start every layer with W_k = W_q
  std::uint64_t seed = 42;

  int head_dim() const { return hidden_dim / num_heads; }

  void validate() const {
    if (num_layers < 1) throw ConfigError("num_layers must be at least 1");
    if (hidden_dim < 1 || num_heads < 1) throw ConfigError("hidden_dim and num_heads must be positive");
    if (hidden_dim % num_heads != 0)
      throw ConfigError("hidden_dim " + std::to_string(hidden_dim) + " is not divisible by num_heads " +
                        std::to_string(num_heads));
    if (max_seq_len < 8) throw ConfigError("max_seq_len must be at least 8");
    if (ffn_dim < hidden_dim) throw ConfigError("ffn_dim must be at least hidden_dim");
    if (vocab_size < static_cast<int>(Vocabulary::kNumReserved))
      throw ConfigError("vocab_size must cover the reserved tokens");
    if (!(dropout_rate >= 0 && dropout_rate < 1)) throw ConfigError("dropout_rate must lie in [0, 1)");
    if (!(init_std > 0)) throw ConfigError("init_std must be positive");
  }

  bool operator==(const EncoderConfig&) const = default;
};

template <typename T>
struct LayerParams {
  Mat<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Mat<T> ln1_g, ln1_b;
  Mat<T> w1, b1, w2, b2;
  Mat<T> ln2_g, ln2_b;
};

template <typename T>
struct EncoderParams {
  EncoderConfig config;
  Mat<T> tok_emb, pos_emb, seg_emb, emb_ln_g, emb_ln_b;
  std::vector<LayerParams<T>> layers;
  Mat<T> pool_w, pool_b;
  // Bumped on every in-place update so caches from older parameters are detectable.
  std::uint64_t version = 0;

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("enc.tok_emb", self.tok_emb);
    f("enc.pos_emb", self.pos_emb);
    f("enc.seg_emb", self.seg_emb);
    f("enc.emb_ln.g", self.emb_ln_g);
    f("enc.emb_ln.b", self.emb_ln_b);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& L = self.layers[l];
      const std::string p = "enc.layer" + std::to_string(l) + ".";
      f(p + "wq", L.wq); f(p + "bq", L.bq);
      f(p + "wk", L.wk); f(p + "bk", L.bk);
      f(p + "wv", L.wv); f(p + "bv", L.bv);
      f(p + "wo", L.wo); f(p + "bo", L.bo);
      f(p + "ln1.g", L.ln1_g); f(p + "ln1.b", L.ln1_b);
      f(p + "w1", L.w1); f(p + "b1", L.b1);
      f(p + "w2", L.w2); f(p + "b2", L.b2);
      f(p + "ln2.g", L.ln2_g); f(p + "ln2.b", L.ln2_b);
    }
    f("enc.pool.w", self.pool_w);
    f("enc.pool.b", self.pool_b);
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

  EncoderParams zeros_like() const {
    EncoderParams z = *this;
    visit(z, [](const std::string&, Mat<T>& m) { m.setZero(); });
    z.version = 0;
    return z;
  }

  template <typename U>
  EncoderParams<U> cast() const {
    EncoderParams<U> out;
    out.config = config;
    out.layers.resize(layers.size());
    auto src = tensors();
    auto dst = out.tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].tensor = src[i].tensor->template cast<U>();
    return out;
  }
};

template <typename T>
EncoderParams<T> init_params(const EncoderConfig& cfg) {
  cfg.validate();
  const Eigen::Index H = cfg.hidden_dim, F = cfg.ffn_dim;
  EncoderParams<T> p;
  p.config = cfg;
  p.tok_emb.resize(cfg.vocab_size, H);
  p.pos_emb.resize(cfg.max_seq_len, H);
  p.seg_emb.resize(2, H);
  p.emb_ln_g = Mat<T>::Ones(1, H);
  p.emb_ln_b = Mat<T>::Zero(1, H);
  p.layers.resize(static_cast<std::size_t>(cfg.num_layers));
  for (auto& L : p.layers) {
    for (auto* w : {&L.wq, &L.wk, &L.wv, &L.wo}) w->resize(H, H);
    for (auto* b : {&L.bq, &L.bk, &L.bv, &L.bo}) *b = Mat<T>::Zero(1, H);
    L.ln1_g = Mat<T>::Ones(1, H);
    L.ln1_b = Mat<T>::Zero(1, H);
    L.w1.resize(H, F);
    L.b1 = Mat<T>::Zero(1, F);
    L.w2.resize(F, H);
    L.b2 = Mat<T>::Zero(1, H);
    L.ln2_g = Mat<T>::Ones(1, H);
    L.ln2_b = Mat<T>::Zero(1, H);
  }
  p.pool_w.resize(H, H);
  p.pool_b = Mat<T>::Zero(1, H);

  std::mt19937_64 rng(cfg.seed);
  EncoderParams<T>::visit(p, [&](const std::string& name, Mat<T>& m) {
    bool is_weight = name.find(".b") == std::string::npos && name.find(".g") == std::string::npos &&
                     name.find("ln") == std::string::npos;
    if (is_weight) fill_truncated_normal(m, cfg.init_std, rng);
  });
  if (cfg.tie_query_key_init)
    for (auto& L : p.layers) L.wk = L.wq;
  return p;
}

namespace detail {

inline constexpr double kLayerNormEps = 1e-12;

template <typename T>
struct LayerNormCache {
  Mat<T> xhat;
  ColVec<T> rstd;
};

template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const Mat<T>& g, const Mat<T>& b, LayerNormCache<T>& c) {
  const Eigen::Index n = x.rows(), h = x.cols();
  c.xhat.resize(n, h);
  c.rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    T mean = x.row(i).mean();
    RowVec<T> centered = x.row(i).array() - mean;
    T var = centered.squaredNorm() / static_cast<T>(h);
    T rstd = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    c.rstd(i) = rstd;
    c.xhat.row(i) = centered * rstd;
  }
  Mat<T> y = c.xhat.array().rowwise() * g.row(0).array();
  y.rowwise() += b.row(0);
  return y;
}

template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const Mat<T>& g, const LayerNormCache<T>& c,
                           Mat<T>& dg, Mat<T>& db) {
  const Eigen::Index n = dy.rows(), h = dy.cols();
  dg = (dy.array() * c.xhat.array()).colwise().sum().matrix();
  db = dy.colwise().sum();
  Mat<T> dxhat = dy.array().rowwise() * g.row(0).array();
  Mat<T> dx(n, h);
  for (Eigen::Index i = 0; i < n; ++i) {
    T mean_d = dxhat.row(i).mean();
    T mean_dx = dxhat.row(i).dot(c.xhat.row(i)) / static_cast<T>(h);
    dx.row(i) = (dxhat.row(i).array() - mean_d - c.xhat.row(i).array() * mean_dx) * c.rstd(i);
  }
  return dx;
}

template <typename T>
T activate(T x, Activation a) {
  if (a == Activation::kRelu) return x > 0 ? x : T(0);
  return T(0.5) * x * (T(1) + std::erf(x * static_cast<T>(M_SQRT1_2)));
}

template <typename T>
T activate_grad(T x, Activation a) {
  if (a == Activation::kRelu) return x > 0 ? T(1) : T(0);
  const T cdf = T(0.5) * (T(1) + std::erf(x * static_cast<T>(M_SQRT1_2)));
  const T pdf = std::exp(T(-0.5) * x * x) * static_cast<T>(0.5 * M_2_SQRTPI * M_SQRT1_2);
  return cdf + x * pdf;
}

class Dropout {
 public:
  Dropout(double rate, bool active, std::uint64_t seed)
      : rate_(rate), active_(active && rate > 0), rng_(seed) {}

  /// Inverted-dropout mask; empty when dropout is inactive.
  template <typename T>
  Mat<T> mask(Eigen::Index rows, Eigen::Index cols) {
    if (!active_) return {};
    Mat<T> m(rows, cols);
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate_));
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = unit_uniform(rng_) < rate_ ? T(0) : keep_scale;
    return m;
  }

 private:
  double rate_;
  bool active_;
  std::mt19937_64 rng_;
};

template <typename T>
void apply_mask(Mat<T>& x, const Mat<T>& mask) {
  if (mask.size()) x.array() *= mask.array();
}

}  // namespace detail

template <typename T>
struct LayerCache {
  Mat<T> x;  // layer input, all positions
  Eigen::Index out_rows = 0;
  Mat<T> q, k, v;
  std::vector<Mat<T>> probs;       // per head, softmax output before dropout
  std::vector<Mat<T>> prob_masks;  // per head dropout masks (empty when inactive)
  Mat<T> ctx;
  Mat<T> attn_mask;
  detail::LayerNormCache<T> ln1;
  Mat<T> y;  // post-attention sublayer output
  Mat<T> f1, act;
  Mat<T> ffn_mask;
  detail::LayerNormCache<T> ln2;
};

template <typename T>
struct SequenceCache {
  std::vector<int> ids;       // real positions only
  std::vector<int> segments;
  Mat<T> emb_mask;
  detail::LayerNormCache<T> emb_ln;
  std::vector<LayerCache<T>> layers;
  Mat<T> cls;     // 1 x H final [CLS] state
  Mat<T> pooled;  // 1 x H
};

template <typename T>
struct ForwardCache {
  std::vector<SequenceCache<T>> sequences;
  bool has_activations = false;
  const void* owner = nullptr;
  std::uint64_t params_version = 0;
};

template <typename T>
struct ForwardResult {
  Mat<T> pooled;  // batch x H, one row per pair
  ForwardCache<T> cache;
};

namespace detail {

/// Validates the padding mask and returns the number of real positions.
inline std::size_t real_length(const EncodedPair& pair, int max_seq_len) {
  if (pair.seq_len > max_seq_len)
    throw ShapeError("pair seq_len " + std::to_string(pair.seq_len) + " exceeds encoder max_seq_len " +
                     std::to_string(max_seq_len));
  const auto n = static_cast<std::size_t>(pair.seq_len);
  if (pair.token_ids.size() != n || pair.segment_ids.size() != n || pair.mask.size() != n)
    throw ShapeError("pair vectors do not match seq_len");
  std::size_t len = 0;
  while (len < n && pair.mask[len] == 1) ++len;
  for (std::size_t i = len; i < n; ++i)
    if (pair.mask[i] != 0) throw ShapeError("padding mask is not a prefix of ones");
  if (len == 0) throw ShapeError("pair has no real tokens");
  return len;
}

// Padded positions are never materialized: with a prefix mask, dropping them
// is identical to masking their keys out of every attention row.
template <typename T>
Mat<T> layer_forward(const LayerParams<T>& L, const EncoderConfig& cfg, const Mat<T>& x,
                     Eigen::Index out_rows, Dropout& drop, LayerCache<T>& c) {
  const Eigen::Index n = x.rows(), H = cfg.hidden_dim, d = cfg.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  c.x = x;
  c.out_rows = out_rows;
  c.q = x.topRows(out_rows) * L.wq;
  c.q.rowwise() += L.bq.row(0);
  c.k = x * L.wk;
  c.k.rowwise() += L.bk.row(0);
  c.v = x * L.wv;
  c.v.rowwise() += L.bv.row(0);
  c.ctx.resize(out_rows, H);
  c.probs.assign(static_cast<std::size_t>(cfg.num_heads), {});
  c.prob_masks.assign(static_cast<std::size_t>(cfg.num_heads), {});
  for (int h = 0; h < cfg.num_heads; ++h) {
    Mat<T> s = c.q.middleCols(h * d, d) * c.k.middleCols(h * d, d).transpose() * scale;
    for (Eigen::Index i = 0; i < out_rows; ++i) {
      T mx = s.row(i).maxCoeff();
      s.row(i) = (s.row(i).array() - mx).exp();
      s.row(i) /= s.row(i).sum();
    }
    auto& pm = c.prob_masks[static_cast<std::size_t>(h)];
    pm = drop.mask<T>(out_rows, n);
    Mat<T> p = s;
    apply_mask(p, pm);
    c.ctx.middleCols(h * d, d) = p * c.v.middleCols(h * d, d);
    c.probs[static_cast<std::size_t>(h)] = std::move(s);
  }
  Mat<T> a = c.ctx * L.wo;
  a.rowwise() += L.bo.row(0);
  c.attn_mask = drop.mask<T>(out_rows, H);
  apply_mask(a, c.attn_mask);
  Mat<T> res1 = x.topRows(out_rows) + a;
  c.y = layer_norm(res1, L.ln1_g, L.ln1_b, c.ln1);

  c.f1 = c.y * L.w1;
  c.f1.rowwise() += L.b1.row(0);
  c.act = c.f1.unaryExpr([&](T v) { return activate(v, cfg.activation); });
  Mat<T> f2 = c.act * L.w2;
  f2.rowwise() += L.b2.row(0);
  c.ffn_mask = drop.mask<T>(out_rows, H);
  apply_mask(f2, c.ffn_mask);
  Mat<T> res2 = c.y + f2;
  return layer_norm(res2, L.ln2_g, L.ln2_b, c.ln2);
}

template <typename T>
void add_into(Mat<T>& acc, const Mat<T>& term) {
  acc += term;
}

/// Returns d(layer input). Parameter gradients are computed in full for this
/// sequence and then added once into `g`, so per-sequence contributions sum
/// exactly.
template <typename T>
Mat<T> layer_backward(const LayerParams<T>& L, const EncoderConfig& cfg, const LayerCache<T>& c,
                      const Mat<T>& dout, LayerParams<T>& g) {
  const Eigen::Index n = c.x.rows(), r = c.out_rows, d = cfg.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  Mat<T> tmp_g, tmp_b;

  Mat<T> dres2 = layer_norm_backward(dout, L.ln2_g, c.ln2, tmp_g, tmp_b);
  add_into(g.ln2_g, tmp_g);
  add_into(g.ln2_b, tmp_b);
  Mat<T> dy = dres2;
  Mat<T> df2 = dres2;
  apply_mask(df2, c.ffn_mask);
  add_into(g.w2, Mat<T>(c.act.transpose() * df2));
  add_into(g.b2, Mat<T>(df2.colwise().sum()));
  Mat<T> dact = df2 * L.w2.transpose();
  Mat<T> df1 = dact.array() * c.f1.unaryExpr([&](T v) { return activate_grad(v, cfg.activation); }).array();
  add_into(g.w1, Mat<T>(c.y.transpose() * df1));
  add_into(g.b1, Mat<T>(df1.colwise().sum()));
  dy += df1 * L.w1.transpose();

  Mat<T> dres1 = layer_norm_backward(dy, L.ln1_g, c.ln1, tmp_g, tmp_b);
  add_into(g.ln1_g, tmp_g);
  add_into(g.ln1_b, tmp_b);
  Mat<T> dx = Mat<T>::Zero(n, c.x.cols());
  dx.topRows(r) = dres1;
  Mat<T> da = dres1;
  apply_mask(da, c.attn_mask);
  add_into(g.wo, Mat<T>(c.ctx.transpose() * da));
  add_into(g.bo, Mat<T>(da.colwise().sum()));
  Mat<T> dctx = da * L.wo.transpose();

  Mat<T> dq(r, c.q.cols()), dk(n, c.k.cols()), dv(n, c.v.cols());
  for (int h = 0; h < cfg.num_heads; ++h) {
    const auto hs = static_cast<std::size_t>(h);
    const Mat<T>& probs = c.probs[hs];
    Mat<T> p = probs;
    apply_mask(p, c.prob_masks[hs]);
    Mat<T> dctx_h = dctx.middleCols(h * d, d);
    dv.middleCols(h * d, d) = p.transpose() * dctx_h;
    Mat<T> dp = dctx_h * c.v.middleCols(h * d, d).transpose();
    apply_mask(dp, c.prob_masks[hs]);
    Mat<T> ds(r, n);
    for (Eigen::Index i = 0; i < r; ++i) {
      T dot = dp.row(i).dot(probs.row(i));
      ds.row(i) = probs.row(i).array() * (dp.row(i).array() - dot);
    }
    ds *= scale;
    dq.middleCols(h * d, d) = ds * c.k.middleCols(h * d, d);
    dk.middleCols(h * d, d) = ds.transpose() * c.q.middleCols(h * d, d);
  }
  add_into(g.wq, Mat<T>(c.x.topRows(r).transpose() * dq));
  add_into(g.bq, Mat<T>(dq.colwise().sum()));
  add_into(g.wk, Mat<T>(c.x.transpose() * dk));
  add_into(g.bk, Mat<T>(dk.colwise().sum()));
  add_into(g.wv, Mat<T>(c.x.transpose() * dv));
  add_into(g.bv, Mat<T>(dv.colwise().sum()));
  dx.topRows(r) += dq * L.wq.transpose();
  dx += dk * L.wk.transpose();
  dx += dv * L.wv.transpose();
  return dx;
}

}  // namespace detail

/// Pooled representation for one pair, optionally retaining activations.
template <typename T>
RowVec<T> forward_sequence(const EncoderParams<T>& p, const EncodedPair& pair, bool train_mode,
                           std::uint64_t dropout_seed, SequenceCache<T>& c) {
  const auto& cfg = p.config;
  const std::size_t len = detail::real_length(pair, cfg.max_seq_len);
  const Eigen::Index n = static_cast<Eigen::Index>(len), H = cfg.hidden_dim;
  detail::Dropout drop(cfg.dropout_rate, train_mode, dropout_seed);

  c.ids.assign(pair.token_ids.begin(), pair.token_ids.begin() + static_cast<long>(len));
  c.segments.assign(pair.segment_ids.begin(), pair.segment_ids.begin() + static_cast<long>(len));
  Mat<T> e(n, H);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int id = c.ids[static_cast<std::size_t>(i)];
    const int seg = c.segments[static_cast<std::size_t>(i)];
    if (id < 0 || id >= cfg.vocab_size)
      throw ShapeError("token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(cfg.vocab_size));
    if (seg != 0 && seg != 1) throw ShapeError("segment id must be 0 or 1");
    e.row(i) = p.tok_emb.row(id) + p.pos_emb.row(i) + p.seg_emb.row(seg);
  }
  Mat<T> x = detail::layer_norm(e, p.emb_ln_g, p.emb_ln_b, c.emb_ln);
  c.emb_mask = drop.mask<T>(n, H);
  detail::apply_mask(x, c.emb_mask);

  c.layers.resize(p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    // Only the [CLS] row of the last layer feeds the pooler.
    const Eigen::Index rows = l + 1 == p.layers.size() ? 1 : n;
    x = detail::layer_forward(p.layers[l], cfg, x, rows, drop, c.layers[l]);
  }
  c.cls = x.topRows(1);
  Mat<T> pre = c.cls * p.pool_w + p.pool_b;
  c.pooled = pre.array().tanh().matrix();
  return c.pooled.row(0);
}

/// Adds this sequence's parameter gradients into `g` given d(loss)/d(pooled).
template <typename T>
void backward_sequence(const EncoderParams<T>& p, const SequenceCache<T>& c, const RowVec<T>& d_pooled,
                       EncoderParams<T>& g) {
  const auto& cfg = p.config;
  Mat<T> dpre = d_pooled.array() * (T(1) - c.pooled.row(0).array().square());
  g.pool_w += Mat<T>(c.cls.transpose() * dpre);
  g.pool_b += dpre;
  Mat<T> dx = dpre * p.pool_w.transpose();
  for (std::size_t l = p.layers.size(); l-- > 0;)
    dx = detail::layer_backward(p.layers[l], cfg, c.layers[l], dx, g.layers[l]);

  detail::apply_mask(dx, c.emb_mask);
  Mat<T> dg, db;
  Mat<T> de = detail::layer_norm_backward(dx, p.emb_ln_g, c.emb_ln, dg, db);
  g.emb_ln_g += dg;
  g.emb_ln_b += db;
  // Sum per token and segment first so each table row receives one addition per sequence.
  std::map<int, RowVec<T>> tok_rows;
  RowVec<T> seg_rows[2] = {RowVec<T>::Zero(cfg.hidden_dim), RowVec<T>::Zero(cfg.hidden_dim)};
  bool seg_used[2] = {false, false};
  for (Eigen::Index i = 0; i < de.rows(); ++i) {
    const int id = c.ids[static_cast<std::size_t>(i)];
    const int seg = c.segments[static_cast<std::size_t>(i)];
    auto [it, fresh] = tok_rows.try_emplace(id, de.row(i));
    if (!fresh) it->second += de.row(i);
    seg_rows[seg] += de.row(i);
    seg_used[seg] = true;
    g.pos_emb.row(i) += de.row(i);
  }
  for (auto& [id, row] : tok_rows) g.tok_emb.row(id) += row;
  for (int s = 0; s < 2; ++s)
    if (seg_used[s]) g.seg_emb.row(s) += seg_rows[s];
}

/// Pooled vectors for a batch of pairs. With `train_mode` the activations are
/// kept for backward(); pair i draws dropout masks from mix_seed(dropout_seed, i).
template <typename T>
ForwardResult<T> forward_pooled(const EncoderParams<T>& p, std::span<const EncodedPair> batch,
                                bool train_mode, std::uint64_t dropout_seed = 0) {
  ForwardResult<T> out;
  out.pooled.resize(static_cast<Eigen::Index>(batch.size()), p.config.hidden_dim);
  out.cache.sequences.resize(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i)
    out.pooled.row(static_cast<Eigen::Index>(i)) =
        forward_sequence(p, batch[i], train_mode, mix_seed(dropout_seed, i), out.cache.sequences[i]);
  if (train_mode) {
    out.cache.has_activations = true;
    out.cache.owner = &p;
    out.cache.params_version = p.version;
  } else {
    out.cache.sequences.clear();
  }
  return out;
}

template <typename T>
void check_cache(const EncoderParams<T>& p, const ForwardCache<T>& cache) {
  if (!cache.has_activations) throw StateError("backward requires a train-mode forward cache");
  if (cache.owner != &p || cache.params_version != p.version)
    throw StateError("forward cache is stale: parameters changed since the forward pass");
}

/// Accumulates parameter gradients for a whole batch into `grads`
/// (zero it first for a fresh gradient).
template <typename T>
void backward(const EncoderParams<T>& p, const ForwardCache<T>& cache, const Mat<T>& upstream,
              EncoderParams<T>& grads) {
  check_cache(p, cache);
  if (upstream.rows() != static_cast<Eigen::Index>(cache.sequences.size()) ||
      upstream.cols() != p.config.hidden_dim)
    throw ShapeError("upstream gradient shape does not match the batch");
  for (std::size_t i = 0; i < cache.sequences.size(); ++i)
    backward_sequence(p, cache.sequences[i], RowVec<T>(upstream.row(static_cast<Eigen::Index>(i))), grads);
}

}  // namespace psgrank
