#pragma once

// Experiment configuration and the command implementations behind the CLI.
// Every command writes into an output directory, echoes its effective
// configuration there and records SHA-256 hashes of its outputs in
// manifest.json.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "psgrank/checkpoint.hpp"
#include "psgrank/corpus.hpp"
#include "psgrank/evalkit.hpp"
#include "psgrank/retrieval.hpp"
#include "psgrank/synthetic.hpp"
#include "psgrank/training.hpp"

namespace psgrank::pipeline {

namespace fs = std::filesystem;

struct Preset {
  std::string name;
  std::optional<std::size_t> k;  // nullopt: every passage with a positive BM25 score
  NegativeCap cap;
  bool inject_gold = false;
};

inline Preset preset(const std::string& name) {
  if (name == "nfl6") return {name, 10, 2, true};
  if (name == "webap") return {name, 100, std::nullopt, true};
  if (name == "wikipassageqa") return {name, std::nullopt, 5, false};
  throw ConfigError("unknown preset '" + name + "' (expected nfl6, webap or wikipassageqa)");
}

struct ExperimentConfig {
  fs::path queries, passages, qrels;
  int positivity_threshold = 1;
  std::optional<std::size_t> k = 10;
  Bm25Params bm25;
  EncoderConfig encoder = [] {
    EncoderConfig e;
    e.max_seq_len = 256;
    return e;
  }();
  TrainConfig train;
  std::optional<SegmentationConfig> segmentation;
  int folds = 5;
  bool inject_gold = false;
  std::string metrics = "p1,map,mrr";
  std::string preset;
  std::uint64_t seed = 42;

  /// Encoder and training settings with the experiment seed applied.
  EncoderConfig encoder_config(int vocab_size) const {
    EncoderConfig e = encoder;
    e.vocab_size = vocab_size;
    e.seed = seed;
    return e;
  }
  TrainConfig train_config() const {
    TrainConfig t = train;
    t.seed = seed;
    return t;
  }

  void apply(const Preset& p) {
    preset = p.name;
    k = p.k;
    train.neg_per_pos_cap = p.cap;
    inject_gold = p.inject_gold;
  }
};

// ---- value parsing ----------------------------------------------------------

namespace values {

template <typename T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError("invalid value '" + s + "' for " + key);
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("invalid boolean '" + s + "' for " + key);
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
std::string format_optional(const std::optional<T>& v, const char* none) {
  return v ? std::to_string(*v) : none;
}

template <typename T>
std::optional<T> parse_optional(const std::string& key, const std::string& s, const char* none) {
  if (s == none) return std::nullopt;
  return parse_number<T>(key, s);
}

}  // namespace values

/// "NxL" or "NxL:aggregator" (attention by default); "none" disables segmentation.
inline std::optional<SegmentationConfig> parse_segmentation(const std::string& text, int attention_size = 192) {
  if (text == "none" || text.empty()) return std::nullopt;
  auto x = text.find('x');
  if (x == std::string::npos) throw ConfigError("segmentation '" + text + "' is not of the form NxL[:aggregator]");
  auto colon = text.find(':', x);
  SegmentationConfig seg;
  seg.num_chunks = values::parse_number<int>("segmentation", text.substr(0, x));
  seg.chunk_seq_len = values::parse_number<int>("segmentation", text.substr(x + 1, colon - x - 1));
  if (colon != std::string::npos) seg.aggregator = parse_aggregator(text.substr(colon + 1));
  seg.attention_size = attention_size;
  if (seg.num_chunks < 1 || seg.chunk_seq_len < 8) throw ConfigError("segmentation '" + text + "' out of range");
  return seg;
}

inline std::string format_segmentation(const std::optional<SegmentationConfig>& seg) {
  if (!seg) return "none";
  return std::to_string(seg->num_chunks) + "x" + std::to_string(seg->chunk_seq_len) + ":" + to_string(seg->aggregator);
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(values::parse_number<int>(key, item));
  if (out.empty()) throw ConfigError(key + " is empty");
  return out;
}

// ---- config file ----------------------------------------------------------

struct ConfigField {
  std::string key;  // section.name
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

inline const std::vector<ConfigField>& config_fields() {
  using C = ExperimentConfig;
  using values::format_double;
  using values::parse_number;
  static const std::vector<ConfigField> fields = {
      {"data.queries", [](const C& c) { return c.queries.string(); }, [](C& c, const std::string& v) { c.queries = v; }},
      {"data.passages", [](const C& c) { return c.passages.string(); }, [](C& c, const std::string& v) { c.passages = v; }},
      {"data.qrels", [](const C& c) { return c.qrels.string(); }, [](C& c, const std::string& v) { c.qrels = v; }},
      {"data.positivity_threshold", [](const C& c) { return std::to_string(c.positivity_threshold); },
       [](C& c, const std::string& v) { c.positivity_threshold = parse_number<int>("data.positivity_threshold", v); }},
      {"retrieval.k", [](const C& c) { return values::format_optional(c.k, "all"); },
       [](C& c, const std::string& v) { c.k = values::parse_optional<std::size_t>("retrieval.k", v, "all"); }},
      {"retrieval.k1", [](const C& c) { return format_double(c.bm25.k1); },
       [](C& c, const std::string& v) { c.bm25.k1 = parse_number<double>("retrieval.k1", v); }},
      {"retrieval.b", [](const C& c) { return format_double(c.bm25.b); },
       [](C& c, const std::string& v) { c.bm25.b = parse_number<double>("retrieval.b", v); }},
      {"encoder.layers", [](const C& c) { return std::to_string(c.encoder.num_layers); },
       [](C& c, const std::string& v) { c.encoder.num_layers = parse_number<int>("encoder.layers", v); }},
      {"encoder.hidden", [](const C& c) { return std::to_string(c.encoder.hidden_dim); },
       [](C& c, const std::string& v) { c.encoder.hidden_dim = parse_number<int>("encoder.hidden", v); }},
      {"encoder.heads", [](const C& c) { return std::to_string(c.encoder.num_heads); },
       [](C& c, const std::string& v) { c.encoder.num_heads = parse_number<int>("encoder.heads", v); }},
      {"encoder.ffn", [](const C& c) { return std::to_string(c.encoder.ffn_dim); },
       [](C& c, const std::string& v) { c.encoder.ffn_dim = parse_number<int>("encoder.ffn", v); }},
      {"encoder.max_seq_len", [](const C& c) { return std::to_string(c.encoder.max_seq_len); },
       [](C& c, const std::string& v) { c.encoder.max_seq_len = parse_number<int>("encoder.max_seq_len", v); }},
      {"encoder.max_vocab", [](const C& c) { return std::to_string(c.encoder.vocab_size); },
       [](C& c, const std::string& v) { c.encoder.vocab_size = parse_number<int>("encoder.max_vocab", v); }},
      {"encoder.dropout", [](const C& c) { return format_double(c.encoder.dropout_rate); },
       [](C& c, const std::string& v) { c.encoder.dropout_rate = parse_number<double>("encoder.dropout", v); }},
      {"encoder.activation", [](const C& c) { return to_string(c.encoder.activation); },
       [](C& c, const std::string& v) { c.encoder.activation = parse_activation(v); }},
      {"encoder.init_std", [](const C& c) { return format_double(c.encoder.init_std); },
       [](C& c, const std::string& v) { c.encoder.init_std = parse_number<double>("encoder.init_std", v); }},
      {"encoder.tie_query_key_init", [](const C& c) { return std::string(c.encoder.tie_query_key_init ? "true" : "false"); },
       [](C& c, const std::string& v) { c.encoder.tie_query_key_init = values::parse_bool("encoder.tie_query_key_init", v); }},
      {"train.head", [](const C& c) { return to_string(c.train.head); },
       [](C& c, const std::string& v) { c.train.head = parse_head_kind(v); }},
      {"train.margin", [](const C& c) { return format_double(c.train.margin); },
       [](C& c, const std::string& v) { c.train.margin = parse_number<double>("train.margin", v); }},
      {"train.epochs", [](const C& c) { return std::to_string(c.train.epochs); },
       [](C& c, const std::string& v) { c.train.epochs = parse_number<int>("train.epochs", v); }},
      {"train.learning_rate", [](const C& c) { return format_double(c.train.learning_rate); },
       [](C& c, const std::string& v) { c.train.learning_rate = parse_number<double>("train.learning_rate", v); }},
      {"train.reference_learning_rate", [](const C& c) { return format_double(c.train.reference_learning_rate); },
       [](C& c, const std::string& v) {
         c.train.reference_learning_rate = parse_number<double>("train.reference_learning_rate", v);
       }},
      {"train.batch_size", [](const C& c) { return std::to_string(c.train.batch_size); },
       [](C& c, const std::string& v) { c.train.batch_size = parse_number<int>("train.batch_size", v); }},
      {"train.warmup_fraction", [](const C& c) { return format_double(c.train.warmup_fraction); },
       [](C& c, const std::string& v) { c.train.warmup_fraction = parse_number<double>("train.warmup_fraction", v); }},
      {"train.seq_len", [](const C& c) { return std::to_string(c.train.seq_len); },
       [](C& c, const std::string& v) { c.train.seq_len = parse_number<int>("train.seq_len", v); }},
      {"train.neg_per_pos", [](const C& c) { return values::format_optional(c.train.neg_per_pos_cap, "all"); },
       [](C& c, const std::string& v) {
         c.train.neg_per_pos_cap = values::parse_optional<std::size_t>("train.neg_per_pos", v, "all");
       }},
      {"segmentation.chunks", [](const C& c) { return format_segmentation(c.segmentation); },
       [](C& c, const std::string& v) {
         c.segmentation = parse_segmentation(v, c.segmentation ? c.segmentation->attention_size : 192);
       }},
      {"segmentation.attention_size",
       [](const C& c) { return std::to_string(c.segmentation ? c.segmentation->attention_size : 192); },
       [](C& c, const std::string& v) {
         const int a = parse_number<int>("segmentation.attention_size", v);
         if (c.segmentation) c.segmentation->attention_size = a;
       }},
      {"eval.folds", [](const C& c) { return std::to_string(c.folds); },
       [](C& c, const std::string& v) { c.folds = parse_number<int>("eval.folds", v); }},
      {"eval.inject_gold", [](const C& c) { return std::string(c.inject_gold ? "true" : "false"); },
       [](C& c, const std::string& v) { c.inject_gold = values::parse_bool("eval.inject_gold", v); }},
      {"eval.metrics", [](const C& c) { return c.metrics; }, [](C& c, const std::string& v) { c.metrics = v; }},
      {"experiment.preset", [](const C& c) { return c.preset.empty() ? std::string("none") : c.preset; },
       [](C& c, const std::string& v) {
         if (v != "none") c.apply(preset(v));
       }},
      {"experiment.seed", [](const C& c) { return std::to_string(c.seed); },
       [](C& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("experiment.seed", v); }},
  };
  return fields;
}

inline const ConfigField& config_field(const std::string& key) {
  for (const auto& f : config_fields())
    if (f.key == key) return f;
  throw ConfigError("unknown configuration key '" + key + "'");
}

/// Applies `section.name = value` pairs, preset and segmentation shape first.
inline void apply_settings(ExperimentConfig& cfg, const std::map<std::string, std::string>& kv) {
  static const std::vector<std::string> first{"experiment.preset", "segmentation.chunks"};
  for (const auto& [key, value] : kv) config_field(key);
  for (const auto& key : first)
    if (auto it = kv.find(key); it != kv.end()) config_field(key).set(cfg, it->second);
  for (const auto& [key, value] : kv)
    if (std::find(first.begin(), first.end(), key) == first.end()) config_field(key).set(cfg, value);
}

inline std::map<std::string, std::string> read_ini(const fs::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw IoError("cannot read config '" + path.string() + "': " + e.message());
  }
  std::map<std::string, std::string> kv;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config key '" + section + "' must sit inside a [section]");
    for (const auto& [name, value] : body) kv[section + "." + name] = value.data();
  }
  return kv;
}

inline std::string to_ini(const ExperimentConfig& cfg) {
  boost::property_tree::ptree tree;
  for (const auto& f : config_fields()) tree.put(boost::property_tree::ptree::path_type(f.key, '.'), f.get(cfg));
  std::ostringstream out;
  boost::property_tree::ini_parser::write_ini(out, tree);
  return out.str();
}

// ---- outputs --------------------------------------------------------------

inline std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw IoError("SHA-256 unavailable");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

/// Output directory of one command. declare() refuses existing files unless
/// forced; finish() echoes the config and updates manifest.json.
class OutputDir {
 public:
  OutputDir(fs::path root, bool force, std::string command)
      : root_(std::move(root)), force_(force), command_(std::move(command)) {
    if (root_.empty()) throw UsageError("an output directory is required (--out)");
    fs::create_directories(root_);
  }

  fs::path declare(const std::string& name) {
    fs::path p = root_ / name;
    if (fs::exists(p) && !force_)
      throw UsageError("refusing to overwrite '" + p.string() + "' (pass --force)");
    declared_.push_back(name);
    return p;
  }

  const fs::path& root() const { return root_; }

  void finish(const ExperimentConfig& cfg) {
    const std::string echo = "config-" + command_ + ".ini";
    {
      std::ofstream out(root_ / echo, std::ios::binary | std::ios::trunc);
      out << to_ini(cfg);
      if (!out) throw IoError("cannot write '" + (root_ / echo).string() + "'");
    }
    nlohmann::json manifest = nlohmann::json::object();
    const fs::path mpath = root_ / "manifest.json";
    if (fs::exists(mpath)) {
      try {
        manifest = nlohmann::json::parse(std::ifstream(mpath));
      } catch (const nlohmann::json::exception&) {
        throw IoError("corrupt manifest '" + mpath.string() + "'");
      }
    }
    auto names = declared_;
    names.push_back(echo);
    for (const auto& n : names) {
      const fs::path p = root_ / n;
      if (!fs::is_regular_file(p)) throw IoError("declared output '" + p.string() + "' was not written");
      manifest["files"][n] = {{"sha256", sha256_file(p)}, {"bytes", fs::file_size(p)}, {"command", command_}};
    }
    std::ofstream out(mpath, std::ios::binary | std::ios::trunc);
    out << manifest.dump(2) << '\n';
    if (!out) throw IoError("cannot write '" + mpath.string() + "'");
  }

 private:
  fs::path root_;
  bool force_;
  std::string command_;
  std::vector<std::string> declared_;
};

// ---- shared steps -----------------------------------------------------------

inline void require_path(const fs::path& p, const std::string& what) {
  if (p.empty()) throw UsageError(what + " path is required");
  if (!fs::exists(p)) throw IoError(what + " file '" + p.string() + "' does not exist");
}

/// Queries and passages, plus judgments when a qrels path is configured.
inline Dataset load_data(const ExperimentConfig& cfg, bool need_qrels) {
  require_path(cfg.queries, "queries");
  require_path(cfg.passages, "passages");
  if (need_qrels || !cfg.qrels.empty()) {
    require_path(cfg.qrels, "qrels");
    return load_dataset(cfg.queries, cfg.passages, cfg.qrels, cfg.positivity_threshold);
  }
  std::vector<Query> qs;
  for (auto& [id, text] : read_records(cfg.queries)) qs.push_back({id, text});
  std::vector<Passage> ps;
  for (auto& [id, text] : read_records(cfg.passages)) ps.push_back(Passage::make(id, text));
  return Dataset(std::move(qs), std::move(ps), {}, cfg.positivity_threshold);
}

inline std::map<std::string, Candidates> read_candidates(const fs::path& path, const Dataset& d) {
  require_path(path, "candidates");
  std::map<std::string, Candidates> pools;
  std::vector<std::string> unknown;
  for (const auto& l : read_run(path)) {
    if (!d.find_query(l.query_id)) unknown.push_back(l.query_id);
    Candidates c{l.query_id, {}};
    for (const auto& e : l.entries) {
      if (!d.find_passage(e.passage_id))
        throw IntegrityError("candidates reference unknown passage '" + e.passage_id + "'");
      c.ranked.push_back({e.passage_id, e.score});
    }
    pools.emplace(l.query_id, std::move(c));
  }
  if (!unknown.empty()) {
    std::string msg = "candidates reference unknown queries:";
    for (const auto& q : unknown) msg += " " + q;
    throw IntegrityError(msg);
  }
  return pools;
}

inline std::size_t effective_k(const ExperimentConfig& cfg, std::size_t available) {
  if (cfg.k && *cfg.k < 1) throw ConfigError("k must be at least 1");
  return cfg.k ? *cfg.k : std::max<std::size_t>(available, 1);
}

/// First-stage list for evaluation: truncated to k, gold-injected when enabled.
inline RankedList first_stage(const ExperimentConfig& cfg, const Dataset& d, const Candidates& c) {
  RankedList l = to_ranked_list(c);
  const std::size_t k = effective_k(cfg, l.entries.size());
  if (cfg.inject_gold) {
    auto gold = d.relevant_passages(c.query_id);
    l = inject_gold(l, std::set<std::string>(gold.begin(), gold.end()), k);
  } else if (l.entries.size() > k) {
    l.entries.resize(k);
  }
  return l;
}

inline Vocabulary corpus_vocab(const ExperimentConfig& cfg, const Dataset& d) {
  std::vector<std::string> texts;
  for (const auto& q : d.queries()) texts.push_back(q.text);
  for (const auto& p : d.passages()) texts.push_back(p.text);
  return build_vocab(texts, static_cast<std::size_t>(cfg.encoder.vocab_size));
}

struct TrainedModel {
  Ranker<float> model;
  TrainState<float> state;
};

inline TrainedModel train_model(const ExperimentConfig& cfg, const Dataset& d,
                                const std::map<std::string, Candidates>& pools,
                                std::span<const std::string> query_ids, const Vocabulary& vocab,
                                const EpochCallback& on_epoch = {}, std::optional<Checkpoint> resume = {}) {
  const TrainConfig tc = cfg.train_config();
  TrainedModel out;
  if (resume) {
    out.model = std::move(resume->model);
    out.state = std::move(resume->state);
  } else {
    const auto ec = cfg.encoder_config(static_cast<int>(vocab.size()));
    ec.validate();
    tc.validate(ec.max_seq_len);
    out.model = make_ranker<float>(ec, tc.head, cfg.segmentation);
  }
  auto ex = build_training_examples(d, pools, query_ids, tc.head, tc.neg_per_pos_cap, tc.seed);
  PairInputs inputs(vocab, d, tc.seq_len, out.model.segmentation);
  train(out.model, out.state, ex, inputs, tc, on_epoch);
  return out;
}

inline std::vector<RankedList> rerank_queries(const ExperimentConfig& cfg, const Ranker<float>& model,
                                              const PairInputs& inputs, const Dataset& d,
                                              const std::map<std::string, Candidates>& pools,
                                              std::span<const std::string> query_ids) {
  std::vector<RankedList> lists;
  for (const auto& q : query_ids) {
    auto it = pools.find(q);
    const Candidates empty{q, {}};
    auto first = first_stage(cfg, d, it == pools.end() ? empty : it->second);
    auto ranked = rank(model, inputs, q, first.entries);
    resolve_relevance(ranked, d);
    lists.push_back(std::move(ranked));
  }
  return lists;
}

// ---- commands ---------------------------------------------------------------

inline void cmd_index(const ExperimentConfig& cfg, OutputDir& out) {
  require_path(cfg.passages, "passages");
  const auto path = out.declare("index.bin");
  std::vector<Passage> ps;
  for (auto& [id, text] : read_records(cfg.passages)) ps.push_back(Passage::make(id, text));
  build_index(ps, cfg.bm25).save(path);
  out.finish(cfg);
}

inline void cmd_retrieve(const ExperimentConfig& cfg, const fs::path& index_path, OutputDir& out,
                         std::ostream& log) {
  require_path(cfg.queries, "queries");
  require_path(index_path, "index");
  const auto path = out.declare("candidates.run");
  const auto idx = InvertedIndex::load(index_path);
  std::vector<RankedList> lists;
  for (auto& [id, text] : read_records(cfg.queries)) {
    auto c = top_k(idx, {id, text}, effective_k(cfg, idx.num_docs()));
    if (c.ranked.empty()) log << "warning: query '" << id << "' matched no passage\n";
    lists.push_back(to_ranked_list(c));
  }
  write_run(path, lists, "bm25");
  out.finish(cfg);
}

inline void cmd_build_examples(const ExperimentConfig& cfg, const fs::path& candidates, OutputDir& out,
                               std::ostream& log) {
  const auto d = load_data(cfg, true);
  const auto pools = read_candidates(candidates, d);
  const auto path = out.declare("examples.tsv");
  std::vector<std::string> qids;
  for (const auto& q : d.queries()) qids.push_back(q.id);
  const auto tc = cfg.train_config();
  auto ex = build_training_examples(d, pools, qids, tc.head, tc.neg_per_pos_cap, tc.seed);
  auto f = detail::open_output(path);
  if (ex.kind == HeadKind::kPointwise) {
    f << "query_id\tpassage_id\tlabel\n";
    for (const auto& e : ex.pointwise) f << e.query_id << '\t' << e.passage_id << '\t' << e.label << '\n';
  } else {
    f << "query_id\tpositive_id\tnegative_id\n";
    for (const auto& t : ex.triplets) f << t.query_id << '\t' << t.positive_id << '\t' << t.negative_id << '\n';
  }
  f.close();
  log << ex.size() << " " << (ex.kind == HeadKind::kPointwise ? "labelled pairs" : "triplets") << "\n";
  out.finish(cfg);
}

inline void cmd_train(const ExperimentConfig& cfg, const fs::path& candidates, const fs::path& resume,
                      OutputDir& out, std::ostream& log) {
  const auto d = load_data(cfg, true);
  const auto pools = read_candidates(candidates, d);
  const auto ckpt_path = out.declare("model.ckpt");
  const auto loss_path = out.declare("loss.tsv");
  std::optional<Checkpoint> ck;
  Vocabulary vocab;
  if (!resume.empty()) {
    require_path(resume, "checkpoint");
    ck = load_checkpoint(resume);
    if (ck->seq_len != cfg.train.seq_len)
      throw ConfigError("checkpoint was trained with seq_len " + std::to_string(ck->seq_len));
    vocab = ck->vocab;
  } else {
    vocab = corpus_vocab(cfg, d);
  }
  std::vector<std::string> qids;
  for (const auto& q : d.queries()) qids.push_back(q.id);
  auto trained = train_model(cfg, d, pools, qids, vocab,
                             [&](int e, double loss) { log << "epoch " << e + 1 << " loss " << loss << "\n"; },
                             std::move(ck));
  save_checkpoint(ckpt_path, Checkpoint{trained.model, trained.state, vocab, cfg.train.seq_len});
  auto f = detail::open_output(loss_path);
  f << "epoch\tloss\n";
  for (std::size_t i = 0; i < trained.state.loss_trace.size(); ++i)
    f << i + 1 << '\t' << format_score(trained.state.loss_trace[i]) << '\n';
  f.close();
  out.finish(cfg);
}

inline void cmd_rerank(const ExperimentConfig& cfg, const fs::path& checkpoint, const fs::path& candidates,
                       OutputDir& out) {
  require_path(checkpoint, "checkpoint");
  auto ck = load_checkpoint(checkpoint);
  const auto d = load_data(cfg, cfg.inject_gold);
  const auto pools = read_candidates(candidates, d);
  const auto path = out.declare("rerank.run");
  if (cfg.segmentation && cfg.segmentation != ck.model.segmentation) {
    const auto& seg = *cfg.segmentation;
    if (seg.chunk_seq_len > ck.model.encoder.config.max_seq_len)
      throw ConfigError("chunk_seq_len exceeds the checkpoint's max_seq_len");
    if (seg.aggregator == Aggregator::kAttention &&
        (!ck.model.uses_attention() || ck.model.attention.attention_size() != seg.attention_size))
      throw ConfigError("checkpoint has no matching attention-pool parameters; use an NxL:max segmentation");
    ck.model.segmentation = seg;
  }
  PairInputs inputs(ck.vocab, d, ck.seq_len, ck.model.segmentation);
  std::vector<std::string> qids;
  for (const auto& q : d.queries()) qids.push_back(q.id);
  auto lists = rerank_queries(cfg, ck.model, inputs, d, pools, qids);
  write_run(path, lists, "psgrank-" + to_string(ck.model.head.kind));
  out.finish(cfg);
}

/// Metric table for a run file against the configured qrels.
inline std::string cmd_eval(const ExperimentConfig& cfg, const fs::path& run, OutputDir& out) {
  require_path(run, "run");
  require_path(cfg.qrels, "qrels");
  const auto metrics = parse_metrics(cfg.metrics);
  const auto table_path = out.declare("metrics.tsv");
  const auto json_path = out.declare("metrics.json");
  auto lists = read_run(run);
  const auto judgments = read_qrels(cfg.qrels);
  std::set<std::string> known;
  if (!cfg.queries.empty()) {
    require_path(cfg.queries, "queries");
    for (auto& [id, text] : read_records(cfg.queries)) known.insert(id);
  } else {
    for (const auto& j : judgments) known.insert(j.query_id);
  }
  std::string unknown;
  for (const auto& l : lists)
    if (!known.contains(l.query_id)) unknown += " " + l.query_id;
  if (!unknown.empty()) throw IntegrityError("run references unknown queries:" + unknown);
  std::map<std::string, std::set<std::string>> relevant;
  for (const auto& j : judgments)
    if (j.grade >= cfg.positivity_threshold) relevant[j.query_id].insert(j.passage_id);
  for (auto& l : lists) {
    const auto& rel = relevant[l.query_id];
    for (auto& e : l.entries) e.relevant = rel.contains(e.passage_id);
    l.total_relevant = rel.size();
  }
  auto report = evaluate_run(lists);
  std::vector<std::pair<std::string, MetricReport>> rows{{run.stem().string(), report}};
  const auto table = metric_table(rows, metrics);
  detail::open_output(table_path) << table;
  detail::open_output(json_path) << to_json(report).dump(2) << '\n';
  out.finish(cfg);
  return table;
}

/// One cross-validated train + evaluate per SeqLen, sharing folds and seeds.
inline std::string sweep_table(const ExperimentConfig& cfg, const Dataset& d,
                               const std::map<std::string, Candidates>& pools, std::span<const int> seq_lens,
                               nlohmann::json* details = nullptr, std::ostream* log = nullptr) {
  for (int n : seq_lens) {
    TrainConfig t = cfg.train_config();
    t.seq_len = n;
    t.validate(cfg.encoder.max_seq_len);
  }
  const auto metrics = parse_metrics(cfg.metrics);
  const auto folds = split_folds(d, cfg.folds, cfg.seed);
  const auto vocab = corpus_vocab(cfg, d);
  std::vector<std::pair<std::string, MetricReport>> rows;
  for (int n : seq_lens) {
    ExperimentConfig c = cfg;
    c.train.seq_len = n;
    PairInputs inputs(vocab, d, n, c.segmentation);
    auto rep = cross_validate(
        d, folds,
        [&](int f, const std::vector<std::string>& train_q) {
          if (log) *log << "seq_len " << n << " fold " << f + 1 << "/" << folds.num_folds << "\n";
          return train_model(c, d, pools, train_q, vocab).model;
        },
        [&](int, const Ranker<float>& model, const std::vector<std::string>& test_q) {
          return rerank_queries(c, model, inputs, d, pools, test_q);
        });
    if (details) (*details)[std::to_string(n)] = to_json(rep.pooled);
    rows.emplace_back(std::to_string(n), std::move(rep.pooled));
  }
  return metric_table(rows, metrics, "seq_len");
}

inline std::string cmd_sweep(const ExperimentConfig& cfg, const fs::path& candidates, std::span<const int> seq_lens,
                             OutputDir& out, std::ostream& log) {
  const auto d = load_data(cfg, true);
  const auto pools = read_candidates(candidates, d);
  const auto table_path = out.declare("sweep.tsv");
  const auto json_path = out.declare("sweep.json");
  nlohmann::json details = nlohmann::json::object();
  auto table = sweep_table(cfg, d, pools, seq_lens, &details, &log);
  detail::open_output(table_path) << table;
  detail::open_output(json_path) << details.dump(2) << '\n';
  out.finish(cfg);
  return table;
}

inline void cmd_make_toy(const ExperimentConfig& cfg, const SyntheticConfig& sc, OutputDir& out) {
  const auto q = out.declare("queries.jsonl");
  const auto p = out.declare("passages.jsonl");
  const auto r = out.declare("qrels.tsv");
  auto corpus = make_synthetic_corpus(sc);
  save_dataset(corpus.dataset, q, p, r);
  out.finish(cfg);
}

}  // namespace psgrank::pipeline
