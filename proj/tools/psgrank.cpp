// psgrank command-line front end.

#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "psgrank/pipeline.hpp"

namespace pl = psgrank::pipeline;

namespace {

struct Common {
  std::string config, out, preset;
  std::optional<std::uint64_t> seed;
  bool force = false;
  std::map<std::string, std::string> overrides;
};

// Binds a flag to a configuration key; a given flag overrides the file.
void bind(CLI::App* cmd, Common& c, const std::string& flag, const std::string& key, const std::string& help) {
  cmd->add_option_function<std::string>(flag, [&c, key](const std::string& v) { c.overrides[key] = v; }, help);
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "INI configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "experiment seed");
  cmd->add_option("--out", c.out, "output directory")->required();
  cmd->add_option("--preset", c.preset, "dataset preset")->check(CLI::IsMember({"nfl6", "webap", "wikipassageqa"}));
  cmd->add_flag("--force", c.force, "overwrite existing outputs");
  bind(cmd, c, "--queries", "data.queries", "queries file (JSON lines)");
  bind(cmd, c, "--passages", "data.passages", "passages file (JSON lines)");
  bind(cmd, c, "--qrels", "data.qrels", "judgments file (query<TAB>passage<TAB>grade)");
}

void add_training(CLI::App* cmd, Common& c) {
  bind(cmd, c, "--head", "train.head", "pointwise | bertlets | pairwise_ce");
  bind(cmd, c, "--epochs", "train.epochs", "training epochs");
  bind(cmd, c, "--lr", "train.learning_rate", "peak learning rate");
  bind(cmd, c, "--batch-size", "train.batch_size", "mini-batch size");
  bind(cmd, c, "--seq-len", "train.seq_len", "tokens per encoded pair");
  bind(cmd, c, "--margin", "train.margin", "hinge margin");
  bind(cmd, c, "--neg-per-pos", "train.neg_per_pos", "negatives per positive, or all");
  bind(cmd, c, "--seg", "segmentation.chunks", "chunking NxL[:attention|max], or none");
}

pl::ExperimentConfig resolve(const Common& c) {
  std::map<std::string, std::string> kv;
  if (!c.config.empty()) kv = pl::read_ini(c.config);
  for (const auto& [k, v] : c.overrides) kv[k] = v;
  if (!c.preset.empty()) kv["experiment.preset"] = c.preset;
  if (c.seed) kv["experiment.seed"] = std::to_string(*c.seed);
  pl::ExperimentConfig cfg;
  pl::apply_settings(cfg, kv);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Passage re-ranking: BM25 retrieval, encoder fine-tuning and evaluation"};
  app.require_subcommand(1);
  Common c;
  std::string index_path, candidates, checkpoint, resume, run, seq_lens = "64,128,256";
  bool print_config = false;
  psgrank::SyntheticConfig toy;
  app.add_flag("--print-config", print_config, "echo the effective configuration to stdout");

  auto* index = app.add_subcommand("index", "build the BM25 index over the passages");
  add_common(index, c);
  bind(index, c, "--k1", "retrieval.k1", "BM25 k1");
  bind(index, c, "--b", "retrieval.b", "BM25 b");

  auto* retrieve = app.add_subcommand("retrieve", "top-k BM25 candidates per query");
  add_common(retrieve, c);
  retrieve->add_option("--index", index_path, "index file")->required();
  bind(retrieve, c, "--k", "retrieval.k", "candidates per query, or all");

  auto* build = app.add_subcommand("build-examples", "write the training triplets or labelled pairs");
  add_common(build, c);
  add_training(build, c);
  build->add_option("--candidates", candidates, "candidate run file")->required();

  auto* train = app.add_subcommand("train", "fine-tune encoder and head");
  add_common(train, c);
  add_training(train, c);
  train->add_option("--candidates", candidates, "candidate run file")->required();
  train->add_option("--resume", resume, "continue from this checkpoint");

  auto* rerank = app.add_subcommand("rerank", "re-score candidates with a checkpoint");
  add_common(rerank, c);
  rerank->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  rerank->add_option("--candidates", candidates, "candidate run file")->required();
  bind(rerank, c, "--k", "retrieval.k", "candidates kept per query, or all");
  bind(rerank, c, "--seg", "segmentation.chunks", "chunking NxL[:attention|max], or none");
  rerank->add_flag_callback("--inject-gold", [&] { c.overrides["eval.inject_gold"] = "true"; },
                            "place a relevant passage at rank k when the first stage missed it");

  auto* eval = app.add_subcommand("eval", "P@1 / MAP / MRR of a run file");
  add_common(eval, c);
  eval->add_option("--run", run, "run file")->required();
  bind(eval, c, "--metric", "eval.metrics", "comma-separated subset of p1,map,mrr");

  auto* sweep = app.add_subcommand("sweep", "cross-validated train + eval per SeqLen");
  add_common(sweep, c);
  add_training(sweep, c);
  sweep->add_option("--candidates", candidates, "candidate run file")->required();
  sweep->add_option("--seq-lens", seq_lens, "comma-separated SeqLen values");
  bind(sweep, c, "--folds", "eval.folds", "cross-validation folds");
  bind(sweep, c, "--k", "retrieval.k", "candidates kept per query, or all");
  sweep->add_flag_callback("--inject-gold", [&] { c.overrides["eval.inject_gold"] = "true"; },
                           "place a relevant passage at rank k when the first stage missed it");

  auto* make_toy = app.add_subcommand("make-toy", "generate a token-overlap toy corpus");
  add_common(make_toy, c);
  make_toy->add_option("--num-queries", toy.num_queries, "queries")->capture_default_str();
  make_toy->add_option("--candidates-per-query", toy.candidates_per_query, "passages per query")->capture_default_str();
  make_toy->add_option("--vocab-words", toy.vocab_words, "distinct words")->capture_default_str();
  make_toy->add_option("--passage-len", toy.passage_len, "words per passage")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = resolve(c);
    if (print_config) std::cout << pl::to_ini(cfg);
    auto* cmd = app.get_subcommands().front();
    pl::OutputDir out(c.out, c.force, cmd->get_name());
    if (cmd == index) {
      pl::cmd_index(cfg, out);
    } else if (cmd == retrieve) {
      pl::cmd_retrieve(cfg, index_path, out, std::cerr);
    } else if (cmd == build) {
      pl::cmd_build_examples(cfg, candidates, out, std::cerr);
    } else if (cmd == train) {
      pl::cmd_train(cfg, candidates, resume, out, std::cerr);
    } else if (cmd == rerank) {
      pl::cmd_rerank(cfg, checkpoint, candidates, out);
    } else if (cmd == eval) {
      std::cout << pl::cmd_eval(cfg, run, out);
    } else if (cmd == sweep) {
      auto lens = pl::parse_int_list("--seq-lens", seq_lens);
      std::cout << pl::cmd_sweep(cfg, candidates, lens, out, std::cerr);
    } else if (cmd == make_toy) {
      toy.seed = cfg.seed;
      pl::cmd_make_toy(cfg, toy, out);
    }
  } catch (const psgrank::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
