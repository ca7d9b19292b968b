#pragma once

// Self-contained model checkpoint.
//
//   bytes 0..7   magic "PSGRCKPT"
//   u32          format version (1)
//   u32 + bytes  JSON header: encoder config, head kind, segmentation
//                settings, training progress, vocabulary
//   u32          tensor count
//   per tensor:  u32 name length, name bytes, u32 rows, u32 cols,
//                rows*cols float32 values (row-major)
//
// All integers and floats are little-endian. Optimizer moments are stored as
// tensors named adam.m.<param> / adam.v.<param>.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "psgrank/binio.hpp"
#include "psgrank/errors.hpp"
#include "psgrank/ranker.hpp"
#include "psgrank/tokenizer.hpp"
#include "psgrank/training.hpp"

namespace psgrank {

struct Checkpoint {
  Ranker<float> model;
  TrainState<float> state;
  Vocabulary vocab;
  int seq_len = 0;
};

inline nlohmann::json to_json(const EncoderConfig& c) {
  return {{"num_layers", c.num_layers}, {"hidden_dim", c.hidden_dim}, {"num_heads", c.num_heads},
          {"ffn_dim", c.ffn_dim},       {"vocab_size", c.vocab_size}, {"max_seq_len", c.max_seq_len},
          {"dropout_rate", c.dropout_rate}, {"activation", to_string(c.activation)}, {"init_std", c.init_std},
          {"tie_query_key_init", c.tie_query_key_init}, {"seed", c.seed}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.num_layers = j.at("num_layers");
  c.hidden_dim = j.at("hidden_dim");
  c.num_heads = j.at("num_heads");
  c.ffn_dim = j.at("ffn_dim");
  c.vocab_size = j.at("vocab_size");
  c.max_seq_len = j.at("max_seq_len");
  c.dropout_rate = j.at("dropout_rate");
  c.activation = parse_activation(j.at("activation"));
  c.init_std = j.at("init_std");
  c.tie_query_key_init = j.at("tie_query_key_init");
  c.seed = j.at("seed");
  c.validate();
  return c;
}

namespace detail {
inline constexpr std::array<char, 8> kCheckpointMagic{'P', 'S', 'G', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_tensor(std::ostream& out, const std::string& name, const Mat<float>& m) {
  binio::put_string(out, name);
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) binio::put<float>(out, m.data()[i]);
}
}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::json h;
  h["encoder"] = to_json(ck.model.encoder.config);
  h["head_kind"] = to_string(ck.model.head.kind);
  h["seq_len"] = ck.seq_len;
  if (ck.model.segmentation) {
    const auto& s = *ck.model.segmentation;
    h["segmentation"] = {{"num_chunks", s.num_chunks}, {"chunk_seq_len", s.chunk_seq_len},
                         {"aggregator", to_string(s.aggregator)}, {"attention_size", s.attention_size}};
  } else {
    h["segmentation"] = nullptr;
  }
  h["train"] = {{"epochs_completed", ck.state.epochs_completed},
                {"step", ck.state.step},
                {"adam_step", ck.state.adam.step},
                {"loss_trace", ck.state.loss_trace}};
  h["vocab"] = ck.vocab.tokens();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(detail::kCheckpointMagic.data(), detail::kCheckpointMagic.size());
  binio::put<std::uint32_t>(out, detail::kCheckpointVersion);
  binio::put_string(out, h.dump());

  auto tensors = ck.model.tensors();
  const bool with_adam = ck.state.adam.initialized();
  if (with_adam && ck.state.adam.m.size() != tensors.size())
    throw StateError("optimizer state does not match model tensors");
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size() * (with_adam ? 3 : 1)));
  for (const auto& t : tensors) detail::put_tensor(out, t.name, *t.tensor);
  if (with_adam) {
    for (std::size_t i = 0; i < tensors.size(); ++i) detail::put_tensor(out, "adam.m." + tensors[i].name, ck.state.adam.m[i]);
    for (std::size_t i = 0; i < tensors.size(); ++i) detail::put_tensor(out, "adam.v." + tensors[i].name, ck.state.adam.v[i]);
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != detail::kCheckpointMagic) throw IoError("'" + path.string() + "' is not a checkpoint");
  if (auto v = binio::get<std::uint32_t>(in); v != detail::kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(v));
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(binio::get_string(in));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header: " + std::string(e.what()));
  }

  Checkpoint ck;
  std::optional<SegmentationConfig> seg;
  if (!h.at("segmentation").is_null()) {
    const auto& s = h["segmentation"];
    seg = SegmentationConfig{s.at("num_chunks"), s.at("chunk_seq_len"), parse_aggregator(s.at("aggregator")),
                             s.at("attention_size")};
  }
  ck.model = make_ranker<float>(encoder_config_from_json(h.at("encoder")), parse_head_kind(h.at("head_kind")), seg);
  ck.seq_len = h.at("seq_len");
  const auto& tr = h.at("train");
  ck.state.epochs_completed = tr.at("epochs_completed");
  ck.state.step = tr.at("step");
  ck.state.loss_trace = tr.at("loss_trace").get<std::vector<double>>();
  const std::uint64_t adam_step = tr.at("adam_step");
  ck.vocab = Vocabulary::from_tokens(h.at("vocab").get<std::vector<std::string>>());

  std::map<std::string, Mat<float>> stored;
  const auto count = binio::get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = binio::get_string(in);
    auto rows = binio::get<std::uint32_t>(in);
    auto cols = binio::get<std::uint32_t>(in);
    Mat<float> m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = binio::get<float>(in);
    stored.emplace(std::move(name), std::move(m));
  }
  auto take = [&](const std::string& name, Mat<float>& dst) {
    auto it = stored.find(name);
    if (it == stored.end()) throw IoError("checkpoint is missing tensor '" + name + "'");
    if (it->second.rows() != dst.rows() || it->second.cols() != dst.cols())
      throw IoError("tensor '" + name + "' has the wrong shape");
    dst = std::move(it->second);
  };
  auto tensors = ck.model.tensors();
  for (auto& t : tensors) take(t.name, *t.tensor);
  if (stored.contains("adam.m." + tensors.front().name)) {
    for (auto& t : tensors) {
      ck.state.adam.m.emplace_back(t.tensor->rows(), t.tensor->cols());
      ck.state.adam.v.emplace_back(t.tensor->rows(), t.tensor->cols());
      take("adam.m." + t.name, ck.state.adam.m.back());
      take("adam.v." + t.name, ck.state.adam.v.back());
    }
    ck.state.adam.step = adam_step;
  }
  return ck;
}

}  // namespace psgrank
