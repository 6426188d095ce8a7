#pragma once

#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hir/config.hpp"
#include "hir/io.hpp"
#include "hir/model.hpp"
#include "hir/vocab.hpp"

namespace hir {

// Versioned binary checkpoint: magic, a JSON header (model config, vocab,
// step count, precision), then the raw little-endian parameter block.
// Round-trips bit-exactly.
inline constexpr char kCheckpointMagic[8] = {'H', 'I', 'R', 'C', 'K', 'P', 'T', '1'};

struct CheckpointData {
  Precision precision = Precision::F64;
  ModelConfig config;
  long long step_count = 0;
  std::vector<std::string> vocab_tokens;
  bool char_fallback = false;
  std::string raw;  // parameter bytes

  Vocab rebuild_vocab() const { return Vocab::from_tokens(vocab_tokens, char_fallback); }

  template <class Scalar>
  ModelState<Scalar> materialize() const {
    const bool want_f64 = sizeof(Scalar) == 8;
    if ((precision == Precision::F64) != want_f64) {
      throw std::runtime_error("checkpoint precision does not match the requested scalar type");
    }
    ModelState<Scalar> m;
    m.config = config;
    m.layout = ModelState<Scalar>::make_layout(config);
    m.step_count = step_count;
    const Eigen::Index n = ModelState<Scalar>::param_count(config);
    if (raw.size() != static_cast<std::size_t>(n) * sizeof(Scalar)) {
      throw std::runtime_error("checkpoint parameter block has the wrong size");
    }
    m.params.resize(n);
    std::memcpy(m.params.data(), raw.data(), raw.size());
    return m;
  }
};

template <class Scalar>
void save_checkpoint(const std::string& path, const ModelState<Scalar>& model,
                     const Vocab& vocab) {
  nlohmann::json header;
  header["version"] = 1;
  header["precision"] = sizeof(Scalar) == 8 ? "f64" : "f32";
  header["step_count"] = model.step_count;
  header["model"] = {{"num_layers", model.config.num_layers},
                     {"model_dim", model.config.model_dim},
                     {"num_heads", model.config.num_heads},
                     {"max_seq_len", model.config.max_seq_len},
                     {"vocab_size", model.config.vocab_size}};
  std::vector<std::string> tokens;
  tokens.reserve(static_cast<std::size_t>(vocab.size()));
  for (int i = 0; i < vocab.size(); ++i) tokens.push_back(vocab.token(i));
  header["vocab"] = {{"tokens", tokens}, {"char_fallback", vocab.has_char_fallback()}};
  const std::string head = header.dump();

  std::string blob(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint64_t len = head.size();
  blob.append(reinterpret_cast<const char*>(&len), sizeof(len));
  blob += head;
  blob.append(reinterpret_cast<const char*>(model.params.data()),
              static_cast<std::size_t>(model.params.size()) * sizeof(Scalar));
  atomic_write_file(path, blob);
}

inline CheckpointData load_checkpoint(const std::string& path) {
  const std::string blob = read_file(path);
  if (blob.size() < sizeof(kCheckpointMagic) + sizeof(std::uint64_t) ||
      std::memcmp(blob.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw std::runtime_error(path + ": not a checkpoint file");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, blob.data() + sizeof(kCheckpointMagic), sizeof(len));
  const std::size_t head_begin = sizeof(kCheckpointMagic) + sizeof(std::uint64_t);
  if (blob.size() < head_begin + len) throw std::runtime_error(path + ": truncated checkpoint");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(head_begin, len));
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path + ": corrupt checkpoint header: " + e.what());
  }
  if (header.at("version").get<int>() != 1) {
    throw std::runtime_error(path + ": unsupported checkpoint version");
  }
  CheckpointData data;
  data.precision =
      header.at("precision").get<std::string>() == "f64" ? Precision::F64 : Precision::F32;
  data.step_count = header.at("step_count").get<long long>();
  const auto& mc = header.at("model");
  data.config.num_layers = mc.at("num_layers").get<int>();
  data.config.model_dim = mc.at("model_dim").get<int>();
  data.config.num_heads = mc.at("num_heads").get<int>();
  data.config.max_seq_len = mc.at("max_seq_len").get<int>();
  data.config.vocab_size = mc.at("vocab_size").get<int>();
  data.vocab_tokens = header.at("vocab").at("tokens").get<std::vector<std::string>>();
  data.char_fallback = header.at("vocab").at("char_fallback").get<bool>();
  data.raw = blob.substr(head_begin + len);
  const std::size_t scalar_size = data.precision == Precision::F64 ? 8 : 4;
  const auto expected =
      static_cast<std::size_t>(ModelState<double>::param_count(data.config)) * scalar_size;
  if (data.raw.size() != expected) {
    throw std::runtime_error(path + ": parameter block has " + std::to_string(data.raw.size()) +
                             " bytes, expected " + std::to_string(expected));
  }
  return data;
}

}  // namespace hir
