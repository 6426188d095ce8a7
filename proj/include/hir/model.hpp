#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hir/config.hpp"
#include "hir/rng.hpp"
#include "hir/tape.hpp"
#include "hir/vocab.hpp"

namespace hir {

// Decoder-only pre-norm transformer with learned positional embeddings and a
// separate (untied) output projection. Instruction, query and output are
// concatenated with separator tokens; the model is trained to continue the
// output region.
template <class Scalar>
struct ModelState {
  enum class TensorKind { Weight, Bias, Gain };

  struct TensorSpec {
    std::string name;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    Eigen::Index offset = 0;
    TensorKind kind = TensorKind::Weight;
  };

  ModelConfig config;
  std::vector<TensorSpec> layout;
  VectorX<Scalar> params;
  long long step_count = 0;

  static std::vector<TensorSpec> make_layout(const ModelConfig& config) {
    std::vector<TensorSpec> specs;
    Eigen::Index offset = 0;
    const auto push = [&](const std::string& name, Eigen::Index r, Eigen::Index c,
                          TensorKind kind) {
      specs.push_back({name, r, c, offset, kind});
      offset += r * c;
    };
    const Eigen::Index C = config.model_dim;
    const Eigen::Index V = config.vocab_size;
    push("wte", V, C, TensorKind::Weight);
    push("wpe", config.max_seq_len, C, TensorKind::Weight);
    for (int l = 0; l < config.num_layers; ++l) {
      const std::string p = "l" + std::to_string(l) + ".";
      push(p + "ln1_g", 1, C, TensorKind::Gain);
      push(p + "ln1_b", 1, C, TensorKind::Bias);
      push(p + "w_q", C, C, TensorKind::Weight);
      push(p + "b_q", 1, C, TensorKind::Bias);
      push(p + "w_k", C, C, TensorKind::Weight);
      push(p + "b_k", 1, C, TensorKind::Bias);
      push(p + "w_v", C, C, TensorKind::Weight);
      push(p + "b_v", 1, C, TensorKind::Bias);
      push(p + "w_o", C, C, TensorKind::Weight);
      push(p + "b_o", 1, C, TensorKind::Bias);
      push(p + "ln2_g", 1, C, TensorKind::Gain);
      push(p + "ln2_b", 1, C, TensorKind::Bias);
      push(p + "w_fc", C, 4 * C, TensorKind::Weight);
      push(p + "b_fc", 1, 4 * C, TensorKind::Bias);
      push(p + "w_proj", 4 * C, C, TensorKind::Weight);
      push(p + "b_proj", 1, C, TensorKind::Bias);
    }
    push("lnf_g", 1, C, TensorKind::Gain);
    push("lnf_b", 1, C, TensorKind::Bias);
    push("w_head", C, V, TensorKind::Weight);
    push("b_head", 1, V, TensorKind::Bias);
    return specs;
  }

  static Eigen::Index param_count(const ModelConfig& config) {
    const auto specs = make_layout(config);
    return specs.back().offset + specs.back().rows * specs.back().cols;
  }

  // All weights N(0, 0.02), biases zero, normalization gains one.
  static ModelState init(const ModelConfig& config, std::uint64_t seed) {
    if (config.vocab_size <= 0) throw std::invalid_argument("model vocab_size not set");
    ModelState m;
    m.config = config;
    m.layout = make_layout(config);
    m.params = VectorX<Scalar>::Zero(param_count(config));
    Rng rng = Rng(seed).fold(kStreamInit);
    for (const auto& spec : m.layout) {
      const Eigen::Index n = spec.rows * spec.cols;
      switch (spec.kind) {
        case TensorKind::Weight:
          for (Eigen::Index i = 0; i < n; ++i) {
            m.params(spec.offset + i) = Scalar(0.02) * static_cast<Scalar>(rng.next_normal());
          }
          break;
        case TensorKind::Gain:
          m.params.segment(spec.offset, n).setConstant(Scalar(1));
          break;
        case TensorKind::Bias:
          break;  // already zero
      }
    }
    return m;
  }

  const TensorSpec& spec(const std::string& name) const {
    for (const auto& s : layout) {
      if (s.name == name) return s;
    }
    throw std::out_of_range("no tensor named " + name);
  }

  Eigen::Map<const MatrixX<Scalar>> tensor(const std::string& name) const {
    const TensorSpec& s = spec(name);
    return {params.data() + s.offset, s.rows, s.cols};
  }

  Eigen::Map<MatrixX<Scalar>> tensor(const std::string& name) {
    const TensorSpec& s = spec(name);
    return {params.data() + s.offset, s.rows, s.cols};
  }
};

// Token ids of the conditioning input: instruction p, query q and an output
// prefix. Rendered as BOS instruction SEP query SEP prefix.
struct ConditioningContext {
  std::vector<int> instruction_ids;
  std::vector<int> query_ids;
  std::vector<int> prefix_ids;
};

inline std::vector<int> render_context(const ConditioningContext& ctx) {
  std::vector<int> out;
  out.reserve(3 + ctx.instruction_ids.size() + ctx.query_ids.size() + ctx.prefix_ids.size());
  out.push_back(Vocab::kBos);
  out.insert(out.end(), ctx.instruction_ids.begin(), ctx.instruction_ids.end());
  out.push_back(Vocab::kSep);
  out.insert(out.end(), ctx.query_ids.begin(), ctx.query_ids.end());
  out.push_back(Vocab::kSep);
  out.insert(out.end(), ctx.prefix_ids.begin(), ctx.prefix_ids.end());
  return out;
}

// Ragged batch of sequences packed into one row block; positions restart at
// zero within each segment, so attention and positions never cross sequences.
struct PackedSequences {
  std::vector<int> tokens;
  std::vector<int> positions;
  std::vector<Segment> segments;

  void add(const std::vector<int>& seq) {
    segments.push_back({static_cast<int>(tokens.size()), static_cast<int>(seq.size())});
    for (std::size_t i = 0; i < seq.size(); ++i) {
      tokens.push_back(seq[i]);
      positions.push_back(static_cast<int>(i));
    }
  }

  int rows() const { return static_cast<int>(tokens.size()); }
};

// Model parameters registered as tape inputs, one node per tensor.
template <class Scalar>
struct TapeModel {
  const ModelState<Scalar>* model = nullptr;
  std::vector<typename Tape<Scalar>::Id> nodes;

  static TapeModel attach(Tape<Scalar>& tape, const ModelState<Scalar>& model) {
    TapeModel tm;
    tm.model = &model;
    tm.nodes.reserve(model.layout.size());
    for (const auto& s : model.layout) {
      MatrixX<Scalar> value =
          Eigen::Map<const MatrixX<Scalar>>(model.params.data() + s.offset, s.rows, s.cols);
      tm.nodes.push_back(tape.input(std::move(value), s.name.c_str()));
    }
    return tm;
  }

  typename Tape<Scalar>::Id node(const std::string& name) const {
    for (std::size_t i = 0; i < model->layout.size(); ++i) {
      if (model->layout[i].name == name) return nodes[i];
    }
    throw std::out_of_range("no tensor named " + name);
  }

  // Collects d(loss)/d(params) into a flat vector matching ModelState::params.
  VectorX<Scalar> gradient_flat(const Tape<Scalar>& tape) const {
    VectorX<Scalar> grad = VectorX<Scalar>::Zero(model->params.size());
    for (std::size_t i = 0; i < model->layout.size(); ++i) {
      const auto& s = model->layout[i];
      const MatrixX<Scalar>& g = tape.gradient(nodes[i]);
      Eigen::Map<MatrixX<Scalar>>(grad.data() + s.offset, s.rows, s.cols) = g;
    }
    return grad;
  }
};

// Transformer forward over a packed batch, building the differentiation
// graph. Returns the logits node, [rows, vocab].
template <class Scalar>
typename Tape<Scalar>::Id tape_forward_logits(Tape<Scalar>& tape, const TapeModel<Scalar>& tm,
                                              const PackedSequences& batch) {
  using Id = typename Tape<Scalar>::Id;
  const ModelConfig& cfg = tm.model->config;
  for (const auto& seg : batch.segments) {
    if (seg.length > cfg.max_seq_len) {
      throw std::invalid_argument("sequence of length " + std::to_string(seg.length) +
                                  " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    }
  }
  Id x = tape.add(tape.gather_rows(tm.node("wte"), batch.tokens),
                  tape.gather_rows(tm.node("wpe"), batch.positions));
  for (int l = 0; l < cfg.num_layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    Id h = tape.layer_norm(x, tm.node(p + "ln1_g"), tm.node(p + "ln1_b"));
    Id q = tape.add_rowvec(tape.matmul(h, tm.node(p + "w_q")), tm.node(p + "b_q"));
    Id k = tape.add_rowvec(tape.matmul(h, tm.node(p + "w_k")), tm.node(p + "b_k"));
    Id v = tape.add_rowvec(tape.matmul(h, tm.node(p + "w_v")), tm.node(p + "b_v"));
    Id att = tape.causal_attention(q, k, v, batch.segments, cfg.num_heads);
    Id att_o = tape.add_rowvec(tape.matmul(att, tm.node(p + "w_o")), tm.node(p + "b_o"));
    x = tape.add(x, att_o);
    Id h2 = tape.layer_norm(x, tm.node(p + "ln2_g"), tm.node(p + "ln2_b"));
    Id f = tape.gelu(tape.add_rowvec(tape.matmul(h2, tm.node(p + "w_fc")), tm.node(p + "b_fc")));
    Id mlp = tape.add_rowvec(tape.matmul(f, tm.node(p + "w_proj")), tm.node(p + "b_proj"));
    x = tape.add(x, mlp);
  }
  Id xf = tape.layer_norm(x, tm.node("lnf_g"), tm.node("lnf_b"));
  return tape.add_rowvec(tape.matmul(xf, tm.node("w_head")), tm.node("b_head"));
}

}  // namespace hir
