#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "hir/model.hpp"

namespace hir {

// Lowest index wins ties, which makes greedy decoding invariant under any
// positive rescaling of the logits.
template <class Derived>
int argmax_lowest(const Eigen::MatrixBase<Derived>& row) {
  int best = 0;
  for (Eigen::Index j = 1; j < row.size(); ++j) {
    if (row(j) > row(best)) best = static_cast<int>(j);
  }
  return best;
}

// Per-sequence key/value rows accumulated during incremental decoding.
template <class Scalar>
struct KvCache {
  std::vector<MatrixX<Scalar>> k;  // per layer, [max_seq_len, C], rows 0..length-1 valid
  std::vector<MatrixX<Scalar>> v;
  int length = 0;
};

// Forward passes outside the differentiation graph. Sampling and decoding
// always run one sequence at a time so that every episode is bit-reproducible
// from its seed regardless of how episodes are batched or scheduled.
template <class Scalar>
class InferenceModel {
 public:
  explicit InferenceModel(const ModelState<Scalar>& model) : m_(&model) {
    const auto& cfg = model.config;
    const Eigen::Index C = cfg.model_dim;
    if (C % cfg.num_heads != 0) throw std::invalid_argument("model_dim % num_heads != 0");
    head_dim_ = C / cfg.num_heads;
    scale_ = Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim_));
  }

  const ModelState<Scalar>& model() const { return *m_; }

  // Full forward over a packed ragged batch; logits for every row.
  MatrixX<Scalar> forward_logits(const PackedSequences& batch) const {
    const auto& cfg = m_->config;
    for (const auto& seg : batch.segments) {
      if (seg.length > cfg.max_seq_len) {
        throw std::invalid_argument("sequence of length " + std::to_string(seg.length) +
                                    " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
      }
    }
    const Eigen::Index R = batch.rows();
    const Eigen::Index C = cfg.model_dim;
    MatrixX<Scalar> x(R, C);
    const auto wte = m_->tensor("wte");
    const auto wpe = m_->tensor("wpe");
    for (Eigen::Index r = 0; r < R; ++r) {
      x.row(r) = wte.row(batch.tokens[static_cast<std::size_t>(r)]) +
                 wpe.row(batch.positions[static_cast<std::size_t>(r)]);
    }
    MatrixX<Scalar> h, q, k, v, att, f;
    for (int l = 0; l < cfg.num_layers; ++l) {
      const std::string p = "l" + std::to_string(l) + ".";
      h = layer_norm(x, p + "ln1_g", p + "ln1_b");
      q.noalias() = h * m_->tensor(p + "w_q");
      q.rowwise() += m_->tensor(p + "b_q").row(0);
      k.noalias() = h * m_->tensor(p + "w_k");
      k.rowwise() += m_->tensor(p + "b_k").row(0);
      v.noalias() = h * m_->tensor(p + "w_v");
      v.rowwise() += m_->tensor(p + "b_v").row(0);
      att.resize(R, C);
      for (const auto& seg : batch.segments) {
        for (int hh = 0; hh < cfg.num_heads; ++hh) {
          attend_block(q.block(seg.begin, hh * head_dim_, seg.length, head_dim_),
                       k.block(seg.begin, hh * head_dim_, seg.length, head_dim_),
                       v.block(seg.begin, hh * head_dim_, seg.length, head_dim_),
                       att.block(seg.begin, hh * head_dim_, seg.length, head_dim_));
        }
      }
      x.noalias() += att * m_->tensor(p + "w_o");
      x.rowwise() += m_->tensor(p + "b_o").row(0);
      h = layer_norm(x, p + "ln2_g", p + "ln2_b");
      f.noalias() = h * m_->tensor(p + "w_fc");
      f.rowwise() += m_->tensor(p + "b_fc").row(0);
      gelu_inplace(f);
      x.noalias() += f * m_->tensor(p + "w_proj");
      x.rowwise() += m_->tensor(p + "b_proj").row(0);
    }
    h = layer_norm(x, "lnf_g", "lnf_b");
    MatrixX<Scalar> logits = h * m_->tensor("w_head");
    logits.rowwise() += m_->tensor("b_head").row(0);
    return logits;
  }

  // Runs the context through the model, filling the cache; returns the
  // logits of the last position.
  VectorX<Scalar> prefill(const std::vector<int>& ctx, KvCache<Scalar>& cache) const {
    const auto& cfg = m_->config;
    if (static_cast<int>(ctx.size()) > cfg.max_seq_len) {
      throw std::invalid_argument("context of length " + std::to_string(ctx.size()) +
                                  " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    }
    if (ctx.empty()) throw std::invalid_argument("empty context");
    init_cache(cache);
    VectorX<Scalar> last;
    for (int t = 0; t < static_cast<int>(ctx.size()); ++t) {
      last = step(ctx[static_cast<std::size_t>(t)], cache);
    }
    return last;
  }

  // Appends one token and returns the logits predicting the next one.
  VectorX<Scalar> step(int token, KvCache<Scalar>& cache) const {
    const auto& cfg = m_->config;
    if (cache.length >= cfg.max_seq_len) {
      throw std::invalid_argument("sequence exceeds max_seq_len " +
                                  std::to_string(cfg.max_seq_len));
    }
    const Eigen::Index C = cfg.model_dim;
    const int pos = cache.length;
    MatrixX<Scalar> x = m_->tensor("wte").row(token) + m_->tensor("wpe").row(pos);
    MatrixX<Scalar> h, qr, kr, vr, f;
    for (int l = 0; l < cfg.num_layers; ++l) {
      const std::string p = "l" + std::to_string(l) + ".";
      h = layer_norm(x, p + "ln1_g", p + "ln1_b");
      qr.noalias() = h * m_->tensor(p + "w_q");
      qr += m_->tensor(p + "b_q");
      kr.noalias() = h * m_->tensor(p + "w_k");
      kr += m_->tensor(p + "b_k");
      vr.noalias() = h * m_->tensor(p + "w_v");
      vr += m_->tensor(p + "b_v");
      auto& K = cache.k[static_cast<std::size_t>(l)];
      auto& V = cache.v[static_cast<std::size_t>(l)];
      K.row(pos) = kr.row(0);
      V.row(pos) = vr.row(0);
      MatrixX<Scalar> att(1, C);
      for (int hh = 0; hh < cfg.num_heads; ++hh) {
        attend_block(qr.block(0, hh * head_dim_, 1, head_dim_),
                     K.block(0, hh * head_dim_, pos + 1, head_dim_),
                     V.block(0, hh * head_dim_, pos + 1, head_dim_),
                     att.block(0, hh * head_dim_, 1, head_dim_));
      }
      x.noalias() += att * m_->tensor(p + "w_o");
      x += m_->tensor(p + "b_o");
      h = layer_norm(x, p + "ln2_g", p + "ln2_b");
      f.noalias() = h * m_->tensor(p + "w_fc");
      f += m_->tensor(p + "b_fc");
      gelu_inplace(f);
      x.noalias() += f * m_->tensor(p + "w_proj");
      x += m_->tensor(p + "b_proj");
    }
    h = layer_norm(x, "lnf_g", "lnf_b");
    MatrixX<Scalar> logits = h * m_->tensor("w_head");
    logits += m_->tensor("b_head");
    cache.length = pos + 1;
    return logits.row(0).transpose();
  }

 private:
  void init_cache(KvCache<Scalar>& cache) const {
    const auto& cfg = m_->config;
    cache.k.assign(static_cast<std::size_t>(cfg.num_layers),
                   MatrixX<Scalar>(cfg.max_seq_len, cfg.model_dim));
    cache.v.assign(static_cast<std::size_t>(cfg.num_layers),
                   MatrixX<Scalar>(cfg.max_seq_len, cfg.model_dim));
    cache.length = 0;
  }

  template <class BQ, class BK, class BV, class BOut>
  void attend_block(const BQ& Q, const BK& K, const BV& V, BOut&& out) const {
    // rows of Q attend to keys 0..row (prefix rows of K when Q is one row)
    const Eigen::Index Tq = Q.rows();
    const Eigen::Index Tk = K.rows();
    MatrixX<Scalar> scores = Q * K.transpose() * scale_;
    for (Eigen::Index i = 0; i < Tq; ++i) {
      const Eigen::Index limit = Tq == Tk ? i + 1 : Tk;  // full block vs one-step query
      const Scalar m = scores.row(i).head(limit).maxCoeff();
      Scalar denom = Scalar(0);
      for (Eigen::Index j = 0; j < limit; ++j) {
        const Scalar e = std::exp(scores(i, j) - m);
        scores(i, j) = e;
        denom += e;
      }
      scores.row(i).head(limit) /= denom;
      out.row(i).noalias() = scores.row(i).head(limit) * V.topRows(limit);
    }
  }

  MatrixX<Scalar> layer_norm(const MatrixX<Scalar>& x, const std::string& gain,
                             const std::string& bias) const {
    const Scalar eps = Scalar(1e-5);
    MatrixX<Scalar> out(x.rows(), x.cols());
    const auto g = m_->tensor(gain).row(0);
    const auto b = m_->tensor(bias).row(0);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const Scalar mu = x.row(r).mean();
      const Scalar var = (x.row(r).array() - mu).square().mean();
      const Scalar inv = Scalar(1) / std::sqrt(var + eps);
      out.row(r) = (((x.row(r).array() - mu) * inv) * g.array()).matrix() + b;
    }
    return out;
  }

  static void gelu_inplace(MatrixX<Scalar>& x) {
    x = x.unaryExpr([](Scalar a) {
      return Scalar(0.5) * a * (Scalar(1) + std::erf(a * Scalar(M_SQRT1_2)));
    });
  }

  const ModelState<Scalar>* m_;
  Eigen::Index head_dim_;
  Scalar scale_;
};

// ---- public conditional-generation operations ----------------------------

// Probabilities of the next token given the rendered context; entries sum to
// one up to a stable log-sum-exp evaluation.
template <class Scalar>
VectorX<Scalar> next_token_distribution(const ModelState<Scalar>& model,
                                        const ConditioningContext& ctx) {
  InferenceModel<Scalar> inf(model);
  KvCache<Scalar> cache;
  const VectorX<Scalar> logits = inf.prefill(render_context(ctx), cache);
  const Scalar m = logits.maxCoeff();
  VectorX<Scalar> p = (logits.array() - m).exp();
  const Scalar lse = std::log(p.sum());
  p = (logits.array() - (m + lse)).exp();
  return p;
}

// Sum over target positions of log P(target_t | ctx, target_<t). Uses the
// packed scoring path (the same one training uses), which the step-by-step
// oracle cross-checks in tests. Targets are scored as given; they do not
// need to end with the end-of-sequence token (sampled outputs may have been
// truncated at the generation limit).
template <class Scalar>
double sequence_log_prob(const ModelState<Scalar>& model, const ConditioningContext& ctx,
                         const std::vector<int>& target_ids) {
  if (target_ids.empty()) throw std::invalid_argument("empty target");
  std::vector<int> seq = render_context(ctx);
  const int ctx_len = static_cast<int>(seq.size());
  seq.insert(seq.end(), target_ids.begin(), target_ids.end());
  PackedSequences batch;
  batch.add(seq);
  InferenceModel<Scalar> inf(model);
  const MatrixX<Scalar> logits = inf.forward_logits(batch);
  double sum = 0.0;
  for (std::size_t t = 0; t < target_ids.size(); ++t) {
    const Eigen::Index row = ctx_len - 1 + static_cast<Eigen::Index>(t);
    const auto z = logits.row(row);
    const Scalar m = z.maxCoeff();
    const Scalar lse = m + std::log((z.array() - m).exp().sum());
    sum += static_cast<double>(z(target_ids[t]) - lse);
  }
  return sum;
}

// Temperatures at or below this are treated as the argmax limit.
inline constexpr double kGreedyTemperature = 1e-6;

// Autoregressive sampling from softmax(logits / temperature) until EOS or
// max_new tokens. Deterministic in (model, ctx, temperature, rng_seed).
template <class Scalar>
std::vector<int> sample(const ModelState<Scalar>& model, const ConditioningContext& ctx,
                        double temperature, int max_new, std::uint64_t rng_seed) {
  if (temperature <= 0.0) throw std::invalid_argument("temperature must be positive");
  if (max_new < 1) throw std::invalid_argument("max_new must be positive");
  const std::vector<int> rendered = render_context(ctx);
  if (static_cast<int>(rendered.size()) + max_new > model.config.max_seq_len) {
    throw std::invalid_argument("context plus max_new exceeds max_seq_len");
  }
  InferenceModel<Scalar> inf(model);
  KvCache<Scalar> cache;
  VectorX<Scalar> logits = inf.prefill(rendered, cache);
  Rng rng = Rng(rng_seed).fold(kStreamTokens);
  std::vector<int> out;
  for (int t = 0; t < max_new; ++t) {
    int token;
    if (temperature <= kGreedyTemperature) {
      token = argmax_lowest(logits);
    } else {
      VectorX<Scalar> z = logits / static_cast<Scalar>(temperature);
      const Scalar m = z.maxCoeff();
      VectorX<Scalar> p = (z.array() - m).exp();
      p /= p.sum();
      const double u = rng.next_double();
      double cum = 0.0;
      token = static_cast<int>(p.size()) - 1;
      for (Eigen::Index j = 0; j < p.size(); ++j) {
        cum += static_cast<double>(p(j));
        if (u < cum) {
          token = static_cast<int>(j);
          break;
        }
      }
    }
    out.push_back(token);
    if (token == Vocab::kEos) break;
    if (t + 1 < max_new) logits = inf.step(token, cache);
  }
  return out;
}

// Argmax decoding, ties broken by the lowest token id.
template <class Scalar>
std::vector<int> greedy_decode(const ModelState<Scalar>& model, const ConditioningContext& ctx,
                               int max_new) {
  if (max_new < 1) throw std::invalid_argument("max_new must be positive");
  const std::vector<int> rendered = render_context(ctx);
  if (static_cast<int>(rendered.size()) + max_new > model.config.max_seq_len) {
    throw std::invalid_argument("context plus max_new exceeds max_seq_len");
  }
  InferenceModel<Scalar> inf(model);
  KvCache<Scalar> cache;
  VectorX<Scalar> logits = inf.prefill(rendered, cache);
  std::vector<int> out;
  for (int t = 0; t < max_new; ++t) {
    const int token = argmax_lowest(logits);
    out.push_back(token);
    if (token == Vocab::kEos) break;
    if (t + 1 < max_new) logits = inf.step(token, cache);
  }
  return out;
}

}  // namespace hir
