#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hir {

template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Rows [begin, begin+length) of a packed batch belong to one sequence.
struct Segment {
  int begin = 0;
  int length = 0;
};

// Reverse-mode differentiation tape over dense matrices. Nodes are created
// in topological order by construction; backward() walks them in reverse.
// Backward closures reference other nodes by id through the tape, never by
// pointer, so the node vector may reallocate freely.
template <class Scalar>
class Tape {
 public:
  using Id = int;

  explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}

  Id input(MatrixX<Scalar> value, const char* op = "input") {
    return push(std::move(value), op, nullptr);
  }

  const MatrixX<Scalar>& value(Id id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  const MatrixX<Scalar>& gradient(Id id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) {
      zero_like_.setZero(n.value.rows(), n.value.cols());
      return zero_like_;
    }
    return n.grad;
  }

  // Seeds d(loss)/d(loss) = 1 and accumulates gradients for every
  // contributing node. `loss` must be a 1x1 node.
  void backward(Id loss) {
    Node& top = nodes_[static_cast<std::size_t>(loss)];
    if (top.value.rows() != 1 || top.value.cols() != 1) {
      throw std::invalid_argument("backward() expects a scalar node");
    }
    grad_ref(loss).setConstant(Scalar(1));
    for (Id id = loss; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this);
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

  // ---- operations -------------------------------------------------------

  Id matmul(Id a, Id b) {
    MatrixX<Scalar> v = value(a) * value(b);
    return push(std::move(v), "matmul", [a, b, out = next_id()](Tape& t) {
      const auto& g = t.gradient(out);
      t.grad_ref(a).noalias() += g * t.value(b).transpose();
      t.grad_ref(b).noalias() += t.value(a).transpose() * g;
    });
  }

  Id add(Id a, Id b) {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) {
      throw std::invalid_argument("add: shape mismatch");
    }
    MatrixX<Scalar> v = value(a) + value(b);
    return push(std::move(v), "add", [a, b, out = next_id()](Tape& t) {
      const auto& g = t.gradient(out);
      t.grad_ref(a) += g;
      t.grad_ref(b) += g;
    });
  }

  // x: [R, C], bias: [1, C] broadcast over rows.
  Id add_rowvec(Id x, Id bias) {
    MatrixX<Scalar> v = value(x);
    v.rowwise() += value(bias).row(0);
    return push(std::move(v), "add_rowvec", [x, bias, out = next_id()](Tape& t) {
      const auto& g = t.gradient(out);
      t.grad_ref(x) += g;
      t.grad_ref(bias).row(0) += g.colwise().sum();
    });
  }

  Id mul(Id a, Id b) {
    MatrixX<Scalar> v = value(a).cwiseProduct(value(b));
    return push(std::move(v), "mul", [a, b, out = next_id()](Tape& t) {
      const auto& g = t.gradient(out);
      t.grad_ref(a) += g.cwiseProduct(t.value(b));
      t.grad_ref(b) += g.cwiseProduct(t.value(a));
    });
  }

  Id sum_all(Id a) {
    MatrixX<Scalar> v(1, 1);
    v(0, 0) = value(a).sum();
    return push(std::move(v), "sum_all", [a, out = next_id()](Tape& t) {
      t.grad_ref(a).array() += t.gradient(out)(0, 0);
    });
  }

  Id weighted_sum(const std::vector<Id>& terms, const std::vector<Scalar>& coeffs) {
    if (terms.size() != coeffs.size() || terms.empty()) {
      throw std::invalid_argument("weighted_sum: bad arguments");
    }
    MatrixX<Scalar> v(1, 1);
    v(0, 0) = Scalar(0);
    for (std::size_t i = 0; i < terms.size(); ++i) {
      const auto& tv = value(terms[i]);
      if (tv.rows() != 1 || tv.cols() != 1) {
        throw std::invalid_argument("weighted_sum expects scalar terms");
      }
      v(0, 0) += coeffs[i] * tv(0, 0);
    }
    return push(std::move(v), "weighted_sum",
                [terms, coeffs, out = next_id()](Tape& t) {
                  const Scalar g = t.gradient(out)(0, 0);
                  for (std::size_t i = 0; i < terms.size(); ++i) {
                    t.grad_ref(terms[i])(0, 0) += coeffs[i] * g;
                  }
                });
  }

  // table: [V, C]; one output row per id.
  Id gather_rows(Id table, std::vector<int> ids) {
    const auto& tv = value(table);
    MatrixX<Scalar> v(static_cast<Eigen::Index>(ids.size()), tv.cols());
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (ids[r] < 0 || ids[r] >= tv.rows()) throw std::out_of_range("gather_rows: id out of range");
      v.row(static_cast<Eigen::Index>(r)) = tv.row(ids[r]);
    }
    return push(std::move(v), "gather_rows",
                [table, ids = std::move(ids), out = next_id()](Tape& t) {
                  const auto& g = t.gradient(out);
                  auto& tg = t.grad_ref(table);
                  for (std::size_t r = 0; r < ids.size(); ++r) {
                    tg.row(ids[r]) += g.row(static_cast<Eigen::Index>(r));
                  }
                });
  }

  // Row-wise layer normalization with learned gain/bias, both [1, C].
  Id layer_norm(Id x, Id gain, Id bias) {
    const auto& xv = value(x);
    const Eigen::Index rows = xv.rows(), cols = xv.cols();
    const Scalar eps = Scalar(1e-5);
    MatrixX<Scalar> xhat(rows, cols);
    VectorX<Scalar> inv_std(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const Scalar mu = xv.row(r).mean();
      const Scalar var = (xv.row(r).array() - mu).square().mean();
      const Scalar inv = Scalar(1) / std::sqrt(var + eps);
      xhat.row(r) = (xv.row(r).array() - mu) * inv;
      inv_std(r) = inv;
    }
    MatrixX<Scalar> v = xhat;
    v.array().rowwise() *= value(gain).row(0).array();
    v.rowwise() += value(bias).row(0);
    return push(std::move(v), "layer_norm",
                [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std),
                 out = next_id()](Tape& t) {
                  const auto& g = t.gradient(out);
                  const auto& gain_row = t.value(gain).row(0);
                  auto& xg = t.grad_ref(x);
                  t.grad_ref(gain).row(0) += g.cwiseProduct(xhat).colwise().sum();
                  t.grad_ref(bias).row(0) += g.colwise().sum();
                  const Eigen::Index cols = g.cols();
                  for (Eigen::Index r = 0; r < g.rows(); ++r) {
                    Eigen::Array<Scalar, 1, Eigen::Dynamic> gx =
                        g.row(r).array() * gain_row.array();
                    const Scalar mean_gx = gx.mean();
                    const Scalar mean_gx_xhat =
                        (gx * xhat.row(r).array()).mean();
                    xg.row(r).array() +=
                        inv_std(r) * (gx - mean_gx - xhat.row(r).array() * mean_gx_xhat);
                    (void)cols;
                  }
                });
  }

  Id gelu(Id x) {
    const auto& xv = value(x);
    MatrixX<Scalar> v = xv.unaryExpr([](Scalar a) {
      return Scalar(0.5) * a * (Scalar(1) + std::erf(a * Scalar(M_SQRT1_2)));
    });
    return push(std::move(v), "gelu", [x, out = next_id()](Tape& t) {
      const auto& g = t.gradient(out);
      const auto& xv = t.value(x);
      const Scalar inv_sqrt2pi = Scalar(0.3989422804014326779399460599343);
      t.grad_ref(x).array() +=
          g.array() * (xv.unaryExpr([&](Scalar a) {
                          return Scalar(0.5) * (Scalar(1) + std::erf(a * Scalar(M_SQRT1_2))) +
                                 a * inv_sqrt2pi * std::exp(Scalar(-0.5) * a * a);
                        })).array();
    });
  }

  // Multi-head causal self-attention over packed segments. q, k, v: [R, C];
  // attention never crosses segment boundaries.
  Id causal_attention(Id q, Id k, Id v, std::vector<Segment> segments, int num_heads) {
    const auto& qv = value(q);
    const Eigen::Index C = qv.cols();
    if (C % num_heads != 0) throw std::invalid_argument("attention: dim not divisible by heads");
    const Eigen::Index hd = C / num_heads;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(hd));

    MatrixX<Scalar> out(qv.rows(), C);
    // Row-softmax attention weights per (segment, head), kept for backward.
    std::vector<MatrixX<Scalar>> weights;
    weights.reserve(segments.size() * static_cast<std::size_t>(num_heads));
    for (const auto& seg : segments) {
      for (int h = 0; h < num_heads; ++h) {
        const auto Qh = qv.block(seg.begin, h * hd, seg.length, hd);
        const auto Kh = value(k).block(seg.begin, h * hd, seg.length, hd);
        const auto Vh = value(v).block(seg.begin, h * hd, seg.length, hd);
        MatrixX<Scalar> scores = Qh * Kh.transpose() * scale;
        MatrixX<Scalar> att = MatrixX<Scalar>::Zero(seg.length, seg.length);
        for (Eigen::Index i = 0; i < seg.length; ++i) {
          const Scalar m = scores.row(i).head(i + 1).maxCoeff();
          Scalar denom = Scalar(0);
          for (Eigen::Index j = 0; j <= i; ++j) {
            const Scalar e = std::exp(scores(i, j) - m);
            att(i, j) = e;
            denom += e;
          }
          att.row(i).head(i + 1) /= denom;
        }
        out.block(seg.begin, h * hd, seg.length, hd).noalias() = att * Vh;
        weights.push_back(std::move(att));
      }
    }
    return push(std::move(out), "causal_attention",
                [q, k, v, segments = std::move(segments), num_heads, hd, scale,
                 weights = std::move(weights), out = next_id()](Tape& t) {
                  const auto& g = t.gradient(out);
                  auto& qg = t.grad_ref(q);
                  auto& kg = t.grad_ref(k);
                  auto& vg = t.grad_ref(v);
                  std::size_t w = 0;
                  for (const auto& seg : segments) {
                    for (int h = 0; h < num_heads; ++h, ++w) {
                      const auto Qh = t.value(q).block(seg.begin, h * hd, seg.length, hd);
                      const auto Kh = t.value(k).block(seg.begin, h * hd, seg.length, hd);
                      const auto Vh = t.value(v).block(seg.begin, h * hd, seg.length, hd);
                      const auto Gh = g.block(seg.begin, h * hd, seg.length, hd);
                      const MatrixX<Scalar>& att = weights[w];
                      MatrixX<Scalar> d_att = Gh * Vh.transpose();
                      vg.block(seg.begin, h * hd, seg.length, hd).noalias() +=
                          att.transpose() * Gh;
                      // softmax backward, masked entries stay zero
                      MatrixX<Scalar> d_scores(seg.length, seg.length);
                      for (Eigen::Index i = 0; i < seg.length; ++i) {
                        const Scalar dot =
                            (d_att.row(i).head(i + 1).array() * att.row(i).head(i + 1).array())
                                .sum();
                        d_scores.row(i).setZero();
                        for (Eigen::Index j = 0; j <= i; ++j) {
                          d_scores(i, j) = att(i, j) * (d_att(i, j) - dot);
                        }
                      }
                      qg.block(seg.begin, h * hd, seg.length, hd).noalias() +=
                          d_scores * Kh * scale;
                      kg.block(seg.begin, h * hd, seg.length, hd).noalias() +=
                          d_scores.transpose() * Qh * scale;
                    }
                  }
                });
  }

  // Mean over the selected rows of the cross entropy against the
  // label-smoothed target: the true token gets 1-eps, the remaining eps is
  // spread over the other vocab_size-1 tokens.
  Id label_smoothed_nll(Id logits, std::vector<int> rows, std::vector<int> targets,
                        Scalar eps) {
    if (rows.size() != targets.size() || rows.empty()) {
      throw std::invalid_argument("label_smoothed_nll: bad selection");
    }
    const auto& z = value(logits);
    const Eigen::Index V = z.cols();
    const Scalar off = V > 1 ? eps / static_cast<Scalar>(V - 1) : Scalar(0);
    MatrixX<Scalar> probs(static_cast<Eigen::Index>(rows.size()), V);
    Scalar loss = Scalar(0);
    for (std::size_t s = 0; s < rows.size(); ++s) {
      const auto row = z.row(rows[s]);
      const Scalar m = row.maxCoeff();
      const Scalar lse = m + std::log((row.array() - m).exp().sum());
      const auto logp = row.array() - lse;
      probs.row(static_cast<Eigen::Index>(s)) = logp.exp();
      const Scalar logp_sum = logp.sum();
      const Scalar logp_t = logp(targets[s]);
      loss -= (Scalar(1) - eps) * logp_t + off * (logp_sum - logp_t);
    }
    MatrixX<Scalar> v(1, 1);
    v(0, 0) = loss / static_cast<Scalar>(rows.size());
    return push(std::move(v), "label_smoothed_nll",
                [logits, rows = std::move(rows), targets = std::move(targets), eps, off,
                 probs = std::move(probs), out = next_id()](Tape& t) {
                  const Scalar g = t.gradient(out)(0, 0) / static_cast<Scalar>(rows.size());
                  auto& zg = t.grad_ref(logits);
                  for (std::size_t s = 0; s < rows.size(); ++s) {
                    zg.row(rows[s]) += g * probs.row(static_cast<Eigen::Index>(s));
                    zg.row(rows[s]).array() -= g * off;
                    zg(rows[s], targets[s]) -= g * (Scalar(1) - eps - off);
                  }
                });
  }

  // Mean over the selected rows of sum_v p_v log p_v (negative entropy).
  Id mean_neg_entropy(Id logits, std::vector<int> rows) {
    if (rows.empty()) throw std::invalid_argument("mean_neg_entropy: empty selection");
    const auto& z = value(logits);
    MatrixX<Scalar> probs(static_cast<Eigen::Index>(rows.size()), z.cols());
    VectorX<Scalar> neg_ent(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t s = 0; s < rows.size(); ++s) {
      const auto row = z.row(rows[s]);
      const Scalar m = row.maxCoeff();
      const Scalar lse = m + std::log((row.array() - m).exp().sum());
      const auto logp = row.array() - lse;
      probs.row(static_cast<Eigen::Index>(s)) = logp.exp();
      // zero-probability entries contribute 0 in the p*log p limit
      neg_ent(static_cast<Eigen::Index>(s)) =
          (probs.row(static_cast<Eigen::Index>(s)).array() * logp).sum();
    }
    MatrixX<Scalar> v(1, 1);
    v(0, 0) = neg_ent.mean();
    return push(std::move(v), "mean_neg_entropy",
                [logits, rows = std::move(rows), probs = std::move(probs),
                 neg_ent = std::move(neg_ent), out = next_id()](Tape& t) {
                  const Scalar g = t.gradient(out)(0, 0) / static_cast<Scalar>(rows.size());
                  auto& zg = t.grad_ref(logits);
                  for (std::size_t s = 0; s < rows.size(); ++s) {
                    const Scalar f = neg_ent(static_cast<Eigen::Index>(s));
                    for (Eigen::Index j = 0; j < probs.cols(); ++j) {
                      const Scalar p = probs(static_cast<Eigen::Index>(s), j);
                      if (p > Scalar(0)) zg(rows[s], j) += g * p * (std::log(p) - f);
                    }
                  }
                });
  }

  // One scalar per group: the summed log probability of the group's target
  // tokens. Each element is (row in logits, target id).
  Id sequence_log_probs(Id logits, std::vector<std::vector<std::pair<int, int>>> groups) {
    if (groups.empty()) throw std::invalid_argument("sequence_log_probs: no groups");
    const auto& z = value(logits);
    MatrixX<Scalar> v(static_cast<Eigen::Index>(groups.size()), 1);
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      Scalar sum = Scalar(0);
      for (const auto& [row, target] : groups[gi]) {
        const auto zrow = z.row(row);
        const Scalar m = zrow.maxCoeff();
        const Scalar lse = m + std::log((zrow.array() - m).exp().sum());
        sum += zrow(target) - lse;
      }
      v(static_cast<Eigen::Index>(gi), 0) = sum;
    }
    return push(std::move(v), "sequence_log_probs",
                [logits, groups = std::move(groups), out = next_id()](Tape& t) {
                  const auto& g = t.gradient(out);
                  const auto& z = t.value(logits);
                  auto& zg = t.grad_ref(logits);
                  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
                    const Scalar gs = g(static_cast<Eigen::Index>(gi), 0);
                    if (gs == Scalar(0)) continue;
                    for (const auto& [row, target] : groups[gi]) {
                      const auto zrow = z.row(row);
                      const Scalar m = zrow.maxCoeff();
                      const Scalar lse = m + std::log((zrow.array() - m).exp().sum());
                      zg.row(row).array() -= gs * (zrow.array() - lse).exp();
                      zg(row, target) += gs;
                    }
                  }
                });
  }

  // scores: [n*n, 1] with entry i*n+k = log P(output_i | conditioning_k).
  // Value: sum_i [logsumexp_k scores(i,k) - scores(i,i)], which is >= 0.
  Id contrastive_nll(Id scores, int n) {
    const auto& s = value(scores);
    if (s.rows() != static_cast<Eigen::Index>(n) * n || s.cols() != 1) {
      throw std::invalid_argument("contrastive_nll: expected an n*n column");
    }
    MatrixX<Scalar> v(1, 1);
    v(0, 0) = Scalar(0);
    for (int i = 0; i < n; ++i) {
      Scalar m = s(i * n, 0);
      for (int k = 1; k < n; ++k) m = std::max(m, s(i * n + k, 0));
      Scalar sum = Scalar(0);
      for (int k = 0; k < n; ++k) sum += std::exp(s(i * n + k, 0) - m);
      v(0, 0) += m + std::log(sum) - s(i * n + i, 0);
    }
    return push(std::move(v), "contrastive_nll", [scores, n, out = next_id()](Tape& t) {
      const Scalar g = t.gradient(out)(0, 0);
      const auto& s = t.value(scores);
      auto& sg = t.grad_ref(scores);
      for (int i = 0; i < n; ++i) {
        Scalar m = s(i * n, 0);
        for (int k = 1; k < n; ++k) m = std::max(m, s(i * n + k, 0));
        Scalar sum = Scalar(0);
        for (int k = 0; k < n; ++k) sum += std::exp(s(i * n + k, 0) - m);
        for (int k = 0; k < n; ++k) {
          const Scalar softmax = std::exp(s(i * n + k, 0) - m) / sum;
          sg(i * n + k, 0) += g * (softmax - Scalar(k == i ? 1 : 0));
        }
      }
    });
  }

 private:
  struct Node {
    MatrixX<Scalar> value;
    MatrixX<Scalar> grad;
    std::function<void(Tape&)> backward;
    const char* op;
  };

  Id next_id() const { return static_cast<Id>(nodes_.size()); }

  Id push(MatrixX<Scalar> value, const char* op, std::function<void(Tape&)> bwd) {
    if (check_finite_ && !value.allFinite()) {
      throw std::runtime_error(std::string("non-finite value produced by op '") + op +
                               "' (node " + std::to_string(nodes_.size()) + ")");
    }
    nodes_.push_back(Node{std::move(value), {}, std::move(bwd), op});
    return static_cast<Id>(nodes_.size() - 1);
  }

  MatrixX<Scalar>& grad_ref(Id id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) n.grad = MatrixX<Scalar>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  std::vector<Node> nodes_;
  bool check_finite_;
  mutable MatrixX<Scalar> zero_like_;
};

}  // namespace hir
