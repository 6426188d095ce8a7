#pragma once

#include <stdexcept>
#include <vector>

#include "hir/model.hpp"
#include "hir/tape.hpp"

namespace hir {

// One relabeled training pair, already rendered to token ids: the full
// sequence is conditioning context (with relabeled instruction and output
// prefix) followed by the target suffix starting at target_begin.
struct SupervisedExample {
  std::vector<int> tokens;
  int target_begin = 0;
};

// One episode's conditioning (rendered, without output) and full output,
// used to build the n x n score matrix of the contrastive term.
struct ContrastivePair {
  std::vector<int> ctx;
  std::vector<int> output;
};

struct TrainBatch {
  std::vector<SupervisedExample> supervised;
  std::vector<ContrastivePair> contrastive;
};

struct LossWeights {
  double alpha = 1.0;
  double beta = 0.001;
  double label_smoothing = 0.2;
};

enum class LossTerm { Supervised, Contrastive, Entropy, Total };

// The three loss terms and their weighted combination. The logged total is
// recomposed as supervised + alpha*contrastive + beta*entropy_term in this
// exact order.
struct LossBreakdown {
  double supervised = 0.0;
  double contrastive = 0.0;
  double entropy_term = 0.0;
  double total = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
};

namespace detail {

struct Selection {
  std::vector<int> rows;
  std::vector<int> targets;
};

inline void pack_supervised(const std::vector<SupervisedExample>& examples,
                            PackedSequences& batch, Selection& sel) {
  for (const auto& ex : examples) {
    const int T = static_cast<int>(ex.tokens.size());
    if (ex.target_begin < 1 || ex.target_begin >= T) {
      throw std::invalid_argument("target_begin out of range");
    }
    const int base = batch.rows();
    batch.add(ex.tokens);
    for (int t = ex.target_begin; t < T; ++t) {
      sel.rows.push_back(base + t - 1);
      sel.targets.push_back(ex.tokens[static_cast<std::size_t>(t)]);
    }
  }
}

inline void pack_contrastive(const std::vector<ContrastivePair>& pairs, PackedSequences& batch,
                             std::vector<std::vector<std::pair<int, int>>>& groups) {
  const int n = static_cast<int>(pairs.size());
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < n; ++k) {
      const auto& ctx = pairs[static_cast<std::size_t>(k)].ctx;
      const auto& out = pairs[static_cast<std::size_t>(i)].output;
      std::vector<int> seq = ctx;
      seq.insert(seq.end(), out.begin(), out.end());
      const int base = batch.rows();
      batch.add(seq);
      std::vector<std::pair<int, int>> group;
      group.reserve(out.size());
      const int ctx_len = static_cast<int>(ctx.size());
      for (std::size_t t = 0; t < out.size(); ++t) {
        group.emplace_back(base + ctx_len - 1 + static_cast<int>(t), out[t]);
      }
      groups.push_back(std::move(group));
    }
  }
}

}  // namespace detail

// Builds the loss graph on one tape. With grad_out non-null, runs backward
// from the selected term (or the weighted total) and writes the gradient in
// the flat parameter layout. Zero-coefficient terms are skipped entirely
// unless build_all_terms or the gradient selection requires them.
template <class Scalar>
LossBreakdown compute_loss(const ModelState<Scalar>& model, const TrainBatch& batch,
                           const LossWeights& w, VectorX<Scalar>* grad_out,
                           LossTerm grad_term = LossTerm::Total,
                           bool build_all_terms = false) {
  if (batch.supervised.empty()) throw std::invalid_argument("empty supervised batch");
  using Id = typename Tape<Scalar>::Id;
  Tape<Scalar> tape;
  TapeModel<Scalar> tm = TapeModel<Scalar>::attach(tape, model);

  PackedSequences sup_batch;
  detail::Selection sel;
  detail::pack_supervised(batch.supervised, sup_batch, sel);
  const Id sup_logits = tape_forward_logits(tape, tm, sup_batch);
  const Id supervised =
      tape.label_smoothed_nll(sup_logits, sel.rows, sel.targets,
                              static_cast<Scalar>(w.label_smoothing));

  std::vector<Id> terms = {supervised};
  std::vector<Scalar> coeffs = {Scalar(1)};
  LossBreakdown out;
  out.alpha = w.alpha;
  out.beta = w.beta;
  out.supervised = static_cast<double>(tape.value(supervised)(0, 0));

  Id entropy = -1;
  if (w.beta != 0.0 || build_all_terms || grad_term == LossTerm::Entropy) {
    entropy = tape.mean_neg_entropy(sup_logits, sel.rows);
    out.entropy_term = static_cast<double>(tape.value(entropy)(0, 0));
    if (w.beta != 0.0) {
      terms.push_back(entropy);
      coeffs.push_back(static_cast<Scalar>(w.beta));
    }
  }

  Id contrastive = -1;
  if (!batch.contrastive.empty() &&
      (w.alpha != 0.0 || build_all_terms || grad_term == LossTerm::Contrastive)) {
    PackedSequences ctr_batch;
    std::vector<std::vector<std::pair<int, int>>> groups;
    detail::pack_contrastive(batch.contrastive, ctr_batch, groups);
    const Id ctr_logits = tape_forward_logits(tape, tm, ctr_batch);
    const Id scores = tape.sequence_log_probs(ctr_logits, std::move(groups));
    contrastive = tape.contrastive_nll(scores, static_cast<int>(batch.contrastive.size()));
    out.contrastive = static_cast<double>(tape.value(contrastive)(0, 0));
    if (w.alpha != 0.0) {
      terms.push_back(contrastive);
      coeffs.push_back(static_cast<Scalar>(w.alpha));
    }
  }

  out.total = out.supervised + w.alpha * out.contrastive + w.beta * out.entropy_term;

  if (grad_out != nullptr) {
    Id root = -1;
    switch (grad_term) {
      case LossTerm::Supervised: root = supervised; break;
      case LossTerm::Entropy: root = entropy; break;
      case LossTerm::Contrastive: root = contrastive; break;
      case LossTerm::Total: root = tape.weighted_sum(terms, coeffs); break;
    }
    if (root < 0) throw std::invalid_argument("requested gradient of a term that was not built");
    tape.backward(root);
    *grad_out = tm.gradient_flat(tape);
  }
  return out;
}

// Forward-only evaluation of one term, for finite-difference probing.
template <class Scalar>
double loss_term_value(const ModelState<Scalar>& model, const TrainBatch& batch,
                       const LossWeights& w, LossTerm term) {
  const LossBreakdown b =
      compute_loss<Scalar>(model, batch, w, nullptr, LossTerm::Total, /*build_all_terms=*/true);
  switch (term) {
    case LossTerm::Supervised: return b.supervised;
    case LossTerm::Contrastive: return b.contrastive;
    case LossTerm::Entropy: return b.entropy_term;
    case LossTerm::Total: return b.total;
  }
  throw std::logic_error("unreachable");
}

}  // namespace hir
