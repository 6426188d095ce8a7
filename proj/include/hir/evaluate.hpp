#pragma once

#include <string>
#include <vector>

#include "hir/infer.hpp"
#include "hir/model.hpp"
#include "hir/tasks.hpp"
#include "hir/vocab.hpp"

namespace hir {

inline ConditioningContext make_context(const Vocab& vocab, Polarity p,
                                        std::vector<int> query_ids,
                                        std::vector<int> prefix = {}) {
  ConditioningContext ctx;
  ctx.instruction_ids = {vocab.instruction_id(p)};
  ctx.query_ids = std::move(query_ids);
  ctx.prefix_ids = std::move(prefix);
  return ctx;
}

// Fraction of instances whose answer passes the checker, under the
// correct-polarity instruction. Open-ended tasks are decoded greedily;
// option-bearing tasks pick the option with the highest conditional log
// probability (argmax over the answer set, lowest index on ties), which
// keeps an untrained model at chance level instead of the degenerate zero
// that free-form decoding would give. Feedback and relabeling functions are
// never invoked here.
template <class Scalar>
double evaluate(const ModelState<Scalar>& model, const std::vector<EvalView>& views,
                const Vocab& vocab, int max_new) {
  if (views.empty()) throw std::invalid_argument("empty evaluation set");
  InferenceModel<Scalar> inf(model);
  int correct = 0;
  for (const auto& view : views) {
    const auto query_ids = vocab.encode(view.query());
    const auto ctx = make_context(vocab, Polarity::Correct, query_ids);
    if (view.options().empty()) {
      const auto out = greedy_decode(model, ctx, max_new);
      correct += view.check(vocab.decode(out)) ? 1 : 0;
      continue;
    }
    // score all options in one packed forward
    const std::vector<int> rendered = render_context(ctx);
    PackedSequences batch;
    std::vector<std::vector<int>> option_ids;
    for (const auto& opt : view.options()) {
      std::vector<int> seq = rendered;
      const auto ids = vocab.encode(opt);
      seq.insert(seq.end(), ids.begin(), ids.end());
      batch.add(seq);
      option_ids.push_back(ids);
    }
    const MatrixX<Scalar> logits = inf.forward_logits(batch);
    int best = 0;
    double best_score = 0.0;
    for (std::size_t o = 0; o < option_ids.size(); ++o) {
      double score = 0.0;
      const int base = batch.segments[o].begin;
      const int ctx_len = static_cast<int>(rendered.size());
      for (std::size_t t = 0; t < option_ids[o].size(); ++t) {
        const auto z = logits.row(base + ctx_len - 1 + static_cast<Eigen::Index>(t));
        const Scalar m = z.maxCoeff();
        const Scalar lse = m + std::log((z.array() - m).exp().sum());
        score += static_cast<double>(z(option_ids[o][t]) - lse);
      }
      if (o == 0 || score > best_score) {
        best = static_cast<int>(o);
        best_score = score;
      }
    }
    correct += view.check(view.options()[static_cast<std::size_t>(best)]) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(views.size());
}

}  // namespace hir
