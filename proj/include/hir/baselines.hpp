#pragma once

#include <string>
#include <vector>

#include "hir/trainer.hpp"

namespace hir {

// Keeps exactly the episodes whose output passes the final-answer check,
// in replay order. This is the whole difference between final-answer
// imitation and hindsight relabeling: everything else is discarded here.
inline std::vector<Episode> farl_filter(const ReplayDataset& replay) {
  std::vector<Episode> out;
  for (const auto& e : replay.episodes) {
    if (e.answer_correct) out.push_back(e);
  }
  return out;
}

// Final-answer imitation: the same sampling phase and optimizer as the
// hindsight trainer, but training only on correct-filtered episodes with
// the fixed correct-polarity instruction, plain supervised loss, and no
// sub-output splitting.
template <class Scalar>
RunResult<Scalar> run_farl(const HirConfig& config, const PreparedTask& task,
                           std::string* warnings = nullptr) {
  using Clock = std::chrono::steady_clock;
  ModelConfig mc = config.model;
  mc.vocab_size = task.vocab.size();
  RunResult<Scalar> result;
  result.model = ModelState<Scalar>::init(mc, config.seed);
  result.replay.retention = config.retention;
  auto adam = AdamState<Scalar>::init(result.model.params.size());

  auto t0 = Clock::now();
  double acc = evaluate(result.model, task.eval_views, task.vocab, config.max_new_tokens);
  result.metrics.push_back(detail::summarize_iteration(
      0, acc, {}, result.replay, std::chrono::duration<double>(Clock::now() - t0).count(),
      config.seed));

  const LossWeights weights{0.0, 0.0, config.label_smoothing};
  for (int iter = 1; iter <= config.iterations; ++iter) {
    t0 = Clock::now();
    result.replay.add(online_sampling_phase(result.model, task, config, iter));
    const std::vector<Episode> filtered = farl_filter(result.replay);
    std::vector<LossBreakdown> losses;
    if (filtered.empty()) {
      if (warnings != nullptr) {
        *warnings += "iteration " + std::to_string(iter) +
                     ": no correct episodes, training skipped\n";
      }
    } else {
      for (int step = 0; step < config.train_epochs; ++step) {
        Rng rng = Rng(config.seed)
                      .fold(kStreamBatch)
                      .fold(static_cast<std::uint64_t>(iter))
                      .fold(static_cast<std::uint64_t>(step));
        TrainBatch batch;
        for (int j = 0; j < config.batch_size; ++j) {
          const Episode& ep = filtered[rng.next_below(filtered.size())];
          SupervisedExample ex;
          ex.tokens = render_context(make_context(
              task.vocab, Polarity::Correct,
              task.train_query_ids[static_cast<std::size_t>(ep.train_index)]));
          ex.target_begin = static_cast<int>(ex.tokens.size());
          ex.tokens.insert(ex.tokens.end(), ep.output_ids.begin(), ep.output_ids.end());
          batch.supervised.push_back(std::move(ex));
        }
        VectorX<Scalar> grad;
        const LossBreakdown breakdown = compute_loss<Scalar>(result.model, batch, weights, &grad);
        if (!apply_gradients(result.model, adam, grad, config.lr, config.weight_decay)) {
          if (warnings != nullptr) {
            *warnings += "iteration " + std::to_string(iter) + " step " +
                         std::to_string(step) + ": non-finite gradients, step rejected\n";
          }
          continue;
        }
        losses.push_back(breakdown);
      }
    }
    acc = evaluate(result.model, task.eval_views, task.vocab, config.max_new_tokens);
    result.metrics.push_back(detail::summarize_iteration(
        iter, acc, losses, result.replay,
        std::chrono::duration<double>(Clock::now() - t0).count(), config.seed));
    result.step_losses.push_back(std::move(losses));
  }
  return result;
}

// Standard fine-tuning on (correct instruction, query -> gold answer) pairs
// from the training split. Unlike the feedback-driven methods this reads the
// gold answers directly; evaluation still only sees queries and checkers.
template <class Scalar>
RunResult<Scalar> run_sft(const HirConfig& config, const PreparedTask& task,
                          std::string* warnings = nullptr) {
  using Clock = std::chrono::steady_clock;
  ModelConfig mc = config.model;
  mc.vocab_size = task.vocab.size();
  RunResult<Scalar> result;
  result.model = ModelState<Scalar>::init(mc, config.seed);
  auto adam = AdamState<Scalar>::init(result.model.params.size());

  std::vector<std::vector<int>> gold_ids;
  gold_ids.reserve(task.train.size());
  for (const auto& inst : task.train) {
    auto ids = task.vocab.encode(inst.gold_answer);
    ids.push_back(Vocab::kEos);
    gold_ids.push_back(std::move(ids));
  }

  auto t0 = Clock::now();
  double acc = evaluate(result.model, task.eval_views, task.vocab, config.max_new_tokens);
  result.metrics.push_back(detail::summarize_iteration(
      0, acc, {}, result.replay, std::chrono::duration<double>(Clock::now() - t0).count(),
      config.seed));

  const LossWeights weights{0.0, 0.0, config.label_smoothing};
  for (int iter = 1; iter <= config.iterations; ++iter) {
    t0 = Clock::now();
    std::vector<LossBreakdown> losses;
    for (int step = 0; step < config.train_epochs; ++step) {
      Rng rng = Rng(config.seed)
                    .fold(kStreamBatch)
                    .fold(static_cast<std::uint64_t>(iter))
                    .fold(static_cast<std::uint64_t>(step));
      TrainBatch batch;
      for (int j = 0; j < config.batch_size; ++j) {
        const auto idx = rng.next_below(task.train.size());
        SupervisedExample ex;
        ex.tokens = render_context(
            make_context(task.vocab, Polarity::Correct, task.train_query_ids[idx]));
        ex.target_begin = static_cast<int>(ex.tokens.size());
        ex.tokens.insert(ex.tokens.end(), gold_ids[idx].begin(), gold_ids[idx].end());
        batch.supervised.push_back(std::move(ex));
      }
      VectorX<Scalar> grad;
      const LossBreakdown breakdown = compute_loss<Scalar>(result.model, batch, weights, &grad);
      if (!apply_gradients(result.model, adam, grad, config.lr, config.weight_decay)) {
        if (warnings != nullptr) {
          *warnings += "iteration " + std::to_string(iter) + " step " + std::to_string(step) +
                       ": non-finite gradients, step rejected\n";
        }
        continue;
      }
      losses.push_back(breakdown);
    }
    acc = evaluate(result.model, task.eval_views, task.vocab, config.max_new_tokens);
    result.metrics.push_back(detail::summarize_iteration(
        iter, acc, losses, result.replay,
        std::chrono::duration<double>(Clock::now() - t0).count(), config.seed));
    result.step_losses.push_back(std::move(losses));
  }
  return result;
}

}  // namespace hir
