#pragma once

#include <chrono>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "hir/config.hpp"
#include "hir/evaluate.hpp"
#include "hir/infer.hpp"
#include "hir/losses.hpp"
#include "hir/metrics.hpp"
#include "hir/model.hpp"
#include "hir/optimizer.hpp"
#include "hir/prompts.hpp"
#include "hir/tasks.hpp"
#include "hir/vocab.hpp"

namespace hir {

// One sampled interaction: the instruction polarity at sampling time, the
// query (by index into the training split) and the sampled output. Fully
// reproducible from (model at that iteration, task, prompt, temperature,
// sample_seed).
struct Episode {
  int train_index = 0;
  long long instance_id = 0;
  Polarity prompt = Polarity::Correct;
  std::vector<int> output_ids;
  std::uint64_t sample_seed = 0;
  int iteration = 0;
  bool answer_correct = false;
  std::string output_text;
};

struct ReplayDataset {
  std::vector<Episode> episodes;
  Retention retention = Retention::AppendAcrossIterations;

  void add(std::vector<Episode> fresh) {
    if (retention == Retention::ClearEachIteration) episodes.clear();
    for (auto& e : fresh) episodes.push_back(std::move(e));
  }

  double correct_fraction() const {
    if (episodes.empty()) return 0.0;
    long long correct = 0;
    for (const auto& e : episodes) correct += e.answer_correct ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(episodes.size());
  }
};

// A training pair after hindsight relabeling: conditioning on the relabeled
// instruction, the query and the output prefix; the target is the suffix.
struct RelabeledExample {
  Polarity relabeled = Polarity::Correct;
  int split_index = 0;
  SupervisedExample rendered;
};

// Task data, vocabulary and encoded queries shared by every method.
struct PreparedTask {
  std::vector<TaskInstance> train;
  std::vector<TaskInstance> eval_instances;
  std::vector<EvalView> eval_views;
  Vocab vocab;
  std::vector<std::vector<int>> train_query_ids;
};

inline PreparedTask prepare_task(const HirConfig& config) {
  TaskSet set;
  if (config.task.kind == TaskKind::ExternalJson) {
    if (config.task.json_path.empty()) {
      throw std::runtime_error("external-json task requires task.json_path");
    }
    set = load_bigbench_json(config.task.json_path);
    set.split_seed = config.task.split_seed;
    set.train_fraction = config.task.train_fraction;
  } else {
    set = generate_taskset(config.task.kind, config.task.count, config.task.size,
                           config.task.task_seed, config.task.gen, config.task.split_seed,
                           config.task.train_fraction);
  }
  PreparedTask out;
  auto [train, eval] = split(set);
  out.train = std::move(train);
  out.eval_instances = std::move(eval);
  out.eval_views = make_eval_views(out.eval_instances);
  out.vocab = Vocab::build_for_run(out.train, out.eval_instances, config.task.kind,
                                   config.prompts, config.task.kind == TaskKind::ExternalJson);
  out.train_query_ids.reserve(out.train.size());
  for (const auto& inst : out.train) out.train_query_ids.push_back(out.vocab.encode(inst.query));

  const int overhead = 4;  // BOS + instruction + 2 separators
  for (const auto& inst : out.train) {
    const int need = overhead + static_cast<int>(out.vocab.encode(inst.query).size()) +
                     config.max_new_tokens;
    if (need > config.model.max_seq_len) {
      throw std::runtime_error("query of instance " + std::to_string(inst.instance_id) +
                               " needs " + std::to_string(need) +
                               " positions but max_seq_len is " +
                               std::to_string(config.model.max_seq_len));
    }
  }
  return out;
}

template <class Scalar>
struct RunResult {
  ModelState<Scalar> model;
  std::vector<MetricsRow> metrics;
  std::vector<std::vector<LossBreakdown>> step_losses;  // one list per iteration
  ReplayDataset replay;
};

// ---- online sampling phase ------------------------------------------------

// T sampling rounds; each round draws online_samples_per_iteration random
// training queries and samples one output per query at the configured
// temperature under the correct-polarity instruction. Episodes are
// independent and may be sampled concurrently; every episode depends only on
// its own derived seed.
template <class Scalar>
std::vector<Episode> online_sampling_phase(const ModelState<Scalar>& model,
                                           const PreparedTask& task, const HirConfig& config,
                                           int iteration) {
  if (task.train.empty()) throw std::invalid_argument("empty training set");
  const int per_round = config.online_samples_per_iteration;
  const int total = config.sampling_rounds * per_round;
  std::vector<Episode> episodes(static_cast<std::size_t>(total));

  const auto sample_slot = [&](int flat) {
    const int round = flat / per_round;
    const int slot = flat % per_round;
    Rng pick = Rng(config.seed)
                   .fold(kStreamSampling)
                   .fold(static_cast<std::uint64_t>(iteration))
                   .fold(static_cast<std::uint64_t>(round))
                   .fold(static_cast<std::uint64_t>(slot));
    Episode ep;
    ep.train_index = static_cast<int>(pick.next_below(task.train.size()));
    ep.instance_id = task.train[static_cast<std::size_t>(ep.train_index)].instance_id;
    ep.prompt = Polarity::Correct;
    ep.sample_seed = pick.next_u64();
    ep.iteration = iteration;
    const auto ctx = make_context(task.vocab, ep.prompt,
                                  task.train_query_ids[static_cast<std::size_t>(ep.train_index)]);
    ep.output_ids = sample(model, ctx, config.temperature, config.max_new_tokens,
                           ep.sample_seed);
    ep.output_text = task.vocab.decode(ep.output_ids);
    ep.answer_correct =
        check_answer(task.train[static_cast<std::size_t>(ep.train_index)], ep.output_text);
    episodes[static_cast<std::size_t>(flat)] = std::move(ep);
  };

  const int workers = std::min(config.sampling_threads, total);
  if (workers <= 1) {
    for (int flat = 0; flat < total; ++flat) sample_slot(flat);
  } else {
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      threads.emplace_back([&, w] {
        for (int flat = w; flat < total; flat += workers) sample_slot(flat);
      });
    }
    for (auto& t : threads) t.join();
  }
  return episodes;
}

// ---- offline relabeling ----------------------------------------------------

// Relabels one episode at a split point: feedback is judged on the episode's
// complete output (the suffix carries the final answer), the instruction is
// kept or flipped accordingly, and the example trains the model to continue
// the prefix with the suffix under the relabeled instruction.
inline RelabeledExample relabel_episode(const Episode& episode, const PreparedTask& task,
                                        int split_index) {
  const int out_len = static_cast<int>(episode.output_ids.size());
  if (split_index < 0 || split_index >= out_len) {
    throw std::invalid_argument("split index " + std::to_string(split_index) +
                                " out of range for output of length " +
                                std::to_string(out_len));
  }
  const TaskInstance& inst = task.train[static_cast<std::size_t>(episode.train_index)];
  const FeedbackResult fb = feedback(episode.output_text, episode.prompt, inst);
  const Polarity relabeled = relabel(episode.prompt, fb.score);
  if (feedback(episode.output_text, relabeled, inst).score != 1) {
    throw std::logic_error("hindsight relabeling failed to align the instruction");
  }

  RelabeledExample ex;
  ex.relabeled = relabeled;
  ex.split_index = split_index;
  const auto& query_ids = task.train_query_ids[static_cast<std::size_t>(episode.train_index)];
  std::vector<int> prefix(episode.output_ids.begin(), episode.output_ids.begin() + split_index);
  const auto ctx = make_context(task.vocab, relabeled, query_ids, std::move(prefix));
  ex.rendered.tokens = render_context(ctx);
  ex.rendered.target_begin = static_cast<int>(ex.rendered.tokens.size());
  ex.rendered.tokens.insert(ex.rendered.tokens.end(),
                            episode.output_ids.begin() + split_index,
                            episode.output_ids.end());
  return ex;
}

namespace detail {

// Batch indices for one optimizer step. When the replay holds both output
// polarities the batch alternates between them, so the contrastive term
// always sees genuine instruction mismatches; with a single polarity (or in
// correct-only mode) it draws from that pool alone.
inline std::vector<int> draw_batch_indices(const ReplayDataset& replay, bool correct_only,
                                           int batch_size, Rng& rng) {
  std::vector<int> correct_pool, wrong_pool;
  for (int i = 0; i < static_cast<int>(replay.episodes.size()); ++i) {
    (replay.episodes[static_cast<std::size_t>(i)].answer_correct ? correct_pool : wrong_pool)
        .push_back(i);
  }
  std::vector<int> out;
  if (correct_only) {
    if (correct_pool.empty()) return out;
    for (int j = 0; j < batch_size; ++j) {
      out.push_back(correct_pool[rng.next_below(correct_pool.size())]);
    }
    return out;
  }
  if (correct_pool.empty() || wrong_pool.empty()) {
    const auto& pool = correct_pool.empty() ? wrong_pool : correct_pool;
    if (pool.empty()) return out;
    for (int j = 0; j < batch_size; ++j) out.push_back(pool[rng.next_below(pool.size())]);
    return out;
  }
  for (int j = 0; j < batch_size; ++j) {
    const auto& pool = j % 2 == 0 ? correct_pool : wrong_pool;
    out.push_back(pool[rng.next_below(pool.size())]);
  }
  return out;
}

}  // namespace detail

// ---- offline training phase -------------------------------------------------

// One step's worth of relabeled training data: which episodes were drawn,
// where each one was split, the relabeled polarities and the rendered batch.
struct AssembledBatch {
  std::vector<int> episode_indices;
  std::vector<int> split_indices;
  std::vector<Polarity> relabeled;
  TrainBatch batch;
};

inline AssembledBatch assemble_training_batch(const ReplayDataset& replay,
                                              const PreparedTask& task,
                                              const HirConfig& config, int iteration,
                                              int step) {
  Rng rng = Rng(config.seed)
                .fold(kStreamBatch)
                .fold(static_cast<std::uint64_t>(iteration))
                .fold(static_cast<std::uint64_t>(step));
  AssembledBatch out;
  out.episode_indices =
      detail::draw_batch_indices(replay, config.correct_only, config.batch_size, rng);
  Rng split_rng = rng.fold(kStreamSplitIndex);
  for (int idx : out.episode_indices) {
    const Episode& ep = replay.episodes[static_cast<std::size_t>(idx)];
    int split_index = 0;
    if (config.suboutput == SuboutputGranularity::Token) {
      split_index = static_cast<int>(split_rng.next_below(ep.output_ids.size()));
    }
    RelabeledExample ex = relabel_episode(ep, task, split_index);
    out.split_indices.push_back(split_index);
    out.relabeled.push_back(ex.relabeled);
    out.batch.supervised.push_back(std::move(ex.rendered));
    if (config.alpha != 0.0) {
      ContrastivePair pair;
      pair.ctx = render_context(make_context(
          task.vocab, ex.relabeled,
          task.train_query_ids[static_cast<std::size_t>(ep.train_index)]));
      pair.output = ep.output_ids;
      out.batch.contrastive.push_back(std::move(pair));
    }
  }
  return out;
}

// K optimizer steps, each on a freshly sampled batch of episodes: draw, pick
// one split index per episode (or zero with sub-output relabeling off),
// relabel, minimize the composite loss.
template <class Scalar>
std::vector<LossBreakdown> offline_training_phase(ModelState<Scalar>& model,
                                                  AdamState<Scalar>& adam,
                                                  const ReplayDataset& replay,
                                                  const PreparedTask& task,
                                                  const HirConfig& config, int iteration,
                                                  std::string* warnings = nullptr) {
  if (replay.episodes.empty()) throw std::invalid_argument("empty replay dataset");
  std::vector<LossBreakdown> losses;
  for (int step = 0; step < config.train_epochs; ++step) {
    AssembledBatch assembled = assemble_training_batch(replay, task, config, iteration, step);
    if (assembled.episode_indices.empty()) {
      if (warnings != nullptr && warnings->empty()) {
        *warnings += "iteration " + std::to_string(iteration) +
                     ": no episodes eligible for training, steps skipped\n";
      }
      continue;
    }
    LossWeights weights{config.alpha, config.beta, config.label_smoothing};
    VectorX<Scalar> grad;
    const LossBreakdown breakdown = compute_loss<Scalar>(model, assembled.batch, weights, &grad);
    if (!apply_gradients(model, adam, grad, config.lr, config.weight_decay)) {
      if (warnings != nullptr) {
        *warnings += "iteration " + std::to_string(iteration) + " step " +
                     std::to_string(step) + ": non-finite gradients, step rejected\n";
      }
      continue;
    }
    losses.push_back(breakdown);
  }
  return losses;
}

namespace detail {

inline MetricsRow summarize_iteration(int iteration, double accuracy,
                                      const std::vector<LossBreakdown>& losses,
                                      const ReplayDataset& replay, double seconds,
                                      std::uint64_t seed) {
  MetricsRow row;
  row.iteration = iteration;
  row.eval_accuracy = accuracy;
  for (const auto& l : losses) {
    row.loss_supervised += l.supervised;
    row.loss_contrastive += l.contrastive;
    row.loss_entropy += l.entropy_term;
    row.loss_total += l.total;
  }
  if (!losses.empty()) {
    const double n = static_cast<double>(losses.size());
    row.loss_supervised /= n;
    row.loss_contrastive /= n;
    row.loss_entropy /= n;
    row.loss_total /= n;
  }
  row.replay_size = static_cast<long long>(replay.episodes.size());
  row.correct_fraction = replay.correct_fraction();
  row.wall_clock_seconds = seconds;
  row.seed = seed;
  return row;
}

}  // namespace detail

// Alternates the online sampling phase and the offline relabeling/training
// phase for N iterations, evaluating after each one. Row 0 is the
// no-training evaluation of the freshly initialized model.
template <class Scalar>
RunResult<Scalar> run_hir(const HirConfig& config, const PreparedTask& task,
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

  for (int iter = 1; iter <= config.iterations; ++iter) {
    t0 = Clock::now();
    result.replay.add(online_sampling_phase(result.model, task, config, iter));
    auto losses =
        offline_training_phase(result.model, adam, result.replay, task, config, iter, warnings);
    acc = evaluate(result.model, task.eval_views, task.vocab, config.max_new_tokens);
    result.metrics.push_back(detail::summarize_iteration(
        iter, acc, losses, result.replay,
        std::chrono::duration<double>(Clock::now() - t0).count(), config.seed));
    result.step_losses.push_back(std::move(losses));
  }
  return result;
}

}  // namespace hir
