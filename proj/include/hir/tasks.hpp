#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace hir {

enum class TaskKind {
  WordSorting,
  ObjectCounting,
  TrackingShuffledObjects,
  LogicalDeduction,
  ExternalJson,
};

const char* task_kind_name(TaskKind kind);
std::optional<TaskKind> task_kind_from_name(const std::string& name);

// One instruction-conditioned query with its ground-truth answer. For
// multiple-choice tasks `options` holds the rendered "(A) ..." answer texts
// and `gold_answer` is exactly one of them.
struct TaskInstance {
  std::string query;
  std::string gold_answer;
  std::vector<std::string> options;
  TaskKind kind = TaskKind::ExternalJson;
  int k = 0;  // object count for tracking/deduction kinds
  long long instance_id = 0;
};

struct TaskSet {
  std::vector<TaskInstance> instances;
  std::uint64_t split_seed = 0;
  double train_fraction = 0.8;
};

// Pool-size knobs for the generators. Smaller pools give smaller
// vocabularies, which is what the toy training runs want.
struct GenOptions {
  int word_pool = 20;   // WordSorting candidate words
  int color_pool = 10;  // TrackingShuffledObjects ball colors
  int book_pool = 7;    // LogicalDeduction book colors
};

// Deterministic builders. Each computes the gold answer with its own oracle
// (sort / category count / swap simulation / total-order solver).
TaskInstance word_sorting_instance(const std::vector<std::string>& words,
                                   long long instance_id = 0);
TaskInstance object_counting_instance(const std::vector<std::string>& items,
                                      long long instance_id = 0);
// `initial_colors[i]` is the ball of person i; swaps are (person, person).
TaskInstance tracking_instance(const std::vector<std::string>& initial_colors,
                               const std::vector<std::pair<int, int>>& swaps,
                               long long instance_id = 0);
// `arrangement` lists book colors left to right; option and intro order are
// shuffled with `presentation_seed`. Uniqueness of the solution is verified
// by enumerating all k! orders.
TaskInstance logical_deduction_instance(const std::vector<std::string>& arrangement,
                                        std::uint64_t presentation_seed,
                                        long long instance_id = 0);

TaskInstance generate_task(TaskKind kind, int size, std::uint64_t rng_seed,
                           const GenOptions& opts = {});

// `count` distinct-query instances of one kind.
TaskSet generate_taskset(TaskKind kind, int count, int size, std::uint64_t task_seed,
                         const GenOptions& opts = {}, std::uint64_t split_seed = 0,
                         double train_fraction = 0.8);

// trim + collapse whitespace runs + lowercase
std::string normalize_answer(const std::string& s);
// "(b)" / "(b) white ball" -> 'b'
std::optional<char> leading_option_label(const std::string& normalized);

// Final-answer check. Multiple-choice tasks match on the option label and
// accept either the bare label or label-plus-text; everything else compares
// normalized strings. Total function, never throws.
bool check_answer(const TaskInstance& task, const std::string& output);

// Deterministic disjoint 80/20-style split; |train| = round(fraction * N).
std::pair<std::vector<TaskInstance>, std::vector<TaskInstance>> split(const TaskSet& taskset);

// BigBench-style JSON: array of {"query", "gold_answer", "options"?}.
TaskSet load_bigbench_json(const std::string& path);
void save_bigbench_json(const TaskSet& taskset, const std::string& path);

// Answer tokens that may not appear in any query text (e.g. counting digits).
std::vector<std::string> answer_alphabet(TaskKind kind);

// Evaluation-side view of an instance: exposes the query, the options and a
// checker but never the gold answer itself.
class EvalView {
 public:
  explicit EvalView(TaskInstance inst) : inst_(std::move(inst)) {}
  const std::string& query() const { return inst_.query; }
  const std::vector<std::string>& options() const { return inst_.options; }
  long long instance_id() const { return inst_.instance_id; }
  bool check(const std::string& output) const { return check_answer(inst_, output); }

 private:
  TaskInstance inst_;
};

std::vector<EvalView> make_eval_views(const std::vector<TaskInstance>& instances);

}  // namespace hir
