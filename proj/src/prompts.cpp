#include "hir/prompts.hpp"

#include <atomic>

namespace hir {

namespace {
std::atomic<std::uint64_t> g_feedback_calls{0};
}

FeedbackResult feedback(const std::string& output_text, Polarity prompt,
                        const TaskInstance& task) {
  g_feedback_calls.fetch_add(1, std::memory_order_relaxed);
  FeedbackResult result;
  result.answer_correct = check_answer(task, output_text);
  result.score =
      (result.answer_correct == (prompt == Polarity::Correct)) ? 1 : 0;
  return result;
}

Polarity relabel(Polarity prompt, int score) {
  return score == 1 ? prompt : negated(prompt);
}

std::uint64_t feedback_invocation_count() {
  return g_feedback_calls.load(std::memory_order_relaxed);
}

}  // namespace hir
