#pragma once

#include <cstdint>
#include <string>

#include "hir/tasks.hpp"

namespace hir {

// The instruction space: two scripted polarity templates. The wrong-polarity
// template is what makes hindsight relabeling possible — a failed output is a
// perfectly good demonstration of the opposite instruction.
enum class Polarity { Correct, Wrong };

constexpr Polarity negated(Polarity p) {
  return p == Polarity::Correct ? Polarity::Wrong : Polarity::Correct;
}

struct PromptTemplates {
  std::string correct_text = "Generate a correct answer to this problem";
  std::string wrong_text = "Generate a wrong answer to this problem";

  const std::string& text(Polarity p) const {
    return p == Polarity::Correct ? correct_text : wrong_text;
  }
};

struct InstructionPrompt {
  Polarity polarity = Polarity::Correct;
};

struct FeedbackResult {
  int score = 0;           // 1 iff the output aligns with the prompt polarity
  bool answer_correct = false;  // raw final-answer check
};

// Scripted binary feedback: score 1 when a correct answer meets the correct
// prompt or a wrong answer meets the wrong prompt. Never used at evaluation
// time; the invocation counter lets tests assert that.
FeedbackResult feedback(const std::string& output_text, Polarity prompt,
                        const TaskInstance& task);

// Keeps the prompt when score is 1, flips polarity otherwise.
Polarity relabel(Polarity prompt, int score);

std::uint64_t feedback_invocation_count();

}  // namespace hir
