#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hir/prompts.hpp"
#include "hir/tasks.hpp"

namespace hir {

// Word-level tokenizer over a closed vocabulary, with an optional
// character-level fallback for words outside it (external JSON tasks).
//
// Token inventory: the four specials, one token per instruction template
// (instructions are atomic goals, not running text), then the content words
// in sorted order, then the fallback character tokens. Option labels like
// "(A)" are single tokens.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSep = 3;

  static Vocab build(const std::vector<std::string>& texts, const PromptTemplates& templates,
                     bool char_fallback = false);

  // Convenience builder covering a full run: all queries and options, the
  // train-side gold answers, and the kind's answer alphabet.
  static Vocab build_for_run(const std::vector<TaskInstance>& train,
                             const std::vector<TaskInstance>& eval, TaskKind kind,
                             const PromptTemplates& templates, bool char_fallback = false);

  // Rebuilds a vocabulary from a serialized token list (checkpoints).
  static Vocab from_tokens(const std::vector<std::string>& tokens, bool char_fallback);

  int size() const { return static_cast<int>(id_to_token_.size()); }
  int id(const std::string& token) const;
  const std::string& token(int id) const { return id_to_token_.at(static_cast<std::size_t>(id)); }
  int instruction_id(Polarity p) const { return p == Polarity::Correct ? correct_id_ : wrong_id_; }
  bool has_char_fallback() const { return char_fallback_; }

  // Throws when a word is unknown and no fallback is available.
  std::vector<int> encode(const std::string& text) const;
  // Skips PAD/BOS/SEP, stops at EOS, restores standard spacing.
  std::string decode(std::span<const int> ids) const;

  static std::vector<std::string> split_words(const std::string& text);

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  int correct_id_ = -1;
  int wrong_id_ = -1;
  bool char_fallback_ = false;
};

}  // namespace hir
