#include "hir/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>

namespace hir {

namespace {

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '\'' || c == '/';
}

bool is_char_token(const std::string& t) { return t.size() == 2 && t[0] == '~'; }

// Whether the detokenizer puts a space between two adjacent tokens.
bool join_with_space(const std::string& prev, const std::string& next) {
  if (prev.empty()) return false;
  if (is_char_token(prev) || is_char_token(next)) return false;
  if (next.size() == 1 && std::string(".,:;?!)").find(next[0]) != std::string::npos) return false;
  if (prev == "(") return false;
  return true;
}

struct RawToken {
  std::string text;
  bool preceded_by_space = false;
};

std::vector<RawToken> scan(const std::string& text) {
  std::vector<RawToken> out;
  std::size_t i = 0;
  bool pending_space = false;
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = true;
      ++i;
      continue;
    }
    RawToken tok;
    tok.preceded_by_space = pending_space;
    pending_space = false;
    if (c == '(' && i + 2 < text.size() &&
        std::isalnum(static_cast<unsigned char>(text[i + 1])) && text[i + 2] == ')') {
      tok.text = text.substr(i, 3);  // option labels "(A)" are atomic
      i += 3;
    } else if (is_word_char(c)) {
      std::size_t j = i;
      while (j < text.size() && is_word_char(text[j])) ++j;
      tok.text = text.substr(i, j - i);
      i = j;
    } else {
      tok.text = std::string(1, c);
      ++i;
    }
    out.push_back(std::move(tok));
  }
  return out;
}

}  // namespace

std::vector<std::string> Vocab::split_words(const std::string& text) {
  std::vector<std::string> out;
  for (auto& tok : scan(text)) out.push_back(std::move(tok.text));
  return out;
}

Vocab Vocab::build(const std::vector<std::string>& texts, const PromptTemplates& templates,
                   bool char_fallback) {
  Vocab v;
  v.char_fallback_ = char_fallback;
  v.id_to_token_ = {"<pad>", "<bos>", "<eos>", "<sep>"};
  v.correct_id_ = static_cast<int>(v.id_to_token_.size());
  v.id_to_token_.push_back(templates.correct_text);
  v.wrong_id_ = static_cast<int>(v.id_to_token_.size());
  v.id_to_token_.push_back(templates.wrong_text);

  std::set<std::string> content;
  for (const auto& text : texts) {
    for (auto& w : split_words(text)) content.insert(std::move(w));
  }
  for (const auto& w : content) v.id_to_token_.push_back(w);
  if (char_fallback) {
    for (int c = 32; c < 127; ++c) {
      v.id_to_token_.push_back(std::string("~") + static_cast<char>(c));
    }
  }
  for (std::size_t i = 0; i < v.id_to_token_.size(); ++i) {
    const auto [it, inserted] =
        v.token_to_id_.emplace(v.id_to_token_[i], static_cast<int>(i));
    if (!inserted) throw std::logic_error("vocabulary token collision: " + v.id_to_token_[i]);
  }
  return v;
}

Vocab Vocab::build_for_run(const std::vector<TaskInstance>& train,
                           const std::vector<TaskInstance>& eval, TaskKind kind,
                           const PromptTemplates& templates, bool char_fallback) {
  std::vector<std::string> texts;
  for (const auto* part : {&train, &eval}) {
    for (const auto& inst : *part) {
      texts.push_back(inst.query);
      for (const auto& opt : inst.options) texts.push_back(opt);
    }
  }
  for (const auto& inst : train) texts.push_back(inst.gold_answer);
  for (auto& extra : answer_alphabet(kind)) texts.push_back(std::move(extra));
  return build(texts, templates, char_fallback);
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens, bool char_fallback) {
  if (tokens.size() < 6 || tokens[0] != "<pad>" || tokens[1] != "<bos>" ||
      tokens[2] != "<eos>" || tokens[3] != "<sep>") {
    throw std::runtime_error("token list does not start with the special tokens");
  }
  Vocab v;
  v.char_fallback_ = char_fallback;
  v.id_to_token_ = tokens;
  v.correct_id_ = 4;
  v.wrong_id_ = 5;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto [it, inserted] = v.token_to_id_.emplace(tokens[i], static_cast<int>(i));
    if (!inserted) throw std::runtime_error("duplicate token in serialized vocabulary");
  }
  return v;
}

int Vocab::id(const std::string& token) const {
  const auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? -1 : it->second;
}

std::vector<int> Vocab::encode(const std::string& text) const {
  std::vector<int> ids;
  std::string prev;
  // An explicit space character token keeps the round trip exact wherever the
  // joiner would glue two tokens that were separated in the source text.
  const auto emit_space_if_needed = [&](const std::string& next_repr, bool separated) {
    if (!separated || prev.empty() || join_with_space(prev, next_repr)) return;
    const auto space_it = token_to_id_.find("~ ");
    if (space_it != token_to_id_.end()) {
      ids.push_back(space_it->second);
      prev = "~ ";
    }
  };
  for (const auto& tok : scan(text)) {
    const auto it = token_to_id_.find(tok.text);
    if (it != token_to_id_.end()) {
      emit_space_if_needed(tok.text, tok.preceded_by_space);
      ids.push_back(it->second);
      prev = tok.text;
      continue;
    }
    if (!char_fallback_) {
      throw std::runtime_error("token not in vocabulary: '" + tok.text + "'");
    }
    emit_space_if_needed(std::string("~") + tok.text[0], tok.preceded_by_space);
    for (char c : tok.text) {
      const auto cit = token_to_id_.find(std::string("~") + c);
      if (cit == token_to_id_.end()) {
        throw std::runtime_error(std::string("character not representable: '") + c + "'");
      }
      ids.push_back(cit->second);
    }
    prev = std::string("~") + tok.text.back();
  }
  return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::string out;
  std::string prev;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kBos || id == kSep) continue;
    if (id < 0 || id >= size()) throw std::out_of_range("token id out of range");
    const std::string& tok = id_to_token_[static_cast<std::size_t>(id)];
    if (join_with_space(prev, tok)) out += ' ';
    out += is_char_token(tok) ? tok.substr(1) : tok;
    prev = tok;
  }
  return out;
}

}  // namespace hir
