#include "cmllm/model/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "cmllm/error.hpp"
#include "cmllm/model/prompts.hpp"

namespace cmllm::model {
namespace {

bool word_char(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }
bool space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool attaches_left(const std::string& tok) {
  return tok == "." || tok == "," || tok == ":" || tok == ";" || tok == ")" || tok == "?" || tok == "!";
}
bool attaches_right(const std::string& tok) { return tok == "(" || tok == "-"; }
bool is_digit_token(const std::string& tok) { return tok.size() == 1 && digit(tok[0]); }

}  // namespace

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (space(c)) {
      ++i;
    } else if (word_char(c)) {
      std::size_t j = i;
      while (j < text.size() && word_char(text[j])) ++j;
      out.emplace_back(text.substr(i, j - i));
      i = j;
    } else {
      out.emplace_back(1, c);
      ++i;
    }
  }
  return out;
}

std::uint32_t fnv1a(std::string_view text) {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : text) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

Tokenizer::Tokenizer(std::vector<std::string> vocabulary) {
  std::set<std::string> uniq(vocabulary.begin(), vocabulary.end());
  words_.assign(uniq.begin(), uniq.end());
  std::string joined;
  for (std::size_t i = 0; i < words_.size(); ++i) {
    index_.emplace(words_[i], static_cast<int>(i));
    joined += words_[i];
    joined += '\n';
  }
  vocab_id_ = fnv1a(joined);
}

const Tokenizer& Tokenizer::builtin() {
  static const Tokenizer tok(template_corpus_tokens());
  return tok;
}

PromptTokens Tokenizer::tokenize(std::string_view text) const {
  PromptTokens out;
  out.vocab_id = vocab_id_;
  for (const auto& t : split_tokens(text)) {
    const auto it = index_.find(t);
    out.ids.push_back(it != index_.end() ? it->second
                                         : known_size() + static_cast<int>(fnv1a(t) % kOovBuckets));
  }
  if (out.ids.empty()) throw InputError("cannot tokenize empty prompt text");
  return out;
}

std::string Tokenizer::detokenize(const std::vector<int>& ids) const {
  std::string out;
  std::string prev, prev2;
  for (int id : ids) {
    if (id < 0 || id >= vocab_size()) throw InputError("token id " + std::to_string(id) + " outside vocabulary");
    const std::string tok =
        id < known_size() ? words_[static_cast<std::size_t>(id)] : "<oov" + std::to_string(id - known_size()) + ">";
    bool glue = out.empty() || attaches_left(tok) || attaches_right(prev);
    if (is_digit_token(tok) && (is_digit_token(prev) || (prev == "." && is_digit_token(prev2)))) glue = true;
    if (!glue) out += ' ';
    out += tok;
    prev2 = prev;
    prev = tok;
  }
  return out;
}

}  // namespace cmllm::model
