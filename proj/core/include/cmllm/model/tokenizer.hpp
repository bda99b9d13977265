#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cmllm::model {

inline constexpr int kOovBuckets = 256;

struct PromptTokens {
  std::vector<int> ids;
  std::uint32_t vocab_id = 0;

  std::size_t size() const { return ids.size(); }
};

/// Splits text into words ([A-Za-z_]+), single digits and single punctuation
/// characters. Whitespace only separates.
std::vector<std::string> split_tokens(std::string_view text);

std::uint32_t fnv1a(std::string_view text);

/// Frozen word-level tokenizer. Known tokens get ids [0, known_size()); any
/// other token hashes into one of kOovBuckets ids right after them.
class Tokenizer {
 public:
  explicit Tokenizer(std::vector<std::string> vocabulary);

  /// Vocabulary of the built-in prompt template corpus.
  static const Tokenizer& builtin();

  PromptTokens tokenize(std::string_view text) const;
  /// Debug inverse: known tokens are joined with the spacing rules used by the
  /// templates; OOV ids render as <oovN>.
  std::string detokenize(const std::vector<int>& ids) const;

  int known_size() const { return static_cast<int>(words_.size()); }
  int vocab_size() const { return known_size() + kOovBuckets; }
  bool is_oov(int id) const { return id >= known_size() && id < vocab_size(); }
  std::uint32_t vocab_id() const { return vocab_id_; }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
  std::uint32_t vocab_id_ = 0;
};

}  // namespace cmllm::model
