#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace affectgen {

using TokenId = std::uint32_t;

// Splits UTF-8 text into lowercase word and punctuation tokens. Words are runs
// of ASCII alphanumerics, non-ASCII letters and inner apostrophes (curly
// apostrophes are folded to '\''). The marks . , ; : ! ? become tokens of their
// own; every other symbol separates words and is dropped.
std::vector<std::string> tokenize_words(std::string_view text);

// ASCII lowercase; other bytes untouched.
std::string to_lower(std::string_view text);

// Word-level vocabulary with a reserved unknown token at id 0.
class Vocabulary {
 public:
  static constexpr TokenId kUnk = 0;
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary();
  // tokens[0] must be kUnkToken and every token must be unique.
  explicit Vocabulary(std::vector<std::string> tokens);

  // Keeps the most frequent words (ties broken lexicographically), at most
  // max_size entries including <unk>, each seen at least min_count times.
  static Vocabulary build(std::span<const std::string> words, std::size_t max_size,
                          std::size_t min_count = 1);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;
  TokenId id_or_unk(std::string_view token) const;

  std::vector<TokenId> encode(std::string_view text) const;
  std::vector<TokenId> encode_words(std::span<const std::string> words) const;
  // Joins tokens with single spaces, without a space before punctuation.
  std::string decode(std::span<const TokenId> ids) const;

  // Token ids a single (lexicon) word tokenizes to, in order; pieces missing
  // from the vocabulary come back as kUnk. The reference tokenizer is
  // word-level, so this is one id unless the word contains separators.
  std::vector<TokenId> project_word(std::string_view word) const;

  const std::vector<std::string>& tokens() const { return tokens_; }
  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

bool is_punctuation_token(std::string_view token);

}  // namespace affectgen
