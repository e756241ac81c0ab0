#include "affectgen/vocabulary.hpp"

#include <algorithm>
#include <map>

#include "affectgen/error.hpp"

namespace affectgen {
namespace {

constexpr std::string_view kPunctuation = ".,;:!?";

bool is_ascii_word_char(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

// Length of the UTF-8 sequence starting with lead byte c (1 for invalid bytes).
std::size_t utf8_length(unsigned char c) {
  if (c >= 0xF0 && c < 0xF8) return 4;
  if (c >= 0xE0) return 3;
  if (c >= 0xC0) return 2;
  return 1;
}

}  // namespace

std::string to_lower(std::string_view text) {
  std::string out(text);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

bool is_punctuation_token(std::string_view token) {
  return token.size() == 1 && kPunctuation.find(token[0]) != std::string_view::npos;
}

std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    while (!word.empty() && word.back() == '\'') word.pop_back();
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };

  for (std::size_t i = 0; i < text.size();) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (c < 0x80) {
      if (is_ascii_word_char(c)) {
        word.push_back(static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c));
      } else if (c == '\'' && !word.empty()) {
        word.push_back('\'');
      } else {
        flush();
        if (kPunctuation.find(static_cast<char>(c)) != std::string_view::npos) {
          out.emplace_back(1, static_cast<char>(c));
        }
      }
      ++i;
      continue;
    }
    const std::size_t len = std::min(utf8_length(c), text.size() - i);
    const std::string_view seq = text.substr(i, len);
    // U+2000..U+206F (general punctuation) separates words, except the right
    // single quotation mark used as an apostrophe.
    if (seq == "\xE2\x80\x99") {
      if (!word.empty()) word.push_back('\'');
    } else if (len == 3 && c == 0xE2 && (static_cast<unsigned char>(seq[1]) == 0x80 ||
                                         static_cast<unsigned char>(seq[1]) == 0x81)) {
      flush();
    } else if (seq == "\xC2\xA0") {  // no-break space
      flush();
    } else {
      word.append(seq);
    }
    i += len;
  }
  flush();
  return out;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{std::string(kUnkToken)}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.empty() || tokens_[0] != kUnkToken) {
    throw Error("vocabulary must start with " + std::string(kUnkToken));
  }
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw Error("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::build(std::span<const std::string> words, std::size_t max_size,
                             std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& w : words) {
    if (w != kUnkToken) ++counts[w];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  std::vector<std::string> tokens{std::string(kUnkToken)};
  for (auto& [word, count] : ranked) {
    if (tokens.size() >= max_size || count < min_count) break;
    tokens.push_back(word);
  }
  return Vocabulary(std::move(tokens));
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) throw Error("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id_or_unk(std::string_view token) const {
  return find(token).value_or(kUnk);
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  const auto words = tokenize_words(text);
  return encode_words(words);
}

std::vector<TokenId> Vocabulary::encode_words(std::span<const std::string> words) const {
  std::vector<TokenId> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id_or_unk(w));
  return ids;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    const std::string& tok = token(id);
    if (!out.empty() && !is_punctuation_token(tok)) out.push_back(' ');
    out += tok;
  }
  return out;
}

std::vector<TokenId> Vocabulary::project_word(std::string_view word) const {
  std::vector<TokenId> ids;
  for (const auto& piece : tokenize_words(word)) ids.push_back(id_or_unk(piece));
  return ids;
}

}  // namespace affectgen
