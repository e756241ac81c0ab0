#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "affectgen/emotion.hpp"
#include "affectgen/lexicon.hpp"
#include "affectgen/vocabulary.hpp"

namespace affectgen {

// How a word that tokenizes into several pieces enters a bag.
enum class Projection {
  kFirstSubtoken,  // only the first piece
  kAllSubtokens,   // every in-vocabulary piece, each with the word's intensity
};

// Emotion bag: parallel arrays sorted by token id. A token reached by several
// words keeps the largest intensity and that word as its source.
struct AffectBag {
  Emotion emotion = Emotion::kJoy;
  std::vector<TokenId> token_ids;
  std::vector<double> intensities;
  std::vector<std::string> source_words;
  std::vector<std::string> unprojected_words;

  std::size_t size() const { return token_ids.size(); }
};

struct TopicBag {
  std::string name;
  std::vector<TokenId> token_ids;  // sorted, unique
  std::vector<std::string> source_words;
  std::vector<std::string> unprojected_words;

  std::size_t size() const { return token_ids.size(); }
};

// Throws Error when no lexicon word of `emotion` maps into the vocabulary.
AffectBag build_affect_bag(const Lexicon& lexicon, Emotion emotion, const Vocabulary& vocab,
                           Projection projection = Projection::kFirstSubtoken);

TopicBag build_topic_bag(std::string name, std::span<const std::string> words,
                         const Vocabulary& vocab,
                         Projection projection = Projection::kFirstSubtoken);

// Resolves a built-in topic name first, then a word-list file (one word per
// line, '#' comments allowed).
TopicBag load_topic_bag(std::string_view name_or_path, const Vocabulary& vocab,
                        Projection projection = Projection::kFirstSubtoken);

std::vector<std::string> builtin_topic_names();
std::optional<std::vector<std::string>> builtin_topic_words(std::string_view name);

}  // namespace affectgen
