#include "affectgen/bags.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>

#include "affectgen/error.hpp"

namespace affectgen {
namespace {

std::vector<TokenId> project(const Vocabulary& vocab, std::string_view word, Projection projection) {
  const auto pieces = vocab.project_word(word);
  std::vector<TokenId> ids;
  if (pieces.empty()) return ids;
  if (projection == Projection::kFirstSubtoken) {
    if (pieces.front() != Vocabulary::kUnk) ids.push_back(pieces.front());
    return ids;
  }
  for (TokenId id : pieces) {
    if (id != Vocabulary::kUnk) ids.push_back(id);
  }
  return ids;
}

}  // namespace

AffectBag build_affect_bag(const Lexicon& lexicon, Emotion emotion, const Vocabulary& vocab,
                           Projection projection) {
  if (lexicon.count(emotion) == 0) {
    throw Error("lexicon has no entries for emotion '" + std::string(to_string(emotion)) + "'");
  }
  struct Best {
    double intensity;
    std::string word;
  };
  std::map<TokenId, Best> merged;
  AffectBag bag;
  bag.emotion = emotion;
  for (const auto& entry : lexicon.entries()) {
    if (entry.emotion != emotion) continue;
    const auto ids = project(vocab, entry.word, projection);
    if (ids.empty()) {
      bag.unprojected_words.push_back(entry.word);
      continue;
    }
    for (TokenId id : ids) {
      auto [it, inserted] = merged.try_emplace(id, Best{entry.intensity, entry.word});
      if (!inserted && entry.intensity > it->second.intensity) it->second = {entry.intensity, entry.word};
    }
  }
  if (merged.empty()) {
    throw Error("no '" + std::string(to_string(emotion)) +
                "' lexicon word is in the model vocabulary");
  }
  for (auto& [id, best] : merged) {
    bag.token_ids.push_back(id);
    bag.intensities.push_back(best.intensity);
    bag.source_words.push_back(std::move(best.word));
  }
  return bag;
}

TopicBag build_topic_bag(std::string name, std::span<const std::string> words, const Vocabulary& vocab,
                         Projection projection) {
  std::map<TokenId, std::string> merged;
  TopicBag bag;
  bag.name = std::move(name);
  for (const auto& raw : words) {
    const std::string word = to_lower(raw);
    const auto ids = project(vocab, word, projection);
    if (ids.empty()) {
      bag.unprojected_words.push_back(word);
      continue;
    }
    for (TokenId id : ids) merged.try_emplace(id, word);
  }
  if (merged.empty()) {
    throw Error("topic '" + bag.name + "' has no word in the model vocabulary");
  }
  for (auto& [id, word] : merged) {
    bag.token_ids.push_back(id);
    bag.source_words.push_back(std::move(word));
  }
  return bag;
}

TopicBag load_topic_bag(std::string_view name_or_path, const Vocabulary& vocab, Projection projection) {
  if (auto words = builtin_topic_words(name_or_path)) {
    return build_topic_bag(std::string(name_or_path), *words, vocab, projection);
  }
  const std::filesystem::path path(name_or_path);
  std::ifstream in(path);
  if (!in) {
    throw IoError("topic '" + std::string(name_or_path) +
                  "' is neither a built-in topic nor a readable file: " + path.string());
  }
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    std::size_t start = line.find_first_not_of(' ');
    if (start == std::string::npos || line[start] == '#') continue;
    words.push_back(line.substr(start));
  }
  if (words.empty()) throw Error("topic word list '" + path.string() + "' is empty");
  return build_topic_bag(path.stem().string(), words, vocab, projection);
}

}  // namespace affectgen
