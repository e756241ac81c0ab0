#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "affectgen/emotion.hpp"

namespace affectgen {

struct LexiconEntry {
  std::string word;  // lowercase
  Emotion emotion = Emotion::kJoy;
  double intensity = 0.0;  // [0, 1]

  auto operator<=>(const LexiconEntry&) const = default;
};

// Emotion-intensity lexicon. Entries are kept sorted by (word, emotion) so two
// lexicons parsed from the same lines in any order compare equal.
class Lexicon {
 public:
  Lexicon() = default;
  // Validates intensities and (word, emotion) uniqueness; lowercases words.
  explicit Lexicon(std::vector<LexiconEntry> entries);

  // Parses `word<TAB>emotion<TAB>score` lines. Blank lines and lines starting
  // with '#' are skipped, as is a leading "word<TAB>emotion<TAB>..." header.
  static Lexicon parse(std::string_view text, const std::string& source = "<memory>");

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t count(Emotion emotion) const;
  std::span<const LexiconEntry> entries() const { return entries_; }
  std::optional<double> intensity(std::string_view word, Emotion emotion) const;

  // Serializes back to the TSV format accepted by parse().
  std::string to_tsv() const;

  bool operator==(const Lexicon&) const = default;

 private:
  std::vector<LexiconEntry> entries_;
};

// Reads an NRC Emotion Intensity Lexicon style file. Throws ParseError on a
// malformed line (naming the line) or an empty file, IoError when unreadable.
Lexicon load_nrc_eil(const std::filesystem::path& path);

}  // namespace affectgen
