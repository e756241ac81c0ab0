#include "affectgen/lexicon.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "affectgen/error.hpp"
#include "affectgen/vocabulary.hpp"

namespace affectgen {
namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    fields.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_double(std::string_view s) {
  double value = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return value;
}

}  // namespace

Lexicon::Lexicon(std::vector<LexiconEntry> entries) : entries_(std::move(entries)) {
  for (auto& e : entries_) {
    e.word = to_lower(e.word);
    if (e.word.empty()) throw Error("lexicon entry with empty word");
    if (!(e.intensity >= 0.0 && e.intensity <= 1.0)) {
      throw Error("intensity of '" + e.word + "' outside [0,1]");
    }
  }
  std::sort(entries_.begin(), entries_.end());
  auto dup = std::adjacent_find(entries_.begin(), entries_.end(), [](const auto& a, const auto& b) {
    return a.word == b.word && a.emotion == b.emotion;
  });
  if (dup != entries_.end()) {
    throw Error("duplicate lexicon entry (" + dup->word + ", " +
                std::string(to_string(dup->emotion)) + ")");
  }
}

Lexicon Lexicon::parse(std::string_view text, const std::string& source) {
  std::vector<LexiconEntry> entries;
  // (word, emotion) -> line, for duplicate reporting.
  std::vector<std::pair<std::pair<std::string, Emotion>, std::size_t>> seen;
  std::size_t line_no = 0;
  bool first_data_line = true;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    const std::string_view raw = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;

    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') {
      if (eol == text.size()) break;
      continue;
    }
    const auto fields = split_tabs(line);
    if (first_data_line && fields.size() == 3 && fields[0] == "word" && fields[1] == "emotion") {
      first_data_line = false;
      continue;
    }
    first_data_line = false;
    if (fields.size() != 3) {
      throw ParseError(source, line_no,
                       "expected 3 tab-separated fields, got " + std::to_string(fields.size()));
    }
    const std::string word = to_lower(trim(fields[0]));
    if (word.empty()) throw ParseError(source, line_no, "empty word");
    const auto emotion = parse_emotion(to_lower(trim(fields[1])));
    if (!emotion) {
      throw ParseError(source, line_no,
                       "unknown emotion '" + std::string(fields[1]) + "' (expected one of " +
                           emotion_names_joined() + ")");
    }
    const auto score = parse_double(trim(fields[2]));
    if (!score) throw ParseError(source, line_no, "score '" + std::string(fields[2]) + "' is not a number");
    if (!(*score >= 0.0 && *score <= 1.0)) {
      throw ParseError(source, line_no, "score " + std::string(trim(fields[2])) + " out of range [0,1]");
    }
    entries.push_back({word, *emotion, *score});
    seen.push_back({{word, *emotion}, line_no});
    if (eol == text.size()) break;
  }
  if (entries.empty()) throw ParseError(source, 0, "lexicon is empty");

  std::sort(seen.begin(), seen.end());
  for (std::size_t i = 1; i < seen.size(); ++i) {
    if (seen[i].first == seen[i - 1].first) {
      throw ParseError(source, std::max(seen[i].second, seen[i - 1].second),
                       "duplicate entry for (" + seen[i].first.first + ", " +
                           std::string(to_string(seen[i].first.second)) + ")");
    }
  }
  return Lexicon(std::move(entries));
}

std::size_t Lexicon::count(Emotion emotion) const {
  return static_cast<std::size_t>(std::count_if(
      entries_.begin(), entries_.end(), [&](const auto& e) { return e.emotion == emotion; }));
}

std::optional<double> Lexicon::intensity(std::string_view word, Emotion emotion) const {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), std::pair{word, emotion},
                             [](const LexiconEntry& e, const auto& key) {
                               if (e.word != key.first) return std::string_view(e.word) < key.first;
                               return e.emotion < key.second;
                             });
  if (it != entries_.end() && it->word == word && it->emotion == emotion) return it->intensity;
  return std::nullopt;
}

std::string Lexicon::to_tsv() const {
  std::ostringstream out;
  out.precision(17);
  for (const auto& e : entries_) {
    out << e.word << '\t' << to_string(e.emotion) << '\t' << e.intensity << '\n';
  }
  return out.str();
}

Lexicon load_nrc_eil(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open lexicon file '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return Lexicon::parse(buffer.str(), path.string());
}

}  // namespace affectgen
