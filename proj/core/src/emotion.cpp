#include "affectgen/emotion.hpp"

namespace affectgen {

std::string_view to_string(Emotion emotion) {
  switch (emotion) {
    case Emotion::kJoy: return "joy";
    case Emotion::kTrust: return "trust";
    case Emotion::kFear: return "fear";
    case Emotion::kSurprise: return "surprise";
    case Emotion::kSadness: return "sadness";
    case Emotion::kDisgust: return "disgust";
    case Emotion::kAnger: return "anger";
    case Emotion::kAnticipation: return "anticipation";
  }
  return "unknown";
}

std::optional<Emotion> parse_emotion(std::string_view name) {
  for (Emotion e : kAllEmotions) {
    if (to_string(e) == name) return e;
  }
  return std::nullopt;
}

std::string emotion_names_joined(std::string_view separator) {
  std::string out;
  for (Emotion e : kAllEmotions) {
    if (!out.empty()) out += separator;
    out += to_string(e);
  }
  return out;
}

}  // namespace affectgen
