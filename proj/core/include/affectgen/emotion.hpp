#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace affectgen {

// Plutchik's eight basic emotions.
enum class Emotion : std::uint8_t {
  kJoy,
  kTrust,
  kFear,
  kSurprise,
  kSadness,
  kDisgust,
  kAnger,
  kAnticipation,
};

inline constexpr std::array<Emotion, 8> kAllEmotions = {
    Emotion::kJoy,     Emotion::kTrust,   Emotion::kFear,  Emotion::kSurprise,
    Emotion::kSadness, Emotion::kDisgust, Emotion::kAnger, Emotion::kAnticipation,
};

std::string_view to_string(Emotion emotion);

// Lowercase names only ("joy", not "Joy").
std::optional<Emotion> parse_emotion(std::string_view name);

// "joy, trust, fear, ..." for usage messages.
std::string emotion_names_joined(std::string_view separator = ", ");

}  // namespace affectgen
