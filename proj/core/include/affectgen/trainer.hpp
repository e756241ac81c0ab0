#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "affectgen/model.hpp"

namespace affectgen {

struct TrainOptions {
  std::size_t epochs = 4;
  std::size_t batch_sequences = 8;
  double learning_rate = 3e-3;
  double grad_clip = 1.0;  // global L2 norm; <= 0 disables
  std::size_t min_count = 2;  // vocabulary frequency floor
  // Called once per epoch with (epoch index, mean training loss).
  std::function<void(std::size_t, double)> on_epoch;
};

struct TrainResult {
  ReferenceModel model;
  std::vector<double> epoch_losses;  // mean cross-entropy per epoch, nats
};

inline constexpr std::size_t kMinCorpusTokens = 10'000;

// Builds a word-level vocabulary capped at config.vocab_size from the corpus
// words and trains the reference model with Adam on non-overlapping windows of
// config.context tokens, shuffled per epoch from config.seed. Deterministic for
// a given (corpus, config, options). Throws Error when the corpus holds fewer
// than kMinCorpusTokens tokens.
TrainResult train_reference(std::span<const std::string> corpus_words, const ReferenceLMConfig& config,
                            const TrainOptions& options);

TrainResult train_reference_from_text(std::string_view corpus_text, const ReferenceLMConfig& config,
                                      const TrainOptions& options);

}  // namespace affectgen
