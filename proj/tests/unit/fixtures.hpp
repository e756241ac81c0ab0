#pragma once

#include <string>
#include <vector>

#include "affectgen/model.hpp"
#include "affectgen/random.hpp"

namespace affectgen::testing {

// "<unk>", "a", "b", ... with `size` entries in total.
inline Vocabulary letter_vocab(std::size_t size) {
  std::vector<std::string> tokens{std::string(Vocabulary::kUnkToken)};
  for (std::size_t i = 1; i < size; ++i) tokens.push_back(std::string(1, static_cast<char>('a' + i - 1)));
  return Vocabulary(tokens);
}

// Reference model whose weights are redrawn with a larger spread than the
// training init, so outputs are far from uniform and every path carries signal.
inline ReferenceModel spread_model(std::size_t vocab_size, std::uint64_t seed, double stddev = 0.3,
                                   std::size_t layers = 2, std::size_t embed_dim = 8, std::size_t heads = 2,
                                   std::size_t context = 16) {
  ReferenceLMConfig config;
  config.layers = layers;
  config.heads = heads;
  config.embed_dim = embed_dim;
  config.context = context;
  config.vocab_size = vocab_size;
  config.seed = seed;
  ReferenceModel model(config, letter_vocab(vocab_size));
  Rng rng(derive_seed(seed, 99));
  model.mutable_weights().for_each([&](std::string_view name, auto& t) {
    const bool gain = name.find("gain") != std::string_view::npos;
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = (gain ? 1.0 : 0.0) + stddev * rng.normal();
  });
  return model;
}

inline HistoryState history_of(const LanguageModel& model, const std::vector<TokenId>& tokens) {
  HistoryState h = model.empty_history();
  for (TokenId t : tokens) h = model.forward(t, h).next_history;
  return h;
}

}  // namespace affectgen::testing
