#include <cmath>

#include "affectgen/error.hpp"
#include "affectgen/model.hpp"

namespace affectgen {
namespace {

// Sum of -log p(tokens[i] | tokens[..i]) for i in [first_scored, size).
double scored_nll(const LanguageModel& model, std::span<const TokenId> tokens, std::size_t first_scored) {
  const std::size_t context = model.context_length();
  const std::size_t keep = std::max<std::size_t>(1, context / 2);
  HistoryState history = model.empty_history();
  double nll = 0.0;
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    if (history.length() >= context) {
      // Re-encode the most recent tokens before position i.
      history = model.empty_history();
      for (std::size_t j = i - keep + 1; j < i; ++j) history = model.forward(tokens[j], history).next_history;
    }
    StepOutput out = model.forward(tokens[i], history);
    if (i + 1 >= first_scored) {
      const Eigen::VectorXd p = softmax(out.logits);
      nll -= std::log(std::max(p(tokens[i + 1]), 1e-300));
    }
    history = std::move(out.next_history);
  }
  return nll;
}

}  // namespace

double perplexity(const LanguageModel& model, std::span<const TokenId> tokens) {
  if (tokens.size() < 2) throw Error("perplexity needs at least 2 tokens");
  return std::exp(scored_nll(model, tokens, 1) / static_cast<double>(tokens.size() - 1));
}

double continuation_perplexity(const LanguageModel& model, std::span<const TokenId> prompt,
                               std::span<const TokenId> continuation) {
  if (prompt.empty()) throw Error("continuation perplexity needs a non-empty prompt");
  if (continuation.empty()) throw Error("continuation perplexity needs at least 1 continuation token");
  std::vector<TokenId> all(prompt.begin(), prompt.end());
  all.insert(all.end(), continuation.begin(), continuation.end());
  return std::exp(scored_nll(model, all, prompt.size()) / static_cast<double>(continuation.size()));
}

}  // namespace affectgen
