#include "affectgen/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "affectgen/error.hpp"
#include "affectgen/random.hpp"

namespace affectgen {
namespace {

class Adam {
 public:
  Adam(const TransformerWeights& shape, double lr)
      : m_(shape), v_(shape), lr_(lr) {
    m_.for_each([](std::string_view, auto& t) { t.setZero(); });
    v_.for_each([](std::string_view, auto& t) { t.setZero(); });
  }

  void step(TransformerWeights& weights, TransformerWeights& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    std::vector<double*> w, g, m, v;
    std::vector<std::size_t> sizes;
    weights.for_each([&](std::string_view, auto& t) { w.push_back(t.data()); sizes.push_back(static_cast<std::size_t>(t.size())); });
    grads.for_each([&](std::string_view, auto& t) { g.push_back(t.data()); });
    m_.for_each([&](std::string_view, auto& t) { m.push_back(t.data()); });
    v_.for_each([&](std::string_view, auto& t) { v.push_back(t.data()); });
    for (std::size_t k = 0; k < w.size(); ++k) {
      for (std::size_t i = 0; i < sizes[k]; ++i) {
        const double gi = g[k][i];
        m[k][i] = kBeta1 * m[k][i] + (1.0 - kBeta1) * gi;
        v[k][i] = kBeta2 * v[k][i] + (1.0 - kBeta2) * gi * gi;
        w[k][i] -= lr_ * (m[k][i] / c1) / (std::sqrt(v[k][i] / c2) + kEps);
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  TransformerWeights m_, v_;
  double lr_;
  std::size_t t_ = 0;
};

double global_norm(const TransformerWeights& grads) {
  double sq = 0.0;
  grads.for_each([&](std::string_view, const auto& t) { sq += t.squaredNorm(); });
  return std::sqrt(sq);
}

}  // namespace

TrainResult train_reference(std::span<const std::string> corpus_words, const ReferenceLMConfig& config,
                            const TrainOptions& options) {
  if (corpus_words.size() < kMinCorpusTokens) {
    throw Error("corpus has " + std::to_string(corpus_words.size()) + " tokens; at least " +
                std::to_string(kMinCorpusTokens) + " are required");
  }
  if (options.epochs == 0) throw ConfigError("epochs", "must be positive");
  if (options.batch_sequences == 0) throw ConfigError("batch_sequences", "must be positive");
  config.validate();

  Vocabulary vocab = Vocabulary::build(corpus_words, config.vocab_size, options.min_count);
  const std::vector<TokenId> ids = vocab.encode_words(corpus_words);
  ReferenceModel model(config, std::move(vocab));

  // Window i covers ids[i*C .. i*C+C] (C inputs plus the shifted targets).
  const std::size_t window = config.context;
  const std::size_t num_windows = (ids.size() - 1) / window;
  std::vector<std::size_t> order(num_windows);
  std::iota(order.begin(), order.end(), std::size_t{0});

  Adam adam(model.weights(), options.learning_rate);
  Rng rng(derive_seed(config.seed, 0x7EA1));
  TrainResult result{std::move(model), {}};
  ReferenceModel& m = result.model;

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = num_windows; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < num_windows; start += options.batch_sequences) {
      const std::size_t end = std::min(num_windows, start + options.batch_sequences);
      auto grads = TransformerWeights::zeros(m.config());
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t offset = order[b] * window;
        const std::span<const TokenId> inputs(ids.data() + offset, window);
        const std::span<const TokenId> targets(ids.data() + offset + 1, window);
        epoch_loss += m.accumulate_sequence_gradient(inputs, targets, grads, scale);
      }
      if (options.grad_clip > 0.0) {
        const double norm = global_norm(grads);
        if (norm > options.grad_clip) {
          const double k = options.grad_clip / norm;
          grads.for_each([&](std::string_view, auto& t) { t *= k; });
        }
      }
      adam.step(m.mutable_weights(), grads);
    }
    epoch_loss /= static_cast<double>(num_windows);
    result.epoch_losses.push_back(epoch_loss);
    if (options.on_epoch) options.on_epoch(epoch, epoch_loss);
  }
  return result;
}

TrainResult train_reference_from_text(std::string_view corpus_text, const ReferenceLMConfig& config,
                                      const TrainOptions& options) {
  const auto words = tokenize_words(corpus_text);
  return train_reference(words, config, options);
}

}  // namespace affectgen
