#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "affectgen/history.hpp"
#include "affectgen/vocabulary.hpp"

namespace affectgen {

// Result of consuming one token.
struct StepOutput {
  Eigen::VectorXd output_embedding;  // final hidden state fed to the output projection
  Eigen::VectorXd logits;            // vocab_size
  HistoryState next_history;         // input history extended by one position

  Eigen::VectorXd probabilities() const;
};

// Scalar loss of a next-token probability vector. Returns the loss and writes
// d loss / d probs into `grad` (already sized to the vocabulary, zeroed).
using ProbabilityLoss = std::function<double(const Eigen::VectorXd& probs, Eigen::VectorXd& grad)>;

struct LossGradient {
  double loss = 0.0;
  HistoryState gradient;  // d loss / d perturbation, shape of the history
  Eigen::VectorXd probs;  // next-token distribution at history + perturbation
  StepOutput output;      // the forward pass at history + perturbation
};

// The narrow interface the steering engine drives. Implementations are
// immutable after construction and may be shared across threads.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual const Vocabulary& vocabulary() const = 0;
  virtual std::size_t context_length() const = 0;
  virtual HistoryState empty_history() const = 0;
  virtual std::string model_id() const = 0;

  // Throws ContextOverflowError when history.length() >= context_length().
  virtual StepOutput forward(TokenId token, const HistoryState& history) const = 0;

  // Gradient of loss(softmax(logits of forward(token, history + perturbation)))
  // with respect to the perturbation. Throws NonFiniteError on NaN/inf.
  virtual LossGradient loss_gradient(const HistoryState& history, const HistoryState& perturbation,
                                     TokenId token, const ProbabilityLoss& loss) const = 0;
};

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

struct ReferenceLMConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t embed_dim = 64;
  std::size_t context = 64;
  std::size_t vocab_size = 4096;
  std::uint64_t seed = 1;

  // Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const ReferenceLMConfig&) const = default;
};

// Parameters of the reference transformer. Matrices map row vectors:
// y = x * W + b.
struct TransformerWeights {
  using Matrix = Eigen::MatrixXd;
  using Row = Eigen::RowVectorXd;

  struct Layer {
    Row ln1_gain, ln1_bias;
    Matrix w_query, w_key, w_value, w_attn_out;
    Row b_query, b_key, b_value, b_attn_out;
    Row ln2_gain, ln2_bias;
    Matrix w_fc;  // d x 4d
    Row b_fc;
    Matrix w_proj;  // 4d x d
    Row b_proj;
  };

  Matrix token_embedding;     // vocab x d
  Matrix position_embedding;  // context x d
  std::vector<Layer> layers;
  Row lnf_gain, lnf_bias;
  Matrix w_out;  // d x vocab
  Row b_out;

  static TransformerWeights zeros(const ReferenceLMConfig& config);

  // Visits every tensor as f(name, tensor) in a fixed order.
  template <class F>
  void for_each(F&& f) {
    visit(*this, std::forward<F>(f));
  }
  template <class F>
  void for_each(F&& f) const {
    visit(*this, std::forward<F>(f));
  }

  std::size_t parameter_count() const;

 private:
  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("token_embedding", self.token_embedding);
    f("position_embedding", self.position_embedding);
    for (std::size_t i = 0; i < self.layers.size(); ++i) {
      auto& l = self.layers[i];
      const std::string p = "layer" + std::to_string(i) + ".";
      f(p + "ln1_gain", l.ln1_gain);
      f(p + "ln1_bias", l.ln1_bias);
      f(p + "w_query", l.w_query);
      f(p + "w_key", l.w_key);
      f(p + "w_value", l.w_value);
      f(p + "w_attn_out", l.w_attn_out);
      f(p + "b_query", l.b_query);
      f(p + "b_key", l.b_key);
      f(p + "b_value", l.b_value);
      f(p + "b_attn_out", l.b_attn_out);
      f(p + "ln2_gain", l.ln2_gain);
      f(p + "ln2_bias", l.ln2_bias);
      f(p + "w_fc", l.w_fc);
      f(p + "b_fc", l.b_fc);
      f(p + "w_proj", l.w_proj);
      f(p + "b_proj", l.b_proj);
    }
    f("lnf_gain", self.lnf_gain);
    f("lnf_bias", self.lnf_bias);
    f("w_out", self.w_out);
    f("b_out", self.b_out);
  }
};

// Small pre-LayerNorm GPT-style decoder, 64-bit throughout, with learned
// absolute positions. Self-contained so every test runs offline.
class ReferenceModel final : public LanguageModel {
 public:
  // Random initialization (N(0, 0.02), residual projections scaled by
  // 1/sqrt(2 * layers)); config.vocab_size is replaced by vocab.size().
  ReferenceModel(ReferenceLMConfig config, Vocabulary vocab);
  ReferenceModel(ReferenceLMConfig config, Vocabulary vocab, TransformerWeights weights);

  const Vocabulary& vocabulary() const override { return vocab_; }
  std::size_t context_length() const override { return config_.context; }
  HistoryState empty_history() const override;
  std::string model_id() const override;

  StepOutput forward(TokenId token, const HistoryState& history) const override;
  LossGradient loss_gradient(const HistoryState& history, const HistoryState& perturbation,
                             TokenId token, const ProbabilityLoss& loss) const override;

  const ReferenceLMConfig& config() const { return config_; }
  const TransformerWeights& weights() const { return weights_; }
  TransformerWeights& mutable_weights() { return weights_; }

  // Full-sequence (causal) forward from an empty history; row t holds the
  // logits after consuming tokens[0..t].
  Eigen::MatrixXd sequence_logits(std::span<const TokenId> tokens) const;

  // Mean next-token cross-entropy of targets given inputs (same length,
  // <= context). Adds scale * d loss / d weights into `grads`.
  double accumulate_sequence_gradient(std::span<const TokenId> inputs, std::span<const TokenId> targets,
                                      TransformerWeights& grads, double scale) const;

  void save(const std::filesystem::path& path) const;
  static ReferenceModel load(const std::filesystem::path& path);

 private:
  struct PositionTrace;
  StepOutput forward_impl(TokenId token, const HistoryState& history, PositionTrace* trace) const;

  ReferenceLMConfig config_;
  Vocabulary vocab_;
  TransformerWeights weights_;
};

// exp of the mean negative log-likelihood of tokens[1..] given their prefixes.
// Sequences longer than the context are scored with a sliding window that
// re-encodes the most recent context/2 tokens. Throws Error when fewer than 2
// tokens are given.
double perplexity(const LanguageModel& model, std::span<const TokenId> tokens);

// Perplexity of `continuation` only, conditioned on `prompt` (prompt tokens
// are never scored).
double continuation_perplexity(const LanguageModel& model, std::span<const TokenId> prompt,
                               std::span<const TokenId> continuation);

}  // namespace affectgen
