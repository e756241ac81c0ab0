#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "affectgen/control_loss.hpp"
#include "affectgen/model.hpp"
#include "affectgen/random.hpp"

namespace affectgen {

struct PerturbResult {
  HistoryState history;  // history + delta
  StepOutput output;     // forward(token, history + delta)
  Eigen::VectorXd p_unperturbed;
  Eigen::VectorXd p_perturbed;
  LossBreakdown initial;     // at delta = 0
  LossBreakdown final_loss;  // at the returned delta
  bool flagged = false;      // non-finite loss or gradient; delta discarded
  std::string failure;
};

// Runs config.gd_iterations gradient steps on the total loss with respect to
// an additive perturbation of `history`, starting from zero. p_unperturbed is
// taken once at delta = 0 and held fixed. Unless a topic or affect term carries
// positive weight the history is returned unchanged.
PerturbResult perturb_history(const LanguageModel& model, TokenId token, const HistoryState& history,
                              const ControlConfig& config);

struct StepTrace {
  TokenId token = 0;
  std::string text;
  LossBreakdown initial;  // before perturbation
  LossBreakdown loss;     // after the last gradient step
  double kl = 0.0;        // realized KL(p' || p) of the sampling distribution
  bool flagged = false;
};

struct StepResult {
  StepTrace trace;
  HistoryState next_history;
};

StepResult step(const LanguageModel& model, TokenId token, const HistoryState& history, const ControlConfig& config,
                Rng& rng);

struct GenerationRecord {
  std::string prompt;
  std::vector<TokenId> prompt_tokens;
  std::vector<TokenId> tokens;
  std::string text;  // decoded continuation
  std::vector<StepTrace> steps;
  ControlConfig config;
  std::uint64_t seed = 0;
  std::string model_id;
  std::vector<std::size_t> truncated_at;  // steps before which the context was re-windowed
  bool cancelled = false;
  double duration_ms = 0.0;

  std::size_t flagged_steps() const;
  double mean_kl() const;
};

// Called after each emitted token; returning false stops generation early.
using StepCallback = std::function<bool(std::size_t index, const StepTrace& trace)>;

// Consumes the prompt without steering, then emits `length` steered tokens.
// When the context fills up, the most recent half of the context is
// re-encoded (unperturbed) and generation continues.
GenerationRecord generate(const LanguageModel& model, std::string_view prompt, std::size_t length,
                          const ControlConfig& config, const StepCallback& on_step = {});
GenerationRecord generate(const LanguageModel& model, std::span<const TokenId> prompt_tokens, std::size_t length,
                          const ControlConfig& config, const StepCallback& on_step = {});

// Plain forward-and-sample decoding with no perturbation machinery at all;
// the baseline that steering-off generation must reproduce.
std::vector<TokenId> generate_unsteered(const LanguageModel& model, std::span<const TokenId> prompt_tokens,
                                        std::size_t length, const SamplerSettings& sampler);

}  // namespace affectgen
