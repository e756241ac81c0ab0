#include "affectgen/perturb.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "affectgen/error.hpp"
#include "affectgen/sampler.hpp"

namespace affectgen {
namespace {

void restrict_to_window(HistoryState& grad, std::size_t window) {
  if (window >= grad.length()) return;
  const auto frozen = static_cast<Eigen::Index>(grad.length() - window);
  for (std::size_t l = 0; l < grad.num_layers(); ++l) {
    grad.layer(l).keys.topRows(frozen).setZero();
    grad.layer(l).values.topRows(frozen).setZero();
  }
}

void normalize_per_tensor(HistoryState& grad) {
  for (std::size_t l = 0; l < grad.num_layers(); ++l) {
    for (auto* t : {&grad.layer(l).keys, &grad.layer(l).values}) {
      const double norm = t->norm();
      if (norm > 0.0) *t /= norm;
    }
  }
}

bool finite(const LossBreakdown& b) { return std::isfinite(b.total); }

// Re-encodes the most recent tokens so that `pending` can be consumed.
HistoryState rewindow(const LanguageModel& model, std::span<const TokenId> consumed) {
  const std::size_t keep = std::max<std::size_t>(1, model.context_length() / 2) - 1;
  HistoryState history = model.empty_history();
  const std::size_t start = consumed.size() > keep ? consumed.size() - keep : 0;
  for (std::size_t i = start; i < consumed.size(); ++i) history = model.forward(consumed[i], history).next_history;
  return history;
}

}  // namespace

PerturbResult perturb_history(const LanguageModel& model, TokenId token, const HistoryState& history,
                              const ControlConfig& config) {
  config.validate();
  PerturbResult r;
  r.output = model.forward(token, history);
  r.p_unperturbed = softmax(r.output.logits);
  r.p_perturbed = r.p_unperturbed;
  r.history = history;
  r.initial = total_loss(r.p_unperturbed, r.p_unperturbed, config);
  r.final_loss = r.initial;
  if (!config.steering_active() || history.length() == 0) return r;

  const Eigen::VectorXd& p0 = r.p_unperturbed;
  const ProbabilityLoss loss = [&](const Eigen::VectorXd& p, Eigen::VectorXd& grad) {
    const LossBreakdown b = total_loss(p, p0, config, &grad);
    if (!std::isfinite(b.kld)) throw NonFiniteError("kld");
    if (b.topic && !std::isfinite(*b.topic)) throw NonFiniteError("topic");
    if (b.affect && !std::isfinite(*b.affect)) throw NonFiniteError("affect");
    return b.total;
  };

  try {
    HistoryState delta = history.zeros_like();
    for (std::size_t it = 0; it < config.gd_iterations; ++it) {
      LossGradient lg = model.loss_gradient(history, delta, token, loss);
      if (config.window) restrict_to_window(lg.gradient, *config.window);
      if (config.scaling == GradientScaling::kPerTensorNorm) normalize_per_tensor(lg.gradient);
      lg.gradient *= config.step_size;
      delta -= lg.gradient;
    }
    if (!delta.all_finite()) throw NonFiniteError("perturbation");
    HistoryState perturbed = history + delta;
    StepOutput out = model.forward(token, perturbed);
    Eigen::VectorXd p = softmax(out.logits);
    LossBreakdown final_loss = total_loss(p, p0, config);
    if (!finite(final_loss) || !p.allFinite()) throw NonFiniteError("loss");
    r.history = std::move(perturbed);
    r.output = std::move(out);
    r.p_perturbed = std::move(p);
    r.final_loss = final_loss;
  } catch (const NonFiniteError& e) {
    r.flagged = true;
    r.failure = e.what();
  }
  return r;
}

StepResult step(const LanguageModel& model, TokenId token, const HistoryState& history, const ControlConfig& config,
                Rng& rng) {
  PerturbResult pr = perturb_history(model, token, history, config);
  StepResult s;
  s.trace.token = sample_token(pr.p_perturbed, config.sampler, rng);
  s.trace.text = model.vocabulary().token(s.trace.token);
  s.trace.initial = pr.initial;
  s.trace.loss = pr.final_loss;
  s.trace.kl = pr.flagged ? 0.0 : kld_loss(pr.p_perturbed, pr.p_unperturbed, config.epsilon_floor);
  s.trace.flagged = pr.flagged;
  s.next_history = std::move(pr.output.next_history);
  return s;
}

std::size_t GenerationRecord::flagged_steps() const {
  return static_cast<std::size_t>(std::count_if(steps.begin(), steps.end(), [](const StepTrace& s) { return s.flagged; }));
}

double GenerationRecord::mean_kl() const {
  if (steps.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : steps) sum += s.kl;
  return sum / static_cast<double>(steps.size());
}

GenerationRecord generate(const LanguageModel& model, std::string_view prompt, std::size_t length,
                          const ControlConfig& config, const StepCallback& on_step) {
  const std::vector<TokenId> ids = model.vocabulary().encode(prompt);
  GenerationRecord record = generate(model, ids, length, config, on_step);
  record.prompt = std::string(prompt);
  return record;
}

GenerationRecord generate(const LanguageModel& model, std::span<const TokenId> prompt_tokens, std::size_t length,
                          const ControlConfig& config, const StepCallback& on_step) {
  if (prompt_tokens.empty()) throw Error("prompt is empty after tokenization");
  if (length < 1) throw ConfigError("length", "must be at least 1");
  config.validate();
  const auto started = std::chrono::steady_clock::now();

  GenerationRecord record;
  record.prompt = model.vocabulary().decode(prompt_tokens);
  record.prompt_tokens.assign(prompt_tokens.begin(), prompt_tokens.end());
  record.config = config;
  record.seed = config.sampler.seed;
  record.model_id = model.model_id();

  std::vector<TokenId> consumed(prompt_tokens.begin(), prompt_tokens.end() - 1);
  TokenId pending = prompt_tokens.back();
  HistoryState history = model.empty_history();
  if (consumed.size() >= model.context_length()) {
    history = rewindow(model, consumed);
  } else {
    for (TokenId t : consumed) history = model.forward(t, history).next_history;
  }

  Rng rng = session_rng(config.sampler);
  for (std::size_t i = 0; i < length; ++i) {
    if (history.length() >= model.context_length()) {
      history = rewindow(model, consumed);
      record.truncated_at.push_back(i);
    }
    StepResult s = step(model, pending, history, config, rng);
    consumed.push_back(pending);
    pending = s.trace.token;
    history = std::move(s.next_history);
    record.tokens.push_back(s.trace.token);
    record.steps.push_back(std::move(s.trace));
    if (on_step && !on_step(i, record.steps.back())) {
      record.cancelled = true;
      break;
    }
  }
  record.text = model.vocabulary().decode(record.tokens);
  record.duration_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return record;
}

std::vector<TokenId> generate_unsteered(const LanguageModel& model, std::span<const TokenId> prompt_tokens,
                                        std::size_t length, const SamplerSettings& sampler) {
  if (prompt_tokens.empty()) throw Error("prompt is empty after tokenization");
  sampler.validate();
  std::vector<TokenId> consumed(prompt_tokens.begin(), prompt_tokens.end() - 1);
  TokenId pending = prompt_tokens.back();
  HistoryState history = model.empty_history();
  if (consumed.size() >= model.context_length()) {
    history = rewindow(model, consumed);
  } else {
    for (TokenId t : consumed) history = model.forward(t, history).next_history;
  }
  Rng rng = session_rng(sampler);
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < length; ++i) {
    if (history.length() >= model.context_length()) history = rewindow(model, consumed);
    StepOutput o = model.forward(pending, history);
    const TokenId next = sample_token(softmax(o.logits), sampler, rng);
    consumed.push_back(pending);
    pending = next;
    history = std::move(o.next_history);
    out.push_back(next);
  }
  return out;
}

}  // namespace affectgen
