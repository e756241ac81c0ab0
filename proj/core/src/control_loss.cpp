#include "affectgen/control_loss.hpp"

#include <cmath>
#include <string>

#include "affectgen/error.hpp"

namespace affectgen {
namespace {

bool finite_nonneg(double x) { return std::isfinite(x) && x >= 0.0; }

void check_index(const Eigen::VectorXd& p, TokenId id) {
  if (id >= static_cast<std::size_t>(p.size())) {
    throw Error("bag token id " + std::to_string(id) + " outside probability vector of length " +
                std::to_string(p.size()));
  }
}

}  // namespace

void SamplerSettings::validate() const {
  if (mode == SamplerMode::kTopK && k < 1) throw ConfigError("k", "must be at least 1");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature", "must be > 0");
}

void ControlConfig::validate() const {
  if (!(knob >= 0.0 && knob <= 1.0)) throw ConfigError("knob", "must lie in [0, 1]");
  if (!(variance > 0.0) || !std::isfinite(variance)) throw ConfigError("variance", "must be > 0");
  // Zero is allowed: it turns steering into a no-op without changing the loss trace.
  if (!finite_nonneg(step_size)) throw ConfigError("step_size", "must be >= 0");
  if (gd_iterations < 1) throw ConfigError("gd_iterations", "must be at least 1");
  if (!finite_nonneg(weights.kl_scale)) throw ConfigError("kl_scale", "must be >= 0");
  if (!finite_nonneg(weights.topic_scale)) throw ConfigError("topic_scale", "must be >= 0");
  if (!finite_nonneg(weights.affect_scale)) throw ConfigError("affect_scale", "must be >= 0");
  if (!(epsilon_floor > 0.0 && epsilon_floor < 1.0)) throw ConfigError("epsilon_floor", "must lie in (0, 1)");
  if (window && *window < 1) throw ConfigError("window", "must be at least 1");
  if (affect && affect->size() == 0) throw ConfigError("emotion", "affect bag is empty");
  if (topic && topic->size() == 0) throw ConfigError("topic", "topic bag is empty");
  sampler.validate();
}

double gaussian_weight(double intensity, double knob, double variance) {
  if (!(variance > 0.0)) throw ConfigError("variance", "must be > 0");
  const double d = intensity - knob;
  return std::exp(-d * d / (2.0 * variance));
}

double topic_loss(const Eigen::VectorXd& p, const TopicBag& topic, double epsilon_floor, Eigen::VectorXd* grad,
                  double grad_scale) {
  if (topic.token_ids.empty()) throw Error("topic bag '" + topic.name + "' is empty");
  double mass = 0.0;
  for (TokenId id : topic.token_ids) {
    check_index(p, id);
    mass += p(id);
  }
  if (mass <= epsilon_floor) return -std::log(epsilon_floor);
  if (grad != nullptr) {
    for (TokenId id : topic.token_ids) (*grad)(id) -= grad_scale / mass;
  }
  return -std::log(mass);
}

double affect_loss(const Eigen::VectorXd& p, const AffectBag& bag, double knob, double variance,
                   double epsilon_floor, Eigen::VectorXd* grad, double grad_scale) {
  if (bag.token_ids.empty()) throw Error("affect bag for " + std::string(to_string(bag.emotion)) + " is empty");
  double mass = 0.0;
  for (std::size_t j = 0; j < bag.size(); ++j) {
    check_index(p, bag.token_ids[j]);
    mass += p(bag.token_ids[j]) * gaussian_weight(bag.intensities[j], knob, variance);
  }
  if (mass <= epsilon_floor) return -std::log(epsilon_floor);
  if (grad != nullptr) {
    for (std::size_t j = 0; j < bag.size(); ++j) {
      (*grad)(bag.token_ids[j]) -= grad_scale * gaussian_weight(bag.intensities[j], knob, variance) / mass;
    }
  }
  return -std::log(mass);
}

double kld_loss(const Eigen::VectorXd& p_perturbed, const Eigen::VectorXd& p_unperturbed, double epsilon_floor,
                Eigen::VectorXd* grad, double grad_scale) {
  if (p_perturbed.size() != p_unperturbed.size()) {
    throw Error("kld_loss: length mismatch (" + std::to_string(p_perturbed.size()) + " vs " +
                std::to_string(p_unperturbed.size()) + ")");
  }
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p_perturbed.size(); ++i) {
    const double p = p_perturbed(i);
    const double log_ratio = std::log(std::max(p, epsilon_floor)) - std::log(std::max(p_unperturbed(i), epsilon_floor));
    if (p > 0.0) kl += p * log_ratio;
    if (grad != nullptr) (*grad)(i) += grad_scale * (log_ratio + (p > epsilon_floor ? 1.0 : 0.0));
  }
  // Floors can push the sum a hair below zero; KL itself cannot be.
  return std::max(kl, 0.0);
}

LossBreakdown total_loss(const Eigen::VectorXd& p_perturbed, const Eigen::VectorXd& p_unperturbed,
                         const ControlConfig& config, Eigen::VectorXd* grad) {
  const LossWeights& w = config.weights;
  LossBreakdown out;
  out.kld = kld_loss(p_perturbed, p_unperturbed, config.epsilon_floor, grad, w.kl_scale);
  out.total = w.kl_scale * out.kld;
  if (config.topic) {
    out.topic = topic_loss(p_perturbed, *config.topic, config.epsilon_floor, grad, w.topic_scale);
    out.total += w.topic_scale * *out.topic;
  }
  if (config.affect) {
    out.affect = affect_loss(p_perturbed, *config.affect, config.knob, config.variance, config.epsilon_floor, grad,
                             w.affect_scale);
    out.total += w.affect_scale * *out.affect;
  }
  return out;
}

}  // namespace affectgen
