#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>

#include <Eigen/Core>

#include "affectgen/bags.hpp"
#include "affectgen/emotion.hpp"

namespace affectgen {

enum class SamplerMode { kGreedy, kTopK };

struct SamplerSettings {
  SamplerMode mode = SamplerMode::kTopK;
  std::size_t k = 10;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class GradientScaling {
  kRaw,            // delta -= step_size * g
  kPerTensorNorm,  // each key/value tensor of g divided by its L2 norm first
};

struct LossWeights {
  double kl_scale = 0.01;
  double topic_scale = 1.0;
  double affect_scale = 1.0;
};

struct ControlConfig {
  std::shared_ptr<const AffectBag> affect;  // null: no affect term
  double knob = 0.5;
  double variance = 0.05;
  std::shared_ptr<const TopicBag> topic;  // null: no topic term
  double step_size = 0.005;
  std::size_t gd_iterations = 3;
  LossWeights weights;
  double epsilon_floor = 1e-10;
  std::optional<std::size_t> window;  // perturb only the most recent positions
  GradientScaling scaling = GradientScaling::kRaw;
  SamplerSettings sampler;

  std::optional<Emotion> emotion() const {
    return affect ? std::optional<Emotion>(affect->emotion) : std::nullopt;
  }
  // A bag with zero weight contributes nothing, so it does not count.
  bool steering_active() const {
    return (affect && weights.affect_scale > 0.0) || (topic && weights.topic_scale > 0.0);
  }

  // Throws ConfigError naming the first offending field.
  void validate() const;
};

struct LossBreakdown {
  double kld = 0.0;
  std::optional<double> topic;
  std::optional<double> affect;
  double total = 0.0;
};

// The loss functions below optionally accumulate d loss / d p into `grad`
// (same length as p). Where a floor is active the gradient is zero.

// exp(-(intensity - knob)^2 / (2 variance)); throws ConfigError if variance <= 0.
double gaussian_weight(double intensity, double knob, double variance);

double topic_loss(const Eigen::VectorXd& p, const TopicBag& topic, double epsilon_floor = 1e-10,
                  Eigen::VectorXd* grad = nullptr, double grad_scale = 1.0);

double affect_loss(const Eigen::VectorXd& p, const AffectBag& bag, double knob, double variance,
                   double epsilon_floor = 1e-10, Eigen::VectorXd* grad = nullptr, double grad_scale = 1.0);

// KL(p_perturbed || p_unperturbed) in nats.
double kld_loss(const Eigen::VectorXd& p_perturbed, const Eigen::VectorXd& p_unperturbed,
                double epsilon_floor = 1e-10, Eigen::VectorXd* grad = nullptr, double grad_scale = 1.0);

LossBreakdown total_loss(const Eigen::VectorXd& p_perturbed, const Eigen::VectorXd& p_unperturbed,
                         const ControlConfig& config, Eigen::VectorXd* grad = nullptr);

}  // namespace affectgen
