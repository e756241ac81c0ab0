#pragma once

#include <Eigen/Core>

#include "affectgen/control_loss.hpp"
#include "affectgen/random.hpp"
#include "affectgen/vocabulary.hpp"

namespace affectgen {

// Draws the next token from a probability vector. Greedy takes the argmax
// (lowest id on ties) and consumes no randomness; top-k keeps the k most
// probable tokens, sharpens or flattens them by the temperature, and consumes
// exactly one uniform draw.
TokenId sample_token(const Eigen::VectorXd& probs, const SamplerSettings& settings, Rng& rng);

// RNG stream for one generation session.
inline Rng session_rng(const SamplerSettings& settings) { return Rng(derive_seed(settings.seed, 0x5A3D)); }

}  // namespace affectgen
