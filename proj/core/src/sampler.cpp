#include "affectgen/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "affectgen/error.hpp"

namespace affectgen {

TokenId sample_token(const Eigen::VectorXd& probs, const SamplerSettings& settings, Rng& rng) {
  if (probs.size() == 0) throw Error("cannot sample from an empty distribution");
  if (settings.mode == SamplerMode::kGreedy) {
    Eigen::Index best = 0;
    probs.maxCoeff(&best);
    return static_cast<TokenId>(best);
  }

  const std::size_t n = static_cast<std::size_t>(probs.size());
  const std::size_t k = std::min(settings.k, n);
  std::vector<TokenId> ids(n);
  std::iota(ids.begin(), ids.end(), TokenId{0});
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                    [&](TokenId a, TokenId b) { return probs(a) > probs(b) || (probs(a) == probs(b) && a < b); });

  // p^(1/T) equals softmax(logits / T) up to normalization.
  std::vector<double> weights(k);
  const double inv_t = 1.0 / settings.temperature;
  const double top = probs(ids[0]);
  for (std::size_t i = 0; i < k; ++i) {
    weights[i] = top > 0.0 ? std::pow(probs(ids[i]) / top, inv_t) : 1.0;
  }
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  double u = rng.uniform() * sum;
  for (std::size_t i = 0; i < k; ++i) {
    u -= weights[i];
    if (u < 0.0) return ids[i];
  }
  return ids[k - 1];
}

}  // namespace affectgen
