#include <set>

#include <gtest/gtest.h>

#include "affectgen/sampler.hpp"

namespace affectgen {
namespace {

Eigen::VectorXd probs(std::initializer_list<double> values) {
  Eigen::VectorXd p(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double v : values) p(i++) = v;
  return p / p.sum();
}

TEST(Sampler, GreedyTakesArgmaxLowestIdOnTies) {
  SamplerSettings s;
  s.mode = SamplerMode::kGreedy;
  Rng rng(1);
  EXPECT_EQ(sample_token(probs({0.1, 0.5, 0.4}), s, rng), 1u);
  EXPECT_EQ(sample_token(probs({0.3, 0.2, 0.3, 0.2}), s, rng), 0u);
}

TEST(Sampler, TopKStaysInsideTheTopK) {
  SamplerSettings s;
  s.k = 2;
  Rng rng(2);
  const auto p = probs({0.05, 0.4, 0.05, 0.3, 0.2});
  std::set<TokenId> seen;
  for (int i = 0; i < 2000; ++i) seen.insert(sample_token(p, s, rng));
  EXPECT_EQ(seen, (std::set<TokenId>{1, 3}));
}

TEST(Sampler, TopKFrequenciesFollowRenormalizedProbabilities) {
  SamplerSettings s;
  s.k = 3;
  Rng rng(3);
  const auto p = probs({0.5, 0.3, 0.2, 0.0});
  std::vector<int> counts(4, 0);
  const int n = 20000;
  for (int i = 0; i < n; ++i) ++counts[sample_token(p, s, rng)];
  EXPECT_NEAR(counts[0] / double(n), 0.5, 0.02);
  EXPECT_NEAR(counts[1] / double(n), 0.3, 0.02);
  EXPECT_NEAR(counts[2] / double(n), 0.2, 0.02);
  EXPECT_EQ(counts[3], 0);
}

TEST(Sampler, LowTemperatureApproachesGreedy) {
  SamplerSettings s;
  s.k = 4;
  s.temperature = 0.01;
  Rng rng(4);
  const auto p = probs({0.2, 0.35, 0.3, 0.15});
  for (int i = 0; i < 200; ++i) EXPECT_EQ(sample_token(p, s, rng), 1u);
}

TEST(Sampler, SameSeedSameDraws) {
  SamplerSettings s;
  s.seed = 99;
  const auto p = probs({0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
  Rng a = session_rng(s), b = session_rng(s);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_token(p, s, a), sample_token(p, s, b));
}

}  // namespace
}  // namespace affectgen
