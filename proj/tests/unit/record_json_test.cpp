#include <gtest/gtest.h>

#include "affectgen/record_json.hpp"
#include "fixtures.hpp"

namespace affectgen {
namespace {

TEST(RecordJson, SchemaFields) {
  const auto model = testing::spread_model(8, 31);
  ControlConfig c;
  auto bag = std::make_shared<AffectBag>();
  bag->emotion = Emotion::kTrust;
  bag->token_ids = {3};
  bag->intensities = {0.6};
  bag->source_words = {"c"};
  c.affect = bag;
  c.sampler.seed = 4;
  const GenerationRecord r = generate(model, "a b", 5, c);
  const nlohmann::json j = to_json(r);
  EXPECT_EQ(j["schema_version"], kSchemaVersion);
  EXPECT_EQ(j["tokens"].size(), 5u);
  EXPECT_EQ(j["token_texts"].size(), 5u);
  EXPECT_EQ(j["steps"].size(), 5u);
  EXPECT_EQ(j["config"]["emotion"], "trust");
  EXPECT_TRUE(j["config"]["topic"].is_null());
  EXPECT_EQ(j["config"]["sampler"]["seed"], 4u);
  EXPECT_TRUE(j["steps"][0]["loss"]["topic"].is_null());
  EXPECT_TRUE(j["steps"][0]["loss"]["affect"].is_number());
  EXPECT_FALSE(j.contains("duration_ms"));
  EXPECT_TRUE(to_json(r, true).contains("duration_ms"));
  // Stable bytes for identical runs.
  EXPECT_EQ(j.dump(), to_json(generate(model, "a b", 5, c)).dump());

  const Lexicon lex = Lexicon::parse("c\ttrust\t0.6\n");
  const nlohmann::json resp = to_response_json(r, lex);
  EXPECT_EQ(resp["intensity_score"]["emotion"], "trust");
}

}  // namespace
}  // namespace affectgen
