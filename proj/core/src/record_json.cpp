#include "affectgen/record_json.hpp"

#include "affectgen/eval.hpp"

namespace affectgen {
namespace {

nlohmann::json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json to_json(const LossBreakdown& loss) {
  return {{"kld", loss.kld}, {"topic", optional_number(loss.topic)}, {"affect", optional_number(loss.affect)},
          {"total", loss.total}};
}

nlohmann::json to_json(const StepTrace& step, std::size_t index) {
  return {{"index", index},
          {"token", step.token},
          {"text", step.text},
          {"loss", to_json(step.loss)},
          {"initial_total", step.initial.total},
          {"kl", step.kl},
          {"flagged", step.flagged}};
}

nlohmann::json config_to_json(const ControlConfig& c) {
  nlohmann::json j;
  j["emotion"] = c.affect ? nlohmann::json(std::string(to_string(c.affect->emotion))) : nlohmann::json(nullptr);
  j["knob"] = c.knob;
  j["variance"] = c.variance;
  j["topic"] = c.topic ? nlohmann::json(c.topic->name) : nlohmann::json(nullptr);
  j["step_size"] = c.step_size;
  j["gd_iterations"] = c.gd_iterations;
  j["weights"] = {{"kl_scale", c.weights.kl_scale},
                  {"topic_scale", c.weights.topic_scale},
                  {"affect_scale", c.weights.affect_scale}};
  j["epsilon_floor"] = c.epsilon_floor;
  j["window"] = c.window ? nlohmann::json(*c.window) : nlohmann::json(nullptr);
  j["gradient_scaling"] = c.scaling == GradientScaling::kRaw ? "raw" : "per_tensor_norm";
  j["sampler"] = {{"mode", c.sampler.mode == SamplerMode::kGreedy ? "greedy" : "top_k"},
                  {"k", c.sampler.k},
                  {"temperature", c.sampler.temperature},
                  {"seed", c.sampler.seed}};
  return j;
}

nlohmann::json to_json(const GenerationRecord& r, bool include_timing) {
  nlohmann::json steps = nlohmann::json::array();
  nlohmann::json texts = nlohmann::json::array();
  for (std::size_t i = 0; i < r.steps.size(); ++i) {
    steps.push_back(to_json(r.steps[i], i));
    texts.push_back(r.steps[i].text);
  }
  nlohmann::json j{{"schema_version", kSchemaVersion},
                   {"model_id", r.model_id},
                   {"prompt", r.prompt},
                   {"prompt_tokens", r.prompt_tokens},
                   {"tokens", r.tokens},
                   {"token_texts", std::move(texts)},
                   {"text", r.text},
                   {"seed", r.seed},
                   {"config", config_to_json(r.config)},
                   {"steps", std::move(steps)},
                   {"mean_kl", r.mean_kl()},
                   {"flagged_steps", r.flagged_steps()},
                   {"truncated_at", r.truncated_at},
                   {"cancelled", r.cancelled}};
  if (include_timing) j["duration_ms"] = r.duration_ms;
  return j;
}

nlohmann::json to_response_json(const GenerationRecord& record, const Lexicon& lexicon, bool include_timing) {
  nlohmann::json j = to_json(record, include_timing);
  if (const auto emotion = record.config.emotion()) {
    const IntensityScore s = intensity_score(record.text, *emotion, lexicon);
    j["intensity_score"] = {{"emotion", to_string(*emotion)}, {"score", s.score}, {"matched", s.matched}};
  } else {
    j["intensity_score"] = nullptr;
  }
  return j;
}

}  // namespace affectgen
