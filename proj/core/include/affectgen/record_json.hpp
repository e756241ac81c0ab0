#pragma once

#include <nlohmann/json.hpp>

#include "affectgen/control_loss.hpp"
#include "affectgen/lexicon.hpp"
#include "affectgen/perturb.hpp"

namespace affectgen {

// Version of the JSON documents produced here and by the service.
inline constexpr int kSchemaVersion = 1;

nlohmann::json to_json(const LossBreakdown& loss);
nlohmann::json to_json(const StepTrace& step, std::size_t index);
nlohmann::json config_to_json(const ControlConfig& config);

// Wall-clock duration is left out unless asked for, so that identical runs
// serialize to identical bytes.
nlohmann::json to_json(const GenerationRecord& record, bool include_timing = false);

// The record plus the lexicon intensity score of its continuation (null when
// no emotion was steered). Shared by `generate --json` and the service.
nlohmann::json to_response_json(const GenerationRecord& record, const Lexicon& lexicon, bool include_timing = false);

}  // namespace affectgen
