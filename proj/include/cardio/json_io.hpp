#pragma once

#include "cardio/config.hpp"
#include "json.hpp"

namespace cardio {

nlohmann::json to_json(const ModelConfig& config);
/// Rejects unknown keys.
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace cardio
