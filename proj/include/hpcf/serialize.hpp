#pragma once

#include <json.hpp>

#include "hpcf/model.hpp"
#include "hpcf/train.hpp"

namespace hpcf {

nlohmann::json model_config_to_json(const ModelConfig& cfg);
/// Unknown keys are rejected with a ConfigError naming the key.
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace hpcf
