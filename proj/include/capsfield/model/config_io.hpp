#pragma once

#include <json.hpp>

#include "capsfield/model/model.hpp"
#include "capsfield/model/train.hpp"

namespace capsfield::model {

// JSON forms of the configuration structs. Parsing starts from the
// defaults, so any field may be omitted; unknown fields and ill-typed values
// throw ConfigError.

nlohmann::json to_json(const features::EmbedderConfig& c);
nlohmann::json to_json(const capsule::CapsuleConfig& c);
nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);

void apply_json(const nlohmann::json& j, features::EmbedderConfig& c);
void apply_json(const nlohmann::json& j, capsule::CapsuleConfig& c);
void apply_json(const nlohmann::json& j, ModelConfig& c);
void apply_json(const nlohmann::json& j, TrainConfig& c);

}  // namespace capsfield::model
