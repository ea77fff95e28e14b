#pragma once

#include <json.hpp>

#include "scd/model.hpp"
#include "scd/trainer.hpp"

namespace scd {

nlohmann::json model_config_json(const ModelConfig& m);
nlohmann::json train_config_json(const TrainConfig& t);
// Overwrite only the keys present in `obj`.
void read_model_config(const nlohmann::json& obj, ModelConfig& m);
void read_train_config(const nlohmann::json& obj, TrainConfig& t);

}  // namespace scd
