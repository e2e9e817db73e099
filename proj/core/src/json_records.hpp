#pragma once

#include "icshunt/records.hpp"

#include <nlohmann/json.hpp>

namespace icshunt::detail {

nlohmann::json detection_json(const Detection& d);
nlohmann::json hypothesis_json(const Hypothesis& h);
nlohmann::json model_run_json(const ModelRun& r);
Detection detection_from(const nlohmann::json& j);
Hypothesis hypothesis_from(const nlohmann::json& j);
ModelRun model_run_from(const nlohmann::json& j);

}  // namespace icshunt::detail
