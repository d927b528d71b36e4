#pragma once

// JSON conversions for the toolkit's serializable types.

#include "json.hpp"

#include "ircan/config.hpp"
#include "ircan/edit_plan.hpp"

namespace ircan {

using json = nlohmann::ordered_json;

void to_json(json& j, const ModelConfig& c);
void from_json(const json& j, ModelConfig& c);
void to_json(json& j, const NeuronSite& s);
void from_json(const json& j, NeuronSite& s);
void to_json(json& j, const EditPlan& p);
void from_json(const json& j, EditPlan& p);

}  // namespace ircan
