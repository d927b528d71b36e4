#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "ircan/edit_plan.hpp"
#include "ircan/model.hpp"

namespace ircan {

// Returns a copy of `model` with each listed neuron's weights scaled by
// plan.beta. Only the touched tensors are copied. Scaling factors accumulate
// per site and are always applied to the pre-edit weights, so applying beta1
// then beta2 is bit-identical to applying beta1 * beta2.
TransformerModel apply_edit(const TransformerModel& model, const EditPlan& plan);

// n distinct sites drawn uniformly from the sites not in `exclude`.
std::vector<NeuronSite> random_sites(const ModelConfig& cfg, int n, std::uint64_t seed,
                                     const std::set<NeuronSite>& exclude = {});

// Restores the pre-edit weights bit-for-bit. Throws StateError when the model
// carries no edit state.
TransformerModel revert(const TransformerModel& model);

std::string edit_plan_json(const EditPlan& plan);
EditPlan parse_edit_plan_json(const std::string& text);

}  // namespace ircan
