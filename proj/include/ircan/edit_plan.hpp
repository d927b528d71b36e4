#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "ircan/config.hpp"

namespace ircan {

enum class EditKind { reweight, erase, random_reweight, random_erase };

// Which weights of a neuron an edit scales. `outgoing` (the neuron's row of
// the down-projection) is the default; `incoming` scales the up-projection
// column (and its bias) and exists for comparison runs.
enum class EditTarget { outgoing, incoming };

std::string_view to_string(EditKind k);
std::string_view to_string(EditTarget t);
EditKind parse_edit_kind(std::string_view s);
EditTarget parse_edit_target(std::string_view s);

struct EditPlan {
    std::vector<NeuronSite> sites;
    double beta = 1.0;
    EditKind kind = EditKind::reweight;
    std::optional<std::uint64_t> seed;
    EditTarget target = EditTarget::outgoing;

    // Erase kinds need beta == 0, random kinds need a seed, sites must be
    // distinct and beta >= 0. Throws ParameterError.
    void validate() const;

    friend bool operator==(const EditPlan&, const EditPlan&) = default;
};

}  // namespace ircan
