#include "ircan/editing.hpp"

#include <algorithm>
#include <random>

#include "ircan/errors.hpp"
#include "ircan/json_io.hpp"

namespace ircan {

namespace {

// Rebuilds every tensor touched by `state` from its saved original.
void materialize(TransformerModel& model, const EditState& state) {
    std::map<std::string, Tensor> rebuilt;
    for (const auto& [name, orig] : state.originals) rebuilt.emplace(name, *orig);
    const auto F = static_cast<std::size_t>(model.config().d_ff);
    for (const auto& [key, factor] : state.factors) {
        const auto& [target, site] = key;
        const auto n = static_cast<std::size_t>(site.neuron);
        if (target == EditTarget::outgoing) {
            auto row = rebuilt.at(TransformerModel::down_proj_name(site.layer)).row(n);
            for (auto& v : row) v *= factor;
        } else {
            Tensor& up = rebuilt.at(TransformerModel::up_proj_name(site.layer));
            const auto rows = up.rows();
            for (std::size_t r = 0; r < rows; ++r) up[r * F + n] *= factor;
            auto bias = rebuilt.find(TransformerModel::up_bias_name(site.layer));
            if (bias != rebuilt.end()) bias->second[n] *= factor;
        }
    }
    for (auto& [name, t] : rebuilt) model.set_weight(name, std::move(t));
}

}  // namespace

TransformerModel apply_edit(const TransformerModel& model, const EditPlan& plan) {
    plan.validate();
    for (const auto& s : plan.sites) check_site(model.config(), s);

    auto state = model.edit_state() ? std::make_shared<EditState>(*model.edit_state()) : std::make_shared<EditState>();
    for (const auto& s : plan.sites) {
        std::vector<std::string> names;
        if (plan.target == EditTarget::outgoing) {
            names.push_back(TransformerModel::down_proj_name(s.layer));
        } else {
            names.push_back(TransformerModel::up_proj_name(s.layer));
            if (model.config().ffn_kind == FfnKind::plain) names.push_back(TransformerModel::up_bias_name(s.layer));
        }
        for (const auto& n : names)
            if (!state->originals.count(n)) state->originals.emplace(n, model.shared_weight(n));
        auto [it, inserted] = state->factors.emplace(std::make_pair(plan.target, s), plan.beta);
        if (!inserted) it->second *= plan.beta;
    }
    state->plans.push_back(plan);

    TransformerModel out = model;
    materialize(out, *state);
    out.set_edit_state(std::move(state));
    return out;
}

std::vector<NeuronSite> random_sites(const ModelConfig& cfg, int n, std::uint64_t seed,
                                     const std::set<NeuronSite>& exclude) {
    std::vector<NeuronSite> pool;
    for (int l = 0; l < cfg.n_layers; ++l)
        for (int i = 0; i < cfg.d_ff; ++i)
            if (!exclude.count({l, i})) pool.push_back({l, i});
    if (n < 0 || static_cast<std::size_t>(n) > pool.size()) {
        throw SelectionError("cannot draw " + std::to_string(n) + " random sites from " + std::to_string(pool.size()) +
                             " eligible sites");
    }
    std::mt19937_64 rng(seed);
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
        std::uniform_int_distribution<std::size_t> d(i, pool.size() - 1);
        std::swap(pool[i], pool[d(rng)]);
    }
    pool.resize(static_cast<std::size_t>(n));
    return pool;
}

TransformerModel revert(const TransformerModel& model) {
    if (!model.edit_state()) throw StateError("model carries no edit plan to revert");
    TransformerModel out = model;
    for (const auto& [name, orig] : model.edit_state()->originals) out.set_weight(name, Tensor(*orig));
    out.set_edit_state(nullptr);
    return out;
}

std::string edit_plan_json(const EditPlan& plan) { return json(plan).dump(2) + "\n"; }

EditPlan parse_edit_plan_json(const std::string& text) {
    try {
        EditPlan p = json::parse(text).get<EditPlan>();
        p.validate();
        return p;
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed edit plan JSON: ") + e.what());
    }
}

}  // namespace ircan
