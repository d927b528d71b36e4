#include "ircan/edit_plan.hpp"

#include <set>
#include <string>

#include "ircan/errors.hpp"
#include "ircan/json_io.hpp"

namespace ircan {

std::string_view to_string(EditKind k) {
    switch (k) {
        case EditKind::reweight: return "reweight";
        case EditKind::erase: return "erase";
        case EditKind::random_reweight: return "random_reweight";
        case EditKind::random_erase: return "random_erase";
    }
    return "?";
}

std::string_view to_string(EditTarget t) { return t == EditTarget::outgoing ? "outgoing" : "incoming"; }

EditKind parse_edit_kind(std::string_view s) {
    for (auto k : {EditKind::reweight, EditKind::erase, EditKind::random_reweight, EditKind::random_erase})
        if (to_string(k) == s) return k;
    throw ParameterError("unknown edit kind '" + std::string(s) + "'");
}

EditTarget parse_edit_target(std::string_view s) {
    if (s == "outgoing") return EditTarget::outgoing;
    if (s == "incoming") return EditTarget::incoming;
    throw ParameterError("unknown edit target '" + std::string(s) + "'");
}

void EditPlan::validate() const {
    if (!(beta >= 0.0)) throw ParameterError("beta must be >= 0, got " + std::to_string(beta));
    const bool erase = kind == EditKind::erase || kind == EditKind::random_erase;
    const bool random = kind == EditKind::random_reweight || kind == EditKind::random_erase;
    if (erase && beta != 0.0) throw ParameterError("erase edits require beta == 0");
    if (random && !seed) throw ParameterError("random edits require a seed");
    std::set<NeuronSite> seen;
    for (const auto& s : sites)
        if (!seen.insert(s).second) throw ParameterError("duplicate site " + to_string(s) + " in edit plan");
}

void to_json(json& j, const ModelConfig& c) {
    j = json{{"n_layers", c.n_layers},
             {"n_heads", c.n_heads},
             {"d_model", c.d_model},
             {"d_ff", c.d_ff},
             {"vocab_size", c.vocab_size},
             {"ffn_kind", std::string(to_string(c.ffn_kind))},
             {"position_kind", std::string(to_string(c.position_kind))},
             {"max_seq_len", c.max_seq_len},
             {"norm_eps", c.norm_eps},
             {"rope_base", c.rope_base}};
}

void from_json(const json& j, ModelConfig& c) {
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.ffn_kind = parse_ffn_kind(j.at("ffn_kind").get<std::string>());
    c.position_kind = parse_position_kind(j.at("position_kind").get<std::string>());
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.norm_eps = j.value("norm_eps", 1e-5);
    c.rope_base = j.value("rope_base", 10000.0);
}

void to_json(json& j, const NeuronSite& s) { j = json{{"layer", s.layer}, {"neuron", s.neuron}}; }

void from_json(const json& j, NeuronSite& s) {
    s.layer = j.at("layer").get<int>();
    s.neuron = j.at("neuron").get<int>();
}

void to_json(json& j, const EditPlan& p) {
    j = json{{"kind", std::string(to_string(p.kind))},
             {"beta", p.beta},
             {"target", std::string(to_string(p.target))},
             {"sites", p.sites}};
    j["seed"] = p.seed ? json(*p.seed) : json(nullptr);
}

void from_json(const json& j, EditPlan& p) {
    p.kind = parse_edit_kind(j.at("kind").get<std::string>());
    p.beta = j.at("beta").get<double>();
    p.target = parse_edit_target(j.value("target", std::string("outgoing")));
    p.sites = j.at("sites").get<std::vector<NeuronSite>>();
    if (j.contains("seed") && !j["seed"].is_null()) p.seed = j["seed"].get<std::uint64_t>();
    else p.seed.reset();
}

}  // namespace ircan
