#include "ircan/config.hpp"

#include <charconv>

#include "ircan/errors.hpp"

namespace ircan {

std::string_view to_string(FfnKind k) { return k == FfnKind::plain ? "plain" : "gated"; }
std::string_view to_string(PositionKind k) { return k == PositionKind::learned ? "learned" : "rotary"; }

FfnKind parse_ffn_kind(std::string_view s) {
    if (s == "plain") return FfnKind::plain;
    if (s == "gated") return FfnKind::gated;
    throw ParameterError("unknown ffn_kind '" + std::string(s) + "' (expected plain|gated)");
}

PositionKind parse_position_kind(std::string_view s) {
    if (s == "learned") return PositionKind::learned;
    if (s == "rotary") return PositionKind::rotary;
    throw ParameterError("unknown position_kind '" + std::string(s) + "' (expected learned|rotary)");
}

void ModelConfig::validate() const {
    auto need = [](bool ok, const char* what) {
        if (!ok) throw ParameterError(std::string("invalid model config: ") + what);
    };
    need(n_layers >= 1, "n_layers must be >= 1");
    need(n_heads >= 1, "n_heads must be >= 1");
    need(d_model >= 1, "d_model must be >= 1");
    need(d_ff >= 1, "d_ff must be >= 1");
    need(vocab_size >= 1, "vocab_size must be >= 1");
    need(max_seq_len >= 1, "max_seq_len must be >= 1");
    need(d_model % n_heads == 0, "d_model must be divisible by n_heads");
    need(position_kind != PositionKind::rotary || head_dim() % 2 == 0, "rotary positions need an even head dim");
    need(norm_eps > 0.0, "norm_eps must be positive");
}

std::string to_string(const NeuronSite& s) {
    return std::to_string(s.layer) + ":" + std::to_string(s.neuron);
}

NeuronSite parse_site(std::string_view text) {
    const auto colon = text.find(':');
    auto num = [&](std::string_view part) {
        int v = 0;
        auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
        if (part.empty() || ec != std::errc{} || ptr != part.data() + part.size()) {
            throw ParseError("bad neuron site '" + std::string(text) + "', expected layer:neuron");
        }
        return v;
    };
    if (colon == std::string_view::npos) throw ParseError("bad neuron site '" + std::string(text) + "', expected layer:neuron");
    return NeuronSite{num(text.substr(0, colon)), num(text.substr(colon + 1))};
}

void check_site(const ModelConfig& cfg, const NeuronSite& s) {
    if (s.layer < 0 || s.layer >= cfg.n_layers || s.neuron < 0 || s.neuron >= cfg.d_ff) {
        throw SiteError("neuron site " + to_string(s) + " out of range for " + std::to_string(cfg.n_layers) +
                        " layers x " + std::to_string(cfg.d_ff) + " neurons");
    }
}

}  // namespace ircan
