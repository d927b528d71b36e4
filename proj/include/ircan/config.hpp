#pragma once

#include <compare>
#include <cstddef>
#include <string>
#include <string_view>

namespace ircan {

enum class FfnKind { plain, gated };
enum class PositionKind { learned, rotary };

std::string_view to_string(FfnKind k);
std::string_view to_string(PositionKind k);
FfnKind parse_ffn_kind(std::string_view s);
PositionKind parse_position_kind(std::string_view s);

// Architecture of a decoder-only transformer. `plain` FFNs use LayerNorm,
// biases and GELU (GPT-2 family); `gated` FFNs use RMSNorm, no biases and a
// SiLU gate (LLaMA family).
struct ModelConfig {
    int n_layers = 2;
    int n_heads = 4;
    int d_model = 64;
    int d_ff = 256;
    int vocab_size = 0;
    FfnKind ffn_kind = FfnKind::plain;
    PositionKind position_kind = PositionKind::learned;
    int max_seq_len = 64;
    double norm_eps = 1e-5;
    double rope_base = 10000.0;

    int head_dim() const { return d_model / n_heads; }
    // Throws ParameterError when an invariant is violated.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Address of one FFN intermediate unit.
struct NeuronSite {
    int layer = 0;
    int neuron = 0;

    friend auto operator<=>(const NeuronSite&, const NeuronSite&) = default;
};

std::string to_string(const NeuronSite& s);
// "layer:neuron", e.g. "1:37". Throws ParseError.
NeuronSite parse_site(std::string_view text);

// Throws SiteError if `s` does not address a neuron of `cfg`.
void check_site(const ModelConfig& cfg, const NeuronSite& s);

}  // namespace ircan
