#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ircan/config.hpp"
#include "ircan/edit_plan.hpp"
#include "ircan/graph.hpp"
#include "ircan/tensor.hpp"
#include "ircan/tokenizer.hpp"

namespace ircan {

// Post-nonlinearity FFN activations at the final input position, one
// [d_ff] tensor per layer. For gated FFNs this is silu(gate) * up.
struct ActivationTrace {
    std::vector<Tensor> layers;

    double at(const NeuronSite& s) const;
    friend bool operator==(const ActivationTrace&, const ActivationTrace&) = default;
};

// Replaces selected FFN activations of one layer with the values of a graph
// variable (rank-1, one entry per neuron). Position -1 is the final one.
struct ActivationPatch {
    int layer = 0;
    std::vector<int> neurons;
    Var values;
    int position = -1;
};

using SiteOverrides = std::map<NeuronSite, double>;

// Graph variables bound to the model weights for one forward/backward pass.
struct WeightVars {
    std::map<std::string, Var> vars;
    Var operator[](const std::string& name) const;
};

struct ForwardGraph {
    Var logits;                        // [T x V] or [1 x V] (final position only)
    std::vector<Var> ffn_activations;  // per layer, [T x d_ff], after patches
};

// Bookkeeping carried by an edited model so that edits compose exactly and
// can be reverted bit-for-bit.
struct EditState {
    std::vector<EditPlan> plans;
    std::map<std::string, std::shared_ptr<const Tensor>> originals;
    std::map<std::pair<EditTarget, NeuronSite>, double> factors;
};

class TransformerModel {
public:
    using WeightMap = std::map<std::string, std::shared_ptr<const Tensor>>;

    TransformerModel(ModelConfig config, Tokenizer tokenizer, std::map<std::string, Tensor> weights);
    TransformerModel(ModelConfig config, Tokenizer tokenizer, WeightMap weights);

    // Every tensor the architecture needs, with its shape, in name order.
    static std::vector<std::pair<std::string, Shape>> expected_tensors(const ModelConfig& cfg);
    static TransformerModel init_random(ModelConfig config, Tokenizer tokenizer, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return config_; }
    const Tokenizer& tokenizer() const noexcept { return tokenizer_; }
    const WeightMap& weights() const noexcept { return weights_; }
    const Tensor& weight(const std::string& name) const;
    std::shared_ptr<const Tensor> shared_weight(const std::string& name) const;
    // Replaces one tensor (same shape required); other tensors stay shared.
    void set_weight(const std::string& name, Tensor value);

    static std::string down_proj_name(int layer);
    static std::string up_proj_name(int layer);
    static std::string up_bias_name(int layer);

    WeightVars bind(Graph& g, bool trainable) const;
    ForwardGraph build(Graph& g, std::span<const int> tokens, std::span<const ActivationPatch> patches,
                       const WeightVars& w, bool all_positions) const;

    // Final-position logits, [vocab].
    Tensor logits(std::span<const int> tokens) const;
    Tensor forward_with_overrides(std::span<const int> tokens, const SiteOverrides& overrides) const;
    ActivationTrace record_activations(std::span<const int> tokens) const;

    // Teacher-forced sum of log p(answer_k | prompt, answer_<k); one forward
    // pass per answer token with `patches` applied at that pass's final position.
    Var answer_logprob(Graph& g, std::span<const int> prompt, std::span<const int> answer,
                       std::span<const ActivationPatch> patches, const WeightVars& w) const;
    double answer_logprob(std::span<const int> prompt, std::span<const int> answer,
                          const SiteOverrides& overrides = {}) const;

    const std::shared_ptr<const EditState>& edit_state() const noexcept { return edit_state_; }
    void set_edit_state(std::shared_ptr<const EditState> s) { edit_state_ = std::move(s); }
    // Plans recorded in a loaded checkpoint header (no revert data).
    const std::vector<EditPlan>& recorded_plans() const noexcept { return recorded_plans_; }
    void set_recorded_plans(std::vector<EditPlan> p) { recorded_plans_ = std::move(p); }

private:
    void check_tokens(std::span<const int> tokens) const;
    std::vector<ActivationPatch> to_patches(Graph& g, const SiteOverrides& overrides) const;

    ModelConfig config_;
    Tokenizer tokenizer_;
    WeightMap weights_;
    std::shared_ptr<const EditState> edit_state_;
    std::vector<EditPlan> recorded_plans_;
};

}  // namespace ircan
