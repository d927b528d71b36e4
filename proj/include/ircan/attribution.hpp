#pragma once

// Context-aware attribution: integrated gradients of the answer probability
// along the straight path from question-only FFN activations to
// context+question activations, approximated with an m-step Riemann sum at
// the points k/m, k = 1..m.

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ircan/data.hpp"
#include "ircan/model.hpp"

namespace ircan {

enum class AttributionMode { per_neuron_exact, joint_layer };
enum class Precision { f32, f64 };

std::string_view to_string(AttributionMode m);
AttributionMode parse_attribution_mode(std::string_view s);
std::string_view to_string(Precision p);
Precision parse_precision(std::string_view s);

struct AttributionConfig {
    int m = 20;
    AttributionMode mode = AttributionMode::joint_layer;
    // f32 evaluates a copy of the model with weights rounded to 32-bit floats.
    Precision precision = Precision::f64;
    int threads = 1;

    void validate() const;
};

// Tokenized (c,q) / q inputs and the gold answer continuation.
struct AttributionInput {
    std::string id;
    std::vector<int> context_question;
    std::vector<int> question;
    std::vector<int> answer;
};

AttributionInput make_attribution_input(const Tokenizer& tok, const ConflictExample& ex, const PromptTemplate& tmpl);

using SiteScores = std::map<NeuronSite, double>;

struct AttributionMatrix {
    std::vector<std::string> ids;      // example order
    std::vector<SiteScores> scores;    // one map per example, covering every site

    std::size_t size() const { return ids.size(); }
    friend bool operator==(const AttributionMatrix&, const AttributionMatrix&) = default;
};

// Endpoint activations of one example: v_q and v_(c,q) at the final position.
struct AttributionEndpoints {
    ActivationTrace question;
    ActivationTrace context_question;
};

AttributionEndpoints record_endpoints(const TransformerModel& model, const AttributionInput& in);

// P(answer | c,q) with `site` set to v_q + alpha (v_cq - v_q).
double path_prob(const TransformerModel& model, const AttributionInput& in, const NeuronSite& site, double alpha);

// P(answer | c,q) with the whole layer set to v_q + alpha (v_cq - v_q).
double layer_path_prob(const TransformerModel& model, const AttributionInput& in, int layer, double alpha);

// dP/dv at the given override value of one site (other sites natural).
double site_gradient(const TransformerModel& model, const AttributionInput& in, const NeuronSite& site, double value);

double attribute_neuron(const TransformerModel& model, const AttributionInput& in, const NeuronSite& site,
                        const AttributionConfig& cfg);
SiteScores attribute_layer_joint(const TransformerModel& model, const AttributionInput& in, int layer,
                                 const AttributionConfig& cfg);
SiteScores attribute_example(const TransformerModel& model, const AttributionInput& in, const AttributionConfig& cfg);
AttributionMatrix attribute_dataset(const TransformerModel& model, const std::vector<AttributionInput>& inputs,
                                    const AttributionConfig& cfg);

// CSV: example_id,layer,neuron,score; rows ordered by example, layer, neuron.
std::string attribution_csv(const AttributionMatrix& m);
AttributionMatrix parse_attribution_csv(std::string_view csv);
void save_attribution_csv(const AttributionMatrix& m, const std::filesystem::path& path);
AttributionMatrix load_attribution_csv(const std::filesystem::path& path);

TransformerModel round_weights_to_f32(const TransformerModel& model);

}  // namespace ircan
