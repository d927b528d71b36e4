#include "ircan/attribution.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

#include "ircan/errors.hpp"
#include "ircan/parallel.hpp"

namespace ircan {

std::string_view to_string(AttributionMode m) {
    return m == AttributionMode::per_neuron_exact ? "per_neuron_exact" : "joint_layer";
}

AttributionMode parse_attribution_mode(std::string_view s) {
    if (s == "per_neuron_exact") return AttributionMode::per_neuron_exact;
    if (s == "joint_layer") return AttributionMode::joint_layer;
    throw ParameterError("unknown attribution mode '" + std::string(s) + "'");
}

std::string_view to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(std::string_view s) {
    if (s == "f32") return Precision::f32;
    if (s == "f64") return Precision::f64;
    throw ParameterError("unknown precision '" + std::string(s) + "'");
}

void AttributionConfig::validate() const {
    if (m < 1) throw ParameterError("attribution needs m >= 1, got " + std::to_string(m));
}

AttributionInput make_attribution_input(const Tokenizer& tok, const ConflictExample& ex, const PromptTemplate& tmpl) {
    AttributionInput in;
    in.id = ex.id;
    try {
        in.context_question = tok.encode(tmpl.render(ex));
        in.question = tok.encode(tmpl.render_without_context(ex));
        in.answer = tok.encode(answer_continuation(ex, ex.gold_answer));
    } catch (const TokenizationError& e) {
        throw InputError("example '" + ex.id + "': " + e.what());
    }
    if (in.answer.empty()) throw InputError("example '" + ex.id + "': empty answer");
    return in;
}

AttributionEndpoints record_endpoints(const TransformerModel& model, const AttributionInput& in) {
    return {model.record_activations(in.question), model.record_activations(in.context_question)};
}

TransformerModel round_weights_to_f32(const TransformerModel& model) {
    TransformerModel out = model;
    for (const auto& [name, t] : model.weights()) {
        Tensor r = *t;
        for (auto& v : r.raw()) v = static_cast<double>(static_cast<float>(v));
        out.set_weight(name, std::move(r));
    }
    return out;
}

namespace {

struct Interp {
    std::vector<int> neurons;
    std::vector<double> start, delta;

    std::vector<double> at(double alpha) const {
        std::vector<double> v(start.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = start[i] + alpha * delta[i];
        return v;
    }
};

Interp layer_path(const AttributionEndpoints& ep, int layer, std::span<const int> neurons) {
    Interp p;
    p.neurons.assign(neurons.begin(), neurons.end());
    for (int n : neurons) {
        const double vq = ep.question.at({layer, n});
        const double vcq = ep.context_question.at({layer, n});
        p.start.push_back(vq);
        p.delta.push_back(vcq - vq);
    }
    return p;
}

// P and dP/dvalues with layer `layer`'s `neurons` overridden to `values`.
std::pair<double, Tensor> prob_and_grad(const TransformerModel& model, const AttributionInput& in, int layer,
                                        const std::vector<int>& neurons, std::vector<double> values, bool want_grad) {
    Graph g;
    auto w = model.bind(g, false);
    Var leaf = g.leaf(Tensor::vector(std::move(values)), want_grad);
    ActivationPatch patch{layer, neurons, leaf};
    Var lp = model.answer_logprob(g, in.context_question, in.answer, std::span(&patch, 1), w);
    Var p = exp(lp);
    if (!want_grad) return {p.value().item(), Tensor{}};
    Tensor grad = g.backward(p, leaf);
    grad.require_finite("attribution gradient");
    return {p.value().item(), std::move(grad)};
}

std::vector<int> all_neurons(const ModelConfig& cfg) {
    std::vector<int> n(static_cast<std::size_t>(cfg.d_ff));
    for (int i = 0; i < cfg.d_ff; ++i) n[static_cast<std::size_t>(i)] = i;
    return n;
}

// Riemann sum over k = 1..m for every neuron in `neurons` along one joint path.
std::vector<double> riemann_scores(const TransformerModel& model, const AttributionInput& in,
                                   const AttributionEndpoints& ep, int layer, const std::vector<int>& neurons, int m) {
    Interp path = layer_path(ep, layer, neurons);
    std::vector<double> sums(neurons.size(), 0.0);
    bool any = false;
    for (double d : path.delta) any = any || d != 0.0;
    if (any) {
        for (int k = 1; k <= m; ++k) {
            const double alpha = static_cast<double>(k) / static_cast<double>(m);
            auto [p, grad] = prob_and_grad(model, in, layer, neurons, path.at(alpha), true);
            for (std::size_t i = 0; i < sums.size(); ++i) sums[i] += grad[i];
        }
    }
    std::vector<double> scores(neurons.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        // Zero-length paths score exactly +0.
        scores[i] = path.delta[i] == 0.0 ? 0.0 : path.delta[i] / static_cast<double>(m) * sums[i];
    }
    return scores;
}

const TransformerModel& precision_model(const TransformerModel& model, const AttributionConfig& cfg,
                                        std::optional<TransformerModel>& holder) {
    if (cfg.precision == Precision::f64) return model;
    holder.emplace(round_weights_to_f32(model));
    return *holder;
}

SiteScores example_scores(const TransformerModel& model, const AttributionInput& in, const AttributionConfig& cfg) {
    const auto& mc = model.config();
    const auto ep = record_endpoints(model, in);
    SiteScores out;
    for (int l = 0; l < mc.n_layers; ++l) {
        if (cfg.mode == AttributionMode::joint_layer) {
            auto neurons = all_neurons(mc);
            auto s = riemann_scores(model, in, ep, l, neurons, cfg.m);
            for (std::size_t i = 0; i < neurons.size(); ++i) out[{l, neurons[i]}] = s[i];
        } else {
            for (int n = 0; n < mc.d_ff; ++n) {
                std::vector<int> one{n};
                out[{l, n}] = riemann_scores(model, in, ep, l, one, cfg.m)[0];
            }
        }
    }
    return out;
}

}  // namespace

double path_prob(const TransformerModel& model, const AttributionInput& in, const NeuronSite& site, double alpha) {
    check_site(model.config(), site);
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ParameterError("alpha must lie in [0, 1]");
    const auto ep = record_endpoints(model, in);
    std::vector<int> one{site.neuron};
    return prob_and_grad(model, in, site.layer, one, layer_path(ep, site.layer, one).at(alpha), false).first;
}

double layer_path_prob(const TransformerModel& model, const AttributionInput& in, int layer, double alpha) {
    check_site(model.config(), {layer, 0});
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ParameterError("alpha must lie in [0, 1]");
    const auto ep = record_endpoints(model, in);
    auto neurons = all_neurons(model.config());
    return prob_and_grad(model, in, layer, neurons, layer_path(ep, layer, neurons).at(alpha), false).first;
}

double site_gradient(const TransformerModel& model, const AttributionInput& in, const NeuronSite& site, double value) {
    check_site(model.config(), site);
    return prob_and_grad(model, in, site.layer, {site.neuron}, {value}, true).second[0];
}

double attribute_neuron(const TransformerModel& model, const AttributionInput& in, const NeuronSite& site,
                        const AttributionConfig& cfg) {
    cfg.validate();
    if (cfg.mode != AttributionMode::per_neuron_exact) throw ParameterError("attribute_neuron requires per_neuron_exact mode");
    check_site(model.config(), site);
    std::optional<TransformerModel> holder;
    const auto& mdl = precision_model(model, cfg, holder);
    const auto ep = record_endpoints(mdl, in);
    return riemann_scores(mdl, in, ep, site.layer, {site.neuron}, cfg.m)[0];
}

SiteScores attribute_layer_joint(const TransformerModel& model, const AttributionInput& in, int layer,
                                 const AttributionConfig& cfg) {
    cfg.validate();
    if (cfg.mode != AttributionMode::joint_layer) throw ParameterError("attribute_layer_joint requires joint_layer mode");
    check_site(model.config(), {layer, 0});
    std::optional<TransformerModel> holder;
    const auto& mdl = precision_model(model, cfg, holder);
    const auto ep = record_endpoints(mdl, in);
    auto neurons = all_neurons(mdl.config());
    auto s = riemann_scores(mdl, in, ep, layer, neurons, cfg.m);
    SiteScores out;
    for (std::size_t i = 0; i < neurons.size(); ++i) out[{layer, neurons[i]}] = s[i];
    return out;
}

SiteScores attribute_example(const TransformerModel& model, const AttributionInput& in, const AttributionConfig& cfg) {
    cfg.validate();
    std::optional<TransformerModel> holder;
    return example_scores(precision_model(model, cfg, holder), in, cfg);
}

AttributionMatrix attribute_dataset(const TransformerModel& model, const std::vector<AttributionInput>& inputs,
                                    const AttributionConfig& cfg) {
    cfg.validate();
    std::optional<TransformerModel> holder;
    const auto& mdl = precision_model(model, cfg, holder);
    AttributionMatrix out;
    out.scores.resize(inputs.size());
    for (const auto& in : inputs) out.ids.push_back(in.id);
    parallel_for(inputs.size(), cfg.threads, [&](std::size_t i) { out.scores[i] = example_scores(mdl, inputs[i], cfg); });
    return out;
}

std::string attribution_csv(const AttributionMatrix& m) {
    std::string out = "example_id,layer,neuron,score\n";
    char buf[64];
    for (std::size_t e = 0; e < m.size(); ++e) {
        for (const auto& [site, score] : m.scores[e]) {
            std::snprintf(buf, sizeof buf, ",%d,%d,%.17g\n", site.layer, site.neuron, score);
            out += m.ids[e];
            out += buf;
        }
    }
    return out;
}

AttributionMatrix parse_attribution_csv(std::string_view csv) {
    AttributionMatrix m;
    std::istringstream in{std::string(csv)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1 && line.rfind("example_id", 0) == 0) continue;
        std::vector<std::string> cols;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cols.push_back(cell);
        if (cols.size() != 4) throw ParseError("attribution CSV line " + std::to_string(line_no) + ": expected 4 columns");
        NeuronSite s;
        double score = 0.0;
        try {
            s.layer = std::stoi(cols[1]);
            s.neuron = std::stoi(cols[2]);
            score = std::stod(cols[3]);
        } catch (const std::exception&) {
            throw ParseError("attribution CSV line " + std::to_string(line_no) + ": bad number");
        }
        if (m.ids.empty() || m.ids.back() != cols[0]) {
            for (const auto& id : m.ids)
                if (id == cols[0]) throw ParseError("attribution CSV line " + std::to_string(line_no) + ": rows for '" + id + "' are not contiguous");
            m.ids.push_back(cols[0]);
            m.scores.emplace_back();
        }
        if (!std::isfinite(score)) throw ParseError("attribution CSV line " + std::to_string(line_no) + ": non-finite score");
        if (!m.scores.back().emplace(s, score).second) {
            throw ParseError("attribution CSV line " + std::to_string(line_no) + ": duplicate site");
        }
    }
    return m;
}

void save_attribution_csv(const AttributionMatrix& m, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ParseError("cannot write '" + path.string() + "'");
    f << attribution_csv(m);
}

AttributionMatrix load_attribution_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_attribution_csv(ss.str());
}

}  // namespace ircan
