#include "ircan/model.hpp"

#include <cmath>
#include <random>

#include "ircan/errors.hpp"

namespace ircan {

namespace {

std::string layer_prefix(int l) { return "layers." + std::to_string(l) + "."; }

}  // namespace

double ActivationTrace::at(const NeuronSite& s) const {
    if (s.layer < 0 || static_cast<std::size_t>(s.layer) >= layers.size() || s.neuron < 0 ||
        static_cast<std::size_t>(s.neuron) >= layers[static_cast<std::size_t>(s.layer)].numel()) {
        throw SiteError("trace has no site " + to_string(s));
    }
    return layers[static_cast<std::size_t>(s.layer)][static_cast<std::size_t>(s.neuron)];
}

Var WeightVars::operator[](const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw FormatError("weight '" + name + "' is not bound");
    return it->second;
}

std::vector<std::pair<std::string, Shape>> TransformerModel::expected_tensors(const ModelConfig& cfg) {
    const auto D = static_cast<std::size_t>(cfg.d_model);
    const auto F = static_cast<std::size_t>(cfg.d_ff);
    const auto V = static_cast<std::size_t>(cfg.vocab_size);
    const bool plain = cfg.ffn_kind == FfnKind::plain;
    std::map<std::string, Shape> out;
    out["tok_emb"] = {V, D};
    if (cfg.position_kind == PositionKind::learned) out["pos_emb"] = {static_cast<std::size_t>(cfg.max_seq_len), D};
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto p = layer_prefix(l);
        out[p + "attn_norm.weight"] = {D};
        out[p + "ffn_norm.weight"] = {D};
        for (const char* m : {"q", "k", "v", "o"}) out[p + "attn." + m + ".weight"] = {D, D};
        if (plain) {
            out[p + "attn_norm.bias"] = {D};
            out[p + "ffn_norm.bias"] = {D};
            for (const char* m : {"q", "k", "v", "o"}) out[p + "attn." + m + ".bias"] = {D};
            out[p + "ffn.up.bias"] = {F};
            out[p + "ffn.down.bias"] = {D};
        } else {
            out[p + "ffn.gate.weight"] = {D, F};
        }
        out[p + "ffn.up.weight"] = {D, F};
        out[p + "ffn.down.weight"] = {F, D};
    }
    out["final_norm.weight"] = {D};
    if (plain) out["final_norm.bias"] = {D};
    out["lm_head.weight"] = {D, V};
    return {out.begin(), out.end()};
}

std::string TransformerModel::down_proj_name(int layer) { return layer_prefix(layer) + "ffn.down.weight"; }
std::string TransformerModel::up_proj_name(int layer) { return layer_prefix(layer) + "ffn.up.weight"; }
std::string TransformerModel::up_bias_name(int layer) { return layer_prefix(layer) + "ffn.up.bias"; }

TransformerModel::TransformerModel(ModelConfig config, Tokenizer tokenizer, std::map<std::string, Tensor> weights)
    : TransformerModel(std::move(config), std::move(tokenizer), [&] {
          WeightMap m;
          for (auto& [k, v] : weights) m.emplace(k, std::make_shared<const Tensor>(std::move(v)));
          return m;
      }()) {}

TransformerModel::TransformerModel(ModelConfig config, Tokenizer tokenizer, WeightMap weights)
    : config_(std::move(config)), tokenizer_(std::move(tokenizer)), weights_(std::move(weights)) {
    config_.validate();
    if (tokenizer_.size() != config_.vocab_size) {
        throw FormatError("tokenizer has " + std::to_string(tokenizer_.size()) + " entries but vocab_size is " +
                          std::to_string(config_.vocab_size));
    }
    const auto expected = expected_tensors(config_);
    for (const auto& [name, shape] : expected) {
        auto it = weights_.find(name);
        if (it == weights_.end() || !it->second) throw FormatError("missing tensor '" + name + "'");
        if (it->second->shape() != shape) {
            throw FormatError("tensor '" + name + "' has shape " + shape_str(it->second->shape()) + ", expected " +
                              shape_str(shape));
        }
        it->second->require_finite(name.c_str());
    }
    if (weights_.size() != expected.size()) {
        for (const auto& [name, t] : weights_) {
            bool known = false;
            for (const auto& e : expected) known = known || e.first == name;
            if (!known) throw FormatError("unexpected tensor '" + name + "'");
        }
    }
}

TransformerModel TransformerModel::init_random(ModelConfig config, Tokenizer tokenizer, std::uint64_t seed) {
    config.vocab_size = tokenizer.size();
    config.validate();
    std::mt19937_64 rng(seed);
    std::map<std::string, Tensor> w;
    const double resid_scale = 1.0 / std::sqrt(2.0 * config.n_layers);
    for (const auto& [name, shape] : expected_tensors(config)) {
        Tensor t(shape);
        const bool is_norm = name.find("norm.weight") != std::string::npos;
        const bool is_bias = name.size() > 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
        if (is_norm) {
            for (auto& v : t.raw()) v = 1.0;
        } else if (!is_bias) {
            double sd = 0.1;
            if (shape.size() == 2 && name != "tok_emb" && name != "pos_emb") {
                sd = 1.0 / std::sqrt(static_cast<double>(shape[0]));
                if (name.find("attn.o.") != std::string::npos || name.find("ffn.down.") != std::string::npos) {
                    sd *= resid_scale;
                }
            }
            std::normal_distribution<double> nd(0.0, sd);
            for (auto& v : t.raw()) v = nd(rng);
        }
        w.emplace(name, std::move(t));
    }
    return TransformerModel(std::move(config), std::move(tokenizer), std::move(w));
}

const Tensor& TransformerModel::weight(const std::string& name) const { return *shared_weight(name); }

std::shared_ptr<const Tensor> TransformerModel::shared_weight(const std::string& name) const {
    auto it = weights_.find(name);
    if (it == weights_.end()) throw FormatError("no tensor named '" + name + "'");
    return it->second;
}

void TransformerModel::set_weight(const std::string& name, Tensor value) {
    auto it = weights_.find(name);
    if (it == weights_.end()) throw FormatError("no tensor named '" + name + "'");
    if (it->second->shape() != value.shape()) throw DimensionError("set_weight: shape mismatch for '" + name + "'");
    value.require_finite(name.c_str());
    it->second = std::make_shared<const Tensor>(std::move(value));
}

WeightVars TransformerModel::bind(Graph& g, bool trainable) const {
    WeightVars w;
    for (const auto& [name, t] : weights_) w.vars.emplace(name, g.leaf(t, trainable));
    return w;
}

void TransformerModel::check_tokens(std::span<const int> tokens) const {
    if (tokens.empty()) throw InputError("empty token sequence");
    if (tokens.size() > static_cast<std::size_t>(config_.max_seq_len)) {
        throw InputError("sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_seq_len " +
                         std::to_string(config_.max_seq_len));
    }
    for (int t : tokens)
        if (t < 0 || t >= config_.vocab_size) throw InputError("token id " + std::to_string(t) + " out of range");
}

ForwardGraph TransformerModel::build(Graph& g, std::span<const int> tokens, std::span<const ActivationPatch> patches,
                                     const WeightVars& w, bool all_positions) const {
    check_tokens(tokens);
    for (const auto& p : patches) {
        for (int n : p.neurons) check_site(config_, {p.layer, n});
        if (p.values.graph != &g) throw DimensionError("activation patch values belong to another graph");
        if (p.position >= static_cast<int>(tokens.size())) throw InputError("activation patch position past the input");
    }
    const bool plain = config_.ffn_kind == FfnKind::plain;
    const double eps = config_.norm_eps;
    auto norm = [&](Var x, const std::string& prefix) {
        if (plain) return add_row(mul_row(layer_norm_rows(x, eps), w[prefix + ".weight"]), w[prefix + ".bias"]);
        return mul_row(rms_norm_rows(x, eps), w[prefix + ".weight"]);
    };
    auto linear = [&](Var x, const std::string& prefix) {
        Var y = matmul(x, w[prefix + ".weight"]);
        if (plain) y = add_row(y, w[prefix + ".bias"]);
        return y;
    };

    const std::size_t T = tokens.size();
    Var x = embedding(w["tok_emb"], tokens);
    if (config_.position_kind == PositionKind::learned) {
        std::vector<int> pos(T);
        for (std::size_t i = 0; i < T; ++i) pos[i] = static_cast<int>(i);
        x = add(x, embedding(w["pos_emb"], pos));
    }

    const auto hd = static_cast<std::size_t>(config_.head_dim());
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    ForwardGraph out;
    for (int l = 0; l < config_.n_layers; ++l) {
        const auto p = layer_prefix(l);
        Var h = norm(x, p + "attn_norm");
        Var q = linear(h, p + "attn.q");
        Var k = linear(h, p + "attn.k");
        Var v = linear(h, p + "attn.v");
        std::vector<Var> heads;
        for (int hi = 0; hi < config_.n_heads; ++hi) {
            const auto off = static_cast<std::size_t>(hi) * hd;
            Var qh = slice_cols(q, off, hd), kh = slice_cols(k, off, hd), vh = slice_cols(v, off, hd);
            if (config_.position_kind == PositionKind::rotary) {
                qh = rotary(qh, config_.rope_base);
                kh = rotary(kh, config_.rope_base);
            }
            Var att = causal_softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
            heads.push_back(matmul(att, vh));
        }
        x = add(x, linear(heads.size() == 1 ? heads.front() : concat_cols(heads), p + "attn.o"));

        h = norm(x, p + "ffn_norm");
        Var act;
        if (plain) {
            act = gelu(linear(h, p + "ffn.up"));
        } else {
            act = mul(silu(matmul(h, w[p + "ffn.gate.weight"])), matmul(h, w[p + "ffn.up.weight"]));
        }
        for (const auto& patch : patches)
            if (patch.layer == l) {
                const std::size_t row = patch.position < 0 ? T - 1 : static_cast<std::size_t>(patch.position);
                act = override_row(act, row, patch.neurons, patch.values);
            }
        out.ffn_activations.push_back(act);
        x = add(x, linear(act, p + "ffn.down"));
    }
    if (!all_positions) x = select_row(x, T - 1);
    out.logits = matmul(norm(x, "final_norm"), w["lm_head.weight"]);
    return out;
}

Tensor TransformerModel::logits(std::span<const int> tokens) const {
    Graph g;
    auto w = bind(g, false);
    auto fg = build(g, tokens, {}, w, false);
    return fg.logits.value().reshaped({static_cast<std::size_t>(config_.vocab_size)});
}

std::vector<ActivationPatch> TransformerModel::to_patches(Graph& g, const SiteOverrides& overrides) const {
    std::map<int, std::pair<std::vector<int>, std::vector<double>>> by_layer;
    for (const auto& [site, value] : overrides) {
        check_site(config_, site);
        by_layer[site.layer].first.push_back(site.neuron);
        by_layer[site.layer].second.push_back(value);
    }
    std::vector<ActivationPatch> patches;
    for (auto& [layer, nv] : by_layer) {
        patches.push_back({layer, nv.first, g.constant(Tensor::vector(nv.second))});
    }
    return patches;
}

Tensor TransformerModel::forward_with_overrides(std::span<const int> tokens, const SiteOverrides& overrides) const {
    Graph g;
    auto w = bind(g, false);
    auto patches = to_patches(g, overrides);
    auto fg = build(g, tokens, patches, w, false);
    return fg.logits.value().reshaped({static_cast<std::size_t>(config_.vocab_size)});
}

ActivationTrace TransformerModel::record_activations(std::span<const int> tokens) const {
    Graph g;
    auto w = bind(g, false);
    auto fg = build(g, tokens, {}, w, false);
    ActivationTrace trace;
    const auto last = tokens.size() - 1;
    for (const auto& a : fg.ffn_activations) {
        auto r = a.value().row(last);
        trace.layers.push_back(Tensor::vector({r.begin(), r.end()}));
    }
    return trace;
}

Var TransformerModel::answer_logprob(Graph& g, std::span<const int> prompt, std::span<const int> answer,
                                     std::span<const ActivationPatch> patches, const WeightVars& w) const {
    if (answer.empty()) throw InputError("answer must contain at least one token");
    if (prompt.empty()) throw InputError("empty prompt");
    if (prompt.size() + answer.size() - 1 > static_cast<std::size_t>(config_.max_seq_len)) {
        throw InputError("prompt + answer (" + std::to_string(prompt.size() + answer.size()) +
                         " tokens) overflows max_seq_len " + std::to_string(config_.max_seq_len));
    }
    std::vector<int> seq(prompt.begin(), prompt.end());
    Var total;
    for (std::size_t k = 0; k < answer.size(); ++k) {
        auto fg = build(g, seq, patches, w, false);
        Var lp = pick(log_softmax_rows(fg.logits), static_cast<std::size_t>(answer[k]));
        total = k == 0 ? lp : add(total, lp);
        seq.push_back(answer[k]);
    }
    return total;
}

double TransformerModel::answer_logprob(std::span<const int> prompt, std::span<const int> answer,
                                        const SiteOverrides& overrides) const {
    Graph g;
    auto w = bind(g, false);
    auto patches = to_patches(g, overrides);
    return answer_logprob(g, prompt, answer, patches, w).value().item();
}

}  // namespace ircan
