#pragma once

// Shared fixtures for the unit tests and the acceptance suite.

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ircan/graph.hpp"
#include "ircan/model.hpp"

namespace ircan::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> n(0.0, scale);
    for (auto& v : t.raw()) v = n(rng);
    return t;
}

// ||a - b|| / max(||a||, ||b||); tensors whose true gradient is exactly zero
// (both norms below `zero_floor`) are compared absolutely instead.
inline double grad_rel_error(const Tensor& a, const Tensor& b, double zero_floor = 1e-8) {
    double d = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        d += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    d = std::sqrt(d);
    const double denom = std::max(std::sqrt(na), std::sqrt(nb));
    if (denom < zero_floor) return d / zero_floor;
    return d / denom;
}

// Closed toy vocabulary: <eos> plus a handful of words with and without a
// leading space.
inline Tokenizer toy_tokenizer() {
    return Tokenizer::from_corpus("alpha beta gamma delta omega is.\nkappa lambda sigma tau is.\n");
}

inline ModelConfig toy_config(int layers = 2, int d_ff = 8, FfnKind ffn = FfnKind::plain,
                              PositionKind pos = PositionKind::learned) {
    ModelConfig c;
    c.n_layers = layers;
    c.n_heads = 2;
    c.d_model = 8;
    c.d_ff = d_ff;
    c.max_seq_len = 16;
    c.ffn_kind = ffn;
    c.position_kind = pos;
    return c;
}

inline TransformerModel toy_model(std::uint64_t seed, ModelConfig c = toy_config()) {
    Tokenizer tok = toy_tokenizer();
    c.vocab_size = tok.size();
    return TransformerModel::init_random(c, tok, seed);
}

// Random model with larger weights so attention and FFNs are far from linear.
inline TransformerModel spiky_model(std::uint64_t seed, ModelConfig c = toy_config()) {
    TransformerModel m = toy_model(seed, c);
    std::mt19937_64 rng(seed * 7919 + 1);
    for (const auto& [name, t] : m.weights()) {
        Tensor v = *t;
        std::normal_distribution<double> n(0.0, 0.6);
        for (auto& x : v.raw()) x += n(rng);
        m.set_weight(name, std::move(v));
    }
    return m;
}

// Random 3-layer network exercising most differentiable ops.
inline Var random_net(Graph& g, const std::vector<Var>& p, std::span<const int> targets) {
    Var h = layer_norm_rows(matmul(p[0], p[1]), 1e-5);
    h = gelu(add_row(h, p[2]));
    h = silu(matmul(h, p[3]));
    Var attn = causal_softmax_rows(matmul(h, transpose(h)));
    h = add(h, matmul(attn, h));
    h = rms_norm_rows(h, 1e-6);
    return sum(pick_rows(log_softmax_rows(matmul(h, p[4])), targets));
}

// Reverse-mode vs central-difference (eps 1e-5) error of each parameter of a
// randomly sized network.
inline std::vector<double> random_net_gradient_errors(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    // H >= 3: layer norm over two entries is constant up to sign, so its true
    // gradient vanishes and the comparison would only measure round-off.
    const std::size_t T = 2 + rng() % 4, D = 2 + rng() % 5, H = 3 + rng() % 5, V = 2 + rng() % 6;
    std::vector<Tensor> params{random_tensor({T, D}, rng), random_tensor({D, H}, rng, 0.7),
                               random_tensor({H}, rng, 0.3), random_tensor({H, H}, rng, 0.7),
                               random_tensor({H, V}, rng, 0.7)};
    std::vector<int> targets(T);
    for (auto& t : targets) t = static_cast<int>(rng() % V);

    Graph g;
    std::vector<Var> leaves;
    for (const auto& p : params) leaves.push_back(g.leaf(p));
    const auto grads = g.backward(random_net(g, leaves, targets), leaves);

    std::vector<double> errs;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const Tensor fd = finite_difference(
            [&](const Tensor& v) {
                Graph g2;
                std::vector<Var> p2;
                for (std::size_t j = 0; j < params.size(); ++j) p2.push_back(g2.constant(j == k ? v : params[j]));
                return random_net(g2, p2, targets).value().item();
            },
            params[k], 1e-5);
        errs.push_back(grad_rel_error(grads[k], fd));
    }
    return errs;
}

}  // namespace ircan::testing
