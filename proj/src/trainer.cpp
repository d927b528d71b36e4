#include "ircan/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "ircan/errors.hpp"

namespace ircan {

std::string_view to_string(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }

Optimizer parse_optimizer(std::string_view s) {
    if (s == "sgd") return Optimizer::sgd;
    if (s == "adam") return Optimizer::adam;
    throw ParameterError("unknown optimizer '" + std::string(s) + "' (expected sgd|adam)");
}

std::vector<CorpusSequence> corpus_training_sequences(const Tokenizer& tok, std::string_view corpus, int max_seq_len) {
    std::vector<CorpusSequence> seqs;
    std::istringstream in{std::string(corpus)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        CorpusSequence seq;
        if (auto tab = line.find('\t'); tab != std::string::npos) {
            if (line.find('\t', tab + 1) != std::string::npos)
                throw InputError("corpus line " + std::to_string(line_no) + " has more than one tab");
            const std::string prompt = line.substr(0, tab);
            seq.ids = tok.encode(prompt);
            seq.loss_from = std::max<std::size_t>(1, seq.ids.size());
            auto tail = tok.encode(" " + line.substr(tab + 1));
            seq.ids.insert(seq.ids.end(), tail.begin(), tail.end());
        } else {
            seq.ids = tok.encode(line);
        }
        seq.ids.push_back(tok.eos());
        if (seq.ids.size() > static_cast<std::size_t>(max_seq_len) + 1) {
            throw InputError("corpus line " + std::to_string(line_no) + " has " + std::to_string(seq.ids.size()) +
                             " tokens, more than max_seq_len + 1");
        }
        seqs.push_back(std::move(seq));
    }
    return seqs;
}

std::vector<std::vector<int>> corpus_sequences(const Tokenizer& tok, std::string_view corpus, int max_seq_len) {
    std::vector<std::vector<int>> out;
    for (auto& s : corpus_training_sequences(tok, corpus, max_seq_len)) out.push_back(std::move(s.ids));
    return out;
}

namespace {

// Sum of token losses over targets seq[loss_from..n-1]; inputs are seq[0..n-2].
Var sequence_loss(const TransformerModel& model, Graph& g, const WeightVars& w, const std::vector<int>& seq,
                  std::size_t loss_from = 1) {
    std::span<const int> inputs(seq.data(), seq.size() - 1);
    std::span<const int> targets(seq.data() + 1, seq.size() - 1);
    auto fg = model.build(g, inputs, {}, w, true);
    Var picked = pick_rows(log_softmax_rows(fg.logits), targets);
    if (loss_from > 1) {
        Tensor mask({targets.size()});
        for (std::size_t r = loss_from - 1; r < targets.size(); ++r) mask.raw()[r] = 1.0;
        picked = mul(picked, g.constant(std::move(mask)));
    }
    return scale(sum(picked), -1.0);
}

}  // namespace

double corpus_loss(const TransformerModel& model, const std::vector<std::vector<int>>& sequences) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& s : sequences) {
        if (s.size() < 2) continue;
        Graph g;
        auto w = model.bind(g, false);
        total += sequence_loss(model, g, w, s).value().item();
        count += s.size() - 1;
    }
    return count ? total / static_cast<double>(count) : 0.0;
}

TrainResult train_toy(ModelConfig config, std::string_view corpus, const TrainOptions& options) {
    return train_toy(std::move(config), Tokenizer::from_corpus(corpus), corpus, options);
}

TrainResult train_toy(ModelConfig config, const Tokenizer& tokenizer, std::string_view corpus,
                      const TrainOptions& options) {
    if (options.steps < 1) throw ParameterError("steps must be >= 1");
    if (options.batch_size < 1) throw ParameterError("batch_size must be >= 1");
    if (!(options.lr > 0.0)) throw ParameterError("lr must be positive");
    config.vocab_size = tokenizer.size();
    auto seqs = corpus_training_sequences(tokenizer, corpus, config.max_seq_len);
    std::erase_if(seqs, [](const auto& s) { return s.ids.size() <= s.loss_from; });
    if (seqs.empty()) throw InputError("corpus contains no trainable lines");

    TransformerModel model = TransformerModel::init_random(config, tokenizer, options.seed);
    std::mt19937_64 rng(options.seed ^ 0x9E3779B97F4A7C15ULL);
    std::uniform_int_distribution<std::size_t> pick_line(0, seqs.size() - 1);

    std::vector<std::string> names;
    for (const auto& [name, t] : model.weights()) names.push_back(name);
    std::vector<Tensor> m1, m2;
    for (const auto& n : names) {
        m1.emplace_back(model.weight(n).shape());
        m2.emplace_back(model.weight(n).shape());
    }
    const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

    TrainResult result{model, {}};
    for (int step = 0; step < options.steps; ++step) {
        Graph g;
        auto w = model.bind(g, true);
        std::vector<Var> leaves;
        for (const auto& n : names) leaves.push_back(w[n]);

        std::vector<Tensor> grads;
        double loss = 0.0;
        try {
            Var total;
            std::size_t count = 0;
            for (int b = 0; b < options.batch_size; ++b) {
                const auto& seq = seqs[pick_line(rng)];
                Var l = sequence_loss(model, g, w, seq.ids, seq.loss_from);
                total = b == 0 ? l : add(total, l);
                count += seq.ids.size() - seq.loss_from;
            }
            Var mean = scale(total, 1.0 / static_cast<double>(count));
            loss = mean.value().item();
            grads = g.backward(mean, leaves);
        } catch (const NumericError& e) {
            throw TrainingError("training diverged at step " + std::to_string(step) + ": " + e.what());
        }
        if (!std::isfinite(loss)) throw TrainingError("loss is not finite at step " + std::to_string(step));
        result.losses.push_back(loss);

        double scale_factor = 1.0;
        if (options.clip_norm > 0.0) {
            double sq = 0.0;
            for (const auto& gr : grads)
                for (double v : gr.raw()) sq += v * v;
            const double norm = std::sqrt(sq);
            if (norm > options.clip_norm) scale_factor = options.clip_norm / norm;
        }

        const double t = static_cast<double>(step + 1);
        const double lr = options.cosine_decay
                              ? options.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * step / options.steps))
                              : options.lr;
        for (std::size_t i = 0; i < names.size(); ++i) {
            Tensor updated = model.weight(names[i]);
            const auto& gr = grads[i].raw();
            auto& a = m1[i].raw();
            auto& b = m2[i].raw();
            auto& p = updated.raw();
            for (std::size_t k = 0; k < p.size(); ++k) {
                const double gk = gr[k] * scale_factor;
                if (options.optimizer == Optimizer::sgd) {
                    a[k] = options.momentum * a[k] + gk;
                    p[k] -= lr * a[k];
                } else {
                    a[k] = beta1 * a[k] + (1.0 - beta1) * gk;
                    b[k] = beta2 * b[k] + (1.0 - beta2) * gk * gk;
                    const double mh = a[k] / (1.0 - std::pow(beta1, t));
                    const double vh = b[k] / (1.0 - std::pow(beta2, t));
                    p[k] -= lr * mh / (std::sqrt(vh) + adam_eps);
                }
            }
            if (!updated.all_finite()) {
                throw TrainingError("weights became non-finite at step " + std::to_string(step) + " in '" + names[i] + "'");
            }
            model.set_weight(names[i], std::move(updated));
        }
        if (options.on_step) options.on_step(step, loss);
    }
    result.model = std::move(model);
    return result;
}

}  // namespace ircan
