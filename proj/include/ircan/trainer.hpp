#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "ircan/model.hpp"

namespace ircan {

enum class Optimizer { sgd, adam };

std::string_view to_string(Optimizer o);
Optimizer parse_optimizer(std::string_view s);

struct TrainOptions {
    int steps = 2000;
    double lr = 0.1;
    std::uint64_t seed = 0;
    int batch_size = 16;
    Optimizer optimizer = Optimizer::sgd;
    double momentum = 0.9;    // sgd only
    double clip_norm = 1.0;   // global gradient-norm clip, <= 0 disables
    bool cosine_decay = false;  // anneal lr to 0 over `steps`
    // Called after every step with (step, batch loss).
    std::function<void(int, double)> on_step;
};

struct TrainResult {
    TransformerModel model;
    std::vector<double> losses;  // per step, measured before the update
};

// One training sequence per non-empty corpus line, terminated by <eos>.
// A tab in a line reads as a space, but everything before it is
// conditioning only: those tokens are never loss targets.
struct CorpusSequence {
    std::vector<int> ids;
    std::size_t loss_from = 1;  // first index of `ids` that is a target
};
std::vector<CorpusSequence> corpus_training_sequences(const Tokenizer& tok, std::string_view corpus, int max_seq_len);
std::vector<std::vector<int>> corpus_sequences(const Tokenizer& tok, std::string_view corpus, int max_seq_len);

// Next-token cross-entropy minimization with deterministic minibatches.
// `config.vocab_size` is taken from `tokenizer`. Throws TrainingError naming
// the step when the loss or a gradient becomes non-finite.
TrainResult train_toy(ModelConfig config, const Tokenizer& tokenizer, std::string_view corpus,
                      const TrainOptions& options);
TrainResult train_toy(ModelConfig config, std::string_view corpus, const TrainOptions& options);

// Mean next-token cross-entropy of `model` over the given sequences.
double corpus_loss(const TransformerModel& model, const std::vector<std::vector<int>>& sequences);

}  // namespace ircan
