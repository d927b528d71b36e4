#include <doctest.h>

#include <cmath>
#include <random>

#include "ircan/checkpoint.hpp"
#include "ircan/data.hpp"
#include "ircan/errors.hpp"
#include "ircan/harness.hpp"
#include "ircan/model.hpp"
#include "ircan/trainer.hpp"
#include "support.hpp"

using namespace ircan;
using namespace ircan::testing;

namespace {

std::vector<int> enc(const TransformerModel& m, const std::string& s) { return m.tokenizer().encode(s); }

TransformerModel zero_model(ModelConfig c) {
    TransformerModel m = toy_model(1, c);
    for (const auto& [name, t] : m.weights()) m.set_weight(name, Tensor(t->shape(), 0.0));
    return m;
}

}  // namespace

TEST_CASE("tokenizer round trips") {
    Tokenizer tok = toy_tokenizer();
    CHECK(tok.encode("").empty());
    CHECK(tok.decode(std::vector<int>{}).empty());
    auto one = tok.encode("alpha");
    REQUIRE(one.size() == 1);
    CHECK(tok.decode(one) == "alpha");
    CHECK(tok.decode(tok.encode("alpha beta is gamma.")) == "alpha beta is gamma.");
    CHECK_THROWS_AS(tok.encode("zeta"), TokenizationError);
    CHECK(tok.token(tok.eos()) == "<eos>");
}

TEST_CASE("synthetic corpus sentences round trip") {
    SyntheticSpec spec;
    spec.n_conflicts = 20;
    auto data = gen_synthetic(spec);
    Tokenizer tok = Tokenizer::from_corpus(data.corpus);
    std::size_t start = 0;
    int lines = 0;
    while (start < data.corpus.size()) {
        const auto end = data.corpus.find('\n', start);
        const std::string line = data.corpus.substr(start, end - start);
        CHECK(tok.decode(tok.encode(line)) == line);
        start = end + 1;
        ++lines;
    }
    CHECK(lines == spec.n_entities * spec.n_relations);
}

TEST_CASE("byte fallback covers unknown text") {
    std::vector<std::string> table{"<eos>", "ab"};
    for (int b = 0; b < 256; ++b) {
        char buf[8];
        std::snprintf(buf, sizeof buf, "<0x%02X>", b);
        table.emplace_back(buf);
    }
    Tokenizer tok(table);
    CHECK(tok.has_byte_fallback());
    const auto ids = tok.encode("abz!");
    CHECK(ids.size() == 3);
    CHECK(tok.decode(ids) == "abz!");
}

TEST_CASE("record_activations") {
    auto m = spiky_model(3);
    const auto cq = enc(m, "alpha beta is gamma. alpha beta is");
    const auto q = enc(m, "alpha beta is");
    CHECK(m.record_activations(cq) == m.record_activations(cq));
    const auto a = m.record_activations(cq), b = m.record_activations(q);
    bool differs = false;
    for (std::size_t l = 0; l < a.layers.size(); ++l) differs |= !(a.layers[l] == b.layers[l]);
    CHECK(differs);
    CHECK_THROWS_AS(m.record_activations(std::vector<int>{}), InputError);

    for (auto ffn : {FfnKind::plain, FfnKind::gated}) {
        auto z = zero_model(toy_config(2, 8, ffn));
        for (const auto& layer : z.record_activations(q).layers)
            for (double v : layer.raw()) CHECK(v == 0.0);  // gelu(0) == silu(0) * 0 == 0
    }
}

TEST_CASE("forward_with_overrides") {
    for (auto ffn : {FfnKind::plain, FfnKind::gated}) {
        for (auto pos : {PositionKind::learned, PositionKind::rotary}) {
            auto m = spiky_model(5, toy_config(2, 8, ffn, pos));
            const auto toks = enc(m, "kappa lambda is sigma. kappa lambda is");
            const Tensor plain = m.logits(toks);
            CHECK(m.forward_with_overrides(toks, {}) == plain);

            const auto trace = m.record_activations(toks);
            const NeuronSite s{1, 3};
            CHECK(max_abs_diff(m.forward_with_overrides(toks, {{s, trace.at(s)}}), plain) < 1e-12);

            SiteOverrides all;
            for (int l = 0; l < 2; ++l)
                for (int n = 0; n < 8; ++n) all[{l, n}] = trace.at({l, n});
            CHECK(max_abs_diff(m.forward_with_overrides(toks, all), plain) < 1e-10);

            // Zeroing a last-layer activation at the final position equals zeroing
            // its outgoing row (earlier positions do not reach later layers).
            auto cut = m;
            Tensor down = m.weight(TransformerModel::down_proj_name(1));
            for (std::size_t c = 0; c < down.cols(); ++c) down.at(3, c) = 0.0;
            cut.set_weight(TransformerModel::down_proj_name(1), down);
            CHECK(max_abs_diff(m.forward_with_overrides(toks, {{s, 0.0}}), cut.logits(toks)) < 1e-12);

            CHECK_THROWS_AS(m.forward_with_overrides(toks, {{NeuronSite{2, 0}, 1.0}}), SiteError);
            CHECK_THROWS_AS(m.forward_with_overrides(toks, {{NeuronSite{0, 8}, 1.0}}), SiteError);
        }
    }
}

TEST_CASE("scaling the outgoing row equals scaling the activation on a 1-layer model") {
    auto m = spiky_model(8, toy_config(1, 6));
    const auto toks = enc(m, "alpha beta is gamma. alpha beta is");
    const auto trace = m.record_activations(toks);
    for (double beta : {0.0, 0.5, 2.0, 7.0}) {
        auto scaled = m;
        Tensor down = m.weight(TransformerModel::down_proj_name(0));
        for (std::size_t c = 0; c < down.cols(); ++c) down.at(2, c) *= beta;
        scaled.set_weight(TransformerModel::down_proj_name(0), down);
        CHECK(max_abs_diff(scaled.logits(toks), m.forward_with_overrides(toks, {{{0, 2}, beta * trace.at({0, 2})}})) <
              1e-12);
    }
}

TEST_CASE("answer_logprob") {
    auto uniform = spiky_model(2);
    uniform.set_weight("lm_head.weight", Tensor(uniform.weight("lm_head.weight").shape(), 0.0));
    const auto prompt = enc(uniform, "alpha beta is");
    const double lp = uniform.answer_logprob(prompt, enc(uniform, " gamma"));
    CHECK(std::abs(lp - std::log(1.0 / uniform.config().vocab_size)) < 1e-12);

    auto m = spiky_model(4);
    const auto ans = enc(m, " gamma.");
    REQUIRE(ans.size() == 2);
    auto step = [&](std::vector<int> ctx, int tok) {
        const Tensor p = softmax(m.logits(ctx));
        return std::log(p[static_cast<std::size_t>(tok)]);
    };
    std::vector<int> ext = prompt;
    ext.push_back(ans[0]);
    const double expect = step(prompt, ans[0]) + step(ext, ans[1]);
    const double got = m.answer_logprob(prompt, ans);
    CHECK(std::abs(got - expect) < 1e-12);
    CHECK(std::exp(got) > 0.0);
    CHECK(std::exp(got) <= 1.0);

    CHECK_THROWS_AS(m.answer_logprob(prompt, std::vector<int>{}), InputError);
    std::vector<int> longp(static_cast<std::size_t>(m.config().max_seq_len), prompt[0]);
    CHECK_THROWS_AS(m.answer_logprob(longp, ans), InputError);
}

TEST_CASE("model construction validates shapes and finiteness") {
    auto m = toy_model(1);
    auto w = m.weights();
    std::map<std::string, Tensor> plain;
    for (const auto& [n, t] : w) plain[n] = *t;
    auto missing = plain;
    missing.erase("lm_head.weight");
    CHECK_THROWS_AS(TransformerModel(m.config(), m.tokenizer(), missing), FormatError);
    auto wrong = plain;
    wrong["lm_head.weight"] = Tensor({2, 2});
    CHECK_THROWS_AS(TransformerModel(m.config(), m.tokenizer(), wrong), FormatError);
    auto bad = plain;
    bad["tok_emb"].raw()[0] = std::nan("");
    CHECK_THROWS(TransformerModel(m.config(), m.tokenizer(), bad));
    ModelConfig c = m.config();
    c.n_heads = 3;
    CHECK_THROWS_AS(c.validate(), ParameterError);
}

TEST_CASE("checkpoint round trip is bit exact") {
    for (auto ffn : {FfnKind::plain, FfnKind::gated}) {
        for (auto pos : {PositionKind::learned, PositionKind::rotary}) {
            auto m = spiky_model(6, toy_config(2, 8, ffn, pos));
            const std::string bytes = serialize_checkpoint(m);
            CHECK(bytes.substr(0, 4) == "IRCN");
            auto back = deserialize_checkpoint(bytes);
            CHECK(back.config() == m.config());
            CHECK(back.tokenizer() == m.tokenizer());
            for (const auto& [name, t] : m.weights()) CHECK(back.weight(name) == *t);
            const auto toks = enc(m, "alpha beta is");
            CHECK(back.logits(toks) == m.logits(toks));
            CHECK(serialize_checkpoint(back) == bytes);
        }
    }
}

TEST_CASE("f32 checkpoints store float-rounded weights") {
    auto m = spiky_model(7);
    auto back = deserialize_checkpoint(serialize_checkpoint(m, DType::f32));
    for (const auto& [name, t] : m.weights()) {
        const Tensor& b = back.weight(name);
        for (std::size_t i = 0; i < t->numel(); ++i) CHECK(b[i] == static_cast<double>(static_cast<float>((*t)[i])));
    }
}

TEST_CASE("checkpoint format errors") {
    auto m = toy_model(2);
    const std::string bytes = serialize_checkpoint(m);
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(deserialize_checkpoint(bad), FormatError);
    bad = bytes;
    bad[4] = 9;
    CHECK_THROWS_AS(deserialize_checkpoint(bad), FormatError);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, 10)), FormatError);

    // Truncation names the first tensor that cannot be read.
    const std::string cut = bytes.substr(0, bytes.size() - 8);
    try {
        deserialize_checkpoint(cut);
        FAIL("expected a format error");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("cannot read tensor '") != std::string::npos);
    }
}

TEST_CASE("train_toy is deterministic and reduces the loss") {
    const std::string corpus = "alpha beta is gamma.\nkappa lambda is sigma.\nalpha tau is omega.\n";
    ModelConfig c = toy_config(2, 16);
    TrainOptions o;
    o.steps = 60;
    o.lr = 1e-2;
    o.optimizer = Optimizer::adam;
    o.seed = 3;
    o.batch_size = 4;
    auto a = train_toy(c, corpus, o);
    auto b = train_toy(c, corpus, o);
    for (const auto& [name, t] : a.model.weights()) CHECK(b.model.weight(name) == *t);
    CHECK(a.losses.back() < a.losses.front());

    o.optimizer = Optimizer::sgd;
    o.lr = 0.05;
    auto s = train_toy(c, corpus, o);
    CHECK(s.losses.back() < s.losses.front());
}

TEST_CASE("train_toy reports divergence with the step index") {
    ModelConfig c = toy_config(1, 4);
    TrainOptions o;
    o.steps = 50;
    o.lr = 1e300;
    o.clip_norm = 0.0;
    o.optimizer = Optimizer::sgd;
    try {
        train_toy(c, "alpha beta is gamma.\n", o);
        FAIL("expected a training error");
    } catch (const TrainingError& e) {
        CHECK(std::string(e.what()).find("step") != std::string::npos);
    }
    CHECK_THROWS_AS(train_toy(c, "alpha\n", TrainOptions{.steps = 0}), ParameterError);
}

TEST_CASE("trained toy model recalls its facts") {
    SyntheticSpec spec;
    spec.n_entities = 6;
    spec.n_relations = 3;
    spec.n_values = 5;
    spec.n_conflicts = 18;
    spec.seed = 2;
    auto data = gen_synthetic(spec);
    ModelConfig c = toy_config(2, 32);
    c.d_model = 16;
    TrainOptions o;
    o.steps = 400;
    o.lr = 1e-2;
    o.optimizer = Optimizer::adam;
    o.cosine_decay = true;
    o.batch_size = 8;
    auto res = train_toy(c, data.corpus, o);
    int ok = 0;
    for (const auto& f : data.facts) {
        auto gen = greedy_generate(res.model, res.model.tokenizer().encode(f.entity + " " + f.relation + " is"), 2);
        ok += extract_completion_answer(res.model.tokenizer().decode(gen)) == f.value;
    }
    CHECK(ok >= 0.8 * static_cast<double>(data.facts.size()));
}

TEST_CASE("text before a tab conditions but is not trained") {
    const std::string corpus = "alpha beta is gamma.\tkappa beta is gamma.\n";
    const auto tok = Tokenizer::from_corpus(corpus);
    const auto seqs = corpus_training_sequences(tok, corpus, 32);
    REQUIRE(seqs.size() == 1);
    auto plain = tok.encode("alpha beta is gamma. kappa beta is gamma.");
    plain.push_back(tok.eos());
    CHECK(seqs[0].ids == plain);
    CHECK(seqs[0].loss_from == tok.encode("alpha beta is gamma.").size());
    CHECK(corpus_sequences(tok, corpus, 32)[0] == plain);
    CHECK_THROWS_AS(corpus_training_sequences(tok, "a\tb\tc\n", 32), InputError);

    // The first reported loss is the mean over the unmasked targets only.
    ModelConfig c = toy_config(1, 8);
    c.vocab_size = tok.size();
    TrainOptions o;
    o.steps = 1;
    o.batch_size = 2;
    o.seed = 5;
    const auto res = train_toy(c, tok, corpus, o);
    const auto init = TransformerModel::init_random(c, tok, o.seed);
    const auto& ids = seqs[0].ids;
    double nll = 0.0;
    for (std::size_t r = seqs[0].loss_from - 1; r + 1 < ids.size(); ++r) {
        // Causal: the final row of the prefix ids[0..r] is row r of the full pass.
        const auto lg = init.logits(std::span<const int>(ids.data(), r + 1));
        double mx = -1e300, z = 0.0;
        for (std::size_t v = 0; v < lg.cols(); ++v) mx = std::max(mx, lg.at(0, v));
        for (std::size_t v = 0; v < lg.cols(); ++v) z += std::exp(lg.at(0, v) - mx);
        nll -= lg.at(0, static_cast<std::size_t>(ids[r + 1])) - mx - std::log(z);
    }
    CHECK(res.losses[0] == doctest::Approx(nll / static_cast<double>(ids.size() - seqs[0].loss_from)).epsilon(1e-9));
}
