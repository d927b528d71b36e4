#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "json.hpp"

#include "ircan/errors.hpp"
#include "ircan/harness.hpp"
#include "ircan/trainer.hpp"
#include "support.hpp"

using namespace ircan;
using namespace ircan::testing;

namespace {

const char* kCorpus = "long absent soon forgotten returned remembered.\nbaba dipo is pilo fure lobi.\nwrite a quote.\n";

TransformerModel corpus_model(std::uint64_t seed, ModelConfig c = toy_config()) {
    Tokenizer tok = Tokenizer::from_corpus(kCorpus);
    c.vocab_size = tok.size();
    return TransformerModel::init_random(c, tok, seed);
}

// Every position predicts token `id`: the final norm emits a constant vector
// and only `id` has a non-zero output column.
TransformerModel forced_model(int id) {
    auto m = corpus_model(1);
    const auto D = static_cast<std::size_t>(m.config().d_model);
    m.set_weight("final_norm.weight", Tensor({D}));
    Tensor ones({D});
    for (auto& v : ones.raw()) v = 1.0;
    m.set_weight("final_norm.bias", ones);
    Tensor head({D, static_cast<std::size_t>(m.config().vocab_size)});
    for (std::size_t r = 0; r < D; ++r) head.at(r, static_cast<std::size_t>(id)) = 1.0;
    m.set_weight("lm_head.weight", head);
    return m;
}

TransformerModel forced_word(const std::string& word) {
    const auto ids = corpus_model(1).tokenizer().encode(" " + word);
    REQUIRE(ids.size() == 1);
    return forced_model(ids[0]);
}

ConflictExample completion(std::string id, std::string gold, std::string orig) {
    ConflictExample e;
    e.id = std::move(id);
    e.context = "write a quote.";
    e.question = "long absent soon";
    e.gold_answer = std::move(gold);
    e.original_gold = std::move(orig);
    return e;
}

std::vector<ConflictExample> numbered(int n) {
    std::vector<ConflictExample> out;
    for (int i = 0; i < n; ++i) out.push_back(completion("ex" + std::to_string(i), "returned", "forgotten"));
    return out;
}

}  // namespace

TEST_CASE("extract_completion_answer") {
    CHECK(extract_completion_answer("returned.") == "returned");
    CHECK(extract_completion_answer("  FORGOTTEN,\n") == "forgotten");
    CHECK(extract_completion_answer(" Returned soon") == "returned");
    CHECK_FALSE(extract_completion_answer("...").has_value());
    CHECK_FALSE(extract_completion_answer("").has_value());
}

TEST_CASE("greedy_generate") {
    SUBCASE("forced eos gives an empty continuation") {
        auto m = forced_model(corpus_model(1).tokenizer().eos());
        CHECK(greedy_generate(m, m.tokenizer().encode("long absent"), 5).empty());
    }
    SUBCASE("forced word repeats until max_new") {
        auto m = forced_word("returned");
        auto gen = greedy_generate(m, m.tokenizer().encode("long absent soon"), 3);
        CHECK(m.tokenizer().decode(gen) == " returned returned returned");
        CHECK(extract_completion_answer(m.tokenizer().decode(gen)) == "returned");
    }
    SUBCASE("deterministic") {
        auto m = spiky_model(3, toy_config());
        const auto p = m.tokenizer().encode("alpha beta is");
        CHECK(greedy_generate(m, p, 6) == greedy_generate(m, p, 6));
    }
    SUBCASE("errors") {
        auto m = forced_word("soon");
        CHECK_THROWS_AS(greedy_generate(m, m.tokenizer().encode("soon"), 0), ParameterError);
        // 16 positions: a 15-token prompt has room for one step only.
        std::vector<int> p(15, m.tokenizer().encode(" soon")[0]);
        CHECK(greedy_generate(m, p, 1).size() == 1);
        CHECK_THROWS_AS(greedy_generate(m, p, 3), InputError);
    }
}

TEST_CASE("score_completion") {
    Decoding d;
    d.max_new = 2;
    PromptTemplate tmpl;
    auto m = forced_word("returned");
    SUBCASE("two of four correct") {
        std::vector<ConflictExample> ds{completion("a", "returned", "forgotten"), completion("b", "soon", "returned"),
                                        completion("c", "Returned.", "soon"), completion("d", "soon", "absent")};
        auto r = score_completion(m, ds, tmpl, d);
        CHECK(r.n == 4);
        CHECK(r.acc == 0.5);
        CHECK(r.sr == 0.25);
        CHECK(r.records[0] == ExampleRecord{"a", "returned", true, false});
        CHECK(r.records[1] == ExampleRecord{"b", "returned", false, true});
    }
    SUBCASE("always the memorized answer") {
        std::vector<ConflictExample> ds{completion("a", "soon", "returned"), completion("b", "absent", "returned")};
        auto r = score_completion(m, ds, tmpl, d);
        CHECK(r.acc == 0.0);
        CHECK(r.sr == 1.0);
    }
    SUBCASE("extraction miss counts as wrong") {
        auto punct = forced_model(m.tokenizer().encode(".")[0]);
        auto r = score_completion(punct, {completion("a", "returned", "forgotten")}, tmpl, d);
        CHECK(r.records[0] == ExampleRecord{"a", "", false, false});
        CHECK(r.acc == 0.0);
    }
    SUBCASE("task mismatch") {
        auto ex = completion("a", "A", "B");
        ex.task = Task::multiple_choice;
        ex.choices = {"soon", "absent"};
        CHECK_THROWS_AS(score_completion(m, {ex}, tmpl, d), InputError);
    }
}

TEST_CASE("cad_adjust") {
    const Tensor cq = Tensor::vector({2.0, 0.0}), q = Tensor::vector({0.0, 2.0});
    CHECK(cad_adjust(cq, q, 1.0) == Tensor::vector({4.0, -2.0}));
    CHECK(cad_adjust(cq, q, 0.0) == cq);
    CHECK(cad_adjust(cq, cq, 0.7).raw() == std::vector<double>{2.0, 0.0});
    CHECK_THROWS_AS(cad_adjust(cq, Tensor::vector({1.0, 2.0, 3.0}), 1.0), DimensionError);
    CHECK_THROWS_AS(cad_adjust(cq, q, -0.5), ParameterError);
}

TEST_CASE("CAD with alpha 0 decodes like plain greedy") {
    auto m = spiky_model(4, toy_config());
    const auto a = m.tokenizer().encode("alpha beta is gamma. alpha beta is");
    const auto b = m.tokenizer().encode("alpha beta is");
    CHECK(greedy_generate_cad(m, a, b, 4, 0.0) == greedy_generate(m, a, 4));
    CHECK(std::abs(cad_answer_logprob(m, a, b, m.tokenizer().encode(" gamma."), 0.0) -
                   m.answer_logprob(a, m.tokenizer().encode(" gamma."))) < 1e-12);
    // Identical inputs: the adjustment is the identity for any alpha.
    CHECK(greedy_generate_cad(m, a, a, 4, 2.0) == greedy_generate(m, a, 4));
}

namespace {

ConflictExample mc(std::string id, std::vector<std::string> choices, std::string gold, std::string orig) {
    ConflictExample e;
    e.id = std::move(id);
    e.task = Task::multiple_choice;
    e.context = "write a quote.";
    e.question = "long absent soon";
    e.choices = std::move(choices);
    e.gold_answer = std::move(gold);
    e.original_gold = std::move(orig);
    return e;
}

}  // namespace

TEST_CASE("score_multiple_choice") {
    PromptTemplate tmpl;
    Decoding d;
    SUBCASE("argmax option wins") {
        auto m = forced_word("returned");
        auto r = score_multiple_choice(m, {mc("a", {"forgotten", "returned"}, "B", "A"),
                                           mc("b", {"returned", "soon"}, "B", "A")}, tmpl, d);
        CHECK(r.records[0] == ExampleRecord{"a", "B", true, false});
        CHECK(r.records[1] == ExampleRecord{"b", "A", false, true});
    }
    SUBCASE("identical options tie to the first") {
        auto m = spiky_model(5, toy_config());
        auto ex = mc("a", {"gamma", "gamma"}, "B", "A");
        ex.context = "alpha is gamma.";
        ex.question = "alpha is";
        auto r = score_multiple_choice(m, {ex}, tmpl, d);
        CHECK(r.records[0].prediction == "A");
    }
    SUBCASE("untokenizable option") {
        auto m = spiky_model(5, toy_config());
        auto ex = mc("a", {"gamma", "zzz"}, "B", "A");
        ex.context = "alpha is gamma.";
        ex.question = "alpha is";
        CHECK_THROWS_AS(score_multiple_choice(m, {ex}, tmpl, d), InputError);
    }
    SUBCASE("length normalization switch") {
        // Option A is one token with log-prob lp1; option B is two tokens.
        auto m = spiky_model(6, toy_config());
        auto ex = mc("a", {"gamma", "gamma delta"}, "B", "A");
        ex.context = "alpha is gamma.";
        ex.question = "alpha is";
        const auto prompt = m.tokenizer().encode(tmpl.render(ex));
        const double a = m.answer_logprob(prompt, m.tokenizer().encode(" gamma"));
        const double b = m.answer_logprob(prompt, m.tokenizer().encode(" gamma delta"));
        Decoding norm = d;
        norm.length_normalized = true;
        CHECK(score_multiple_choice(m, {ex}, tmpl, d).records[0].prediction == (b > a ? "B" : "A"));
        CHECK(score_multiple_choice(m, {ex}, tmpl, norm).records[0].prediction == (b / 2 > a ? "B" : "A"));
    }
}

TEST_CASE("uniform model on five options scores near chance") {
    // Zero output head: every option has the same log-probability, the tie
    // rule picks A, and gold sits at a uniformly random position. Accuracy is
    // Binomial(500, 0.2); 4.5 standard deviations is about +-0.08.
    auto m = corpus_model(7);
    m.set_weight("lm_head.weight", Tensor(m.weight("lm_head.weight").shape()));
    std::mt19937_64 rng(11);
    std::vector<ConflictExample> ds;
    const std::vector<std::string> opts{"soon", "absent", "forgotten", "returned", "remembered"};
    for (int i = 0; i < 500; ++i) {
        const std::size_t g = rng() % 5, o = (g + 1 + rng() % 4) % 5;
        ds.push_back(mc("u" + std::to_string(i), opts, choice_label(g), choice_label(o)));
    }
    auto r = score_multiple_choice(m, ds, PromptTemplate{}, Decoding{});
    const double sd = std::sqrt(0.2 * 0.8 / 500);
    CHECK(std::abs(r.acc - 0.2) < 4.5 * sd);
    CHECK(r.acc + r.sr <= 1.0);
}

TEST_CASE("evaluate is thread-count invariant") {
    auto m = spiky_model(8, toy_config());
    std::vector<ConflictExample> ds;
    for (int i = 0; i < 12; ++i) {
        auto e = completion("t" + std::to_string(i), "gamma", "delta");
        e.context = i % 2 ? "alpha beta is gamma." : "kappa is tau.";
        e.question = i % 3 ? "alpha beta is" : "sigma is";
        ds.push_back(e);
    }
    Decoding one, four;
    four.threads = 4;
    CHECK(evaluate(m, ds, PromptTemplate{}, one) == evaluate(m, ds, PromptTemplate{}, four));
}

TEST_CASE("split_dataset") {
    auto [v10, t10] = split_dataset(numbered(10), 3);
    CHECK(v10.size() == 5);
    CHECK(t10.size() == 5);
    std::set<std::string> ids;
    for (const auto& e : v10) ids.insert(e.id);
    for (const auto& e : t10) ids.insert(e.id);
    CHECK(ids.size() == 10);
    auto [v11, t11] = split_dataset(numbered(11), 3);
    CHECK(v11.size() == 6);
    CHECK(t11.size() == 5);
    CHECK(split_dataset(numbered(11), 3) == split_dataset(numbered(11), 3));
    CHECK(split_dataset(numbered(11), 3) != split_dataset(numbered(11), 4));
    CHECK_THROWS_AS(split_dataset(numbered(1), 0), InputError);
}

namespace {

AttributionMatrix random_matrix(const ModelConfig& c, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    AttributionMatrix m;
    for (int i = 0; i < n; ++i) {
        m.ids.push_back("ex" + std::to_string(i));
        SiteScores s;
        for (int l = 0; l < c.n_layers; ++l)
            for (int k = 0; k < c.d_ff; ++k) s[{l, k}] = g(rng);
        m.scores.push_back(std::move(s));
    }
    return m;
}

std::vector<ConflictExample> toy_conflicts(int n) {
    const std::vector<std::string> w{"soon", "absent", "forgotten", "returned", "remembered"};
    std::vector<ConflictExample> out;
    for (int i = 0; i < n; ++i) {
        auto e = completion("g" + std::to_string(i), w[i % 5], w[(i + 2) % 5]);
        e.context = "long " + w[i % 5] + " is " + w[(i + 1) % 5] + ".";
        out.push_back(e);
    }
    return out;
}

}  // namespace

TEST_CASE("grid_search") {
    auto m = corpus_model(9);
    const auto ds = toy_conflicts(20);
    const auto matrix = random_matrix(m.config(), 10, 1);
    GridConfig cfg;
    cfg.z = 4;
    cfg.decoding.max_new = 2;

    SUBCASE("single cell wins") {
        auto g = grid_search(m, matrix, ds, {2}, {3.0}, cfg);
        REQUIRE(g.cells.size() == 1);
        CHECK(g.best_h == 2);
        CHECK(g.best_beta == 3.0);
        CHECK(g.best_neurons.size() == 2);
    }
    SUBCASE("beta 1 column reproduces the baseline") {
        auto g = grid_search(m, matrix, ds, {3, 1, 2}, {5.0, 1.0}, cfg);
        CHECK(g.cells.size() == 6);
        CHECK(g.cells.front().h == 1);
        CHECK(g.cells.front().beta == 1.0);
        for (const auto& c : g.cells)
            if (c.beta == 1.0) CHECK(c.validation == g.baseline_validation);
    }
    SUBCASE("winner maximizes validation acc with the tie rule") {
        auto g = grid_search(m, matrix, ds, {1, 2, 3}, {0.0, 2.0, 8.0}, cfg);
        const GridCell* best = nullptr;
        for (const auto& c : g.cells)
            if (!best || c.validation.acc > best->validation.acc) best = &c;
        CHECK(g.best_h == best->h);
        CHECK(g.best_beta == best->beta);
        CHECK(g.test.n == 10);
        auto again = grid_search(m, matrix, ds, {1, 2, 3}, {0.0, 2.0, 8.0}, cfg);
        CHECK(again.best_h == g.best_h);
        CHECK(again.best_beta == g.best_beta);
        CHECK(again.test == g.test);
    }
    SUBCASE("infeasible h is skipped") {
        // z = 1 over 10 examples yields at most 10 distinct candidates.
        cfg.z = 1;
        auto g = grid_search(m, matrix, ds, {1, 40}, {2.0}, cfg);
        CHECK_FALSE(g.cells[0].skipped);
        CHECK(g.cells[1].skipped);
        CHECK_FALSE(g.cells[1].warning.empty());
        CHECK(g.best_h == 1);
        CHECK_THROWS_AS(grid_search(m, matrix, ds, {40}, {2.0}, cfg), SelectionError);
    }
    SUBCASE("outputs") {
        auto g = grid_search(m, matrix, ds, {1, 2}, {2.0, 4.0}, cfg);
        const auto csv = sweep_csv(g);
        CHECK(csv.rfind("h,beta,split,acc,sr\n", 0) == 0);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 4 + 1);
        auto j = nlohmann::json::parse(grid_json(g));
        CHECK(j["best"]["h"] == g.best_h);
        CHECK(j["cells"].size() == 4);
    }
}

TEST_CASE("ablation_suite") {
    auto m = corpus_model(10);
    const auto ds = toy_conflicts(10);
    const std::vector<NeuronSite> sel{{0, 1}, {1, 3}};
    auto a = ablation_suite(m, sel, ds, 4.0, 3, 5, PromptTemplate{}, Decoding{});
    REQUIRE(a.arms.size() == 4);
    CHECK(a.arms[0].name == "IRCAN");
    CHECK(a.arms[1].name == "ErCAN");
    CHECK(a.arms[2].name == "ERN");
    CHECK(a.arms[3].name == "ErRN");
    CHECK(a.arms[0].runs.size() == 1);
    CHECK(a.arms[2].runs.size() == 3);
    for (const auto& arm : a.arms)
        for (const auto& r : arm.runs) CHECK(r.acc + r.sr <= 1.0);
    auto b = ablation_suite(m, sel, ds, 4.0, 3, 5, PromptTemplate{}, Decoding{});
    CHECK(nlohmann::json::parse(ablation_json(a)) == nlohmann::json::parse(ablation_json(b)));
    CHECK(ablation_suite(m, sel, ds, 1.0, 1, 5, PromptTemplate{}, Decoding{}).arms[0].runs[0] == a.baseline);
    CHECK_THROWS_AS(ablation_suite(m, sel, ds, 4.0, 0, 5, PromptTemplate{}, Decoding{}), ParameterError);
}

TEST_CASE("reference-logit parity") {
    auto m = spiky_model(12, toy_config());
    nlohmann::json j;
    for (const std::string p : {"alpha beta is", "kappa is tau."}) {
        auto l = m.logits(m.tokenizer().encode(p));
        j[p] = l.raw();
    }
    auto ok = check_reference_logits(m, j.dump(), 1e-9);
    CHECK(ok.pass);
    CHECK(ok.entries.size() == 2);
    CHECK(ok.worst == 0.0);
    j["kappa is tau."][0] = j["kappa is tau."][0].get<double>() + 1e-3;
    auto bad = check_reference_logits(m, j.dump(), 1e-4);
    CHECK_FALSE(bad.pass);
    CHECK(std::abs(bad.worst - 1e-3) < 1e-9);
    j["kappa is tau."] = std::vector<double>{1.0, 2.0};
    CHECK_THROWS_AS(check_reference_logits(m, j.dump(), 1e-4), DimensionError);
}

TEST_CASE("report serialization") {
    auto r = make_report({{"a", "returned", true, false}, {"b", "", false, false}, {"c", "forgotten", false, true}});
    CHECK(r.acc * 3 == doctest::Approx(1.0));
    CHECK(report_csv(r) == "id,prediction,matched_gold,matched_original\na,returned,1,0\nb,,0,0\nc,forgotten,0,1\n");
    auto j = nlohmann::json::parse(report_json(r));
    CHECK(j["n"] == 3);
    CHECK(j["records"].size() == 3);
}
