#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "ircan/errors.hpp"
#include "ircan/selection.hpp"
#include "selection_oracle.hpp"

using namespace ircan;
using namespace ircan::testing;

namespace {

const NeuronSite A{0, 0}, B{0, 1}, C{0, 2}, D{1, 0};

AttributionMatrix from_sets(const std::vector<std::vector<NeuronSite>>& sets, const std::vector<NeuronSite>& universe) {
    AttributionMatrix m;
    int i = 0;
    for (const auto& set : sets) {
        SiteScores s;
        for (const auto& u : universe) s[u] = std::count(set.begin(), set.end(), u) ? 1.0 : 0.0;
        m.ids.push_back("e" + std::to_string(i++));
        m.scores.push_back(s);
    }
    return m;
}

}  // namespace

TEST_CASE("threshold_filter") {
    CHECK(threshold_filter({{A, 10}, {B, 5}, {C, 0.5}}, 0.1) == std::vector<NeuronSite>{A, B});
    CHECK(threshold_filter({{A, 2}, {B, 2}, {C, 2}}, 0.1) == std::vector<NeuronSite>{A, B, C});
    CHECK(threshold_filter({{A, 1}, {B, 3}, {C, 3}}, 1.0) == std::vector<NeuronSite>{B, C});
    CHECK(threshold_filter({{A, -1}, {B, 0}}, 0.1).empty());
    CHECK(threshold_filter({}, 0.1).empty());
}

TEST_CASE("topk_candidates") {
    const SiteScores s{{A, 3}, {B, 1}, {C, 2}, {D, 5}};
    CHECK(topk_candidates(s, {A, B, C, D}, 2) == std::vector<NeuronSite>{D, A});
    CHECK(topk_candidates(s, {A, B}, 5) == std::vector<NeuronSite>{A, B});
    const SiteScores tie{{A, 1}, {B, 4}, {D, 4}};
    CHECK(topk_candidates(tie, {D, B, A}, 2) == std::vector<NeuronSite>{B, D});
}

TEST_CASE("select_context_neurons examples") {
    auto m = from_sets({{A, B}, {B, C}, {B}}, {A, B, C, D});
    auto sel = select_context_neurons(m, SelectionConfig{0.1, 20, 1});
    REQUIRE(sel.neurons.size() == 1);
    CHECK(sel.neurons[0].site == B);
    CHECK(sel.neurons[0].count == 3);
    CHECK(sel.cooccurrence.at(B) == 3);

    AttributionMatrix single;
    single.ids = {"only"};
    single.scores = {{{A, 1}, {B, 9}, {C, 4}, {D, 0.1}}};
    auto one = select_context_neurons(single, SelectionConfig{0.1, 20, 2});
    CHECK(one.neurons[0].site == B);
    CHECK(one.neurons[1].site == C);

    try {
        select_context_neurons(m, SelectionConfig{0.1, 20, 4});
        FAIL("expected a selection error");
    } catch (const SelectionError& e) {
        CHECK(std::string(e.what()).find("3") != std::string::npos);
    }
    CHECK_THROWS_AS(select_context_neurons(m, SelectionConfig{0.0, 20, 1}), ParameterError);
    CHECK_THROWS_AS(select_context_neurons(m, SelectionConfig{0.1, 0, 1}), ParameterError);
    CHECK_THROWS_AS(select_context_neurons(AttributionMatrix{}, SelectionConfig{}), SelectionError);
}

TEST_CASE("selection matches a brute-force recount on tie-heavy fixtures") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto m = tie_heavy_matrix(seed);
        std::mt19937_64 rng(seed);
        const double t = std::vector<double>{0.1, 0.25, 0.5, 1.0}[seed % 4];
        const int z = 1 + static_cast<int>(rng() % 12);
        const auto oracle_all = brute_force_select(m, t, z, 1000);
        const int h = 1 + static_cast<int>(rng() % std::max(1, oracle_all.distinct_candidates));
        const auto oracle = brute_force_select(m, t, z, h);
        if (h > oracle.distinct_candidates) {
            CHECK_THROWS_AS(select_context_neurons(m, SelectionConfig{t, z, h}), SelectionError);
            continue;
        }
        const auto sel = select_context_neurons(m, SelectionConfig{t, z, h});
        REQUIRE(sel.neurons.size() == oracle.sites.size());
        for (std::size_t i = 0; i < oracle.sites.size(); ++i) {
            CHECK(sel.neurons[i].site == oracle.sites[i]);
            CHECK(sel.neurons[i].count == oracle.counts[i]);
        }
    }
}

TEST_CASE("selection is order-free, deterministic and within the candidates") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto m = tie_heavy_matrix(seed + 1000);
        const SelectionConfig cfg{0.1, 6, 5};
        const auto a = select_context_neurons(m, cfg);
        CHECK(a.neurons == select_context_neurons(m, cfg).neurons);
        std::set<NeuronSite> uni;
        for (const auto& set : a.candidate_sets) uni.insert(set.begin(), set.end());
        for (const auto& n : a.neurons) CHECK(uni.count(n.site) == 1);
        for (const auto& [s, c] : a.cooccurrence) {
            CHECK(c >= 0);
            CHECK(c <= static_cast<int>(m.size()));
        }
        std::mt19937_64 rng(seed);
        std::vector<std::size_t> perm(m.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        std::shuffle(perm.begin(), perm.end(), rng);
        AttributionMatrix p;
        for (auto i : perm) {
            p.ids.push_back(m.ids[i]);
            p.scores.push_back(m.scores[i]);
        }
        CHECK(select_context_neurons(p, cfg).neurons == a.neurons);
    }
}

TEST_CASE("layer_histogram") {
    CHECK(layer_histogram(std::vector<NeuronSite>{}, 4) == std::vector<int>{0, 0, 0, 0});
    CHECK(layer_histogram(std::vector<NeuronSite>{{3, 1}, {3, 2}, {3, 7}}, 4) == std::vector<int>{0, 0, 0, 3});
    CHECK(layer_histogram(std::vector<std::vector<NeuronSite>>{{{0, 1}, {1, 1}}, {{1, 1}}}, 2) == std::vector<int>{1, 2});
    CHECK_THROWS_AS(layer_histogram(std::vector<NeuronSite>{{5, 0}}, 2), SiteError);
    CHECK(histogram_csv({1, 2}) == "layer,count\n0,1\n1,2\n");
}

TEST_CASE("prompt_overlap") {
    const auto m = tie_heavy_matrix(3);
    CHECK(prompt_overlap(m, m, 32) == 1.0);
    CHECK(prompt_overlap(m, m, 5) == 1.0);

    // Positive mass on disjoint halves of the sites: top-16 rankings are disjoint.
    AttributionMatrix a, b;
    a.ids = b.ids = {"x"};
    SiteScores sa, sb;
    for (int n = 0; n < 16; ++n) {
        sa[{0, n}] = 1.0 + n;
        sa[{1, n}] = -1.0 - n;
        sb[{0, n}] = -1.0 - n;
        sb[{1, n}] = 1.0 + n;
    }
    a.scores = {sa};
    b.scores = {sb};
    CHECK(prompt_overlap(a, b, 16, 0.01, 20) == 0.0);
    CHECK_THROWS_AS(prompt_overlap(m, m, 33), SelectionError);
}

TEST_CASE("selection JSON round trip") {
    const auto m = tie_heavy_matrix(4);
    const SelectionConfig cfg{0.1, 20, 3};
    const auto sel = select_context_neurons(m, cfg);
    SelectionConfig back_cfg;
    const auto back = parse_selection_json(selection_json(sel, cfg), &back_cfg);
    CHECK(back.neurons == sel.neurons);
    CHECK(back_cfg.h == 3);
    CHECK_THROWS_AS(parse_selection_json("{"), ParseError);
}
