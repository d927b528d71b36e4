#include "ircan/selection.hpp"

#include <algorithm>
#include <set>

#include "ircan/errors.hpp"
#include "ircan/json_io.hpp"

namespace ircan {

void SelectionConfig::validate() const {
    if (!(t > 0.0 && t <= 1.0)) throw ParameterError("threshold t must lie in (0, 1]");
    if (z < 1) throw ParameterError("z must be >= 1");
    if (h < 1) throw ParameterError("h must be >= 1");
}

std::vector<NeuronSite> threshold_filter(const SiteScores& scores, double t) {
    std::vector<NeuronSite> kept;
    if (scores.empty()) return kept;
    double mx = scores.begin()->second;
    for (const auto& [s, v] : scores) mx = std::max(mx, v);
    if (mx <= 0.0) return kept;
    const double cut = t * mx;
    for (const auto& [s, v] : scores)
        if (v >= cut) kept.push_back(s);
    return kept;
}

std::vector<NeuronSite> topk_candidates(const SiteScores& scores, const std::vector<NeuronSite>& filtered, int z) {
    std::vector<NeuronSite> out = filtered;
    std::sort(out.begin(), out.end(), [&](const NeuronSite& a, const NeuronSite& b) {
        const double sa = scores.at(a), sb = scores.at(b);
        if (sa != sb) return sa > sb;
        return a < b;
    });
    if (out.size() > static_cast<std::size_t>(std::max(z, 0))) out.resize(static_cast<std::size_t>(z));
    return out;
}

std::vector<std::vector<NeuronSite>> candidate_sets(const AttributionMatrix& m, double t, int z) {
    std::vector<std::vector<NeuronSite>> sets;
    for (const auto& s : m.scores) sets.push_back(topk_candidates(s, threshold_filter(s, t), z));
    return sets;
}

namespace {

// Order-independent mean: sum the sorted values.
double canonical_mean(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

bool ranked_before(const RankedNeuron& a, const RankedNeuron& b) {
    if (a.count != b.count) return a.count > b.count;
    if (a.mean_score != b.mean_score) return a.mean_score > b.mean_score;
    return a.site < b.site;
}

}  // namespace

std::vector<RankedNeuron> rank_by_cooccurrence(const AttributionMatrix& m, double t, int z) {
    std::map<NeuronSite, std::vector<double>> per_site;
    for (const auto& s : m.scores)
        for (const auto& [site, v] : s) per_site[site].push_back(v);
    CooccurrenceTable counts;
    for (const auto& set : candidate_sets(m, t, z))
        for (const auto& site : set) ++counts[site];
    std::vector<RankedNeuron> ranked;
    for (auto& [site, vals] : per_site) {
        auto it = counts.find(site);
        ranked.push_back({site, it == counts.end() ? 0 : it->second, canonical_mean(std::move(vals))});
    }
    std::sort(ranked.begin(), ranked.end(), ranked_before);
    return ranked;
}

Selection select_context_neurons(const AttributionMatrix& m, const SelectionConfig& cfg) {
    cfg.validate();
    if (m.size() == 0) throw SelectionError("attribution matrix covers no examples");
    Selection out;
    out.candidate_sets = candidate_sets(m, cfg.t, cfg.z);
    for (const auto& set : out.candidate_sets)
        for (const auto& site : set) ++out.cooccurrence[site];
    const auto available = out.cooccurrence.size();
    if (static_cast<std::size_t>(cfg.h) > available) {
        throw SelectionError("h = " + std::to_string(cfg.h) + " exceeds the " + std::to_string(available) +
                             " distinct candidate neurons available");
    }
    auto ranked = rank_by_cooccurrence(m, cfg.t, cfg.z);
    out.neurons.assign(ranked.begin(), ranked.begin() + cfg.h);
    return out;
}

std::vector<int> layer_histogram(const std::vector<NeuronSite>& sites, int n_layers) {
    std::vector<int> hist(static_cast<std::size_t>(std::max(n_layers, 0)), 0);
    for (const auto& s : sites) {
        if (s.layer < 0 || s.layer >= n_layers) throw SiteError("site " + to_string(s) + " outside histogram layers");
        ++hist[static_cast<std::size_t>(s.layer)];
    }
    return hist;
}

std::vector<int> layer_histogram(const std::vector<std::vector<NeuronSite>>& sets, int n_layers) {
    std::vector<NeuronSite> all;
    for (const auto& s : sets) all.insert(all.end(), s.begin(), s.end());
    return layer_histogram(all, n_layers);
}

double prompt_overlap(const AttributionMatrix& a, const AttributionMatrix& b, int k, double t, int z) {
    if (k < 1) throw SelectionError("overlap needs k >= 1");
    auto ra = rank_by_cooccurrence(a, t, z);
    auto rb = rank_by_cooccurrence(b, t, z);
    const auto kk = static_cast<std::size_t>(k);
    if (kk > ra.size() || kk > rb.size()) {
        throw SelectionError("k = " + std::to_string(k) + " exceeds the " + std::to_string(std::min(ra.size(), rb.size())) +
                             " ranked sites available");
    }
    std::set<NeuronSite> top_a;
    for (std::size_t i = 0; i < kk; ++i) top_a.insert(ra[i].site);
    std::size_t inter = 0;
    for (std::size_t i = 0; i < kk; ++i) inter += top_a.count(rb[i].site);
    return static_cast<double>(inter) / static_cast<double>(k);
}

std::string selection_json(const Selection& s, const SelectionConfig& cfg) {
    json j;
    j["config"] = json{{"t", cfg.t}, {"z", cfg.z}, {"h", cfg.h}};
    json sites = json::array();
    for (const auto& n : s.neurons) {
        sites.push_back(json{{"layer", n.site.layer}, {"neuron", n.site.neuron}, {"count", n.count}, {"mean_score", n.mean_score}});
    }
    j["sites"] = sites;
    return j.dump(2) + "\n";
}

Selection parse_selection_json(const std::string& text, SelectionConfig* cfg) {
    try {
        auto j = json::parse(text);
        if (cfg) {
            cfg->t = j.at("config").at("t").get<double>();
            cfg->z = j.at("config").at("z").get<int>();
            cfg->h = j.at("config").at("h").get<int>();
        }
        Selection s;
        for (const auto& e : j.at("sites")) {
            s.neurons.push_back({{e.at("layer").get<int>(), e.at("neuron").get<int>()},
                                 e.at("count").get<int>(),
                                 e.at("mean_score").get<double>()});
        }
        return s;
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed selection JSON: ") + e.what());
    }
}

std::string histogram_csv(const std::vector<int>& hist) {
    std::string out = "layer,count\n";
    for (std::size_t l = 0; l < hist.size(); ++l) out += std::to_string(l) + "," + std::to_string(hist[l]) + "\n";
    return out;
}

}  // namespace ircan
