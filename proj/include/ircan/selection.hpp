#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ircan/attribution.hpp"

namespace ircan {

struct SelectionConfig {
    double t = 0.10;  // relative threshold: keep score >= t * max score
    int z = 20;       // candidates per example
    int h = 1;        // shared neurons to select

    void validate() const;
};

using CooccurrenceTable = std::map<NeuronSite, int>;

struct RankedNeuron {
    NeuronSite site;
    int count = 0;
    double mean_score = 0.0;  // over every example in the matrix

    friend bool operator==(const RankedNeuron&, const RankedNeuron&) = default;
};

struct Selection {
    std::vector<RankedNeuron> neurons;                  // the top-h
    CooccurrenceTable cooccurrence;
    std::vector<std::vector<NeuronSite>> candidate_sets;  // per example
};

// Sites with score >= t * max(score); none when the maximum is <= 0.
std::vector<NeuronSite> threshold_filter(const SiteScores& scores, double t);

// Up to z sites from `filtered` in descending score; ties by site ascending.
std::vector<NeuronSite> topk_candidates(const SiteScores& scores, const std::vector<NeuronSite>& filtered, int z);

std::vector<std::vector<NeuronSite>> candidate_sets(const AttributionMatrix& m, double t, int z);

// Every site of the matrix ranked by (count desc, mean score desc, site asc).
std::vector<RankedNeuron> rank_by_cooccurrence(const AttributionMatrix& m, double t, int z);

// Throws SelectionError when h exceeds the number of distinct candidates.
Selection select_context_neurons(const AttributionMatrix& m, const SelectionConfig& cfg);

std::vector<int> layer_histogram(const std::vector<NeuronSite>& sites, int n_layers);
std::vector<int> layer_histogram(const std::vector<std::vector<NeuronSite>>& sets, int n_layers);

// |top-k(a) intersect top-k(b)| / k over the co-occurrence rankings.
double prompt_overlap(const AttributionMatrix& a, const AttributionMatrix& b, int k, double t = 0.10, int z = 20);

std::string selection_json(const Selection& s, const SelectionConfig& cfg);
Selection parse_selection_json(const std::string& text, SelectionConfig* cfg = nullptr);
std::string histogram_csv(const std::vector<int>& hist);

}  // namespace ircan
