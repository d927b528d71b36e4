#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ircan/attribution.hpp"
#include "ircan/data.hpp"
#include "ircan/editing.hpp"
#include "ircan/model.hpp"
#include "ircan/selection.hpp"

namespace ircan {

struct Decoding {
    // Context-aware decoding: logits become (1 + a) l(c,q) - a l(q).
    bool cad = false;
    double alpha_cad = 0.5;
    int max_new = 8;
    // Multiple choice: divide option log-probability by its token count.
    bool length_normalized = false;
    int threads = 1;
};

struct ExampleRecord {
    std::string id;
    std::string prediction;  // extracted word, choice label, or "" on an extraction miss
    bool matched_gold = false;
    bool matched_original = false;

    friend bool operator==(const ExampleRecord&, const ExampleRecord&) = default;
};

struct EvalReport {
    int n = 0;
    double acc = 0.0;
    double sr = 0.0;
    std::vector<ExampleRecord> records;

    int correct() const;
    int stubborn() const;
    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

EvalReport make_report(std::vector<ExampleRecord> records);

// Argmax decoding (ties to the lowest id); stops at <eos> (not returned) or
// after max_new tokens.
std::vector<int> greedy_generate(const TransformerModel& model, std::span<const int> prompt, int max_new);
std::vector<int> greedy_generate_cad(const TransformerModel& model, std::span<const int> prompt_with_context,
                                     std::span<const int> prompt_without_context, int max_new, double alpha_cad);

// First alphabetic word, lowercased; nullopt when there is none.
std::optional<std::string> extract_completion_answer(std::string_view generated_text);

Tensor cad_adjust(const Tensor& logits_with_context, const Tensor& logits_without_context, double alpha_cad);

// Option log-probability under CAD-adjusted next-token distributions.
double cad_answer_logprob(const TransformerModel& model, std::span<const int> prompt_with_context,
                          std::span<const int> prompt_without_context, std::span<const int> answer, double alpha_cad);

EvalReport score_completion(const TransformerModel& model, const std::vector<ConflictExample>& dataset,
                            const PromptTemplate& tmpl, const Decoding& decoding);
EvalReport score_multiple_choice(const TransformerModel& model, const std::vector<ConflictExample>& dataset,
                                 const PromptTemplate& tmpl, const Decoding& decoding);
// Dispatches on the task of the dataset (all items must share one task).
EvalReport evaluate(const TransformerModel& model, const std::vector<ConflictExample>& dataset,
                    const PromptTemplate& tmpl, const Decoding& decoding);

// Seeded shuffle, validation gets ceil(n/2) items.
std::pair<std::vector<ConflictExample>, std::vector<ConflictExample>> split_dataset(
    const std::vector<ConflictExample>& dataset, std::uint64_t seed);

struct GridConfig {
    double t = 0.10;
    int z = 20;
    std::uint64_t split_seed = 0;
    PromptTemplate tmpl;
    Decoding decoding;
};

struct GridCell {
    int h = 0;
    double beta = 0.0;
    bool skipped = false;
    std::string warning;
    EvalReport validation;
};

struct GridResult {
    std::vector<GridCell> cells;  // h ascending, then beta ascending
    int best_h = 0;
    double best_beta = 0.0;
    std::vector<RankedNeuron> best_neurons;
    EvalReport baseline_validation;
    EvalReport baseline_test;
    EvalReport test;  // at (best_h, best_beta)
};

// Splits `dataset`, evaluates every (h, beta) cell on the validation half and
// reports the test half at the winner (max validation acc; ties to smaller h,
// then smaller beta). `matrix` should come from the validation half only.
GridResult grid_search(const TransformerModel& model, const AttributionMatrix& matrix,
                       const std::vector<ConflictExample>& dataset, std::vector<int> h_range,
                       std::vector<double> beta_range, const GridConfig& cfg);

struct AblationArm {
    std::string name;  // IRCAN, ErCAN, ERN, ErRN
    std::vector<EvalReport> runs;
    double mean_acc = 0.0;
    double mean_sr = 0.0;
};

struct AblationResult {
    EvalReport baseline;
    std::vector<AblationArm> arms;
};

AblationResult ablation_suite(const TransformerModel& model, const std::vector<NeuronSite>& selected,
                              const std::vector<ConflictExample>& dataset, double beta, int repeats,
                              std::uint64_t seed, const PromptTemplate& tmpl, const Decoding& decoding);

// Reference-logit parity: `json_text` maps prompt -> final-position logits.
struct ParityEntry {
    std::string prompt;
    double max_abs_diff = 0.0;
};

struct ParityReport {
    std::vector<ParityEntry> entries;
    double worst = 0.0;
    bool pass = true;
};

ParityReport check_reference_logits(const TransformerModel& model, const std::string& json_text, double tol);

std::string report_json(const EvalReport& r);
std::string report_csv(const EvalReport& r);
std::string sweep_csv(const GridResult& g);
std::string grid_json(const GridResult& g);
std::string ablation_json(const AblationResult& a);

}  // namespace ircan
