#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ircan/tokenizer.hpp"

namespace ircan {

enum class Task { completion, multiple_choice };

std::string_view to_string(Task t);
Task parse_task(std::string_view s);

// One knowledge-conflict item. For multiple-choice items both gold labels are
// option letters ("A", "B", ...) indexing into `choices`.
struct ConflictExample {
    std::string id;
    Task task = Task::completion;
    std::string context;
    std::string question;
    std::string gold_answer;    // context-faithful target
    std::string original_gold;  // parametric (memorized) target
    std::vector<std::string> choices;

    // Throws ParseError describing the violated invariant.
    void validate() const;
    friend bool operator==(const ConflictExample&, const ConflictExample&) = default;
};

// "A" -> 0, "B" -> 1, ...; nullopt for anything else.
std::optional<std::size_t> choice_index(std::string_view label);
std::string choice_label(std::size_t index);

std::vector<ConflictExample> parse_dataset(std::string_view jsonl);
std::string dump_dataset(const std::vector<ConflictExample>& examples);
std::vector<ConflictExample> load_dataset(const std::filesystem::path& path);
void save_dataset(const std::filesystem::path& path, const std::vector<ConflictExample>& examples);

// Prompt text with {context}, {question} and {choices} placeholders.
// Rendered prompts are trimmed of surrounding whitespace.
struct PromptTemplate {
    std::string text = "{context} {question}";

    std::string render(const ConflictExample& ex) const;
    // Same prompt with the context removed (the question-only input).
    std::string render_without_context(const ConflictExample& ex) const;

    static PromptTemplate load(const std::filesystem::path& path);
};

// Text a model is scored on for option `index` / the completion target.
std::string answer_continuation(const ConflictExample& ex, std::string_view answer_label_or_text);

struct SyntheticSpec {
    int n_entities = 40;
    int n_relations = 8;
    std::vector<std::string> vocab;  // empty -> default_vocabulary()
    int n_conflicts = 200;
    std::uint64_t seed = 0;
    int n_values = 12;               // words reserved for fact values
    // Extra training lines "E R is W. E R is X." teaching the model to read a
    // context; X == W with probability context_follow_rate, otherwise X is the
    // memorized value. W is never the value a conflict item will assert. A tab
    // separates the two sentences, so the first one is conditioning only.
    int n_context_lines = 0;
    double context_follow_rate = 0.5;
    // Relation r follows its context with rate
    //   context_follow_rate + follow_rate_spread * (2r / (R - 1) - 1), clamped to [0, 1],
    // so some relations lean on memory and others on the context.
    double follow_rate_spread = 0.0;
    int fact_repeats = 1;  // copies of each fact line in the corpus
    // Fraction of context lines whose first sentence is about a different
    // pair; those lines always answer from memory.
    double distractor_rate = 0.0;
};

struct Fact {
    std::string entity, relation, value;
};

struct SyntheticData {
    std::vector<Fact> facts;
    std::string corpus;  // one line per training sequence
    std::vector<ConflictExample> completion;
    std::vector<ConflictExample> multiple_choice;
};

// Deterministic pronounceable lowercase words, all distinct.
std::vector<std::string> default_vocabulary(std::size_t n);

SyntheticData gen_synthetic(const SyntheticSpec& spec);

}  // namespace ircan
