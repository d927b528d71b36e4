#include "ircan/data.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "ircan/errors.hpp"
#include "ircan/json_io.hpp"

namespace ircan {

std::string_view to_string(Task t) { return t == Task::completion ? "completion" : "multiple_choice"; }

Task parse_task(std::string_view s) {
    if (s == "completion") return Task::completion;
    if (s == "multiple_choice") return Task::multiple_choice;
    throw ParseError("unknown task '" + std::string(s) + "'");
}

std::optional<std::size_t> choice_index(std::string_view label) {
    if (label.size() == 1 && label[0] >= 'A' && label[0] <= 'Z') return static_cast<std::size_t>(label[0] - 'A');
    return std::nullopt;
}

std::string choice_label(std::size_t index) { return std::string(1, static_cast<char>('A' + index)); }

void ConflictExample::validate() const {
    if (id.empty()) throw ParseError("example has an empty id");
    if (gold_answer == original_gold) throw ParseError("example '" + id + "': gold_answer equals original_gold");
    if (task == Task::multiple_choice) {
        if (choices.empty()) throw ParseError("example '" + id + "': multiple_choice requires choices");
        for (const auto* label : {&gold_answer, &original_gold}) {
            auto idx = choice_index(*label);
            if (!idx || *idx >= choices.size()) {
                throw ParseError("example '" + id + "': label '" + *label + "' does not index into " +
                                 std::to_string(choices.size()) + " choices");
            }
        }
    }
}

namespace {

json to_record(const ConflictExample& ex) {
    json j;
    j["id"] = ex.id;
    j["task"] = std::string(to_string(ex.task));
    j["context"] = ex.context;
    j["question"] = ex.question;
    j["gold_answer"] = ex.gold_answer;
    j["original_gold"] = ex.original_gold;
    if (ex.task == Task::multiple_choice || !ex.choices.empty()) j["choices"] = ex.choices;
    return j;
}

std::string field(const json& j, const char* name, int line) {
    if (!j.contains(name)) throw ParseError("line " + std::to_string(line) + ": missing field '" + name + "'");
    if (!j[name].is_string()) throw ParseError("line " + std::to_string(line) + ": field '" + name + "' must be a string");
    return j[name].get<std::string>();
}

}  // namespace

std::vector<ConflictExample> parse_dataset(std::string_view jsonl) {
    std::vector<ConflictExample> out;
    std::set<std::string> ids;
    std::istringstream in{std::string(jsonl)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("line " + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
        }
        if (!j.is_object()) throw ParseError("line " + std::to_string(line_no) + ": record is not an object");
        ConflictExample ex;
        ex.id = field(j, "id", line_no);
        try {
            ex.task = parse_task(field(j, "task", line_no));
        } catch (const ParseError& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
        ex.context = field(j, "context", line_no);
        ex.question = field(j, "question", line_no);
        ex.gold_answer = field(j, "gold_answer", line_no);
        ex.original_gold = field(j, "original_gold", line_no);
        if (j.contains("choices") && !j["choices"].is_null()) {
            if (!j["choices"].is_array()) throw ParseError("line " + std::to_string(line_no) + ": choices must be a list");
            for (const auto& c : j["choices"]) {
                if (!c.is_string()) throw ParseError("line " + std::to_string(line_no) + ": choices must be strings");
                ex.choices.push_back(c.get<std::string>());
            }
        }
        try {
            ex.validate();
        } catch (const ParseError& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!ids.insert(ex.id).second) {
            throw ParseError("line " + std::to_string(line_no) + ": duplicate id '" + ex.id + "'");
        }
        out.push_back(std::move(ex));
    }
    return out;
}

std::string dump_dataset(const std::vector<ConflictExample>& examples) {
    std::string out;
    for (const auto& ex : examples) {
        out += to_record(ex).dump();
        out += '\n';
    }
    return out;
}

std::vector<ConflictExample> load_dataset(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open dataset '" + path.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    try {
        return parse_dataset(ss.str());
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void save_dataset(const std::filesystem::path& path, const std::vector<ConflictExample>& examples) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ParseError("cannot write dataset '" + path.string() + "'");
    f << dump_dataset(examples);
}

namespace {

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
}

std::string render_choices(const ConflictExample& ex) {
    std::string out;
    for (std::size_t i = 0; i < ex.choices.size(); ++i) {
        if (i) out += ' ';
        out += choice_label(i) + ". " + ex.choices[i];
    }
    return out;
}

std::string render_with(const std::string& text, const ConflictExample& ex, const std::string& context) {
    std::string s = text;
    replace_all(s, "{choices}", render_choices(ex));
    replace_all(s, "{question}", ex.question);
    // Removing the context must not leave a dangling separator.
    if (context.empty()) {
        replace_all(s, "{context} ", "");
        replace_all(s, "{context}\n", "");
    }
    replace_all(s, "{context}", context);
    return trim(s);
}

}  // namespace

std::string PromptTemplate::render(const ConflictExample& ex) const { return render_with(text, ex, ex.context); }

std::string PromptTemplate::render_without_context(const ConflictExample& ex) const {
    return render_with(text, ex, "");
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open template '" + path.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    PromptTemplate t;
    t.text = ss.str();
    while (!t.text.empty() && (t.text.back() == '\n' || t.text.back() == '\r')) t.text.pop_back();
    if (t.text.find("{question}") == std::string::npos) {
        throw ParseError("template '" + path.string() + "' has no {question} placeholder");
    }
    return t;
}

std::string answer_continuation(const ConflictExample& ex, std::string_view label_or_text) {
    if (ex.task == Task::multiple_choice) {
        auto idx = choice_index(label_or_text);
        if (!idx || *idx >= ex.choices.size()) {
            throw InputError("example '" + ex.id + "': '" + std::string(label_or_text) + "' is not a choice label");
        }
        return " " + ex.choices[*idx];
    }
    return " " + std::string(label_or_text);
}

std::vector<std::string> default_vocabulary(std::size_t n) {
    static const char* onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
    static const char* vowels[] = {"a", "e", "i", "o", "u"};
    std::vector<std::string> syll;
    for (const char* o : onsets)
        for (const char* v : vowels) syll.push_back(std::string(o) + v);
    std::vector<std::string> out;
    // Two-syllable words in a fixed stride so neighbours differ in both syllables.
    const std::size_t S = syll.size();
    for (std::size_t i = 0; out.size() < n && i < S * S; ++i) {
        const std::size_t a = (i * 7) % S, b = (i * 13 + i / S) % S;
        std::string w = syll[a] + syll[b];
        if (w == "is" || std::find(out.begin(), out.end(), w) != out.end()) continue;
        out.push_back(std::move(w));
    }
    if (out.size() < n) throw SpecError("default vocabulary exhausted");
    return out;
}

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
    if (spec.n_entities < 1 || spec.n_relations < 1) throw SpecError("need at least one entity and one relation");
    if (spec.n_values < 2) throw SpecError("need at least two values to build conflicts");
    const long pairs = static_cast<long>(spec.n_entities) * spec.n_relations;
    if (spec.n_conflicts < 0 || spec.n_conflicts > pairs) {
        throw SpecError("n_conflicts " + std::to_string(spec.n_conflicts) + " exceeds " + std::to_string(pairs) +
                        " entity-relation pairs");
    }
    if (spec.fact_repeats < 1) throw SpecError("fact_repeats must be >= 1");
    if (spec.n_context_lines < 0 || spec.context_follow_rate < 0.0 || spec.context_follow_rate > 1.0 ||
        spec.follow_rate_spread < 0.0 || spec.distractor_rate < 0.0 || spec.distractor_rate > 1.0) {
        throw SpecError("invalid context-line settings");
    }
    const std::size_t need = static_cast<std::size_t>(spec.n_entities + spec.n_relations + spec.n_values);
    std::vector<std::string> vocab = spec.vocab.empty() ? default_vocabulary(need) : spec.vocab;
    {
        std::set<std::string> uniq(vocab.begin(), vocab.end());
        if (uniq.size() != vocab.size()) throw SpecError("vocabulary contains duplicate words");
    }
    if (vocab.size() < need) {
        throw SpecError("vocabulary has " + std::to_string(vocab.size()) + " words, need " + std::to_string(need));
    }
    for (const auto& w : vocab) {
        if (w.empty() || !std::all_of(w.begin(), w.end(), [](char c) { return c >= 'a' && c <= 'z'; }) || w == "is") {
            throw SpecError("vocabulary word '" + w + "' must be lowercase alphabetic and not 'is'");
        }
    }
    const auto E = static_cast<std::size_t>(spec.n_entities), R = static_cast<std::size_t>(spec.n_relations),
               V = static_cast<std::size_t>(spec.n_values);
    std::vector<std::string> entities(vocab.begin(), vocab.begin() + static_cast<long>(E));
    std::vector<std::string> relations(vocab.begin() + static_cast<long>(E), vocab.begin() + static_cast<long>(E + R));
    std::vector<std::string> values(vocab.begin() + static_cast<long>(E + R),
                                    vocab.begin() + static_cast<long>(E + R + V));

    std::mt19937_64 rng(spec.seed);
    auto uniform = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };

    SyntheticData out;
    std::vector<std::size_t> fact_value(E * R);
    for (std::size_t i = 0; i < E * R; ++i) {
        // Cycle through values first so each one is seen in the corpus.
        fact_value[i] = i < V ? i : uniform(V);
    }
    std::shuffle(fact_value.begin(), fact_value.end(), rng);
    for (std::size_t e = 0; e < E; ++e)
        for (std::size_t r = 0; r < R; ++r)
            out.facts.push_back({entities[e], relations[r], values[fact_value[e * R + r]]});

    auto other_value = [&](std::size_t not_this) {
        std::size_t v = uniform(V - 1);
        return v >= not_this ? v + 1 : v;
    };
    auto sentence = [](const Fact& f, const std::string& value) {
        return f.entity + " " + f.relation + " is " + value + ".";
    };

    std::vector<std::size_t> order(E * R);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_conf = static_cast<std::size_t>(spec.n_conflicts);
    std::vector<std::size_t> conflict_pairs(order.begin(), order.begin() + static_cast<long>(n_conf));

    // Conflict values are fixed up front so context lines never show them.
    std::vector<std::size_t> conflict_value(E * R, V);
    std::sort(conflict_pairs.begin(), conflict_pairs.end());
    for (std::size_t p : conflict_pairs) conflict_value[p] = other_value(fact_value[p]);

    std::ostringstream corpus;
    for (int rep = 0; rep < spec.fact_repeats; ++rep)
        for (const auto& f : out.facts) corpus << sentence(f, f.value) << '\n';
    if (spec.n_context_lines > 0) {
        if (V < (spec.distractor_rate > 0.0 ? 5u : 3u))
            throw SpecError("context lines need at least three values (five with distractors)");
        if (spec.distractor_rate > 0.0 && E * R < 2) throw SpecError("distractors need at least two pairs");
        std::vector<double> rate(R);
        for (std::size_t r = 0; r < R; ++r) {
            const double pos = R > 1 ? 2.0 * static_cast<double>(r) / static_cast<double>(R - 1) - 1.0 : 0.0;
            rate[r] = std::clamp(spec.context_follow_rate + spec.follow_rate_spread * pos, 0.0, 1.0);
        }
        std::uniform_real_distribution<double> coin(0.0, 1.0);
        for (int i = 0; i < spec.n_context_lines; ++i) {
            const std::size_t p = uniform(E * R);
            const Fact& f = out.facts[p];
            // A distractor states something about another pair, so the answer is the memory.
            std::size_t about = p;
            if (spec.distractor_rate > 0.0 && coin(rng) < spec.distractor_rate) {
                do about = uniform(E * R);
                while (about == p);
            }
            std::size_t shown = 0;
            do shown = uniform(V);
            while (shown == fact_value[p] || shown == conflict_value[p] || shown == fact_value[about] ||
                   shown == conflict_value[about]);
            const std::string answer = about == p && coin(rng) < rate[p % R] ? values[shown] : f.value;
            corpus << sentence(out.facts[about], values[shown]) << '\t' << sentence(f, answer) << '\n';
        }
    }
    out.corpus = corpus.str();

    int k = 0;
    for (std::size_t p : conflict_pairs) {
        const Fact& f = out.facts[p];
        const std::string conflict = values[conflict_value[p]];
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "syn-%04d", k++);
        ConflictExample c;
        c.id = std::string(idbuf) + "-c";
        c.task = Task::completion;
        c.context = sentence(f, conflict);
        c.question = f.entity + " " + f.relation + " is";
        c.gold_answer = conflict;
        c.original_gold = f.value;
        out.completion.push_back(c);

        ConflictExample mc = c;
        mc.id = std::string(idbuf) + "-mc";
        mc.task = Task::multiple_choice;
        const bool gold_first = uniform(2) == 0;
        mc.choices = gold_first ? std::vector<std::string>{conflict, f.value} : std::vector<std::string>{f.value, conflict};
        mc.gold_answer = gold_first ? "A" : "B";
        mc.original_gold = gold_first ? "B" : "A";
        out.multiple_choice.push_back(std::move(mc));
    }
    return out;
}

}  // namespace ircan
