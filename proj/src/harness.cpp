#include "ircan/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <regex>

#include "ircan/errors.hpp"
#include "ircan/json_io.hpp"
#include "ircan/parallel.hpp"

namespace ircan {

int EvalReport::correct() const {
    return static_cast<int>(std::count_if(records.begin(), records.end(), [](const auto& r) { return r.matched_gold; }));
}

int EvalReport::stubborn() const {
    return static_cast<int>(
        std::count_if(records.begin(), records.end(), [](const auto& r) { return r.matched_original; }));
}

EvalReport make_report(std::vector<ExampleRecord> records) {
    EvalReport r;
    r.records = std::move(records);
    r.n = static_cast<int>(r.records.size());
    if (r.n > 0) {
        r.acc = static_cast<double>(r.correct()) / r.n;
        r.sr = static_cast<double>(r.stubborn()) / r.n;
    }
    return r;
}

namespace {

int argmax(const Tensor& t) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < t.numel(); ++i)
        if (t[i] > t[best]) best = i;
    return static_cast<int>(best);
}

void check_room(const TransformerModel& model, std::size_t len) {
    if (len > static_cast<std::size_t>(model.config().max_seq_len)) {
        throw InputError("generation overflows max_seq_len " + std::to_string(model.config().max_seq_len));
    }
}

std::vector<double> log_softmax(const Tensor& logits) {
    const double mx = *std::max_element(logits.raw().begin(), logits.raw().end());
    double s = 0.0;
    for (double v : logits.raw()) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    std::vector<double> out(logits.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

}  // namespace

std::vector<int> greedy_generate(const TransformerModel& model, std::span<const int> prompt, int max_new) {
    if (max_new < 1) throw ParameterError("max_new must be >= 1");
    std::vector<int> seq(prompt.begin(), prompt.end());
    std::vector<int> out;
    for (int i = 0; i < max_new; ++i) {
        check_room(model, seq.size());
        const int next = argmax(model.logits(seq));
        if (next == model.tokenizer().eos()) break;
        out.push_back(next);
        seq.push_back(next);
    }
    return out;
}

Tensor cad_adjust(const Tensor& with_ctx, const Tensor& without_ctx, double alpha_cad) {
    if (with_ctx.shape() != without_ctx.shape()) throw DimensionError("cad_adjust: logit shapes differ");
    if (!(alpha_cad >= 0.0)) throw ParameterError("alpha_cad must be >= 0");
    if (alpha_cad == 0.0) return with_ctx;
    Tensor out(with_ctx.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (1.0 + alpha_cad) * with_ctx[i] - alpha_cad * without_ctx[i];
    return out;
}

std::vector<int> greedy_generate_cad(const TransformerModel& model, std::span<const int> with_ctx,
                                     std::span<const int> without_ctx, int max_new, double alpha_cad) {
    if (max_new < 1) throw ParameterError("max_new must be >= 1");
    std::vector<int> a(with_ctx.begin(), with_ctx.end()), b(without_ctx.begin(), without_ctx.end());
    std::vector<int> out;
    for (int i = 0; i < max_new; ++i) {
        check_room(model, a.size());
        const int next = argmax(cad_adjust(model.logits(a), model.logits(b), alpha_cad));
        if (next == model.tokenizer().eos()) break;
        out.push_back(next);
        a.push_back(next);
        b.push_back(next);
    }
    return out;
}

double cad_answer_logprob(const TransformerModel& model, std::span<const int> with_ctx,
                          std::span<const int> without_ctx, std::span<const int> answer, double alpha_cad) {
    if (answer.empty()) throw InputError("answer must contain at least one token");
    std::vector<int> a(with_ctx.begin(), with_ctx.end()), b(without_ctx.begin(), without_ctx.end());
    double total = 0.0;
    for (int tok : answer) {
        check_room(model, a.size());
        total += log_softmax(cad_adjust(model.logits(a), model.logits(b), alpha_cad))[static_cast<std::size_t>(tok)];
        a.push_back(tok);
        b.push_back(tok);
    }
    return total;
}

std::optional<std::string> extract_completion_answer(std::string_view text) {
    static const std::regex word("[A-Za-z]+");
    std::match_results<std::string_view::const_iterator> m;
    if (!std::regex_search(text.begin(), text.end(), m, word)) return std::nullopt;
    std::string w = m.str();
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return w;
}

namespace {

std::string normalize_gold(const std::string& s) { return extract_completion_answer(s).value_or(s); }

std::vector<int> encode_for(const TransformerModel& model, const ConflictExample& ex, const std::string& text) {
    try {
        return model.tokenizer().encode(text);
    } catch (const TokenizationError& e) {
        throw InputError("example '" + ex.id + "': " + e.what());
    }
}

void require_task(const std::vector<ConflictExample>& ds, Task task) {
    for (const auto& ex : ds)
        if (ex.task != task) throw InputError("example '" + ex.id + "' is not a " + std::string(to_string(task)) + " item");
}

}  // namespace

EvalReport score_completion(const TransformerModel& model, const std::vector<ConflictExample>& dataset,
                            const PromptTemplate& tmpl, const Decoding& decoding) {
    require_task(dataset, Task::completion);
    std::vector<ExampleRecord> records(dataset.size());
    parallel_for(dataset.size(), decoding.threads, [&](std::size_t i) {
        const auto& ex = dataset[i];
        auto prompt = encode_for(model, ex, tmpl.render(ex));
        std::vector<int> gen;
        if (decoding.cad) {
            auto bare = encode_for(model, ex, tmpl.render_without_context(ex));
            gen = greedy_generate_cad(model, prompt, bare, decoding.max_new, decoding.alpha_cad);
        } else {
            gen = greedy_generate(model, prompt, decoding.max_new);
        }
        auto word = extract_completion_answer(model.tokenizer().decode(gen));
        ExampleRecord r{ex.id, word.value_or(""), false, false};
        if (word) {
            r.matched_gold = *word == normalize_gold(ex.gold_answer);
            r.matched_original = *word == normalize_gold(ex.original_gold);
        }
        records[i] = std::move(r);
    });
    return make_report(std::move(records));
}

EvalReport score_multiple_choice(const TransformerModel& model, const std::vector<ConflictExample>& dataset,
                                 const PromptTemplate& tmpl, const Decoding& decoding) {
    require_task(dataset, Task::multiple_choice);
    std::vector<ExampleRecord> records(dataset.size());
    parallel_for(dataset.size(), decoding.threads, [&](std::size_t i) {
        const auto& ex = dataset[i];
        auto prompt = encode_for(model, ex, tmpl.render(ex));
        std::vector<int> bare;
        if (decoding.cad) bare = encode_for(model, ex, tmpl.render_without_context(ex));
        std::size_t best = 0;
        double best_score = -INFINITY;
        for (std::size_t c = 0; c < ex.choices.size(); ++c) {
            auto option = encode_for(model, ex, " " + ex.choices[c]);
            if (option.empty()) throw InputError("example '" + ex.id + "': empty choice");
            double s = decoding.cad ? cad_answer_logprob(model, prompt, bare, option, decoding.alpha_cad)
                                    : model.answer_logprob(prompt, option);
            if (decoding.length_normalized) s /= static_cast<double>(option.size());
            if (s > best_score) {
                best_score = s;
                best = c;
            }
        }
        const std::string label = choice_label(best);
        records[i] = ExampleRecord{ex.id, label, label == ex.gold_answer, label == ex.original_gold};
    });
    return make_report(std::move(records));
}

EvalReport evaluate(const TransformerModel& model, const std::vector<ConflictExample>& dataset,
                    const PromptTemplate& tmpl, const Decoding& decoding) {
    if (dataset.empty()) return make_report({});
    return dataset.front().task == Task::completion ? score_completion(model, dataset, tmpl, decoding)
                                                    : score_multiple_choice(model, dataset, tmpl, decoding);
}

std::pair<std::vector<ConflictExample>, std::vector<ConflictExample>> split_dataset(
    const std::vector<ConflictExample>& dataset, std::uint64_t seed) {
    if (dataset.size() < 2) throw InputError("splitting needs at least two examples");
    std::vector<std::size_t> idx(dataset.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n_val = (dataset.size() + 1) / 2;
    std::pair<std::vector<ConflictExample>, std::vector<ConflictExample>> out;
    for (std::size_t i = 0; i < idx.size(); ++i) (i < n_val ? out.first : out.second).push_back(dataset[idx[i]]);
    return out;
}

GridResult grid_search(const TransformerModel& model, const AttributionMatrix& matrix,
                       const std::vector<ConflictExample>& dataset, std::vector<int> h_range,
                       std::vector<double> beta_range, const GridConfig& cfg) {
    if (h_range.empty() || beta_range.empty()) throw ParameterError("grid ranges must be non-empty");
    std::sort(h_range.begin(), h_range.end());
    std::sort(beta_range.begin(), beta_range.end());
    const auto [validation, test] = split_dataset(dataset, cfg.split_seed);

    GridResult g;
    g.baseline_validation = evaluate(model, validation, cfg.tmpl, cfg.decoding);
    g.baseline_test = evaluate(model, test, cfg.tmpl, cfg.decoding);

    bool have_best = false;
    double best_acc = -1.0;
    std::vector<RankedNeuron> best_neurons;
    for (int h : h_range) {
        std::optional<Selection> sel;
        std::string warning;
        try {
            sel = select_context_neurons(matrix, SelectionConfig{cfg.t, cfg.z, h});
        } catch (const Error& e) {
            warning = e.what();
        }
        for (double beta : beta_range) {
            GridCell cell{h, beta, !sel, warning, {}};
            if (sel) {
                EditPlan plan;
                for (const auto& n : sel->neurons) plan.sites.push_back(n.site);
                plan.beta = beta;
                auto edited = apply_edit(model, plan);
                cell.validation = evaluate(edited, validation, cfg.tmpl, cfg.decoding);
                if (!have_best || cell.validation.acc > best_acc) {
                    have_best = true;
                    best_acc = cell.validation.acc;
                    g.best_h = h;
                    g.best_beta = beta;
                    best_neurons = sel->neurons;
                }
            }
            g.cells.push_back(std::move(cell));
        }
    }
    if (!have_best) throw SelectionError("every grid cell was infeasible");
    g.best_neurons = best_neurons;
    EditPlan plan;
    for (const auto& n : best_neurons) plan.sites.push_back(n.site);
    plan.beta = g.best_beta;
    g.test = evaluate(apply_edit(model, plan), test, cfg.tmpl, cfg.decoding);
    return g;
}

AblationResult ablation_suite(const TransformerModel& model, const std::vector<NeuronSite>& selected,
                              const std::vector<ConflictExample>& dataset, double beta, int repeats,
                              std::uint64_t seed, const PromptTemplate& tmpl, const Decoding& decoding) {
    if (repeats < 1) throw ParameterError("repeats must be >= 1");
    AblationResult out;
    out.baseline = evaluate(model, dataset, tmpl, decoding);
    const std::set<NeuronSite> exclude(selected.begin(), selected.end());
    const int n = static_cast<int>(selected.size());

    auto finish = [](AblationArm& arm) {
        for (const auto& r : arm.runs) {
            arm.mean_acc += r.acc;
            arm.mean_sr += r.sr;
        }
        arm.mean_acc /= static_cast<double>(arm.runs.size());
        arm.mean_sr /= static_cast<double>(arm.runs.size());
    };

    AblationArm ircan{"IRCAN", {}, 0, 0}, ercan{"ErCAN", {}, 0, 0};
    ircan.runs.push_back(evaluate(apply_edit(model, {selected, beta, EditKind::reweight, std::nullopt}), dataset, tmpl, decoding));
    ercan.runs.push_back(evaluate(apply_edit(model, {selected, 0.0, EditKind::erase, std::nullopt}), dataset, tmpl, decoding));
    AblationArm ern{"ERN", {}, 0, 0}, errn{"ErRN", {}, 0, 0};
    for (int r = 0; r < repeats; ++r) {
        const std::uint64_t s = seed + static_cast<std::uint64_t>(r);
        auto sites = random_sites(model.config(), n, s, exclude);
        ern.runs.push_back(evaluate(apply_edit(model, {sites, beta, EditKind::random_reweight, s}), dataset, tmpl, decoding));
        errn.runs.push_back(evaluate(apply_edit(model, {sites, 0.0, EditKind::random_erase, s}), dataset, tmpl, decoding));
    }
    for (auto* arm : {&ircan, &ercan, &ern, &errn}) {
        finish(*arm);
        out.arms.push_back(std::move(*arm));
    }
    return out;
}

ParityReport check_reference_logits(const TransformerModel& model, const std::string& json_text, double tol) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("reference logits: ") + e.what());
    }
    if (!j.is_object()) throw ParseError("reference logits must be a JSON object keyed by prompt");
    ParityReport out;
    for (const auto& [prompt, ref] : j.items()) {
        if (!ref.is_array()) throw ParseError("reference logits for '" + prompt + "' must be an array");
        const auto tokens = model.tokenizer().encode(prompt);
        if (tokens.empty()) throw InputError("empty prompt in reference logits");
        const Tensor got = model.logits(tokens);
        if (ref.size() != got.numel()) {
            throw DimensionError("reference logits for '" + prompt + "' have " + std::to_string(ref.size()) +
                                 " entries, model vocab is " + std::to_string(got.numel()));
        }
        double worst = 0.0;
        for (std::size_t i = 0; i < got.numel(); ++i) worst = std::max(worst, std::abs(got[i] - ref[i].get<double>()));
        out.entries.push_back({prompt, worst});
        out.worst = std::max(out.worst, worst);
    }
    out.pass = out.worst <= tol;
    return out;
}

namespace {

json report_to_json(const EvalReport& r, bool with_records) {
    json j{{"n", r.n}, {"acc", r.acc}, {"sr", r.sr}};
    if (with_records) {
        json recs = json::array();
        for (const auto& e : r.records) {
            recs.push_back(json{{"id", e.id},
                                {"prediction", e.prediction},
                                {"matched_gold", e.matched_gold},
                                {"matched_original", e.matched_original}});
        }
        j["records"] = recs;
    }
    return j;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

std::string report_json(const EvalReport& r) { return report_to_json(r, true).dump(2) + "\n"; }

std::string report_csv(const EvalReport& r) {
    std::string out = "id,prediction,matched_gold,matched_original\n";
    for (const auto& e : r.records) {
        out += e.id + "," + e.prediction + "," + (e.matched_gold ? "1" : "0") + "," + (e.matched_original ? "1" : "0") + "\n";
    }
    return out;
}

std::string sweep_csv(const GridResult& g) {
    std::string out = "h,beta,split,acc,sr\n";
    for (const auto& c : g.cells) {
        if (c.skipped) continue;
        out += std::to_string(c.h) + "," + fmt(c.beta) + ",validation," + fmt(c.validation.acc) + "," +
               fmt(c.validation.sr) + "\n";
    }
    out += std::to_string(g.best_h) + "," + fmt(g.best_beta) + ",test," + fmt(g.test.acc) + "," + fmt(g.test.sr) + "\n";
    return out;
}

std::string grid_json(const GridResult& g) {
    json j;
    j["best"] = json{{"h", g.best_h}, {"beta", g.best_beta}};
    json sites = json::array();
    for (const auto& n : g.best_neurons)
        sites.push_back(json{{"layer", n.site.layer}, {"neuron", n.site.neuron}, {"count", n.count}, {"mean_score", n.mean_score}});
    j["best_sites"] = sites;
    j["baseline"] = json{{"validation", report_to_json(g.baseline_validation, false)},
                         {"test", report_to_json(g.baseline_test, false)}};
    j["test"] = report_to_json(g.test, true);
    json cells = json::array();
    for (const auto& c : g.cells) {
        json cj{{"h", c.h}, {"beta", c.beta}, {"skipped", c.skipped}};
        if (c.skipped) cj["warning"] = c.warning;
        else cj["validation"] = report_to_json(c.validation, false);
        cells.push_back(cj);
    }
    j["cells"] = cells;
    return j.dump(2) + "\n";
}

std::string ablation_json(const AblationResult& a) {
    json j;
    j["baseline"] = report_to_json(a.baseline, false);
    json arms = json::array();
    for (const auto& arm : a.arms) {
        json runs = json::array();
        for (const auto& r : arm.runs) runs.push_back(report_to_json(r, false));
        arms.push_back(json{{"name", arm.name}, {"mean_acc", arm.mean_acc}, {"mean_sr", arm.mean_sr}, {"runs", runs}});
    }
    j["arms"] = arms;
    return j.dump(2) + "\n";
}

}  // namespace ircan
