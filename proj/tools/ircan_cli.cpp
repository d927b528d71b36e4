// ircan: train toy models, score context-aware neurons, edit and evaluate.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ircan/attribution.hpp"
#include "ircan/checkpoint.hpp"
#include "ircan/data.hpp"
#include "ircan/editing.hpp"
#include "ircan/errors.hpp"
#include "ircan/harness.hpp"
#include "ircan/hash.hpp"
#include "ircan/json_io.hpp"
#include "ircan/parallel.hpp"
#include "ircan/selection.hpp"
#include "ircan/trainer.hpp"

namespace fs = std::filesystem;
using namespace ircan;

namespace {

struct Global {
    std::uint64_t seed = 0;
    int threads = 0;
    std::vector<std::string> argv;
};

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw InputError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw InputError("cannot write " + p.string());
    out << text;
    if (!out) throw InputError("write failed: " + p.string());
}

std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

// Written next to the primary output before any result file.
void write_manifest(const fs::path& where, const std::string& command, const json& config,
                    const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs, const Global& g) {
    json hashes = json::object();
    for (const auto& p : inputs) hashes[p.string()] = sha256_file(p);
    json outs = json::array();
    for (const auto& p : outputs) outs.push_back(p.string());
    json j{{"command", command},   {"argv", g.argv},      {"config", config}, {"input_hashes", hashes},
           {"seed", g.seed},       {"output_paths", outs}, {"timestamp", utc_now()}};
    write_text(where, j.dump(2) + "\n");
}

fs::path manifest_for(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

template <class T>
std::vector<T> parse_range(const std::string& text, const char* what) {
    std::vector<T> out;
    auto num = [&](const std::string& s) -> T {
        try {
            std::size_t used = 0;
            T v;
            if constexpr (std::is_integral_v<T>) v = static_cast<T>(std::stol(s, &used));
            else v = static_cast<T>(std::stod(s, &used));
            if (used != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ParameterError(std::string("bad ") + what + " value '" + s + "'");
        }
    };
    if (auto dots = text.find(".."); dots != std::string::npos) {
        std::string hi = text.substr(dots + 2), step = "1";
        if (auto colon = hi.find(':'); colon != std::string::npos) {
            step = hi.substr(colon + 1);
            hi = hi.substr(0, colon);
        }
        const T a = num(text.substr(0, dots)), b = num(hi), s = num(step);
        if (!(s > 0) || b < a) throw ParameterError(std::string("bad ") + what + " range '" + text + "'");
        for (long i = 0;; ++i) {
            const T v = static_cast<T>(a + static_cast<T>(i) * s);
            if (v > b) break;
            out.push_back(v);
        }
    } else {
        std::stringstream ss(text);
        for (std::string item; std::getline(ss, item, ',');) out.push_back(num(item));
    }
    if (out.empty()) throw ParameterError(std::string("empty ") + what + " range");
    return out;
}

std::vector<NeuronSite> parse_sites(const std::string& text) {
    std::vector<NeuronSite> out;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) out.push_back(parse_site(item));
    return out;
}

std::vector<NeuronSite> selected_sites(const fs::path& neurons_json) {
    std::vector<NeuronSite> out;
    for (const auto& n : parse_selection_json(read_text(neurons_json)).neurons) out.push_back(n.site);
    return out;
}

// Shared dataset/split handling for attribute, eval and ablate.
struct DataOpts {
    std::string data;
    std::string split = "all";
    std::uint64_t split_seed = 0;
    std::string tmpl;

    void add(CLI::App* c, bool required = true) {
        c->add_option("--data", data, "dataset JSONL")->required(required);
        c->add_option("--split", split, "all, validation or test")
            ->check(CLI::IsMember({"all", "validation", "test"}))
            ->capture_default_str();
        c->add_option("--split-seed", split_seed, "seed of the validation/test shuffle")->capture_default_str();
        c->add_option("--template", tmpl, "prompt template file (default: {context} {question})");
    }
    std::vector<ConflictExample> load() const {
        auto ds = load_dataset(data);
        if (split == "all") return ds;
        auto halves = split_dataset(ds, split_seed);
        return split == "validation" ? halves.first : halves.second;
    }
    PromptTemplate prompt() const { return tmpl.empty() ? PromptTemplate{} : PromptTemplate::load(tmpl); }
    std::vector<fs::path> inputs() const {
        std::vector<fs::path> v{data};
        if (!tmpl.empty()) v.push_back(tmpl);
        return v;
    }
    json to_json() const { return {{"data", data}, {"split", split}, {"split_seed", split_seed}, {"template", tmpl}}; }
};

struct DecodeOpts {
    bool cad = false;
    double alpha_cad = 0.5;
    int max_new = 8;
    bool length_normalized = false;

    void add(CLI::App* c) {
        c->add_flag("--cad", cad, "context-aware decoding");
        c->add_option("--alpha-cad", alpha_cad, "CAD strength")->capture_default_str();
        c->add_option("--max-new", max_new, "generation budget (completion)")->capture_default_str();
        c->add_flag("--length-normalized", length_normalized, "divide option log-prob by token count");
    }
    Decoding make(int threads) const { return Decoding{cad, alpha_cad, max_new, length_normalized, threads}; }
    json to_json() const {
        return {{"cad", cad}, {"alpha_cad", alpha_cad}, {"max_new", max_new}, {"length_normalized", length_normalized}};
    }
};

struct AttrOpts {
    int m = 20;
    std::string mode = "joint_layer";
    std::string precision = "f64";

    void add(CLI::App* c) {
        c->add_option("--m", m, "Riemann steps")->capture_default_str();
        c->add_option("--mode", mode, "joint_layer or per_neuron_exact")->capture_default_str();
        c->add_option("--precision", precision, "f64 or f32")->capture_default_str();
    }
    AttributionConfig make(int threads) const {
        AttributionConfig c{m, parse_attribution_mode(mode), parse_precision(precision), threads};
        c.validate();
        return c;
    }
    json to_json() const { return {{"m", m}, {"mode", mode}, {"precision", precision}}; }
};

AttributionMatrix attribute_all(const TransformerModel& model, const std::vector<ConflictExample>& ds,
                                const PromptTemplate& tmpl, const AttributionConfig& cfg) {
    std::vector<AttributionInput> inputs;
    for (const auto& ex : ds) inputs.push_back(make_attribution_input(model.tokenizer(), ex, tmpl));
    return attribute_dataset(model, inputs, cfg);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ircan: context-aware neuron attribution and editing for toy transformers"};
    // identify and grid use --h, so help has no short alias.
    app.set_help_flag("--help", "print help and exit");
    app.require_subcommand(1);
    app.set_config("--config", "", "key=value config file; command-line flags win");
    Global g;
    for (int i = 0; i < argc; ++i) g.argv.emplace_back(argv[i]);
    app.add_option("--seed", g.seed, "seed for every stochastic component")->capture_default_str();
    app.add_option("--threads", g.threads, "worker threads, 0 = all cores (IRCAN_THREADS overrides)")
        ->capture_default_str();

    std::function<void()> run;

    // gen-data
    SyntheticSpec syn;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen-data", "write the synthetic conflict benchmark");
    gen->add_option("--out-dir", gen_out, "output directory")->required();
    gen->add_option("--entities", syn.n_entities)->capture_default_str();
    gen->add_option("--relations", syn.n_relations)->capture_default_str();
    gen->add_option("--values", syn.n_values)->capture_default_str();
    gen->add_option("--conflicts", syn.n_conflicts)->capture_default_str();
    syn.n_context_lines = 800;
    syn.context_follow_rate = 0.25;
    syn.follow_rate_spread = 0.2;
    gen->add_option("--context-lines", syn.n_context_lines)->capture_default_str();
    gen->add_option("--follow-rate", syn.context_follow_rate)->capture_default_str();
    gen->add_option("--follow-spread", syn.follow_rate_spread, "per-relation spread of the follow rate")
        ->capture_default_str();
    gen->add_option("--fact-repeats", syn.fact_repeats)->capture_default_str();
    gen->add_option("--distractor-rate", syn.distractor_rate, "share of context lines about another pair")
        ->capture_default_str();
    gen->callback([&] {
        run = [&] {
            syn.seed = g.seed;
            const fs::path dir = gen_out;
            const std::vector<fs::path> outs{dir / "corpus.txt", dir / "completion.jsonl", dir / "multiple_choice.jsonl",
                                             dir / "facts.csv"};
            json cfg{{"entities", syn.n_entities}, {"relations", syn.n_relations}, {"values", syn.n_values},
                     {"conflicts", syn.n_conflicts}, {"context_lines", syn.n_context_lines},
                     {"follow_rate", syn.context_follow_rate}, {"follow_spread", syn.follow_rate_spread},
                     {"fact_repeats", syn.fact_repeats}, {"distractor_rate", syn.distractor_rate}};
            fs::create_directories(dir);
            write_manifest(dir / "manifest.json", "gen-data", cfg, {}, outs, g);
            auto data = gen_synthetic(syn);
            write_text(outs[0], data.corpus);
            save_dataset(outs[1], data.completion);
            save_dataset(outs[2], data.multiple_choice);
            std::string facts = "entity,relation,value\n";
            for (const auto& f : data.facts) facts += f.entity + "," + f.relation + "," + f.value + "\n";
            write_text(outs[3], facts);
            std::cout << "wrote " << data.completion.size() << " conflicts to " << dir.string() << "\n";
        };
    });

    // train
    std::string corpus_path, train_out, optimizer = "adam", dtype = "f64", ffn = "plain", pos = "learned";
    ModelConfig mcfg;
    mcfg.n_layers = 2;
    mcfg.n_heads = 4;
    mcfg.d_model = 64;
    mcfg.d_ff = 256;
    mcfg.max_seq_len = 32;
    TrainOptions topt;
    topt.steps = 4000;
    topt.lr = 3e-3;
    topt.cosine_decay = true;
    auto* train = app.add_subcommand("train", "train a toy transformer on a corpus");
    train->add_option("--corpus", corpus_path, "training text, one sequence per line")->required();
    train->add_option("--out", train_out, "checkpoint path")->required();
    train->add_option("--steps", topt.steps)->capture_default_str();
    train->add_option("--lr", topt.lr)->capture_default_str();
    train->add_option("--batch", topt.batch_size)->capture_default_str();
    train->add_option("--optimizer", optimizer, "sgd or adam")->capture_default_str();
    train->add_option("--momentum", topt.momentum)->capture_default_str();
    train->add_option("--clip", topt.clip_norm)->capture_default_str();
    train->add_option("--cosine", topt.cosine_decay, "cosine lr decay")->capture_default_str();
    train->add_option("--layers", mcfg.n_layers)->capture_default_str();
    train->add_option("--heads", mcfg.n_heads)->capture_default_str();
    train->add_option("--d-model", mcfg.d_model)->capture_default_str();
    train->add_option("--d-ff", mcfg.d_ff)->capture_default_str();
    train->add_option("--max-seq-len", mcfg.max_seq_len)->capture_default_str();
    train->add_option("--ffn", ffn, "plain or gated")->capture_default_str();
    train->add_option("--pos", pos, "learned or rotary")->capture_default_str();
    train->add_option("--dtype", dtype, "checkpoint dtype, f32 or f64")->capture_default_str();
    train->callback([&] {
        run = [&] {
            mcfg.ffn_kind = parse_ffn_kind(ffn);
            mcfg.position_kind = parse_position_kind(pos);
            topt.optimizer = parse_optimizer(optimizer);
            topt.seed = g.seed;
            if (dtype != "f32" && dtype != "f64") throw ParameterError("dtype must be f32 or f64");
            const std::string corpus = read_text(corpus_path);
            json cfg{{"model", mcfg},
                     {"steps", topt.steps},
                     {"lr", topt.lr},
                     {"batch", topt.batch_size},
                     {"optimizer", optimizer},
                     {"momentum", topt.momentum},
                     {"clip", topt.clip_norm},
                     {"cosine", topt.cosine_decay},
                     {"dtype", dtype}};
            write_manifest(manifest_for(train_out), "train", cfg, {corpus_path}, {train_out}, g);
            const int report = std::max(1, topt.steps / 10);
            topt.on_step = [&](int step, double loss) {
                if (step % report == 0 || step + 1 == topt.steps) std::fprintf(stderr, "step %d loss %.4f\n", step, loss);
            };
            auto res = train_toy(mcfg, corpus, topt);
            save_checkpoint(res.model, train_out, dtype == "f32" ? DType::f32 : DType::f64);
            std::cout << "final loss " << res.losses.back() << ", checkpoint " << train_out << "\n";
        };
    });

    // attribute
    std::string model_path, attr_out;
    DataOpts attr_data;
    AttrOpts attr;
    auto* attribute = app.add_subcommand("attribute", "score every FFN neuron on each conflict example");
    attribute->add_option("--model", model_path, "checkpoint")->required();
    attribute->add_option("--out", attr_out, "attribution CSV")->required();
    attr_data.add(attribute);
    attr.add(attribute);
    attribute->callback([&] {
        run = [&] {
            const int threads = resolve_threads(g.threads);
            json cfg = attr_data.to_json();
            cfg.update(attr.to_json());
            auto inputs = attr_data.inputs();
            inputs.push_back(model_path);
            write_manifest(manifest_for(attr_out), "attribute", cfg, inputs, {attr_out}, g);
            auto model = load_checkpoint(model_path);
            auto m = attribute_all(model, attr_data.load(), attr_data.prompt(), attr.make(threads));
            save_attribution_csv(m, attr_out);
            std::cout << "scored " << m.size() << " examples\n";
        };
    });

    // identify
    std::string scores_path, ident_out, hist_out;
    SelectionConfig sel;
    auto* identify = app.add_subcommand("identify", "select context-aware neurons from attribution scores");
    identify->add_option("--scores", scores_path, "attribution CSV")->required();
    identify->add_option("--out", ident_out, "neuron JSON")->required();
    identify->add_option("--hist-out", hist_out, "layer histogram CSV (default: <out>.hist.csv)");
    identify->add_option("--t", sel.t, "relative threshold")->capture_default_str();
    identify->add_option("--z", sel.z, "candidates per example")->capture_default_str();
    identify->add_option("--h", sel.h, "neurons to select")->required();
    identify->callback([&] {
        run = [&] {
            if (hist_out.empty()) hist_out = ident_out + ".hist.csv";
            sel.validate();
            json cfg{{"t", sel.t}, {"z", sel.z}, {"h", sel.h}};
            write_manifest(manifest_for(ident_out), "identify", cfg, {scores_path}, {ident_out, hist_out}, g);
            auto m = load_attribution_csv(scores_path);
            auto s = select_context_neurons(m, sel);
            int n_layers = 0;
            for (const auto& [site, v] : m.scores.front()) n_layers = std::max(n_layers, site.layer + 1);
            write_text(ident_out, selection_json(s, sel));
            write_text(hist_out, histogram_csv(layer_histogram(s.candidate_sets, n_layers)));
            for (const auto& n : s.neurons)
                std::cout << to_string(n.site) << " count=" << n.count << " mean=" << n.mean_score << "\n";
        };
    });

    // edit
    std::string edit_model, edit_out, neurons_path, sites_text, kind = "reweight", target = "outgoing";
    double beta = 1.0;
    auto* edit = app.add_subcommand("edit", "scale selected neurons and write the edited checkpoint");
    edit->add_option("--model", edit_model, "checkpoint")->required();
    edit->add_option("--out", edit_out, "edited checkpoint")->required();
    auto* nopt = edit->add_option("--neurons", neurons_path, "neuron JSON from identify");
    edit->add_option("--sites", sites_text, "explicit sites, e.g. 0:5,1:7")->excludes(nopt);
    edit->add_option("--beta", beta, "enhancement strength")->capture_default_str();
    edit->add_option("--kind", kind, "reweight, erase, random_reweight or random_erase")->capture_default_str();
    edit->add_option("--target", target, "outgoing or incoming")->capture_default_str();
    edit->callback([&] {
        run = [&] {
            json cfg{{"beta", beta}, {"kind", kind}, {"target", target}, {"neurons", neurons_path}, {"sites", sites_text}};
            std::vector<fs::path> inputs{edit_model};
            if (!neurons_path.empty()) inputs.push_back(neurons_path);
            write_manifest(manifest_for(edit_out), "edit", cfg, inputs, {edit_out}, g);
            auto model = load_checkpoint(edit_model);
            EditPlan plan;
            plan.kind = parse_edit_kind(kind);
            plan.target = parse_edit_target(target);
            plan.beta = beta;
            if (plan.kind == EditKind::random_reweight || plan.kind == EditKind::random_erase) {
                plan.seed = g.seed;
                int n = 0;
                std::set<NeuronSite> exclude;
                if (!neurons_path.empty()) {
                    auto s = selected_sites(neurons_path);
                    exclude.insert(s.begin(), s.end());
                    n = static_cast<int>(s.size());
                } else {
                    n = static_cast<int>(parse_sites(sites_text).size());
                }
                plan.sites = random_sites(model.config(), n, g.seed, exclude);
            } else if (!neurons_path.empty()) {
                plan.sites = selected_sites(neurons_path);
            } else if (!sites_text.empty()) {
                plan.sites = parse_sites(sites_text);
            } else {
                throw ParameterError("edit needs --neurons or --sites");
            }
            save_checkpoint(apply_edit(model, plan), edit_out);
            std::cout << "edited " << plan.sites.size() << " neurons\n";
        };
    });

    // eval
    std::string eval_model, eval_out, eval_csv;
    DataOpts eval_data;
    DecodeOpts eval_dec;
    auto* eval = app.add_subcommand("eval", "score a model on a conflict dataset (ACC and SR)");
    eval->add_option("--model", eval_model, "checkpoint")->required();
    eval->add_option("--out", eval_out, "report JSON")->required();
    eval->add_option("--csv-out", eval_csv, "per-example CSV (default: <out>.csv)");
    eval_data.add(eval);
    eval_dec.add(eval);
    eval->callback([&] {
        run = [&] {
            if (eval_csv.empty()) eval_csv = eval_out + ".csv";
            json cfg = eval_data.to_json();
            cfg.update(eval_dec.to_json());
            auto inputs = eval_data.inputs();
            inputs.push_back(eval_model);
            write_manifest(manifest_for(eval_out), "eval", cfg, inputs, {eval_out, eval_csv}, g);
            auto model = load_checkpoint(eval_model);
            auto r = evaluate(model, eval_data.load(), eval_data.prompt(), eval_dec.make(resolve_threads(g.threads)));
            write_text(eval_out, report_json(r));
            write_text(eval_csv, report_csv(r));
            std::printf("n=%d acc=%.4f sr=%.4f\n", r.n, r.acc, r.sr);
        };
    });

    // grid
    std::string grid_model, grid_dir, grid_scores, h_range = "1..16", beta_range = "2..20";
    DataOpts grid_data;
    DecodeOpts grid_dec;
    AttrOpts grid_attr;
    double grid_t = 0.10;
    int grid_z = 20;
    auto* grid = app.add_subcommand("grid", "grid-search h and beta on validation, report test");
    grid->add_option("--model", grid_model, "checkpoint")->required();
    grid->add_option("--out-dir", grid_dir, "output directory")->required();
    grid->add_option("--scores", grid_scores, "validation attribution CSV (computed when omitted)");
    grid->add_option("--h-range", h_range, "a..b[:step] or comma list")->capture_default_str();
    grid->add_option("--beta-range", beta_range, "a..b[:step] or comma list")->capture_default_str();
    grid->add_option("--t", grid_t)->capture_default_str();
    grid->add_option("--z", grid_z)->capture_default_str();
    grid_data.add(grid);
    grid_dec.add(grid);
    grid_attr.add(grid);
    grid->callback([&] {
        run = [&] {
            const int threads = resolve_threads(g.threads);
            const fs::path dir = grid_dir;
            const std::vector<fs::path> outs{dir / "grid.json", dir / "sweep.csv", dir / "neurons.json",
                                             dir / "validation_scores.csv"};
            json cfg = grid_data.to_json();
            cfg.update(grid_dec.to_json());
            cfg.update(grid_attr.to_json());
            cfg.update(json{{"h_range", h_range}, {"beta_range", beta_range}, {"t", grid_t}, {"z", grid_z},
                            {"scores", grid_scores}});
            auto inputs = grid_data.inputs();
            inputs.push_back(grid_model);
            if (!grid_scores.empty()) inputs.push_back(grid_scores);
            fs::create_directories(dir);
            write_manifest(dir / "manifest.json", "grid", cfg, inputs, outs, g);

            auto model = load_checkpoint(grid_model);
            auto ds = load_dataset(grid_data.data);
            const auto tmpl = grid_data.prompt();
            AttributionMatrix m;
            if (!grid_scores.empty()) {
                m = load_attribution_csv(grid_scores);
            } else {
                m = attribute_all(model, split_dataset(ds, grid_data.split_seed).first, tmpl, grid_attr.make(threads));
            }
            save_attribution_csv(m, outs[3]);
            GridConfig gc{grid_t, grid_z, grid_data.split_seed, tmpl, grid_dec.make(threads)};
            auto res = grid_search(model, m, ds, parse_range<int>(h_range, "h"), parse_range<double>(beta_range, "beta"), gc);
            for (const auto& c : res.cells)
                if (c.skipped) std::cerr << "warning: h=" << c.h << " skipped: " << c.warning << "\n";
            write_text(outs[0], grid_json(res));
            write_text(outs[1], sweep_csv(res));
            write_text(outs[2], selection_json(select_context_neurons(m, SelectionConfig{grid_t, grid_z, res.best_h}),
                                               SelectionConfig{grid_t, grid_z, res.best_h}));
            std::printf("best h=%d beta=%g | test acc %.4f sr %.4f | baseline test acc %.4f sr %.4f\n", res.best_h,
                        res.best_beta, res.test.acc, res.test.sr, res.baseline_test.acc, res.baseline_test.sr);
        };
    });

    // ablate
    std::string abl_model, abl_out, abl_neurons;
    double abl_beta = 1.0;
    int repeats = 10;
    DataOpts abl_data;
    abl_data.split = "test";
    DecodeOpts abl_dec;
    auto* ablate = app.add_subcommand("ablate", "IRCAN / ErCAN / ERN / ErRN intervention arms");
    ablate->add_option("--model", abl_model, "checkpoint")->required();
    ablate->add_option("--neurons", abl_neurons, "neuron JSON")->required();
    ablate->add_option("--beta", abl_beta, "enhancement strength")->required();
    ablate->add_option("--out", abl_out, "ablation JSON")->required();
    ablate->add_option("--repeats", repeats, "random-arm repetitions")->capture_default_str();
    abl_data.add(ablate);
    abl_dec.add(ablate);
    ablate->callback([&] {
        run = [&] {
            json cfg = abl_data.to_json();
            cfg.update(abl_dec.to_json());
            cfg.update(json{{"beta", abl_beta}, {"repeats", repeats}, {"neurons", abl_neurons}});
            auto inputs = abl_data.inputs();
            inputs.push_back(abl_model);
            inputs.push_back(abl_neurons);
            write_manifest(manifest_for(abl_out), "ablate", cfg, inputs, {abl_out}, g);
            auto model = load_checkpoint(abl_model);
            auto res = ablation_suite(model, selected_sites(abl_neurons), abl_data.load(), abl_beta, repeats, g.seed,
                                      abl_data.prompt(), abl_dec.make(resolve_threads(g.threads)));
            write_text(abl_out, ablation_json(res));
            std::printf("baseline acc=%.4f sr=%.4f\n", res.baseline.acc, res.baseline.sr);
            for (const auto& a : res.arms) std::printf("%-6s acc=%.4f sr=%.4f\n", a.name.c_str(), a.mean_acc, a.mean_sr);
        };
    });

    // overlap
    std::string ov_a, ov_b, ov_out;
    int k = 300;
    double ov_t = 0.10;
    int ov_z = 20;
    auto* overlap = app.add_subcommand("overlap", "top-k neuron overlap between two prompt sets");
    overlap->add_option("--a", ov_a, "attribution CSV for prompt set A")->required();
    overlap->add_option("--b", ov_b, "attribution CSV for prompt set B")->required();
    overlap->add_option("--out", ov_out, "result JSON")->required();
    overlap->add_option("--k", k)->capture_default_str();
    overlap->add_option("--t", ov_t)->capture_default_str();
    overlap->add_option("--z", ov_z)->capture_default_str();
    overlap->callback([&] {
        run = [&] {
            json cfg{{"k", k}, {"t", ov_t}, {"z", ov_z}};
            write_manifest(manifest_for(ov_out), "overlap", cfg, {ov_a, ov_b}, {ov_out}, g);
            const double o = prompt_overlap(load_attribution_csv(ov_a), load_attribution_csv(ov_b), k, ov_t, ov_z);
            write_text(ov_out, json{{"k", k}, {"overlap", o}}.dump(2) + "\n");
            std::printf("overlap@%d = %.4f\n", k, o);
        };
    });

    // parity
    std::string par_model, par_ref, par_out;
    double tol = 1e-4;
    auto* parity = app.add_subcommand("parity", "compare logits against a reference-logits JSON");
    parity->add_option("--model", par_model, "checkpoint")->required();
    parity->add_option("--ref", par_ref, "JSON of prompt -> logits")->required();
    parity->add_option("--out", par_out, "result JSON")->required();
    parity->add_option("--tol", tol)->capture_default_str();
    parity->callback([&] {
        run = [&] {
            write_manifest(manifest_for(par_out), "parity", json{{"tol", tol}}, {par_model, par_ref}, {par_out}, g);
            auto r = check_reference_logits(load_checkpoint(par_model), read_text(par_ref), tol);
            json entries = json::array();
            for (const auto& e : r.entries) entries.push_back(json{{"prompt", e.prompt}, {"max_abs_diff", e.max_abs_diff}});
            write_text(par_out, json{{"pass", r.pass}, {"worst", r.worst}, {"tol", tol}, {"entries", entries}}.dump(2) + "\n");
            std::printf("%zu prompts, worst %.3g, %s\n", r.entries.size(), r.worst, r.pass ? "pass" : "FAIL");
            if (!r.pass) throw NumericError("reference parity exceeded tolerance");
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    try {
        run();
    } catch (const Error& e) {
        std::cerr << "error (" << e.kind() << "): " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
