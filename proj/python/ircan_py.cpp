#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ircan/attribution.hpp"
#include "ircan/checkpoint.hpp"
#include "ircan/editing.hpp"
#include "ircan/errors.hpp"
#include "ircan/harness.hpp"
#include "ircan/hash.hpp"
#include "ircan/json_io.hpp"
#include "ircan/selection.hpp"

namespace py = pybind11;
using namespace ircan;

namespace {

py::array_t<double> to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> a(shape);
    std::copy(t.raw().begin(), t.raw().end(), a.mutable_data());
    return a;
}

Tensor from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

ModelConfig config_from(const std::string& text) { return json::parse(text).get<ModelConfig>(); }
std::string config_to(const ModelConfig& c) { return json(c).dump(); }

DType parse_dtype(const std::string& s) {
    if (s == "f32") return DType::f32;
    if (s == "f64") return DType::f64;
    throw ParameterError("unknown dtype '" + s + "' (expected f32|f64)");
}

std::vector<AttributionInput> inputs_for(const TransformerModel& m, const std::vector<ConflictExample>& ds,
                                         const PromptTemplate& tmpl) {
    std::vector<AttributionInput> out;
    for (const auto& ex : ds) out.push_back(make_attribution_input(m.tokenizer(), ex, tmpl));
    return out;
}

py::dict report_dict(const EvalReport& r) {
    py::dict d;
    d["n"] = r.n;
    d["acc"] = r.acc;
    d["sr"] = r.sr;
    py::list preds;
    for (const auto& e : r.records) preds.append(e.prediction);
    d["predictions"] = preds;
    return d;
}

}  // namespace

PYBIND11_MODULE(_ircan, mod) {
    mod.doc() = "bindings for the ircan C++ core";

    static py::exception<Error> base(mod, "IrcanError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::set_error(base, ("(" + std::string(e.kind()) + ") " + e.what()).c_str());
        }
    });

    py::class_<Tokenizer>(mod, "Tokenizer")
        .def(py::init<std::vector<std::string>>(), py::arg("table"))
        .def_static("from_corpus", &Tokenizer::from_corpus)
        .def("encode", &Tokenizer::encode)
        .def("decode", [](const Tokenizer& t, const std::vector<int>& ids) { return t.decode(ids); })
        .def_property_readonly("table", &Tokenizer::table)
        .def_property_readonly("eos", &Tokenizer::eos)
        .def("__len__", &Tokenizer::size);

    mod.def("expected_tensors", [](const std::string& config_json) {
        std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
        for (auto& [n, s] : TransformerModel::expected_tensors(config_from(config_json))) out.emplace_back(n, s);
        return out;
    }, "name and shape of every tensor a config needs (config as JSON text)");

    py::class_<TransformerModel>(mod, "Model")
        .def(py::init([](const std::string& config_json, const Tokenizer& tok, const py::dict& weights) {
                 std::map<std::string, Tensor> w;
                 for (auto [k, v] : weights) w.emplace(k.cast<std::string>(), from_numpy(v.cast<py::array_t<double>>()));
                 ModelConfig c = config_from(config_json);
                 c.vocab_size = tok.size();
                 return TransformerModel(c, tok, std::move(w));
             }),
             py::arg("config_json"), py::arg("tokenizer"), py::arg("weights"))
        .def_static("random", [](const std::string& config_json, const Tokenizer& tok, std::uint64_t seed) {
            ModelConfig c = config_from(config_json);
            c.vocab_size = tok.size();
            return TransformerModel::init_random(c, tok, seed);
        })
        .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p); })
        .def("save", [](const TransformerModel& m, const std::filesystem::path& p, const std::string& dtype) {
            save_checkpoint(m, p, parse_dtype(dtype));
        }, py::arg("path"), py::arg("dtype") = "f64")
        .def_property_readonly("config_json", [](const TransformerModel& m) { return config_to(m.config()); })
        .def_property_readonly("tokenizer", &TransformerModel::tokenizer)
        .def("weight_names", [](const TransformerModel& m) {
            std::vector<std::string> out;
            for (const auto& [n, t] : m.weights()) out.push_back(n);
            return out;
        })
        .def("weight", [](const TransformerModel& m, const std::string& n) { return to_numpy(m.weight(n)); })
        .def("logits", [](const TransformerModel& m, const std::vector<int>& toks) { return to_numpy(m.logits(toks)); })
        .def("answer_logprob", [](const TransformerModel& m, const std::vector<int>& prompt, const std::vector<int>& ans) {
            return m.answer_logprob(prompt, ans);
        })
        .def("generate", [](const TransformerModel& m, const std::string& prompt, int max_new) {
            return m.tokenizer().decode(greedy_generate(m, m.tokenizer().encode(prompt), max_new));
        }, py::arg("prompt"), py::arg("max_new") = 8);

    mod.def("apply_edit", [](const TransformerModel& m, const std::vector<std::pair<int, int>>& sites, double beta) {
        EditPlan p;
        for (auto [l, n] : sites) p.sites.push_back({l, n});
        p.beta = beta;
        if (beta == 0.0) p.kind = EditKind::erase;
        return apply_edit(m, p);
    }, py::arg("model"), py::arg("sites"), py::arg("beta"));
    mod.def("revert", &revert);

    mod.def("attribute", [](const TransformerModel& m, const std::string& jsonl, int steps, const std::string& mode,
                            int threads) {
        AttributionConfig cfg;
        cfg.m = steps;
        cfg.mode = parse_attribution_mode(mode);
        cfg.threads = threads;
        py::gil_scoped_release nogil;
        return attribution_csv(attribute_dataset(m, inputs_for(m, parse_dataset(jsonl), PromptTemplate{}), cfg));
    }, py::arg("model"), py::arg("dataset_jsonl"), py::arg("m") = 20, py::arg("mode") = "joint_layer",
       py::arg("threads") = 1, "attribution matrix as CSV text");

    mod.def("select", [](const std::string& csv, double t, int z, int h) {
        std::vector<std::tuple<int, int, int, double>> out;
        for (const auto& n : select_context_neurons(parse_attribution_csv(csv), SelectionConfig{t, z, h}).neurons)
            out.emplace_back(n.site.layer, n.site.neuron, n.count, n.mean_score);
        return out;
    }, py::arg("scores_csv"), py::arg("t") = 0.10, py::arg("z") = 20, py::arg("h") = 14);

    mod.def("evaluate", [](const TransformerModel& m, const std::string& jsonl, const std::string& tmpl, bool cad,
                           double alpha_cad, int threads) {
        Decoding d;
        d.cad = cad;
        d.alpha_cad = alpha_cad;
        d.threads = threads;
        EvalReport r;
        {
            py::gil_scoped_release nogil;
            r = evaluate(m, parse_dataset(jsonl), PromptTemplate{tmpl}, d);
        }
        return report_dict(r);
    }, py::arg("model"), py::arg("dataset_jsonl"), py::arg("template") = "{context} {question}",
       py::arg("cad") = false, py::arg("alpha_cad") = 0.5, py::arg("threads") = 1);

    mod.def("gen_synthetic", [](int entities, int relations, int values, int conflicts, std::uint64_t seed,
                                int context_lines, double follow_rate, double follow_spread, int fact_repeats,
                                double distractor_rate) {
        SyntheticSpec s;
        s.n_entities = entities;
        s.n_relations = relations;
        s.n_values = values;
        s.n_conflicts = conflicts;
        s.seed = seed;
        s.n_context_lines = context_lines;
        s.context_follow_rate = follow_rate;
        s.follow_rate_spread = follow_spread;
        s.fact_repeats = fact_repeats;
        s.distractor_rate = distractor_rate;
        auto d = gen_synthetic(s);
        py::dict out;
        out["corpus"] = d.corpus;
        out["completion"] = dump_dataset(d.completion);
        out["multiple_choice"] = dump_dataset(d.multiple_choice);
        return out;
    }, py::arg("entities") = 40, py::arg("relations") = 8, py::arg("values") = 12, py::arg("conflicts") = 200,
       py::arg("seed") = 0, py::arg("context_lines") = 0, py::arg("follow_rate") = 0.5,
       py::arg("follow_spread") = 0.0, py::arg("fact_repeats") = 1, py::arg("distractor_rate") = 0.0);

    mod.def("check_reference_logits", [](const TransformerModel& m, const std::string& json_text, double tol) {
        auto r = check_reference_logits(m, json_text, tol);
        py::dict d;
        d["pass"] = r.pass;
        d["worst"] = r.worst;
        py::dict per;
        for (const auto& e : r.entries) per[py::str(e.prompt)] = e.max_abs_diff;
        d["entries"] = per;
        return d;
    }, py::arg("model"), py::arg("reference_json"), py::arg("tol") = 1e-4);

    mod.def("sha256_file", [](const std::filesystem::path& p) { return sha256_file(p); });
}
