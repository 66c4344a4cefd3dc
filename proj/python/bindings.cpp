#include "gptd/corpus.hpp"
#include "gptd/engine.hpp"
#include "gptd/error.hpp"
#include "gptd/evalkit.hpp"
#include "gptd/reports.hpp"
#include "gptd/scoring.hpp"
#include "gptd/surgery.hpp"
#include "gptd/textlab.hpp"
#include "gptd/tokenizer.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace gptd;

namespace {

// Reports cross the boundary as JSON text; the Python wrapper decodes them.
std::string dumps(const nlohmann::json& j) { return j.dump(); }

DegradationSpec spec_from(const std::string& text) { return DegradationSpec::from_json(nlohmann::json::parse(text)); }

std::vector<LabeledScore> labeled(const std::vector<double>& values, const std::vector<bool>& is_case) {
    if (values.size() != is_case.size()) throw InvalidInput("values and labels differ in length");
    std::vector<LabeledScore> out(values.size());
    for (size_t i = 0; i < values.size(); ++i) out[i] = {values[i], is_case[i]};
    return out;
}

}  // namespace

PYBIND11_MODULE(_gptd, m) {
    py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
    py::register_exception<UndefinedMetric>(m, "UndefinedMetric", PyExc_ArithmeticError);
    py::register_exception<LoadError>(m, "LoadError", PyExc_OSError);
    m.attr("__version__") = kToolkitVersion;
    m.attr("default_data_dir") = GPTD_DATA_DIR;

    py::class_<Tokenizer>(m, "Tokenizer")
        .def_static("from_directory", &Tokenizer::from_directory)
        .def("encode", &Tokenizer::encode_ids)
        .def("decode", [](const Tokenizer& t, const std::vector<int>& ids) { return t.decode(ids); })
        .def_property_readonly("vocab_size", &Tokenizer::vocab_size)
        .def_property_readonly("end_of_text", &Tokenizer::end_of_text);

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("vocab_size", &ModelConfig::vocab_size)
        .def_readwrite("n_layers", &ModelConfig::n_layers)
        .def_readwrite("n_heads", &ModelConfig::n_heads)
        .def_readwrite("d_model", &ModelConfig::d_model)
        .def_readwrite("context_window", &ModelConfig::context_window);

    py::class_<Model>(m, "Model")
        .def_static("load", py::overload_cast<const std::filesystem::path&>(&Model::load))
        .def("save", [](const Model& model, const std::filesystem::path& p) { model.weights.write_safetensors(p); })
        .def_readonly("config", &Model::config)
        .def("tensor_names", [](const Model& model) {
            std::vector<std::string> names;
            for (const auto& [k, v] : model.weights.tensors) names.push_back(k);
            return names;
        })
        .def("tensor", [](const Model& model, const std::string& name) {
            const Tensor& t = model.weights.at(name);
            return py::make_tuple(t.shape, t.data);
        });

    // End-of-text is prepended; one log-probability per supplied token.
    m.def("forward_logprobs", [](const Model& model, const std::vector<int>& tokens) {
        return forward_logprobs(model, tokens).logprobs;
    });
    m.def("next_token_logits", [](const Model& model, const std::vector<int>& ids) { return next_token_logits(model, ids); });
    m.def("perplexity", [](const Model& model, const std::vector<int>& tokens) { return transcript_nll(model, tokens).perplexity(); });

    m.def("degrade", [](const Model& model, const std::string& spec_json) {
        auto [out, report] = degrade(model, spec_from(spec_json));
        return py::make_tuple(std::move(out), dumps(report.to_json()));
    });
    m.def("plan_mask", [](const std::string& spec_json) { return dumps(plan_mask(ModelConfig::gpt2_small(), spec_from(spec_json)).to_json()); });
    m.def("validate_spec", [](const std::string& spec_json) { return dumps(spec_from(spec_json).to_json()); });
    m.def("enumerate_pattern", [](const std::string& strategy, int n_layers) {
        return enumerate_pattern(parse_pattern_strategy(strategy), n_layers);
    }, py::arg("strategy"), py::arg("n_layers") = 12);

    m.def("auc", [](const std::vector<double>& v, const std::vector<bool>& c) { return auc(labeled(v, c)); });
    m.def("acc_at_eer", [](const std::vector<double>& v, const std::vector<bool>& c) {
        const EerPoint e = acc_at_eer(labeled(v, c));
        return py::dict(py::arg("accuracy") = e.accuracy, py::arg("threshold") = e.threshold);
    });
    m.def("pearson", [](const std::vector<double>& x, const std::vector<double>& y) {
        if (x.size() != y.size()) throw InvalidInput("x and y differ in length");
        std::vector<std::pair<double, double>> xy(x.size());
        for (size_t i = 0; i < x.size(); ++i) xy[i] = {x[i], y[i]};
        return pearson(xy);
    });
    m.def("welch_t_test", [](const std::vector<double>& a, const std::vector<double>& b) {
        const WelchResult r = welch_t_test(a, b);
        return py::dict(py::arg("t") = r.t, py::arg("df") = r.df, py::arg("p") = r.p_value);
    });

    m.def("preprocess", [](const std::string& raw) { return preprocess(raw); });
    m.def("word_tokenize", &word_tokenize);

    m.def("beam_search", [](const Model& model, const std::vector<int>& prompt, const std::string& config_json) {
        const GenConfig cfg = GenConfig::from_json(nlohmann::json::parse(config_json));
        cfg.validate();
        py::list out;
        for (const auto& h : beam_search(model, prompt, cfg)) {
            out.append(py::dict(py::arg("tokens") = h.tokens, py::arg("logprob") = h.logprob, py::arg("score") = h.score,
                                py::arg("finished") = h.finished));
        }
        return out;
    });
    m.def("saliency", [](const Model& model, const std::vector<int>& ids) { return dumps(saliency(model, ids, "model").to_json()); });
    m.def("lexical_stats", [](const std::vector<std::string>& base, const std::vector<std::string>& degraded,
                              const std::filesystem::path& freq, const std::filesystem::path& data_dir) {
        return dumps(lexical_stats(base, degraded, FreqTable::load(freq), LexConfig::defaults(data_dir)).to_json());
    });
}
