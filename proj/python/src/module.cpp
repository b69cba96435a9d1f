#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "aura/common.hpp"
#include "aura/corpus.hpp"
#include "aura/evalharness.hpp"
#include "aura/expertise.hpp"
#include "aura/intervene.hpp"
#include "aura/pipeline.hpp"
#include "aura/toylm.hpp"

namespace py = pybind11;
using namespace aura;

namespace {

const InterventionPlan* plan_or_null(const std::optional<InterventionPlan>& plan) {
    return plan ? &*plan : nullptr;
}

HookSet hooks_of(const std::optional<InterventionPlan>& plan) { return plan ? apply_runtime(*plan) : HookSet{}; }

StageRecord run_stage(const PipelineConfig& cfg, const std::string& stage, const std::string& weights,
                      const std::string& plan, const std::vector<std::string>& inputs) {
    if (stage == "gen-corpus") return stage_gen_corpus(cfg);
    if (stage == "train-toy") return stage_train(cfg);
    if (stage == "capture") return stage_capture(cfg);
    if (stage == "score") return stage_score(cfg);
    if (stage == "plan") return stage_plan(cfg);
    if (stage == "patch") return stage_patch(cfg);
    if (stage == "generate") return stage_generate(cfg, weights.empty() ? cfg.paths.weights : weights, plan);
    if (stage == "eval") return stage_eval(cfg, weights.empty() ? cfg.paths.weights : weights, plan);
    if (stage == "sweep") return stage_sweep(cfg);
    if (stage == "report") return stage_report(cfg, inputs);
    fail(ErrorKind::InvalidConfig, "unknown stage '" + stage + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Expert-neuron interventions on a character-level toy transformer";
    m.attr("__version__") = kToolVersion;

    static py::exception<Error> error_type(m, "AuraError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            const py::object cls = error_type;
            py::object exc = cls(std::string(e.what()));
            exc.attr("kind") = std::string(to_string(e.kind()));
            PyErr_SetObject(error_type.ptr(), exc.ptr());
        }
    });

    // corpus
    py::class_<LabeledSentence>(m, "LabeledSentence")
        .def_readonly("text", &LabeledSentence::text)
        .def_readonly("label", &LabeledSentence::label)
        .def("__repr__", [](const LabeledSentence& s) { return "(" + s.text + ", " + std::to_string(s.label) + ")"; });

    py::class_<ConceptCorpus>(m, "Corpus")
        .def(py::init([](const std::vector<std::pair<std::string, int>>& items) {
                 std::vector<LabeledSentence> out;
                 for (const auto& [text, label] : items) {
                     if (label != 0 && label != 1) fail(ErrorKind::BadLabel, "label must be 0 or 1");
                     out.push_back({text, label});
                 }
                 return ConceptCorpus(std::move(out));
             }),
             py::arg("items"))
        .def_property_readonly("sentences", &ConceptCorpus::sentences)
        .def_property_readonly("n_pos", &ConceptCorpus::n_pos)
        .def_property_readonly("n_neg", &ConceptCorpus::n_neg)
        .def("texts_with_label", &ConceptCorpus::texts_with_label)
        .def("to_jsonl", &ConceptCorpus::to_jsonl)
        .def("hash", &ConceptCorpus::hash)
        .def("__len__", &ConceptCorpus::size);

    m.def("gen_synthetic", &gen_synthetic, py::arg("n_pos"), py::arg("n_neg"), py::arg("seed"));
    m.def("gen_prompts", &gen_prompts, py::arg("n"), py::arg("seed"));
    m.def("load_jsonl", &load_jsonl);
    m.def("parse_jsonl", [](const std::string& s) { return parse_jsonl(s); });
    m.def("save_jsonl", &save_jsonl);
    m.def("marker_words", &marker_words);
    m.def("background_words", &background_words);
    m.def("contains_marker", [](const std::string& s) { return contains_marker(s); });

    py::class_<Tokenizer>(m, "Tokenizer")
        .def_property_readonly("vocab_size", &Tokenizer::vocab_size)
        .def("encode", [](const Tokenizer& t, const std::string& s) { return t.encode(s); })
        .def("decode", &Tokenizer::decode)
        .def("to_json", [](const Tokenizer& t) { return tokenizer_to_json(t); })
        .def_static("from_json", [](const std::string& s) { return tokenizer_from_json(s); });
    m.def("build_tokenizer", &build_tokenizer);

    // toy model
    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("n_layers", &ModelConfig::n_layers)
        .def_readwrite("d_model", &ModelConfig::d_model)
        .def_readwrite("n_heads", &ModelConfig::n_heads)
        .def_readwrite("d_ff", &ModelConfig::d_ff)
        .def_readwrite("vocab_size", &ModelConfig::vocab_size)
        .def_readwrite("context_len", &ModelConfig::context_len)
        .def_readwrite("seed", &ModelConfig::seed)
        .def_property_readonly("n_neurons", &ModelConfig::n_neurons)
        .def("validate", &ModelConfig::validate);

    py::class_<TrainParams>(m, "TrainParams")
        .def(py::init<>())
        .def_readwrite("epochs", &TrainParams::epochs)
        .def_readwrite("learning_rate", &TrainParams::learning_rate)
        .def_readwrite("batch_size", &TrainParams::batch_size)
        .def_readwrite("seed", &TrainParams::seed)
        .def_readwrite("verbose", &TrainParams::verbose);

    py::class_<TrainReport>(m, "TrainReport")
        .def_readonly("initial_nll", &TrainReport::initial_nll)
        .def_readonly("final_nll", &TrainReport::final_nll)
        .def_readonly("steps", &TrainReport::steps);

    py::class_<SamplerParams>(m, "SamplerParams")
        .def(py::init<>())
        .def_readwrite("temperature", &SamplerParams::temperature)
        .def_readwrite("top_k", &SamplerParams::top_k)
        .def_readwrite("max_new_tokens", &SamplerParams::max_new_tokens)
        .def_readwrite("seed", &SamplerParams::seed)
        .def_readwrite("n_samples", &SamplerParams::n_samples);

    py::class_<ModelWeights>(m, "Model")
        .def_readonly("config", &ModelWeights::cfg)
        .def_property_readonly("n_params", &ModelWeights::n_params)
        .def("hash", [](const ModelWeights& w) { return weights_hash(w); })
        .def("to_bytes", [](const ModelWeights& w) { return py::bytes(serialize_weights(w)); });

    m.def("init_model", &init_model);
    m.def(
        "train",
        [](const ModelWeights& w, const ConceptCorpus& corpus, const Tokenizer& tok, const TrainParams& params) {
            TrainReport report;
            auto out = train(w, corpus, tok, params, &report);
            return std::make_pair(std::move(out), report);
        },
        py::arg("model"), py::arg("corpus"), py::arg("tokenizer"), py::arg("params"),
        py::call_guard<py::gil_scoped_release>());
    m.def(
        "logits",
        [](const ModelWeights& w, const std::vector<TokenId>& tokens, const std::optional<InterventionPlan>& plan) {
            auto fr = forward(w, tokens, hooks_of(plan));
            py::array_t<float> out({fr.positions, fr.vocab});
            std::copy(fr.logits.begin(), fr.logits.end(), out.mutable_data());
            return out;
        },
        py::arg("model"), py::arg("tokens"), py::arg("plan") = std::nullopt);
    m.def(
        "nll",
        [](const ModelWeights& w, const std::vector<TokenId>& tokens, const std::optional<InterventionPlan>& plan) {
            return nll(w, tokens, hooks_of(plan));
        },
        py::arg("model"), py::arg("tokens"), py::arg("plan") = std::nullopt);
    m.def(
        "generate",
        [](const ModelWeights& w, const Tokenizer& tok, const std::string& prompt, const SamplerParams& params,
           const std::optional<InterventionPlan>& plan) {
            std::vector<std::string> out;
            for (const auto& ids : generate(w, tok.encode(prompt), params, hooks_of(plan))) out.push_back(tok.decode(ids));
            return out;
        },
        py::arg("model"), py::arg("tokenizer"), py::arg("prompt"), py::arg("params"), py::arg("plan") = std::nullopt);
    m.def(
        "save_model",
        [](const ModelWeights& w, const std::string& path, const std::optional<Tokenizer>& tok) {
            std::map<std::string, std::string> meta;
            if (tok) meta["tokenizer"] = tokenizer_to_json(*tok);
            save_weights(w, path, meta);
        },
        py::arg("model"), py::arg("path"), py::arg("tokenizer") = std::nullopt);
    m.def("load_model", &load_weights);
    m.def("load_tokenizer", [](const std::string& path) { return tokenizer_of(read_weights(path)); });

    // expertise
    py::enum_<Site>(m, "Site").value("UP_PRE", Site::MlpUpPre).value("DOWN_OUT", Site::MlpDownOut);

    py::class_<NeuronId>(m, "NeuronId")
        .def(py::init([](std::uint32_t layer, Site site, std::uint32_t row) { return NeuronId{layer, site, row}; }),
             py::arg("layer"), py::arg("site"), py::arg("row"))
        .def_readonly("layer", &NeuronId::layer)
        .def_readonly("site", &NeuronId::site)
        .def_readonly("row", &NeuronId::row)
        .def(py::self == py::self)
        .def("__hash__", [](const NeuronId& id) { return py::hash(py::make_tuple(id.layer, int(id.site), id.row)); })
        .def("__repr__", [](const NeuronId& id) {
            return "NeuronId(" + std::to_string(id.layer) + ", " + std::string(site_name(id.site)) + ", " +
                   std::to_string(id.row) + ")";
        });

    py::class_<ActivationMatrix>(m, "Activations")
        .def_readonly("neurons", &ActivationMatrix::neurons)
        .def_readonly("labels", &ActivationMatrix::labels)
        .def_property_readonly("values", [](const ActivationMatrix& a) {
            py::array_t<float> out({a.n_neurons(), a.n_sentences()});
            std::copy(a.values.begin(), a.values.end(), out.mutable_data());
            return out;
        });

    m.def(
        "capture",
        [](const ModelWeights& w, const ConceptCorpus& corpus, const Tokenizer& tok, const std::vector<Site>& sites) {
            return capture(w, corpus, tok, sites);
        },
        py::arg("model"), py::arg("corpus"), py::arg("tokenizer"),
        py::arg("sites") = std::vector<Site>{Site::MlpUpPre, Site::MlpDownOut});

    m.def("auroc", [](const std::vector<double>& s, const std::vector<std::uint8_t>& l) { return auroc(s, l); },
          py::arg("scores"), py::arg("labels"));
    m.def("average_precision",
          [](const std::vector<double>& s, const std::vector<std::uint8_t>& l) { return average_precision(s, l); },
          py::arg("scores"), py::arg("labels"));
    m.def("alpha_of", &alpha_of);
    m.def("gini_of", &gini_of);

    py::class_<NeuronStats>(m, "NeuronStats")
        .def_readonly("id", &NeuronStats::id)
        .def_readonly("auroc", &NeuronStats::auroc)
        .def_readonly("ap", &NeuronStats::ap)
        .def_readonly("gini", &NeuronStats::gini)
        .def_readonly("alpha", &NeuronStats::alpha)
        .def_readonly("mean_pos", &NeuronStats::mean_pos)
        .def_readonly("mean_neg", &NeuronStats::mean_neg)
        .def_readonly("var_all", &NeuronStats::var_all);

    py::class_<ExpertiseTable>(m, "ExpertiseTable")
        .def_property_readonly("rows", &ExpertiseTable::rows)
        .def_property_readonly("n_pos", &ExpertiseTable::n_pos)
        .def_property_readonly("n_neg", &ExpertiseTable::n_neg)
        .def("at", &ExpertiseTable::at, py::return_value_policy::copy)
        .def("hash", &ExpertiseTable::hash)
        .def("to_csv", [](const ExpertiseTable& t) { return table_to_csv(t); })
        .def("__len__", &ExpertiseTable::size);
    m.def("build_table", &build_table);
    m.def("save_table", &save_table_csv);
    m.def("load_table", &load_table);

    // interventions
    py::enum_<RankMetric>(m, "RankMetric").value("AUROC", RankMetric::Auroc).value("AP", RankMetric::Ap);
    py::enum_<DetMode>(m, "DetMode").value("ZERO", DetMode::Zero).value("MEAN_ABSENCE", DetMode::MeanAbsence);

    py::class_<ExpertSet>(m, "ExpertSet")
        .def_readonly("neurons", &ExpertSet::neurons)
        .def("__len__", &ExpertSet::size);
    m.def("select_topk", &select_topk, py::arg("table"), py::arg("k"), py::arg("metric") = RankMetric::Auroc);
    m.def("select_above_chance", &select_above_chance);
    m.def("select_random", &select_random, py::arg("config"), py::arg("k"), py::arg("seed"));

    py::class_<InterventionPlan>(m, "InterventionPlan")
        .def(py::init<>())
        .def_readwrite("family", &InterventionPlan::family)
        .def("set",
             [](InterventionPlan& p, const NeuronId& id, double scale, double offset) { p.set(id, {scale, offset}); })
        .def("action_for",
             [](const InterventionPlan& p, const NeuronId& id) {
                 const auto a = p.action_for(id);
                 return std::make_pair(a.scale, a.offset);
             })
        .def_property_readonly("neurons",
                               [](const InterventionPlan& p) {
                                   std::vector<NeuronId> out;
                                   for (const auto& [id, a] : p.actions()) out.push_back(id);
                                   return out;
                               })
        .def("to_json", [](const InterventionPlan& p) { return plan_to_json(p); })
        .def_static("from_json", [](const std::string& s, const ModelConfig& cfg) { return plan_from_json(s, cfg); })
        .def("__len__", &InterventionPlan::size);

    m.def("plan_det", &plan_det, py::arg("experts"), py::arg("table"), py::arg("mode") = DetMode::Zero);
    m.def("plan_damp", &plan_damp, py::arg("experts"), py::arg("alpha"));
    m.def("plan_aura", &plan_aura, py::arg("table"));
    m.def("plan_meanvar", &plan_meanvar, py::arg("experts"), py::arg("table"), py::arg("target_mean") = std::nullopt,
          py::arg("target_var") = std::nullopt);
    m.def("compose", &compose);
    m.def("patch_weights", &patch_weights, py::arg("model"), py::arg("plan"));
    m.def("save_plan", &save_plan);
    m.def("load_plan", &load_plan);

    // evaluation
    py::class_<NgramScorer>(m, "NgramScorer")
        .def("score", [](const NgramScorer& s, const std::string& t) { return s.score(t); })
        .def("classify", [](const NgramScorer& s, const std::string& t) { return s.classify(t); })
        .def_property("threshold", &NgramScorer::threshold, &NgramScorer::set_threshold)
        .def_property_readonly("heldout_auroc", &NgramScorer::heldout_auroc)
        .def("to_json", &NgramScorer::to_json)
        .def_static("from_json", [](const std::string& s) { return NgramScorer::from_json(s); });
    m.def("train_scorer", &train_scorer, py::arg("corpus"), py::arg("seed"));

    m.def(
        "perplexity",
        [](const ModelWeights& w, const Tokenizer& tok, const std::vector<std::string>& texts,
           const std::optional<InterventionPlan>& plan) { return perplexity(w, tok, texts, plan_or_null(plan)); },
        py::arg("model"), py::arg("tokenizer"), py::arg("texts"), py::arg("plan") = std::nullopt);

    py::class_<ConceptRate>(m, "ConceptRate")
        .def_readonly("rate", &ConceptRate::rate)
        .def_readonly("mean_score", &ConceptRate::mean_score)
        .def_readonly("scores", &ConceptRate::scores);
    m.def(
        "concept_rate",
        [](const ModelWeights& w, const Tokenizer& tok, const std::vector<std::string>& prompts,
           const NgramScorer& scorer, const SamplerParams& params, const std::optional<InterventionPlan>& plan) {
            return concept_rate(w, tok, prompts, plan_or_null(plan), scorer, params);
        },
        py::arg("model"), py::arg("tokenizer"), py::arg("prompts"), py::arg("scorer"), py::arg("params"),
        py::arg("plan") = std::nullopt, py::call_guard<py::gil_scoped_release>());

    py::class_<EvalReport>(m, "EvalReport")
        .def_readonly("family", &EvalReport::family)
        .def_readonly("n_experts", &EvalReport::n_experts)
        .def_readonly("ppl_neutral", &EvalReport::ppl_neutral)
        .def_readonly("ppl_concept", &EvalReport::ppl_concept)
        .def_readonly("concept_rate", &EvalReport::concept_rate)
        .def_readonly("mean_concept_score", &EvalReport::mean_concept_score);
    m.def(
        "evaluate",
        [](const ModelWeights& w, const InterventionPlan& plan, const Tokenizer& tok, const ConceptCorpus& eval,
           const std::vector<std::string>& prompts, const NgramScorer& scorer, const SamplerParams& params) {
            EvalInputs in;
            in.tokenizer = &tok;
            in.scorer = &scorer;
            in.neutral_texts = eval.texts_with_label(0);
            in.concept_texts = eval.texts_with_label(1);
            in.prompts = prompts;
            in.sampler = params;
            return evaluate(w, plan, in);
        },
        py::arg("model"), py::arg("plan"), py::arg("tokenizer"), py::arg("eval_corpus"), py::arg("prompts"),
        py::arg("scorer"), py::arg("params"), py::call_guard<py::gil_scoped_release>());

    // file-to-file pipeline
    py::class_<PipelineConfig>(m, "PipelineConfig")
        .def(py::init<>())
        .def_static("from_json",
                    [](const std::string& s) {
                        const auto j = nlohmann::json::parse(s, nullptr, false);
                        if (j.is_discarded()) fail(ErrorKind::ParseError, "config is not valid JSON");
                        return PipelineConfig::from_json(j);
                    })
        .def_static("load", &PipelineConfig::load)
        .def("to_json", [](const PipelineConfig& c) { return c.to_json().dump(2); })
        .def("hash", &PipelineConfig::hash)
        .def("validate", &PipelineConfig::validate);
    m.def(
        "run_stage",
        [](const PipelineConfig& cfg, const std::string& stage, const std::string& weights, const std::string& plan,
           const std::vector<std::string>& inputs) {
            const auto rec = run_stage(cfg, stage, weights, plan, inputs);
            write_sidecars(rec, cfg);
            return rec.outputs;
        },
        py::arg("config"), py::arg("stage"), py::arg("weights") = "", py::arg("plan") = "",
        py::arg("inputs") = std::vector<std::string>{}, py::call_guard<py::gil_scoped_release>());
}
