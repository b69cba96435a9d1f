#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "aura/common.hpp"
#include "aura/pipeline.hpp"
#include "json.hpp"

using namespace aura;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

bool is_validation(ErrorKind k) {
    switch (k) {
        case ErrorKind::InvalidConfig:
        case ErrorKind::KTooLarge:
        case ErrorKind::AlphaOutOfRange:
        case ErrorKind::VarianceIncrease:
        case ErrorKind::ZeroVariance:
        case ErrorKind::NeuronOutOfRange:
        case ErrorKind::DomainError:
        case ErrorKind::MissingField:
        case ErrorKind::BadLabel:
        case ErrorKind::EmptyCorpus:
        case ErrorKind::OneClassOnly:
        case ErrorKind::EmptySlice:
        case ErrorKind::BadTokenId:
        case ErrorKind::ContextOverflow:
            return true;
        default:
            return false;
    }
}

void report_error(bool json, std::string_view kind, const std::string& message, int code) {
    if (json) {
        nlohmann::ordered_json j;
        j["error"] = kind;
        j["message"] = message;
        j["exit_code"] = code;
        std::cerr << j.dump() << "\n";
    } else {
        std::cerr << "aura: " << message << "\n";
    }
}

// The config must be known before options are declared so that --help shows
// the effective defaults.
std::string prescan_config(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config" && i + 1 < argc) return argv[i + 1];
        if (a.rfind("--config=", 0) == 0) return a.substr(9);
    }
    return "";
}

bool prescan_flag(int argc, char** argv, const char* flag) {
    for (int i = 1; i < argc; ++i) {
        if (std::string(argv[i]) == flag) return true;
    }
    return false;
}

template <class T>
struct Opt {
    T value{};
    CLI::Option* opt = nullptr;
    bool given() const { return opt && opt->count() > 0; }
};

}  // namespace

int main(int argc, char** argv) {
    const bool json_errors = prescan_flag(argc, argv, "--json-errors");
    PipelineConfig cfg;
    const std::string config_path = prescan_config(argc, argv);
    try {
        if (!config_path.empty()) cfg = PipelineConfig::load(config_path);
    } catch (const Error& e) {
        report_error(json_errors, to_string(e.kind()), e.what(), kExitUsage);
        return kExitUsage;
    }

    CLI::App app{"Concept expert neuron toolkit: train, score, intervene, evaluate", "aura"};
    app.set_version_flag("--version", std::string(kToolVersion));
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_unused;
    bool json_unused = false;
    app.add_option("--config", config_unused, "JSON pipeline config; flags override its fields");
    app.add_flag("--json-errors", json_unused, "Print errors to stderr as one JSON object");

    auto& p = cfg.paths;

    // gen-corpus
    auto* gen = app.add_subcommand("gen-corpus", "Write the training corpus, held-out eval corpus and prompts");
    gen->add_option("--out", p.corpus, "Training corpus (JSONL)")->capture_default_str();
    gen->add_option("--eval-out", p.eval_corpus, "Held-out eval corpus (JSONL)")->capture_default_str();
    gen->add_option("--prompts-out", p.prompts, "Prompt file, one per line")->capture_default_str();
    gen->add_option("--n-pos", cfg.corpus.n_pos, "Positive training sentences")->capture_default_str();
    gen->add_option("--n-neg", cfg.corpus.n_neg, "Negative training sentences")->capture_default_str();
    gen->add_option("--seed", cfg.corpus.seed, "Training corpus seed")->capture_default_str();
    gen->add_option("--eval-n-pos", cfg.eval.n_pos, "Positive eval sentences")->capture_default_str();
    gen->add_option("--eval-n-neg", cfg.eval.n_neg, "Negative eval sentences")->capture_default_str();
    gen->add_option("--eval-seed", cfg.eval.seed, "Eval corpus seed")->capture_default_str();
    gen->add_option("--n-prompts", cfg.eval.n_prompts, "Number of prompts")->capture_default_str();
    gen->add_option("--prompt-seed", cfg.eval.prompt_seed, "Prompt seed")->capture_default_str();

    // train-toy
    bool verbose = false;
    auto* trn = app.add_subcommand("train-toy", "Train the toy transformer on the corpus");
    trn->add_option("--corpus", p.corpus, "Training corpus")->capture_default_str();
    trn->add_option("--out", p.weights, "Weights file")->capture_default_str();
    trn->add_option("--layers", cfg.model.n_layers, "Transformer blocks")->capture_default_str();
    trn->add_option("--d-model", cfg.model.d_model, "Residual width")->capture_default_str();
    trn->add_option("--heads", cfg.model.n_heads, "Attention heads")->capture_default_str();
    trn->add_option("--d-ff", cfg.model.d_ff, "MLP hidden width")->capture_default_str();
    trn->add_option("--context", cfg.model.context_len, "Context length")->capture_default_str();
    trn->add_option("--init-seed", cfg.model.seed, "Initialisation seed")->capture_default_str();
    trn->add_option("--epochs", cfg.train.epochs, "Training epochs")->capture_default_str();
    trn->add_option("--lr", cfg.train.learning_rate, "Adam learning rate")->capture_default_str();
    trn->add_option("--batch-size", cfg.train.batch_size, "Sentences per step")->capture_default_str();
    trn->add_option("--seed", cfg.train.seed, "Shuffle seed")->capture_default_str();
    trn->add_flag("--verbose", verbose, "Print per-epoch loss");

    // capture
    auto* cap = app.add_subcommand("capture", "Record sentence-max activations of every neuron");
    cap->add_option("--weights", p.weights, "Weights file")->capture_default_str();
    cap->add_option("--corpus", p.corpus, "Corpus")->capture_default_str();
    cap->add_option("--out", p.activations, "Activation matrix")->capture_default_str();

    // score
    auto* scr = app.add_subcommand("score", "Build the expertise table from captured activations");
    scr->add_option("--activations", p.activations, "Activation matrix")->capture_default_str();
    scr->add_option("--weights", p.weights, "Weights the activations came from")->capture_default_str();
    scr->add_option("--corpus", p.corpus, "Corpus the activations came from")->capture_default_str();
    scr->add_option("--out", p.table, "Expertise table (CSV)")->capture_default_str();

    // plan
    std::string metric = std::string(metric_name(cfg.plan.metric));
    Opt<std::size_t> plan_k;
    Opt<double> plan_alpha, target_mean, target_var;
    Opt<std::uint64_t> random_seed;
    auto* pln = app.add_subcommand("plan", "Choose experts and write an intervention plan");
    pln->add_option("--table", p.table, "Expertise table")->capture_default_str();
    pln->add_option("--weights", p.weights, "Weights (for the model shape)")->capture_default_str();
    pln->add_option("--out", p.plan, "Plan file")->capture_default_str();
    pln->add_option("--family", cfg.plan.family, "Intervention family")
        ->check(CLI::IsMember({"det-zero", "det-e", "damp", "aura", "meanvar"}))
        ->capture_default_str();
    plan_k.opt = pln->add_option("--k", plan_k.value, "Top-k experts (default: the above-chance set)");
    plan_alpha.opt = pln->add_option("--alpha", plan_alpha.value, "Damp factor, family damp only");
    pln->add_option("--metric", metric, "Ranking metric")->check(CLI::IsMember({"auroc", "ap"}))->capture_default_str();
    random_seed.opt = pln->add_option("--random-seed", random_seed.value, "Pick experts uniformly at random");
    target_mean.opt = pln->add_option("--target-mean", target_mean.value, "meanvar target mean (default: keep)");
    target_var.opt = pln->add_option("--target-var", target_var.value, "meanvar target variance (default: keep)");

    // patch
    auto* pat = app.add_subcommand("patch", "Fold a plan into the weights");
    pat->add_option("--weights", p.weights, "Original weights")->capture_default_str();
    pat->add_option("--plan", p.plan, "Plan file")->capture_default_str();
    pat->add_option("--out", p.patched, "Patched weights")->capture_default_str();

    // generate
    std::string gen_weights = p.weights, gen_plan, prompt;
    auto* gnr = app.add_subcommand("generate", "Sample completions, optionally under a runtime plan");
    gnr->add_option("--weights", gen_weights, "Weights file")->capture_default_str();
    gnr->add_option("--plan", gen_plan, "Plan applied through runtime hooks (default: none)");
    gnr->add_option("--prompts", p.prompts, "Prompt file")->capture_default_str();
    gnr->add_option("--prompt", prompt, "Single prompt instead of the prompt file");
    gnr->add_option("--out", p.generations, "Generations (JSONL)")->capture_default_str();

    // eval
    std::string eval_weights = p.weights, eval_plan;
    auto* evl = app.add_subcommand("eval", "Perplexities and concept rate with and without a plan");
    evl->add_option("--weights", eval_weights, "Weights file")->capture_default_str();
    evl->add_option("--plan", eval_plan, "Plan to evaluate (default: none)");
    evl->add_option("--corpus", p.corpus, "Training corpus, used to fit the scorer if absent")->capture_default_str();
    evl->add_option("--eval-corpus", p.eval_corpus, "Held-out corpus for perplexities")->capture_default_str();
    evl->add_option("--prompts", p.prompts, "Prompt file")->capture_default_str();
    evl->add_option("--scorer", p.scorer, "Concept scorer (trained and saved if absent)")->capture_default_str();
    evl->add_option("--threshold", cfg.scorer.threshold, "Scorer threshold")->capture_default_str();
    evl->add_option("--out", p.report, "Report (.json or .csv)")->capture_default_str();

    // sweep
    Opt<std::size_t> sweep_k;
    auto* swp = app.add_subcommand("sweep", "Evaluate a grid of k or alpha values");
    swp->add_option("--axis", cfg.sweep.axis, "Swept parameter")->check(CLI::IsMember({"k", "alpha"}))->capture_default_str();
    swp->add_option("--family", cfg.sweep.family, "Family for the k axis")
        ->check(CLI::IsMember({"det-zero", "det-e", "damp"}))
        ->capture_default_str();
    swp->add_option("--k-grid", cfg.sweep.k_grid, "k values, strictly increasing")->capture_default_str()->delimiter(',');
    swp->add_option("--alpha-grid", cfg.sweep.alpha_grid, "alpha values, strictly increasing")
        ->capture_default_str()
        ->delimiter(',');
    swp->add_option("--damp-alpha", cfg.sweep.damp_alpha, "alpha used by the damp family on the k axis")
        ->capture_default_str();
    swp->add_option("--ppl-budget", cfg.sweep.ppl_budget, "Allowed neutral perplexity rise")->capture_default_str();
    sweep_k.opt = swp->add_option("--k", sweep_k.value, "alpha axis: top-k experts (default: above-chance set)");
    swp->add_option("--weights", p.weights, "Weights file")->capture_default_str();
    swp->add_option("--table", p.table, "Expertise table")->capture_default_str();
    swp->add_option("--scorer", p.scorer, "Concept scorer")->capture_default_str();
    swp->add_option("--out", p.sweep_report, "Sweep report (.json or .csv)")->capture_default_str();

    // report
    std::vector<std::string> report_inputs;
    auto* rpt = app.add_subcommand("report", "Merge JSON reports into one summary");
    rpt->add_option("inputs", report_inputs, "JSON reports from eval or sweep")->required();
    rpt->add_option("--out", p.summary, "Summary (.csv or .json)")->capture_default_str();

    for (auto* s : {gnr, evl, swp}) {
        s->add_option("--n-samples", cfg.sampler.n_samples, "Samples per prompt")->capture_default_str();
        s->add_option("--temperature", cfg.sampler.temperature, "Sampling temperature")->capture_default_str();
        s->add_option("--top-k", cfg.sampler.top_k, "Top-k sampling (0 = off)")->capture_default_str();
        s->add_option("--max-new-tokens", cfg.sampler.max_new_tokens, "Completion length")->capture_default_str();
        s->add_option("--sample-seed", cfg.sampler.seed, "Sampler seed")->capture_default_str();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        report_error(json_errors, "UsageError", e.what(), kExitUsage);
        return kExitUsage;
    }

    try {
        StageRecord rec;
        if (gen->parsed()) {
            rec = stage_gen_corpus(cfg);
        } else if (trn->parsed()) {
            rec = stage_train(cfg, verbose);
        } else if (cap->parsed()) {
            rec = stage_capture(cfg);
        } else if (scr->parsed()) {
            rec = stage_score(cfg);
        } else if (pln->parsed()) {
            cfg.plan.metric = parse_metric(metric);
            if (plan_k.given()) cfg.plan.k = plan_k.value;
            if (plan_alpha.given()) cfg.plan.alpha = plan_alpha.value;
            if (random_seed.given()) cfg.plan.random_seed = random_seed.value;
            if (target_mean.given()) cfg.plan.target_mean = target_mean.value;
            if (target_var.given()) cfg.plan.target_var = target_var.value;
            if (cfg.plan.family == "aura") {
                std::vector<std::string> conflicts;
                if (cfg.plan.k) conflicts.push_back("--k");
                if (cfg.plan.alpha) conflicts.push_back("--alpha");
                if (cfg.plan.random_seed) conflicts.push_back("--random-seed");
                if (!conflicts.empty()) {
                    std::string list;
                    for (const auto& c : conflicts) list += (list.empty() ? "" : ", ") + c;
                    fail(ErrorKind::InvalidConfig, "--family aura conflicts with " + list);
                }
            }
            rec = stage_plan(cfg);
        } else if (pat->parsed()) {
            rec = stage_patch(cfg);
        } else if (gnr->parsed()) {
            rec = stage_generate(cfg, gen_weights, gen_plan, prompt);
        } else if (evl->parsed()) {
            rec = stage_eval(cfg, eval_weights, eval_plan);
        } else if (swp->parsed()) {
            if (sweep_k.given()) cfg.sweep.k = sweep_k.value;
            rec = stage_sweep(cfg);
        } else if (rpt->parsed()) {
            rec = stage_report(cfg, report_inputs);
        }
        write_sidecars(rec, cfg);
        for (const auto& [role, path] : rec.outputs) std::cout << role << ": " << path << "\n";
    } catch (const Error& e) {
        const int code = is_validation(e.kind()) ? kExitUsage : kExitRuntime;
        report_error(json_errors, to_string(e.kind()), e.what(), code);
        return code;
    } catch (const std::exception& e) {
        report_error(json_errors, "RuntimeError", e.what(), kExitRuntime);
        return kExitRuntime;
    }
    return kExitOk;
}
