#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aura/evalharness.hpp"
#include "aura/intervene.hpp"
#include "aura/toylm.hpp"
#include "json.hpp"

namespace aura {

inline constexpr const char* kToolVersion = "0.1.0";

// Every knob of the file-to-file pipeline. Paths are used as given (relative
// paths resolve against the working directory).
struct PipelineConfig {
    struct Paths {
        std::string corpus = "corpus.jsonl";
        std::string eval_corpus = "eval.jsonl";
        std::string prompts = "prompts.txt";
        std::string weights = "model.tlm";
        std::string activations = "activations.bin";
        std::string table = "table.csv";
        std::string plan = "plan.json";
        std::string patched = "patched.tlm";
        std::string generations = "generations.jsonl";
        std::string scorer = "scorer.json";
        std::string report = "report.json";
        std::string sweep_report = "sweep.json";
        std::string summary = "summary.csv";
    } paths;

    struct Corpus {
        std::size_t n_pos = 500;
        std::size_t n_neg = 2000;
        std::uint64_t seed = 1;
    } corpus;

    struct EvalCorpus {
        std::size_t n_pos = 200;
        std::size_t n_neg = 200;
        std::uint64_t seed = 99;
        std::size_t n_prompts = 50;
        std::uint64_t prompt_seed = 5;
    } eval;

    ModelConfig model = [] {
        ModelConfig m;
        m.seed = 1;
        return m;
    }();
    TrainParams train = [] {
        TrainParams t;
        t.epochs = 8;
        t.seed = 1;
        return t;
    }();
    SamplerParams sampler = [] {
        SamplerParams s;
        s.seed = 7;
        return s;
    }();

    struct Scorer {
        std::uint64_t seed = 3;
        double threshold = 0.5;
    } scorer;

    struct Plan {
        std::string family = "aura";
        std::optional<std::size_t> k;
        std::optional<double> alpha;
        RankMetric metric = RankMetric::Auroc;
        std::optional<std::uint64_t> random_seed;
        std::optional<double> target_mean;
        std::optional<double> target_var;
    } plan;

    struct Sweep {
        std::string axis = "k";
        std::string family = "det-zero";
        std::vector<std::size_t> k_grid = {0, 10, 20, 40, 80, 160};
        std::vector<double> alpha_grid = default_alpha_grid();
        RankMetric metric = RankMetric::Auroc;
        double damp_alpha = 0.5;
        double ppl_budget = 2.0;
        std::optional<std::size_t> k;  // alpha axis: top-k experts instead of the above-chance set
    } sweep;

    std::vector<Site> sites = {Site::MlpUpPre, Site::MlpDownOut};

    nlohmann::ordered_json to_json() const;
    // Unknown keys are rejected so typos do not silently fall back to defaults.
    static PipelineConfig from_json(const nlohmann::json& j);
    static PipelineConfig load(const std::string& path);
    std::uint64_t hash() const;
    void validate() const;
};

// Outputs written by one stage, with the inputs they were derived from.
struct StageRecord {
    std::string command;
    std::vector<std::pair<std::string, std::string>> inputs;   // role -> path
    std::vector<std::pair<std::string, std::string>> outputs;  // role -> path
};

// FNV-1a of the file contents.
std::uint64_t file_hash(const std::string& path);
// `<output>.meta.json` next to every output: tool version, config hash, input
// hashes and the wall-clock time, which never enters the outputs themselves.
void write_sidecars(const StageRecord& record, const PipelineConfig& cfg);

// Validation error when any listed file is missing.
void require_inputs(const std::vector<std::pair<std::string, std::string>>& inputs);

Tokenizer tokenizer_of(const WeightsFile& file);
std::vector<std::string> load_prompts(const std::string& path);
void save_prompts(const std::vector<std::string>& prompts, const std::string& path);
// Loads the CSV table, preferring the full-precision cache written beside it.
ExpertiseTable load_table(const std::string& csv_path);
std::string table_cache_path(const std::string& csv_path);
ExpertSet plan_experts(const PipelineConfig& cfg, const ExpertiseTable& table, const ModelConfig& model);
InterventionPlan build_plan(const PipelineConfig& cfg, const ExpertiseTable& table, const ModelConfig& model);

StageRecord stage_gen_corpus(const PipelineConfig& cfg);
StageRecord stage_train(const PipelineConfig& cfg, bool verbose = false);
StageRecord stage_capture(const PipelineConfig& cfg);
StageRecord stage_score(const PipelineConfig& cfg);
StageRecord stage_plan(const PipelineConfig& cfg);
StageRecord stage_patch(const PipelineConfig& cfg);
// `plan_path` empty: no intervention. `prompt` non-empty: use it instead of
// the prompt file.
StageRecord stage_generate(const PipelineConfig& cfg, const std::string& weights_path, const std::string& plan_path,
                           const std::string& prompt = "");
StageRecord stage_eval(const PipelineConfig& cfg, const std::string& weights_path, const std::string& plan_path);
StageRecord stage_sweep(const PipelineConfig& cfg);
StageRecord stage_report(const PipelineConfig& cfg, const std::vector<std::string>& inputs);

}  // namespace aura
