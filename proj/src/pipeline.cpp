#include "aura/pipeline.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <set>
#include <sstream>

#include "aura/common.hpp"
#include "aura/corpus.hpp"
#include "aura/expertise.hpp"

namespace aura {

namespace {

using ojson = nlohmann::ordered_json;

template <class T>
ojson opt_json(const std::optional<T>& v) {
    return v ? ojson(*v) : ojson(nullptr);
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, std::optional<T>& out) {
    if (!j.contains(key)) return;
    if (j.at(key).is_null()) {
        out.reset();
    } else {
        out = j.at(key).get<T>();
    }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void check_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) fail(ErrorKind::InvalidConfig, "config '" + where + "' must be an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items()) {
        if (!ok.count(k)) fail(ErrorKind::InvalidConfig, "unknown config key '" + where + (where.empty() ? "" : ".") + k + "'");
    }
}

bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

ReportFormat format_for(const std::string& path) { return ends_with(path, ".csv") ? ReportFormat::Csv : ReportFormat::Json; }

bool exists(const std::string& path) { return std::filesystem::exists(path); }

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

const std::set<std::string>& plan_families() {
    static const std::set<std::string> f = {"det-zero", "det-e", "damp", "aura", "meanvar"};
    return f;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

ojson PipelineConfig::to_json() const {
    ojson j;
    j["paths"] = {{"corpus", paths.corpus},
                  {"eval_corpus", paths.eval_corpus},
                  {"prompts", paths.prompts},
                  {"weights", paths.weights},
                  {"activations", paths.activations},
                  {"table", paths.table},
                  {"plan", paths.plan},
                  {"patched", paths.patched},
                  {"generations", paths.generations},
                  {"scorer", paths.scorer},
                  {"report", paths.report},
                  {"sweep_report", paths.sweep_report},
                  {"summary", paths.summary}};
    j["corpus"] = {{"n_pos", corpus.n_pos}, {"n_neg", corpus.n_neg}, {"seed", corpus.seed}};
    j["eval"] = {{"n_pos", eval.n_pos},
                 {"n_neg", eval.n_neg},
                 {"seed", eval.seed},
                 {"n_prompts", eval.n_prompts},
                 {"prompt_seed", eval.prompt_seed}};
    j["model"] = {{"n_layers", model.n_layers},
                  {"d_model", model.d_model},
                  {"n_heads", model.n_heads},
                  {"d_ff", model.d_ff},
                  {"context_len", model.context_len},
                  {"seed", model.seed}};
    j["train"] = {{"epochs", train.epochs},
                  {"learning_rate", train.learning_rate},
                  {"batch_size", train.batch_size},
                  {"beta1", train.beta1},
                  {"beta2", train.beta2},
                  {"eps", train.eps},
                  {"seed", train.seed}};
    j["sampler"] = {{"temperature", sampler.temperature},
                    {"top_k", sampler.top_k},
                    {"max_new_tokens", sampler.max_new_tokens},
                    {"seed", sampler.seed},
                    {"n_samples", sampler.n_samples}};
    j["scorer"] = {{"seed", scorer.seed}, {"threshold", scorer.threshold}};
    j["plan"] = {{"family", plan.family},
                 {"k", opt_json(plan.k)},
                 {"alpha", opt_json(plan.alpha)},
                 {"metric", metric_name(plan.metric)},
                 {"random_seed", opt_json(plan.random_seed)},
                 {"target_mean", opt_json(plan.target_mean)},
                 {"target_var", opt_json(plan.target_var)}};
    j["sweep"] = {{"axis", sweep.axis},
                  {"family", sweep.family},
                  {"k_grid", sweep.k_grid},
                  {"alpha_grid", sweep.alpha_grid},
                  {"metric", metric_name(sweep.metric)},
                  {"damp_alpha", sweep.damp_alpha},
                  {"ppl_budget", sweep.ppl_budget},
                  {"k", opt_json(sweep.k)}};
    auto sites_j = ojson::array();
    for (Site s : sites) sites_j.push_back(site_name(s));
    j["sites"] = sites_j;
    return j;
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
    PipelineConfig c;
    try {
        check_keys(j, "", {"paths", "corpus", "eval", "model", "train", "sampler", "scorer", "plan", "sweep", "sites"});
        if (j.contains("paths")) {
            const auto& p = j["paths"];
            check_keys(p, "paths",
                       {"corpus", "eval_corpus", "prompts", "weights", "activations", "table", "plan", "patched",
                        "generations", "scorer", "report", "sweep_report", "summary"});
            read(p, "corpus", c.paths.corpus);
            read(p, "eval_corpus", c.paths.eval_corpus);
            read(p, "prompts", c.paths.prompts);
            read(p, "weights", c.paths.weights);
            read(p, "activations", c.paths.activations);
            read(p, "table", c.paths.table);
            read(p, "plan", c.paths.plan);
            read(p, "patched", c.paths.patched);
            read(p, "generations", c.paths.generations);
            read(p, "scorer", c.paths.scorer);
            read(p, "report", c.paths.report);
            read(p, "sweep_report", c.paths.sweep_report);
            read(p, "summary", c.paths.summary);
        }
        if (j.contains("corpus")) {
            const auto& p = j["corpus"];
            check_keys(p, "corpus", {"n_pos", "n_neg", "seed"});
            read(p, "n_pos", c.corpus.n_pos);
            read(p, "n_neg", c.corpus.n_neg);
            read(p, "seed", c.corpus.seed);
        }
        if (j.contains("eval")) {
            const auto& p = j["eval"];
            check_keys(p, "eval", {"n_pos", "n_neg", "seed", "n_prompts", "prompt_seed"});
            read(p, "n_pos", c.eval.n_pos);
            read(p, "n_neg", c.eval.n_neg);
            read(p, "seed", c.eval.seed);
            read(p, "n_prompts", c.eval.n_prompts);
            read(p, "prompt_seed", c.eval.prompt_seed);
        }
        if (j.contains("model")) {
            const auto& p = j["model"];
            check_keys(p, "model", {"n_layers", "d_model", "n_heads", "d_ff", "context_len", "seed"});
            read(p, "n_layers", c.model.n_layers);
            read(p, "d_model", c.model.d_model);
            read(p, "n_heads", c.model.n_heads);
            read(p, "d_ff", c.model.d_ff);
            read(p, "context_len", c.model.context_len);
            read(p, "seed", c.model.seed);
        }
        if (j.contains("train")) {
            const auto& p = j["train"];
            check_keys(p, "train", {"epochs", "learning_rate", "batch_size", "beta1", "beta2", "eps", "seed"});
            read(p, "epochs", c.train.epochs);
            read(p, "learning_rate", c.train.learning_rate);
            read(p, "batch_size", c.train.batch_size);
            read(p, "beta1", c.train.beta1);
            read(p, "beta2", c.train.beta2);
            read(p, "eps", c.train.eps);
            read(p, "seed", c.train.seed);
        }
        if (j.contains("sampler")) {
            const auto& p = j["sampler"];
            check_keys(p, "sampler", {"temperature", "top_k", "max_new_tokens", "seed", "n_samples"});
            read(p, "temperature", c.sampler.temperature);
            read(p, "top_k", c.sampler.top_k);
            read(p, "max_new_tokens", c.sampler.max_new_tokens);
            read(p, "seed", c.sampler.seed);
            read(p, "n_samples", c.sampler.n_samples);
        }
        if (j.contains("scorer")) {
            const auto& p = j["scorer"];
            check_keys(p, "scorer", {"seed", "threshold"});
            read(p, "seed", c.scorer.seed);
            read(p, "threshold", c.scorer.threshold);
        }
        if (j.contains("plan")) {
            const auto& p = j["plan"];
            check_keys(p, "plan", {"family", "k", "alpha", "metric", "random_seed", "target_mean", "target_var"});
            read(p, "family", c.plan.family);
            read_opt(p, "k", c.plan.k);
            read_opt(p, "alpha", c.plan.alpha);
            if (p.contains("metric")) c.plan.metric = parse_metric(p["metric"].get<std::string>());
            read_opt(p, "random_seed", c.plan.random_seed);
            read_opt(p, "target_mean", c.plan.target_mean);
            read_opt(p, "target_var", c.plan.target_var);
        }
        if (j.contains("sweep")) {
            const auto& p = j["sweep"];
            check_keys(p, "sweep", {"axis", "family", "k_grid", "alpha_grid", "metric", "damp_alpha", "ppl_budget", "k"});
            read(p, "axis", c.sweep.axis);
            read(p, "family", c.sweep.family);
            read(p, "k_grid", c.sweep.k_grid);
            read(p, "alpha_grid", c.sweep.alpha_grid);
            if (p.contains("metric")) c.sweep.metric = parse_metric(p["metric"].get<std::string>());
            read(p, "damp_alpha", c.sweep.damp_alpha);
            read(p, "ppl_budget", c.sweep.ppl_budget);
            read_opt(p, "k", c.sweep.k);
        }
        if (j.contains("sites")) {
            c.sites.clear();
            for (const auto& s : j["sites"]) c.sites.push_back(parse_site(s.get<std::string>()));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::InvalidConfig, std::string("config: ") + e.what());
    }
    return c;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::InvalidConfig, "config " + path + ": " + e.what());
    }
    return from_json(j);
}

std::uint64_t PipelineConfig::hash() const { return Hasher().str(to_json().dump()).digest(); }

void PipelineConfig::validate() const {
    if (corpus.n_pos == 0 || corpus.n_neg == 0) fail(ErrorKind::InvalidConfig, "corpus needs n_pos >= 1 and n_neg >= 1");
    if (eval.n_pos == 0 || eval.n_neg == 0) fail(ErrorKind::InvalidConfig, "eval corpus needs n_pos >= 1 and n_neg >= 1");
    ModelConfig m = model;
    m.vocab_size = 1;
    m.validate();
    if (train.epochs == 0 || train.batch_size == 0 || !(train.learning_rate >= 0.0)) {
        fail(ErrorKind::InvalidConfig, "train needs epochs >= 1, batch_size >= 1 and learning_rate >= 0");
    }
    sampler.validate();
    if (!plan_families().count(plan.family)) fail(ErrorKind::InvalidConfig, "unknown plan family '" + plan.family + "'");
    if (plan.family == "aura" && (plan.k || plan.alpha || plan.random_seed)) {
        fail(ErrorKind::InvalidConfig, "family aura takes no k, alpha or random seed");
    }
    if (plan.alpha && plan.family != "damp") fail(ErrorKind::InvalidConfig, "alpha applies to family damp only");
    if (plan.alpha && !(*plan.alpha >= 0.0 && *plan.alpha <= 1.0)) {
        fail(ErrorKind::AlphaOutOfRange, "alpha " + fmt9(*plan.alpha) + " outside [0, 1]");
    }
    if ((plan.target_mean || plan.target_var) && plan.family != "meanvar") {
        fail(ErrorKind::InvalidConfig, "target mean/variance apply to family meanvar only");
    }
    if (sweep.axis != "k" && sweep.axis != "alpha") fail(ErrorKind::InvalidConfig, "sweep axis must be k or alpha");
    if (sweep.axis == "k") parse_sweep_family(sweep.family);
    if (sites.empty()) fail(ErrorKind::InvalidConfig, "at least one capture site is required");
}

// ---------------------------------------------------------------------------
// Files

std::uint64_t file_hash(const std::string& path) { return Hasher().str(read_file(path)).digest(); }

void write_sidecars(const StageRecord& record, const PipelineConfig& cfg) {
    ojson inputs = ojson::object();
    for (const auto& [role, path] : record.inputs) {
        inputs[role] = {{"path", path}, {"fnv1a64", hex64(file_hash(path))}};
    }
    const std::string created = utc_now();
    for (const auto& [role, path] : record.outputs) {
        ojson j;
        j["tool"] = "aura";
        j["version"] = kToolVersion;
        j["command"] = record.command;
        j["output"] = {{"role", role}, {"path", path}, {"fnv1a64", hex64(file_hash(path))}};
        j["config_hash"] = hex64(cfg.hash());
        j["inputs"] = inputs;
        j["created_utc"] = created;
        write_file_atomic(path + ".meta.json", j.dump(2) + "\n");
    }
}

void require_inputs(const std::vector<std::pair<std::string, std::string>>& inputs) {
    for (const auto& [role, path] : inputs) {
        if (!exists(path)) fail(ErrorKind::InvalidConfig, "input " + role + " '" + path + "' does not exist");
    }
}

Tokenizer tokenizer_of(const WeightsFile& file) {
    const auto it = file.metadata.find("tokenizer");
    if (it == file.metadata.end()) fail(ErrorKind::InvalidConfig, "weights carry no tokenizer");
    return tokenizer_from_json(it->second);
}

std::vector<std::string> load_prompts(const std::string& path) {
    std::vector<std::string> out;
    std::istringstream in(read_file(path));
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) out.push_back(line);
    }
    return out;
}

void save_prompts(const std::vector<std::string>& prompts, const std::string& path) {
    std::string out;
    for (const auto& p : prompts) out += p + "\n";
    write_file_atomic(path, out);
}

std::string table_cache_path(const std::string& csv_path) { return csv_path + ".cache"; }

ExpertiseTable load_table(const std::string& csv_path) {
    const auto cache = table_cache_path(csv_path);
    if (exists(cache)) return read_table_cache(cache).first;
    return load_table_csv(csv_path);
}

ExpertSet plan_experts(const PipelineConfig& cfg, const ExpertiseTable& table, const ModelConfig& model) {
    const auto& p = cfg.plan;
    if (p.random_seed) {
        const std::size_t k = p.k ? *p.k : select_above_chance(table).size();
        return select_random(model, k, *p.random_seed);
    }
    if (p.k) return select_topk(table, *p.k, p.metric);
    return select_above_chance(table);
}

InterventionPlan build_plan(const PipelineConfig& cfg, const ExpertiseTable& table, const ModelConfig& model) {
    cfg.validate();
    InterventionPlan plan;
    const auto& f = cfg.plan.family;
    if (f == "aura") {
        plan = plan_aura(table);
    } else {
        const auto experts = plan_experts(cfg, table, model);
        if (f == "det-zero") {
            plan = plan_det(experts, table, DetMode::Zero);
        } else if (f == "det-e") {
            plan = plan_det(experts, table, DetMode::MeanAbsence);
        } else if (f == "damp") {
            plan = plan_damp(experts, cfg.plan.alpha.value_or(0.5));
        } else {
            plan = plan_meanvar(experts, table, cfg.plan.target_mean, cfg.plan.target_var);
        }
        ojson sel;
        if (cfg.plan.random_seed) {
            sel = {{"kind", "random"}, {"k", experts.size()}, {"seed", *cfg.plan.random_seed}};
        } else if (cfg.plan.k) {
            sel = {{"kind", "top-k"}, {"k", *cfg.plan.k}, {"metric", metric_name(cfg.plan.metric)}};
        } else {
            sel = {{"kind", "above-chance"}, {"k", experts.size()}};
        }
        plan.params["experts"] = sel;
    }
    plan.source_table_hash = table.hash();
    plan.validate_for(model);
    return plan;
}

// ---------------------------------------------------------------------------
// Stages

namespace {

NgramScorer obtain_scorer(const PipelineConfig& cfg, StageRecord& rec) {
    NgramScorer scorer;
    if (exists(cfg.paths.scorer)) {
        scorer = NgramScorer::from_json(read_file(cfg.paths.scorer));
        rec.inputs.emplace_back("scorer", cfg.paths.scorer);
    } else {
        require_inputs({{"corpus", cfg.paths.corpus}});
        scorer = train_scorer(load_jsonl(cfg.paths.corpus), cfg.scorer.seed);
        write_file_atomic(cfg.paths.scorer, scorer.to_json() + "\n");
        rec.inputs.emplace_back("corpus", cfg.paths.corpus);
        rec.outputs.emplace_back("scorer", cfg.paths.scorer);
    }
    scorer.set_threshold(cfg.scorer.threshold);
    return scorer;
}

struct EvalContext {
    explicit EvalContext(Tokenizer t) : tok(std::move(t)) {}
    EvalContext(const EvalContext&) = delete;
    EvalContext& operator=(const EvalContext&) = delete;

    Tokenizer tok;
    NgramScorer scorer;
    EvalInputs inputs;
};

// EvalInputs holds raw pointers, so the context must stay put once built.
void build_eval_context(const PipelineConfig& cfg, EvalContext& ctx, StageRecord& rec) {
    require_inputs({{"eval_corpus", cfg.paths.eval_corpus}, {"prompts", cfg.paths.prompts}});
    rec.inputs.emplace_back("eval_corpus", cfg.paths.eval_corpus);
    rec.inputs.emplace_back("prompts", cfg.paths.prompts);
    ctx.scorer = obtain_scorer(cfg, rec);
    const auto eval = load_jsonl(cfg.paths.eval_corpus);
    ctx.inputs.tokenizer = &ctx.tok;
    ctx.inputs.scorer = &ctx.scorer;
    ctx.inputs.neutral_texts = eval.texts_with_label(0);
    ctx.inputs.concept_texts = eval.texts_with_label(1);
    ctx.inputs.prompts = load_prompts(cfg.paths.prompts);
    ctx.inputs.sampler = cfg.sampler;
}

}  // namespace

StageRecord stage_gen_corpus(const PipelineConfig& cfg) {
    cfg.validate();
    StageRecord rec{"gen-corpus", {}, {}};
    save_jsonl(gen_synthetic(cfg.corpus.n_pos, cfg.corpus.n_neg, cfg.corpus.seed), cfg.paths.corpus);
    rec.outputs.emplace_back("corpus", cfg.paths.corpus);
    save_jsonl(gen_synthetic(cfg.eval.n_pos, cfg.eval.n_neg, cfg.eval.seed), cfg.paths.eval_corpus);
    rec.outputs.emplace_back("eval_corpus", cfg.paths.eval_corpus);
    save_prompts(gen_prompts(cfg.eval.n_prompts, cfg.eval.prompt_seed), cfg.paths.prompts);
    rec.outputs.emplace_back("prompts", cfg.paths.prompts);
    return rec;
}

StageRecord stage_train(const PipelineConfig& cfg, bool verbose) {
    cfg.validate();
    StageRecord rec{"train-toy", {{"corpus", cfg.paths.corpus}}, {{"weights", cfg.paths.weights}}};
    require_inputs(rec.inputs);
    const auto corpus = load_jsonl(cfg.paths.corpus);
    const auto tok = build_tokenizer(corpus);
    ModelConfig mc = cfg.model;
    mc.vocab_size = tok.vocab_size();
    TrainParams tp = cfg.train;
    tp.verbose = verbose;
    TrainReport report;
    const auto weights = train(init_model(mc), corpus, tok, tp, &report);
    save_weights(weights, cfg.paths.weights,
                 {{"tokenizer", tokenizer_to_json(tok)},
                  {"train.initial_nll", fmt9(report.initial_nll)},
                  {"train.final_nll", fmt9(report.final_nll)},
                  {"train.steps", std::to_string(report.steps)}});
    return rec;
}

StageRecord stage_capture(const PipelineConfig& cfg) {
    cfg.validate();
    StageRecord rec{"capture",
                    {{"weights", cfg.paths.weights}, {"corpus", cfg.paths.corpus}},
                    {{"activations", cfg.paths.activations}}};
    require_inputs(rec.inputs);
    const auto wf = read_weights(cfg.paths.weights);
    const auto acts = capture(wf.weights, load_jsonl(cfg.paths.corpus), tokenizer_of(wf), cfg.sites);
    save_activations(acts, cfg.paths.activations);
    return rec;
}

StageRecord stage_score(const PipelineConfig& cfg) {
    cfg.validate();
    StageRecord rec{"score",
                    {{"activations", cfg.paths.activations}, {"weights", cfg.paths.weights}, {"corpus", cfg.paths.corpus}},
                    {{"table", cfg.paths.table}, {"table_cache", table_cache_path(cfg.paths.table)}}};
    require_inputs(rec.inputs);
    const auto table = build_table(load_activations(cfg.paths.activations));
    save_table_csv(table, cfg.paths.table);
    const TableCacheKey key{weights_hash(load_weights(cfg.paths.weights)), load_jsonl(cfg.paths.corpus).hash()};
    save_table_cache(table, key, table_cache_path(cfg.paths.table));
    return rec;
}

StageRecord stage_plan(const PipelineConfig& cfg) {
    cfg.validate();
    StageRecord rec{"plan", {{"table", cfg.paths.table}, {"weights", cfg.paths.weights}}, {{"plan", cfg.paths.plan}}};
    require_inputs(rec.inputs);
    const auto model = load_weights(cfg.paths.weights).cfg;
    save_plan(build_plan(cfg, load_table(cfg.paths.table), model), cfg.paths.plan);
    return rec;
}

StageRecord stage_patch(const PipelineConfig& cfg) {
    StageRecord rec{"patch", {{"weights", cfg.paths.weights}, {"plan", cfg.paths.plan}}, {{"weights", cfg.paths.patched}}};
    require_inputs(rec.inputs);
    const auto wf = read_weights(cfg.paths.weights);
    const auto plan = load_plan(cfg.paths.plan, wf.weights.cfg);
    auto meta = wf.metadata;
    meta["patch.plan_family"] = plan.family;
    meta["patch.plan_hash"] = hex64(file_hash(cfg.paths.plan));
    save_weights(patch_weights(wf.weights, plan), cfg.paths.patched, meta);
    return rec;
}

StageRecord stage_generate(const PipelineConfig& cfg, const std::string& weights_path, const std::string& plan_path,
                           const std::string& prompt) {
    cfg.sampler.validate();
    StageRecord rec{"generate", {{"weights", weights_path}}, {{"generations", cfg.paths.generations}}};
    if (!plan_path.empty()) rec.inputs.emplace_back("plan", plan_path);
    if (prompt.empty()) rec.inputs.emplace_back("prompts", cfg.paths.prompts);
    require_inputs(rec.inputs);
    const auto wf = read_weights(weights_path);
    const auto tok = tokenizer_of(wf);
    const InterventionPlan plan = plan_path.empty() ? InterventionPlan{} : load_plan(plan_path, wf.weights.cfg);
    const HookSet hooks = apply_runtime(plan);
    const auto prompts = prompt.empty() ? load_prompts(cfg.paths.prompts) : std::vector<std::string>{prompt};
    std::string out;
    for (std::size_t j = 0; j < prompts.size(); ++j) {
        SamplerParams sp = cfg.sampler;
        sp.seed = derive_seed(cfg.sampler.seed, j);
        const auto samples = generate(wf.weights, tok.encode(prompts[j]), sp, hooks);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            ojson line;
            line["prompt"] = prompts[j];
            line["sample"] = i;
            line["text"] = tok.decode(samples[i]);
            out += line.dump() + "\n";
        }
    }
    write_file_atomic(cfg.paths.generations, out);
    return rec;
}

StageRecord stage_eval(const PipelineConfig& cfg, const std::string& weights_path, const std::string& plan_path) {
    cfg.validate();
    StageRecord rec{"eval", {{"weights", weights_path}}, {}};
    if (!plan_path.empty()) rec.inputs.emplace_back("plan", plan_path);
    require_inputs(rec.inputs);
    const auto wf = read_weights(weights_path);
    EvalContext ctx(tokenizer_of(wf));
    build_eval_context(cfg, ctx, rec);
    const InterventionPlan plan = plan_path.empty() ? InterventionPlan{} : load_plan(plan_path, wf.weights.cfg);

    SweepResult res;
    res.axis = SweepAxis::None;
    res.family = plan.family;
    res.inputs_hash = ctx.inputs.hash();
    res.baseline = evaluate(wf.weights, InterventionPlan{}, ctx.inputs);
    const auto report = plan.empty() ? res.baseline : evaluate(wf.weights, plan, ctx.inputs);
    res.points.push_back({0.0, report});
    res.points.back().report.family = plan.family;
    const std::vector<SweepResult> all{res};
    emit_report(all, cfg.paths.report, format_for(cfg.paths.report));
    rec.outputs.emplace_back("report", cfg.paths.report);
    return rec;
}

StageRecord stage_sweep(const PipelineConfig& cfg) {
    cfg.validate();
    StageRecord rec{"sweep", {{"weights", cfg.paths.weights}, {"table", cfg.paths.table}}, {}};
    require_inputs(rec.inputs);
    const auto wf = read_weights(cfg.paths.weights);
    const auto table = load_table(cfg.paths.table);
    EvalContext ctx(tokenizer_of(wf));
    build_eval_context(cfg, ctx, rec);

    SweepResult res;
    if (cfg.sweep.axis == "k") {
        SweepOptions opt;
        opt.metric = cfg.sweep.metric;
        opt.damp_alpha = cfg.sweep.damp_alpha;
        opt.ppl_budget = cfg.sweep.ppl_budget;
        res = sweep_k(wf.weights, table, parse_sweep_family(cfg.sweep.family), cfg.sweep.k_grid, ctx.inputs, opt);
        res.family = cfg.sweep.family;
    } else {
        const auto experts = cfg.sweep.k ? select_topk(table, *cfg.sweep.k, cfg.sweep.metric) : select_above_chance(table);
        res = sweep_alpha(wf.weights, experts, cfg.sweep.alpha_grid, ctx.inputs);
    }
    const std::vector<SweepResult> all{res};
    emit_report(all, cfg.paths.sweep_report, format_for(cfg.paths.sweep_report));
    rec.outputs.emplace_back("report", cfg.paths.sweep_report);
    return rec;
}

StageRecord stage_report(const PipelineConfig& cfg, const std::vector<std::string>& inputs) {
    StageRecord rec{"report", {}, {{"summary", cfg.paths.summary}}};
    for (std::size_t i = 0; i < inputs.size(); ++i) rec.inputs.emplace_back("report" + std::to_string(i), inputs[i]);
    require_inputs(rec.inputs);
    std::vector<SweepResult> all;
    for (const auto& path : inputs) {
        for (auto& r : report_from_json(read_file(path))) all.push_back(std::move(r));
    }
    emit_report(all, cfg.paths.summary, format_for(cfg.paths.summary));
    return rec;
}

}  // namespace aura
