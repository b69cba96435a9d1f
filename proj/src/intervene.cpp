#include "aura/intervene.hpp"

#include <algorithm>
#include <cmath>

#include "aura/common.hpp"

namespace aura {

std::string_view metric_name(RankMetric m) { return m == RankMetric::Auroc ? "auroc" : "ap"; }

RankMetric parse_metric(std::string_view name) {
    if (name == "auroc") return RankMetric::Auroc;
    if (name == "ap") return RankMetric::Ap;
    fail(ErrorKind::ParseError, "unknown metric '" + std::string(name) + "'");
}

ExpertSet select_topk(const ExpertiseTable& table, std::size_t k, RankMetric metric) {
    if (k > table.size()) {
        fail(ErrorKind::KTooLarge, "k=" + std::to_string(k) + " exceeds " + std::to_string(table.size()) + " neurons");
    }
    const auto& rows = table.rows();
    std::vector<std::size_t> idx(rows.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    auto score = [&](std::size_t i) { return metric == RankMetric::Auroc ? rows[i].auroc : rows[i].ap; };
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (score(a) != score(b)) return score(a) > score(b);
                          return rows[a].id < rows[b].id;
                      });
    ExpertSet out;
    out.kind = ExpertSet::Kind::TopK;
    out.metric = metric;
    out.k = k;
    for (std::size_t i = 0; i < k; ++i) out.neurons.push_back(rows[idx[i]].id);
    return out;
}

ExpertSet select_above_chance(const ExpertiseTable& table) {
    ExpertSet out;
    out.kind = ExpertSet::Kind::AboveChance;
    for (const auto& r : table.rows()) {
        if (r.auroc > 0.5) out.neurons.push_back(r.id);
    }
    out.k = out.neurons.size();
    return out;
}

ExpertSet select_random(const ModelConfig& cfg, std::size_t k, std::uint64_t seed) {
    auto pool = all_neurons(cfg);
    if (k > pool.size()) {
        fail(ErrorKind::KTooLarge, "k=" + std::to_string(k) + " exceeds " + std::to_string(pool.size()) + " neurons");
    }
    Rng rng(derive_seed(seed, 0x72616e64));
    for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    ExpertSet out;
    out.kind = ExpertSet::Kind::Random;
    out.k = k;
    out.seed = seed;
    out.neurons = std::move(pool);
    return out;
}

void InterventionPlan::set(const NeuronId& id, const InterventionAction& action) {
    if (!std::isfinite(action.scale) || !std::isfinite(action.offset)) {
        fail(ErrorKind::DomainError, "intervention action must be finite");
    }
    if (action.is_identity()) {
        actions_.erase(id);
    } else {
        actions_[id] = action;
    }
}

InterventionAction InterventionPlan::action_for(const NeuronId& id) const {
    const auto it = actions_.find(id);
    return it == actions_.end() ? InterventionAction{} : it->second;
}

void InterventionPlan::validate_for(const ModelConfig& cfg) const {
    for (const auto& [id, _] : actions_) {
        if (!neuron_valid(cfg, id)) {
            fail(ErrorKind::NeuronOutOfRange, "neuron " + std::to_string(id.layer) + "/" +
                                                  std::string(site_name(id.site)) + "/" + std::to_string(id.row) +
                                                  " outside model");
        }
    }
}

namespace {

nlohmann::ordered_json selection_params(const ExpertSet& experts) {
    nlohmann::ordered_json p;
    switch (experts.kind) {
        case ExpertSet::Kind::TopK:
            p["selection"] = "topk";
            p["metric"] = metric_name(experts.metric);
            p["k"] = experts.k;
            break;
        case ExpertSet::Kind::AboveChance:
            p["selection"] = "above_chance";
            break;
        case ExpertSet::Kind::Random:
            p["selection"] = "random";
            p["k"] = experts.k;
            p["seed"] = experts.seed;
            break;
    }
    return p;
}

}  // namespace

InterventionPlan plan_det(const ExpertSet& experts, const ExpertiseTable& table, DetMode mode) {
    InterventionPlan plan;
    plan.family = mode == DetMode::Zero ? "det-zero" : "det-e";
    plan.params = selection_params(experts);
    plan.source_table_hash = table.hash();
    for (const auto& id : experts.neurons) {
        plan.set(id, {0.0, mode == DetMode::Zero ? 0.0 : table.at(id).mean_neg});
    }
    return plan;
}

InterventionPlan plan_damp(const ExpertSet& experts, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) fail(ErrorKind::AlphaOutOfRange, "alpha must lie in [0, 1], got " + fmt9(alpha));
    InterventionPlan plan;
    plan.family = "damp";
    plan.params = selection_params(experts);
    plan.params["alpha"] = alpha;
    for (const auto& id : experts.neurons) plan.set(id, {alpha, 0.0});
    return plan;
}

InterventionPlan plan_aura(const ExpertiseTable& table) {
    InterventionPlan plan;
    plan.family = "aura";
    plan.source_table_hash = table.hash();
    for (const auto& r : table.rows()) {
        if (r.auroc > 0.5) plan.set(r.id, {alpha_of(r.auroc), 0.0});
    }
    return plan;
}

InterventionPlan plan_meanvar(const ExpertSet& experts, const ExpertiseTable& table, std::optional<double> target_mean,
                              std::optional<double> target_var) {
    if (target_var && !(*target_var >= 0.0)) fail(ErrorKind::DomainError, "target variance must be >= 0");
    InterventionPlan plan;
    plan.family = "meanvar";
    plan.params = selection_params(experts);
    plan.params["target_mean"] = target_mean ? nlohmann::ordered_json(*target_mean) : nlohmann::ordered_json("keep");
    plan.params["target_var"] = target_var ? nlohmann::ordered_json(*target_var) : nlohmann::ordered_json("keep");
    plan.source_table_hash = table.hash();
    for (const auto& id : experts.neurons) {
        const double mean = table.mean_all(id);
        const double var = table.at(id).var_all;
        double scale = 1.0;
        if (target_var) {
            if (!(var > 0.0)) fail(ErrorKind::ZeroVariance, "neuron has zero activation variance");
            if (*target_var > var) {
                fail(ErrorKind::VarianceIncrease, "target variance " + fmt9(*target_var) + " exceeds " + fmt9(var));
            }
            scale = std::sqrt(*target_var / var);
        }
        const double offset = target_mean ? *target_mean - scale * mean : mean * (1.0 - scale);
        plan.set(id, {scale, offset});
    }
    return plan;
}

InterventionPlan compose(const InterventionPlan& first, const InterventionPlan& second) {
    InterventionPlan out;
    out.family = first.family + "+" + second.family;
    out.params = {{"first", first.params}, {"second", second.params}};
    for (const auto& [id, a] : first.actions()) out.set(id, a);
    for (const auto& [id, b] : second.actions()) {
        const auto a = first.action_for(id);
        out.set(id, {b.scale * a.scale, b.scale * a.offset + b.offset});
    }
    return out;
}

HookSet apply_runtime(const InterventionPlan& plan) {
    HookSet hooks;
    for (const auto& [id, action] : plan.actions()) hooks.add(id, action);
    return hooks;
}

InterventionPlan plan_from_hooks(const HookSet& hooks) {
    InterventionPlan plan;
    plan.family = "hooks";
    for (const auto& [id, action] : hooks.entries()) plan.set(id, action);
    return plan;
}

ModelWeights patch_weights(const ModelWeights& weights, const InterventionPlan& plan) {
    plan.validate_for(weights.cfg);
    ModelWeights out = weights;
    const std::size_t d = weights.cfg.d_model, ff = weights.cfg.d_ff;
    for (const auto& [id, action] : plan.actions()) {
        auto& L = out.layers[id.layer];
        const bool up = id.site == Site::MlpUpPre;
        auto& W = up ? L.w_up : L.w_down;
        auto& b = up ? L.b_up : L.b_down;
        const std::size_t cols = up ? d : ff;
        const auto s = static_cast<float>(action.scale);
        const auto o = static_cast<float>(action.offset);
        for (std::size_t c = 0; c < cols; ++c) W[id.row * cols + c] *= s;
        b[id.row] = s * b[id.row] + o;
    }
    return out;
}

std::string plan_to_json(const InterventionPlan& plan) {
    nlohmann::ordered_json j;
    j["family"] = plan.family;
    j["params"] = plan.params;
    j["source_table_hash"] = hex64(plan.source_table_hash);
    auto actions = nlohmann::ordered_json::array();
    for (const auto& [id, a] : plan.actions()) {
        nlohmann::ordered_json e;
        e["layer"] = id.layer;
        e["site"] = site_name(id.site);
        e["row"] = id.row;
        e["scale"] = a.scale;
        e["offset"] = a.offset;
        actions.push_back(e);
    }
    j["actions"] = actions;
    return j.dump(2) + "\n";
}

InterventionPlan plan_from_json(std::string_view json, const ModelConfig& cfg) {
    InterventionPlan plan;
    try {
        const auto j = nlohmann::ordered_json::parse(json);
        plan.family = j.at("family").get<std::string>();
        plan.params = j.value("params", nlohmann::ordered_json::object());
        if (j.contains("source_table_hash")) {
            plan.source_table_hash = std::stoull(j["source_table_hash"].get<std::string>(), nullptr, 16);
        }
        for (const auto& e : j.at("actions")) {
            const NeuronId id{e.at("layer").get<std::uint32_t>(), parse_site(e.at("site").get<std::string>()),
                              e.at("row").get<std::uint32_t>()};
            if (plan.actions().count(id)) fail(ErrorKind::DomainError, "duplicate action in plan");
            plan.set(id, {e.at("scale").get<double>(), e.at("offset").get<double>()});
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseError, std::string("plan: ") + e.what());
    }
    plan.validate_for(cfg);
    return plan;
}

void save_plan(const InterventionPlan& plan, const std::string& path) { write_file_atomic(path, plan_to_json(plan)); }

InterventionPlan load_plan(const std::string& path, const ModelConfig& cfg) {
    return plan_from_json(read_file(path), cfg);
}

}  // namespace aura
