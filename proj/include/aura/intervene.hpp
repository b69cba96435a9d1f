#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aura/expertise.hpp"
#include "aura/toylm.hpp"
#include "json.hpp"

namespace aura {

enum class RankMetric { Auroc, Ap };
std::string_view metric_name(RankMetric m);
RankMetric parse_metric(std::string_view name);

struct ExpertSet {
    enum class Kind { TopK, AboveChance, Random };

    std::vector<NeuronId> neurons;
    Kind kind = Kind::TopK;
    RankMetric metric = RankMetric::Auroc;  // TopK only
    std::size_t k = 0;                      // TopK / Random
    std::uint64_t seed = 0;                 // Random only

    std::size_t size() const noexcept { return neurons.size(); }
};

// Sorted by the metric descending; ties go to the lower (layer, site, row).
// k = 0 yields an empty set.
ExpertSet select_topk(const ExpertiseTable& table, std::size_t k, RankMetric metric);
// Every neuron with auroc strictly above 0.5, in table order.
ExpertSet select_above_chance(const ExpertiseTable& table);
ExpertSet select_random(const ModelConfig& cfg, std::size_t k, std::uint64_t seed);

using InterventionAction = AffineAction;

// Sparse map of affine actions; identity actions are never stored.
class InterventionPlan {
public:
    std::string family = "none";
    nlohmann::ordered_json params = nlohmann::ordered_json::object();
    std::uint64_t source_table_hash = 0;

    void set(const NeuronId& id, const InterventionAction& action);
    const std::map<NeuronId, InterventionAction>& actions() const noexcept { return actions_; }
    std::size_t size() const noexcept { return actions_.size(); }
    bool empty() const noexcept { return actions_.empty(); }
    // Identity when the neuron is not in the plan.
    InterventionAction action_for(const NeuronId& id) const;

    void validate_for(const ModelConfig& cfg) const;

    bool operator==(const InterventionPlan& o) const { return actions_ == o.actions_; }

private:
    std::map<NeuronId, InterventionAction> actions_;
};

enum class DetMode { Zero, MeanAbsence };

InterventionPlan plan_det(const ExpertSet& experts, const ExpertiseTable& table, DetMode mode);
InterventionPlan plan_damp(const ExpertSet& experts, double alpha);
InterventionPlan plan_aura(const ExpertiseTable& table);
// Affine map moving each expert's activation distribution to the target mean
// and/or (smaller) variance. nullopt keeps the current moment.
InterventionPlan plan_meanvar(const ExpertSet& experts, const ExpertiseTable& table, std::optional<double> target_mean,
                              std::optional<double> target_var);

// Apply `second` after `first` on every neuron either one touches.
InterventionPlan compose(const InterventionPlan& first, const InterventionPlan& second);

HookSet apply_runtime(const InterventionPlan& plan);
InterventionPlan plan_from_hooks(const HookSet& hooks);

// Folds each action into the owning linear: row *= s, bias = s * bias + o.
ModelWeights patch_weights(const ModelWeights& weights, const InterventionPlan& plan);

std::string plan_to_json(const InterventionPlan& plan);
InterventionPlan plan_from_json(std::string_view json, const ModelConfig& cfg);
void save_plan(const InterventionPlan& plan, const std::string& path);
InterventionPlan load_plan(const std::string& path, const ModelConfig& cfg);

}  // namespace aura
