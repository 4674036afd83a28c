#pragma once

#include <functional>
#include <string>
#include <vector>

#include "icr/agents.hpp"
#include "icr/policy.hpp"

namespace icr {

enum class Variant { BC, PPO, ICR, DPO, IPO, PSOIntent, PSOSkeptical, PPOCF, ICRMasked };
const char* to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct TrainerConfig {
    Variant variant = Variant::ICR;
    double lambda_h = 0.05;
    double lambda_intent = 0.2;
    double clip_eps = 0.2;
    double learning_rate = 1e-2;
    int batch_size = 64;  // training items (participant-turns) per update
    double gamma = 0.95;
    int steps = 8000;
    std::uint64_t seed = 0;
    double temperature = 1.0;
    int horizon = 15;
    QualityMixture mixture;
    double adopt_noise = 0.1;

    int bc_epochs = 30;
    double bc_learning_rate = 0.1;

    double beta = 0.1;  // DPO/IPO temperature
    int offline_epochs = 30;
    double offline_learning_rate = 2e-3;

    double baseline_decay = 0.99;
    double stale_threshold = 1e-6;
    int metrics_stride = 20;

    void validate() const;
};

/// Context/objective modifiers per variant. Training flags may alternate by
/// item index (the PPO-CF half-and-half interleave).
struct VariantSpec {
    bool online = true;              // trained by the PPO loop
    bool uses_intent_term = false;   // adds the counterfactual regularizer
    CfFlag train_flag_even = CfFlag::Factual;
    CfFlag train_flag_odd = CfFlag::Factual;
    CfFlag eval_flag = CfFlag::Factual;
    bool eval_mask = false;
    bool force_zero_intent = false;

    CfFlag train_flag(std::size_t item_index) const {
        return item_index % 2 == 0 ? train_flag_even : train_flag_odd;
    }
    double lambda_intent(const TrainerConfig& cfg) const {
        return force_zero_intent || !uses_intent_term ? 0.0 : cfg.lambda_intent;
    }
};

VariantSpec apply_variant(Variant v);

struct RolloutItem {
    ConditionedContext factual;         // sampling context
    ConditionedContext counterfactual;  // twin differing only in cf flag slots
    std::vector<int> action;
    std::vector<double> old_logp;  // per-slot log-prob of the chosen ids at collection
    double reward = 0.0;
    double advantage = 0.0;
};

struct RolloutBatch {
    std::vector<RolloutItem> items;
};

/// Running per-bucket mean used as the advantage baseline. Buckets are turn
/// quartiles.
class EmaBaseline {
  public:
    explicit EmaBaseline(double decay = 0.99) : decay_(decay), value_(4, 0.0), seen_(4, false) {}
    double advantage_for(int bucket, double reward);

  private:
    double decay_;
    std::vector<double> value_;
    std::vector<bool> seen_;
};

/// Collects whole episodes under a frozen policy snapshot until at least
/// `cfg.batch_size` items are gathered. Sampling contexts follow the variant
/// spec; counterfactual twins always carry CounterfactualNegative.
RolloutBatch collect_rollouts(const Environment& env, const SoftmaxPolicy& policy,
                              const TrainerConfig& cfg, const VariantSpec& spec,
                              std::uint64_t step_index, EmaBaseline& baseline);

struct UpdateDiagnostics {
    double surrogate = 0.0;
    double kl_to_ref = 0.0;
    double entropy = 0.0;
    double delta_cf_sampled = 0.0;  // mean sampled log-ratio (icr only)
    double mean_reward = 0.0;
    double update_norm = 0.0;
};

/// One epoch of clipped-surrogate ascent with the reference KL penalty.
UpdateDiagnostics ppo_update(SoftmaxPolicy& policy, const SoftmaxPolicy& ref,
                             const RolloutBatch& batch, const TrainerConfig& cfg);

/// ppo_update plus the counterfactual-invariance penalty. The counterfactual
/// branch is evaluated once per item on the sampled actions and consumed as
/// constants; no gradient flows through that evaluation.
UpdateDiagnostics icr_update(SoftmaxPolicy& policy, const SoftmaxPolicy& ref,
                             const RolloutBatch& batch, const TrainerConfig& cfg);

/// Mean exact KL(pi(.|factual) || pi(.|counterfactual)) over context pairs.
double compute_cf_divergence(const SoftmaxPolicy& policy,
                             const std::vector<std::pair<ConditionedContext, ConditionedContext>>&
                                 eval_contexts);

/// Deterministic factual/counterfactual probe contexts harvested from scripted
/// episodes; used for divergence reporting and the acceptance sweeps.
std::vector<std::pair<ConditionedContext, ConditionedContext>> build_eval_contexts(
    const Environment& env, const QualityMixture& mixture, int n_contexts, std::uint64_t seed);

// --- Behavior cloning ---------------------------------------------------------

SoftmaxPolicy train_bc(const ExpertDataset& dataset, const TrainerConfig& cfg,
                       std::vector<double>* nll_trace = nullptr);

// --- Preference optimization ---------------------------------------------------

struct PreferencePair {
    ConditionedContext context;
    std::vector<int> preferred;
    std::vector<int> dispreferred;
};

struct PreferenceBuild {
    std::vector<PreferencePair> pairs;
    int skipped = 0;  // records with nothing correct to corrupt
};

/// Preferred = the expert action; dispreferred = a copy with exactly one
/// correct component flipped to an incorrect one.
PreferenceBuild build_preference_pairs(const ExpertDataset& dataset, RandomStream& rng);

SoftmaxPolicy train_dpo(const std::vector<PreferencePair>& pairs, const SoftmaxPolicy& ref,
                        double beta, const TrainerConfig& cfg);
SoftmaxPolicy train_ipo(const std::vector<PreferencePair>& pairs, const SoftmaxPolicy& ref,
                        double beta, const TrainerConfig& cfg);

/// Preference margin h(w, l) = sum_slots [log pi(w) - log pi_ref(w)] -
/// [log pi(l) - log pi_ref(l)] on one pair.
double preference_margin(const SoftmaxPolicy& policy, const SoftmaxPolicy& ref,
                         const PreferencePair& pair);

// --- Full online loop -----------------------------------------------------------

struct TrainStepRow {
    int step = 0;
    double mean_proxy_reward = 0.0;
    double kl_to_ref = 0.0;
    double delta_cf = 0.0;
    double entropy = 0.0;
    double wallclock_s = 0.0;
};

struct TrainResult {
    SoftmaxPolicy policy;
    std::vector<TrainStepRow> rows;
};

/// Runs the configured number of PPO/ICR update steps starting from a BC
/// policy, which also serves as the fixed reference.
TrainResult train_online(const Environment& env, const SoftmaxPolicy& bc_init,
                         const TrainerConfig& cfg);

}  // namespace icr
