#pragma once

#include <optional>
#include <string>
#include <vector>

#include "icr/mamdp.hpp"

namespace icr {

/// Conditioning mode for a policy context. Factual is the ordinary view;
/// CounterfactualNegative tags the state with "this suggestion will not help"
/// and PSOPositive with "this suggestion will automatically help". Flags map
/// to dedicated one-hot feature slots and nothing else.
enum class CfFlag { Factual, CounterfactualNegative, PSOPositive };

struct ConditionedContext {
    std::vector<double> features;
    CfFlag cf_flag = CfFlag::Factual;
    bool mask_intervention = false;
};

/// Layout of one task's feature vector and factored action space.
struct FeatureSchema {
    std::string task;                  // "wason" | "weights"
    int feature_dim = 0;
    std::vector<int> choices_per_slot; // one entry per sub-action slot
    int cf_flag_offset = 0;            // first of the three cf one-hot slots
    std::uint64_t hash = 0;            // layout fingerprint for checkpoints
};

const FeatureSchema& schema_for(const std::string& task);

/// Fixed assertion menu for the weights task: choice 0 abstains, choice k>0
/// asserts menu()[k-1].
const std::vector<weights::Proposition>& weights_action_menu();
int weights_menu_index(const weights::Proposition& p);  // -1 if absent

/// Builds the per-participant policy context. The cf flag and the mask touch
/// only their designated slots; the intervention's quality tag is never read.
ConditionedContext featurize(const DialogueState& state, const InterventionAction& intervention,
                             int participant, CfFlag cf_flag, bool mask_intervention);

/// Returns a copy of `ctx` with only the cf one-hot slots rewritten.
ConditionedContext with_cf_flag(const ConditionedContext& ctx, const std::string& task,
                                CfFlag flag);

/// Linear softmax policy over factored sub-actions: each slot owns a
/// (choices x feature_dim) score matrix over the shared context vector.
struct SoftmaxPolicy {
    std::string task;
    int feature_dim = 0;
    std::vector<int> choices_per_slot;
    double temperature = 1.0;
    std::uint64_t schema_hash = 0;
    // params[slot][choice * feature_dim + feature]
    std::vector<std::vector<double>> params;

    static SoftmaxPolicy zeros(const std::string& task, double temperature = 1.0);
    int n_slots() const { return static_cast<int>(choices_per_slot.size()); }
    double& at(int slot, int choice, int feature) {
        return params[slot][choice * feature_dim + feature];
    }
    double at(int slot, int choice, int feature) const {
        return params[slot][choice * feature_dim + feature];
    }
};

struct ActionLogProb {
    std::vector<std::pair<int, double>> per_subaction;  // (chosen id, log-prob)
    double total = 0.0;
};

/// Full per-slot distributions; rows are log-probabilities.
std::vector<std::vector<double>> action_logprobs(const SoftmaxPolicy& policy,
                                                 const ConditionedContext& ctx);

/// Samples each sub-action in slot order. Temperatures below 1e-12 act as the
/// greedy limit with lowest-id tie-breaking.
std::pair<std::vector<int>, ActionLogProb> sample_action(const SoftmaxPolicy& policy,
                                                         const ConditionedContext& ctx,
                                                         RandomStream& rng);

/// Exact categorical KL(pi(.|a) || pi(.|b)) summed over sub-action slots.
double action_kl_full(const SoftmaxPolicy& policy, const ConditionedContext& ctx_a,
                      const ConditionedContext& ctx_b);

/// Log-ratio estimator on a sampled action: sum_j log p(a_j|a) - log p(a_j|b).
double action_kl_sampled(const SoftmaxPolicy& policy, const ConditionedContext& ctx_a,
                         const ConditionedContext& ctx_b, const std::vector<int>& action);

/// Number of full-context scoring passes performed since the last reset.
/// Used to verify the one-extra-forward-pass property of the intent term.
std::uint64_t scoring_pass_count();
void reset_scoring_pass_count();

// --- Action encode/decode -----------------------------------------------------

MoveRecord decode_action(const std::string& task, const TaskInstance& instance,
                         const std::vector<int>& sub_actions);
std::vector<int> encode_move(const std::string& task, const TaskInstance& instance,
                             const MoveRecord& move);

/// Collaborator agent backed by a policy snapshot. Each participant's move is
/// sampled independently from the same parameters.
class PolicyCollaborator : public CollaboratorAgent {
  public:
    PolicyCollaborator(SoftmaxPolicy policy, CfFlag flag = CfFlag::Factual, bool mask = false)
        : policy_(std::move(policy)), flag_(flag), mask_(mask) {}

    CollaboratorAction respond(const DialogueState& state, const InterventionAction& intervention,
                               RandomStream& rng) override;

  private:
    SoftmaxPolicy policy_;
    CfFlag flag_;
    bool mask_;
};

// --- Checkpoints ---------------------------------------------------------------

void save_checkpoint(const SoftmaxPolicy& policy, const std::string& path);
SoftmaxPolicy load_checkpoint(const std::string& path);  // verifies the schema hash

}  // namespace icr
