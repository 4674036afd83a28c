#pragma once

#include "icr/envs.hpp"
#include "icr/mamdp.hpp"

namespace icr {

/// Probabilities for the intervener's quality draw. Must sum to 1.
struct QualityMixture {
    double p_helpful = 0.5;
    double p_misleading = 0.25;
    double p_irrelevant = 0.25;

    void validate() const;
    Quality draw(RandomStream& rng) const;
};

/// Oracle intervention agent. Helpful payloads are suggestions whose verbatim
/// adoption strictly raises the adopter's turn reward, Misleading ones
/// strictly lower it, Irrelevant ones restate settled ground. Quality
/// categories with no legal payload fall back to Irrelevant.
class ScriptedIntervener : public InterventionAgent {
  public:
    explicit ScriptedIntervener(QualityMixture mix) : mix_(mix) { mix_.validate(); }

    InterventionAction propose(const DialogueState& state, RandomStream& rng) override;

    const QualityMixture& mixture() const { return mix_; }

  private:
    InterventionAction propose_wason(const DialogueState& state, Quality quality,
                                     RandomStream& rng) const;
    InterventionAction propose_weights(const DialogueState& state, Quality quality,
                                       RandomStream& rng) const;
    QualityMixture mix_;
};

/// Oracle collaborator used for expert data collection. At adopt_noise 0 it
/// plays the per-turn reward-maximal action, folding in helpful suggestions;
/// with noise it errs, mostly by anchoring on the opening suggestion, so that
/// cloned policies inherit a visible error floor.
class ExpertCollaborator : public CollaboratorAgent {
  public:
    explicit ExpertCollaborator(double adopt_noise = 0.1);

    CollaboratorAction respond(const DialogueState& state, const InterventionAction& intervention,
                               RandomStream& rng) override;

    /// The move the expert would make if told the suggestion carries no
    /// value: advance from its own knowledge, ignoring the intervention.
    /// Deterministic; this grounds the counterfactual conditioning during
    /// cloning.
    MoveRecord skeptical_move(const DialogueState& state, int participant) const;
    CollaboratorAction skeptical_action(const DialogueState& state) const;

  private:
    MoveRecord respond_wason(const DialogueState& state, const InterventionAction& intervention,
                             int participant, RandomStream& rng) const;
    MoveRecord respond_weights(const DialogueState& state, const InterventionAction& intervention,
                               int participant, RandomStream& rng) const;
    double adopt_noise_;
};

/// The ordered list of true propositions the weights expert walks through for
/// a given instance: weight assignments first, then orderings, then
/// distinctness claims. All entries live in the assertion menu.
std::vector<weights::Proposition> weights_expert_curriculum(const weights::BlockWeights& truth);

struct ExpertRecord {
    DialogueState context;  // state before the turn
    InterventionAction intervention;
    CollaboratorAction action;
    std::map<int, double> rewards;
    std::string split;  // "train" | "eval"
};

struct ExpertDataset {
    std::vector<ExpertRecord> records;

    std::vector<const ExpertRecord*> split_view(const std::string& split) const;
};

/// Algorithm phase 1: roll expert dialogues and flatten them to per-turn
/// records. Deterministic in (env, mix, n_dialogues, horizon, seed); the
/// trailing `eval_fraction` of dialogues is tagged as the eval split.
ExpertDataset collect_expert_dataset(const Environment& env, const QualityMixture& mix,
                                     int n_dialogues, int horizon, std::uint64_t seed,
                                     double adopt_noise = 0.1, double eval_fraction = 0.1);

std::string expert_record_to_jsonl(const ExpertRecord& rec);
ExpertRecord expert_record_from_jsonl(const std::string& line);

}  // namespace icr
