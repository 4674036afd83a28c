#include "icr/envs.hpp"

namespace icr {

TaskInstance WasonEnv::sample_instance(RandomStream& rng) const {
    return wason::WasonInstance::sample(rng, mixed_);
}

double WasonEnv::move_reward(const DialogueState& state, int /*participant*/,
                             const MoveRecord& move) const {
    const auto& inst = std::get<wason::WasonInstance>(state.task_instance);
    return wason::turn_reward(std::get<wason::StanceAction>(move), inst);
}

void WasonEnv::validate_move(const DialogueState& state, const MoveRecord& move) const {
    const auto* sa = std::get_if<wason::StanceAction>(&move);
    if (!sa) throw IcrError("wason move must be a stance action");
    const auto& inst = std::get<wason::WasonInstance>(state.task_instance);
    for (const auto& [face, stance] : sa->stances) {
        if (!inst.has_face(face)) {
            throw UnknownCard(std::string("stance on unknown card '") + face + "'");
        }
    }
}

Submission WasonEnv::project_submission(const DialogueState& state) const {
    WasonSubmission sub;
    sub.cards = wason_view::majority_support(state);
    return sub;
}

TaskInstance WeightsEnv::sample_instance(RandomStream& rng) const {
    if (!randomize_) return weights::BlockWeights::standard();
    // hidden permutation of the canonical weight multiset over the blocks
    std::vector<int> values{10, 10, 20, 30, 50};
    for (std::size_t i = values.size(); i > 1; --i) {
        std::swap(values[i - 1], values[rng.next_below(i)]);
    }
    weights::BlockWeights instance;
    const auto& blocks = weights::block_names();
    for (std::size_t i = 0; i < blocks.size(); ++i) instance.grams[blocks[i]] = values[i];
    instance.known_to_participants = {"red"};
    return instance;
}

double WeightsEnv::move_reward(const DialogueState& state, int /*participant*/,
                               const MoveRecord& move) const {
    const auto& truth = std::get<weights::BlockWeights>(state.task_instance);
    const auto& pa = std::get<weights::PropositionAction>(move);
    // format validity (structured moves are always well-formed) plus
    // per-proposition correctness; abstain contributes no correctness term
    double reward = 1.0;
    if (pa.assertion) {
        reward += weights::proposition_true(*pa.assertion, truth) ? 1.0 : -1.0;
    }
    return reward;
}

void WeightsEnv::validate_move(const DialogueState& /*state*/, const MoveRecord& move) const {
    const auto* pa = std::get_if<weights::PropositionAction>(&move);
    if (!pa) throw IcrError("weights move must be a proposition action");
    if (pa->assertion) {
        if (!weights::is_known_entity(pa->assertion->lhs) ||
            !weights::is_known_entity(pa->assertion->rhs)) {
            throw UnknownEntity("assertion references unknown entity");
        }
    }
}

Submission WeightsEnv::project_submission(const DialogueState& state) const {
    WeightsSubmission sub;
    for (const auto& p : state.participants) {
        sub.per_participant.push_back(weights_view::asserted_props(state, p.index));
    }
    return sub;
}

std::unique_ptr<Environment> make_environment(const std::string& task, int participants) {
    if (task == "wason") return std::make_unique<WasonEnv>(participants);
    if (task == "weights") return std::make_unique<WeightsEnv>(participants);
    throw ConfigError("unknown task: " + task);
}

}  // namespace icr
