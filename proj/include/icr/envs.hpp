#pragma once

#include "icr/mamdp.hpp"

namespace icr {

/// No-press Wason card selection. Immutable after construction; all
/// operations are pure, so instances can be shared across episode runners.
class WasonEnv : public Environment {
  public:
    explicit WasonEnv(int participants = 3, bool mixed_instances = false)
        : participants_(participants), mixed_(mixed_instances) {}

    std::string name() const override { return "wason"; }
    int participant_count() const override { return participants_; }
    TaskInstance sample_instance(RandomStream& rng) const override;
    double move_reward(const DialogueState& state, int participant,
                       const MoveRecord& move) const override;
    void validate_move(const DialogueState& state, const MoveRecord& move) const override;
    Submission project_submission(const DialogueState& state) const override;

  private:
    int participants_;
    bool mixed_;
};

/// No-press Weights task. Episodes draw a hidden assignment of the canonical
/// weight multiset to the blocks (the canonical instance is one of them), so
/// ground truth is only reachable through the known block, deduction, and
/// adopted suggestions. `randomize=false` pins the canonical instance.
class WeightsEnv : public Environment {
  public:
    explicit WeightsEnv(int participants = 3, bool randomize = true)
        : participants_(participants), randomize_(randomize) {}

    std::string name() const override { return "weights"; }
    int participant_count() const override { return participants_; }
    TaskInstance sample_instance(RandomStream& rng) const override;
    double move_reward(const DialogueState& state, int participant,
                       const MoveRecord& move) const override;
    void validate_move(const DialogueState& state, const MoveRecord& move) const override;
    Submission project_submission(const DialogueState& state) const override;

  private:
    int participants_;
    bool randomize_;
};

std::unique_ptr<Environment> make_environment(const std::string& task, int participants = 3);

}  // namespace icr
