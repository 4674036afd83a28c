#pragma once

#include "icr/mamdp.hpp"

namespace icr {

namespace wason_metrics {

/// Net common-ground gain: distinct solution frameworks appearing in any
/// participant's supported set at any turn, minus those already present at
/// turn 0. Nonnegative by construction.
double cg_gain(const Trajectory& traj);

/// Same count against a baseline of the first `baseline_turns` turns instead
/// of turn 0 only.
double cg_gain_with_baseline(const Trajectory& traj, int baseline_turns);

/// Accuracy of the recorded final submission.
double final_submission_accuracy(const Trajectory& traj);

}  // namespace wason_metrics

namespace weights_metrics {

/// Propositions shared by all participants as of turn t (assertions
/// accumulate; the shared set is the intersection of accumulated sets) and
/// their cumulative union over turns <= t.
std::set<weights::Proposition> shared_props_at(const Trajectory& traj, int turn);
std::set<weights::Proposition> cumulative_shared_props(const Trajectory& traj, int turn);

/// Common-ground gain: shared propositions established over the dialogue
/// beyond those already shared at turn 0.
double cg_gain(const Trajectory& traj);

/// True propositions in the final common ground (the task's composite
/// accuracy number), alongside the CG size and universe size.
weights::AccReport final_acc(const Trajectory& traj);
weights::AccReport final_acc_closure(const Trajectory& traj);  // over the closed CG

/// Gold reward of the final state: format is 1 for structured trajectories,
/// correctness over the union of participant beliefs, agreement over the
/// shared set.
weights::RewardBreakdown final_gold_reward(const Trajectory& traj);

struct CgSeries {
    // series[kind][t] = mean over trajectories of |cumulative shared props of
    // this kind by turn t| / universe_size(kind)
    std::map<weights::RelationKind, std::vector<double>> series;
    int horizon = 0;
};

CgSeries cumulative_cg_by_relation(const std::vector<Trajectory>& trajectories);

}  // namespace weights_metrics

}  // namespace icr
