#include "icr/metrics.hpp"

#include <algorithm>

namespace icr {

namespace {

/// Replays a trajectory's states by folding `step` from the initial state.
std::vector<DialogueState> replay_states(const Trajectory& traj) {
    DialogueState state = initial_state(traj.task_instance,
                                        traj.turns.empty()
                                            ? 1
                                            : static_cast<int>(
                                                  traj.turns.front().actions.per_participant.size()));
    std::vector<DialogueState> states;
    states.push_back(state);
    for (const auto& rec : traj.turns) {
        state = step(state, rec.intervention, rec.actions);
        states.push_back(state);
    }
    return states;
}

}  // namespace

namespace wason_metrics {

double cg_gain_with_baseline(const Trajectory& traj, int baseline_turns) {
    const auto& inst = std::get<wason::WasonInstance>(traj.task_instance);
    auto states = replay_states(traj);

    std::set<wason::SolutionFramework> baseline;
    std::set<wason::SolutionFramework> all;
    // states[t+1] reflects the stance maps after turn t
    for (std::size_t t = 1; t < states.size(); ++t) {
        for (const auto& p : states[t].participants) {
            auto supported = wason_view::supported_cards(states[t], p.index);
            auto fw = wason::framework_of(supported, inst);
            if (!fw) continue;
            all.insert(*fw);
            if (static_cast<int>(t) <= baseline_turns) baseline.insert(*fw);
        }
    }
    return static_cast<double>(all.size()) - static_cast<double>(baseline.size());
}

double cg_gain(const Trajectory& traj) { return cg_gain_with_baseline(traj, 1); }

double final_submission_accuracy(const Trajectory& traj) {
    const auto& inst = std::get<wason::WasonInstance>(traj.task_instance);
    const auto& sub = std::get<WasonSubmission>(traj.final_submission);
    return wason::final_accuracy(sub.cards, inst);
}

}  // namespace wason_metrics

namespace weights_metrics {

std::set<weights::Proposition> shared_props_at(const Trajectory& traj, int turn) {
    if (traj.turns.empty()) return {};
    std::vector<int> pids;
    for (const auto& [pid, move] : traj.turns.front().actions.per_participant) {
        pids.push_back(pid);
    }
    std::set<weights::Proposition> shared;
    bool first = true;
    for (int pid : pids) {
        std::set<weights::Proposition> mine;
        for (int t = 0; t <= std::min<int>(turn, static_cast<int>(traj.turns.size()) - 1); ++t) {
            auto it = traj.turns[t].actions.per_participant.find(pid);
            if (it == traj.turns[t].actions.per_participant.end()) continue;
            const auto& pa = std::get<weights::PropositionAction>(it->second);
            if (pa.assertion) mine.insert(*pa.assertion);
        }
        if (first) {
            shared = std::move(mine);
            first = false;
        } else {
            std::set<weights::Proposition> next;
            std::set_intersection(shared.begin(), shared.end(), mine.begin(), mine.end(),
                                  std::inserter(next, next.begin()));
            shared.swap(next);
        }
    }
    return shared;
}

std::set<weights::Proposition> cumulative_shared_props(const Trajectory& traj, int turn) {
    // accumulated assertion sets only grow, so the shared set at turn t
    // already contains every earlier shared set
    return shared_props_at(traj, turn);
}

double cg_gain(const Trajectory& traj) {
    if (traj.turns.empty()) return 0.0;
    auto at_start = shared_props_at(traj, 0);
    auto at_end = shared_props_at(traj, static_cast<int>(traj.turns.size()) - 1);
    return static_cast<double>(at_end.size()) - static_cast<double>(at_start.size());
}

namespace {

const weights::BlockWeights& truth_of(const Trajectory& traj) {
    return std::get<weights::BlockWeights>(traj.task_instance);
}

}  // namespace

weights::AccReport final_acc(const Trajectory& traj) {
    auto shared = shared_props_at(traj, static_cast<int>(traj.turns.size()) - 1);
    return weights::acc_metric(shared, truth_of(traj));
}

weights::AccReport final_acc_closure(const Trajectory& traj) {
    auto shared = shared_props_at(traj, static_cast<int>(traj.turns.size()) - 1);
    std::set<weights::Proposition> closed;
    try {
        closed = weights::close_propositions(shared);
    } catch (const InconsistentBelief&) {
        closed = shared;  // inconsistent common ground is reported unclosed
    }
    return weights::acc_metric(closed, truth_of(traj));
}

weights::RewardBreakdown final_gold_reward(const Trajectory& traj) {
    const auto& sub = std::get<WeightsSubmission>(traj.final_submission);
    auto agreement = weights::agreement_score(sub.per_participant);
    std::set<weights::Proposition> all_props;
    for (const auto& props : sub.per_participant) {
        all_props.insert(props.begin(), props.end());
    }
    double c_norm = weights::correctness_score(all_props, truth_of(traj));
    return weights::gold_reward(1.0, c_norm, agreement.a_norm);
}

CgSeries cumulative_cg_by_relation(const std::vector<Trajectory>& trajectories) {
    if (trajectories.empty()) throw IcrError("need at least one trajectory");
    int horizon = 0;
    for (const auto& traj : trajectories) {
        if (traj.task != "weights") {
            throw WrongTask("cumulative CG by relation is a weights-task metric");
        }
        horizon = std::max<int>(horizon, static_cast<int>(traj.turns.size()));
    }
    CgSeries out;
    out.horizon = horizon;
    using weights::RelationKind;
    for (RelationKind kind :
         {RelationKind::Equality, RelationKind::Inequality, RelationKind::Order}) {
        std::vector<double> series(horizon, 0.0);
        double denom = static_cast<double>(weights::universe_size(kind));
        for (const auto& traj : trajectories) {
            for (int t = 0; t < horizon; ++t) {
                auto shared = shared_props_at(traj, t);
                int n = 0;
                for (const auto& p : shared) {
                    if (p.kind == kind) ++n;
                }
                series[t] += static_cast<double>(n) / denom;
            }
        }
        for (double& v : series) v /= static_cast<double>(trajectories.size());
        out.series[kind] = std::move(series);
    }
    return out;
}

}  // namespace weights_metrics

}  // namespace icr
