#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "icr/agents.hpp"
#include "icr/envs.hpp"
#include "icr/metrics.hpp"

using namespace icr;

namespace {

DialogueState wason_state() {
    return initial_state(wason::WasonInstance::make({'U', 'S', '8', '9'}), 3);
}

InterventionAction wason_intervention(int turn) {
    InterventionAction a;
    a.payload = WasonSuggestion{'U', wason::Stance::Support};
    a.quality_tag = Quality::Helpful;
    a.turn = turn;
    return a;
}

CollaboratorAction all_respond(const DialogueState& state, wason::Stance stance) {
    CollaboratorAction act;
    for (const auto& p : state.participants) {
        wason::StanceAction sa;
        sa.stances['U'] = stance;
        act.per_participant[p.index] = sa;
    }
    return act;
}

}  // namespace

TEST_CASE("step appends and preserves the input state") {
    DialogueState s0 = wason_state();
    DialogueState s1 = step(s0, wason_intervention(0), all_respond(s0, wason::Stance::Support));
    CHECK(s1.turn_index == 1);
    CHECK(s1.history.size() == 1);
    CHECK(s0.turn_index == 0);
    CHECK(s0.history.empty());
}

TEST_CASE("step rejects turn and participant mismatches") {
    DialogueState s0 = wason_state();
    CHECK_THROWS_AS(step(s0, wason_intervention(3), all_respond(s0, wason::Stance::Support)),
                    TurnMismatch);

    CollaboratorAction missing = all_respond(s0, wason::Stance::Support);
    missing.per_participant.erase(2);
    CHECK_THROWS_AS(step(s0, wason_intervention(0), missing), ParticipantMismatch);
}

TEST_CASE("fifteen steps reach the default terminal turn") {
    DialogueState s = wason_state();
    for (int t = 0; t < 15; ++t) {
        s = step(s, wason_intervention(t), all_respond(s, wason::Stance::Support));
    }
    CHECK(s.turn_index == 15);
}

TEST_CASE("episodes are deterministic and exactly horizon turns") {
    WasonEnv env;
    QualityMixture mix;
    for (std::uint64_t seed : {7ull, 99ull}) {
        ScriptedIntervener i1(mix), i2(mix);
        ExpertCollaborator c1(0.1), c2(0.1);
        Trajectory a = run_episode(env, i1, c1, 15, seed);
        Trajectory b = run_episode(env, i2, c2, 15, seed);
        CHECK(a.turns.size() == 15);
        CHECK(trajectory_to_jsonl(a) == trajectory_to_jsonl(b));
    }
}

TEST_CASE("weights episodes serialize deterministically too") {
    WeightsEnv env;
    QualityMixture mix;
    ScriptedIntervener i1(mix), i2(mix);
    ExpertCollaborator c1(0.1), c2(0.1);
    Trajectory a = run_episode(env, i1, c1, 15, 42);
    Trajectory b = run_episode(env, i2, c2, 15, 42);
    CHECK(trajectory_to_jsonl(a) == trajectory_to_jsonl(b));
}

TEST_CASE("single-turn episode submission equals the turn-0 projection") {
    WasonEnv env;
    QualityMixture mix;
    ScriptedIntervener intervener(mix);
    ExpertCollaborator collaborator(0.0);
    Trajectory traj = run_episode(env, intervener, collaborator, 1, 5);
    REQUIRE(traj.turns.size() == 1);

    DialogueState s = initial_state(traj.task_instance, 3);
    s = step(s, traj.turns[0].intervention, traj.turns[0].actions);
    auto expected = wason_view::majority_support(s);
    CHECK(std::get<WasonSubmission>(traj.final_submission).cards == expected);
}

TEST_CASE("noise-free expert with helpful-only intervener is perfect on weights") {
    WeightsEnv env;
    QualityMixture mix;
    mix.p_helpful = 1.0;
    mix.p_misleading = 0.0;
    mix.p_irrelevant = 0.0;
    ScriptedIntervener intervener(mix);
    ExpertCollaborator collaborator(0.0);
    Trajectory traj = run_episode(env, intervener, collaborator, 15, 11);
    const auto& truth = std::get<weights::BlockWeights>(traj.task_instance);
    // every asserted proposition across the whole dialogue is true
    for (const auto& rec : traj.turns) {
        for (const auto& [pid, move] : rec.actions.per_participant) {
            const auto& pa = std::get<weights::PropositionAction>(move);
            REQUIRE(pa.assertion.has_value());
            CHECK(weights::proposition_true(*pa.assertion, truth));
        }
    }
}

TEST_CASE("folding step over a trajectory reproduces the recorded state hashes") {
    WasonEnv env;
    QualityMixture mix;
    ScriptedIntervener intervener(mix);
    ExpertCollaborator collaborator(0.1);
    Trajectory traj = run_episode(env, intervener, collaborator, 15, 123);

    DialogueState s = initial_state(traj.task_instance, 3);
    for (const auto& rec : traj.turns) {
        s = step(s, rec.intervention, rec.actions);
        CHECK(s.content_hash() == rec.state_hash);
    }
}

TEST_CASE("trajectory JSONL round-trips and rejects unknown fields") {
    WeightsEnv env;
    QualityMixture mix;
    ScriptedIntervener intervener(mix);
    ExpertCollaborator collaborator(0.1);
    Trajectory traj = run_episode(env, intervener, collaborator, 15, 9);
    traj.metrics["acc"] = 3.0;

    std::string line = trajectory_to_jsonl(traj);
    Trajectory parsed = trajectory_from_jsonl(line);
    CHECK(trajectory_to_jsonl(parsed) == line);

    std::string corrupted = line;
    corrupted.insert(corrupted.size() - 1, ",\"surprise\":1");
    CHECK_THROWS(trajectory_from_jsonl(corrupted));
}

TEST_CASE("wason cg gain counts frameworks beyond turn 0") {
    auto inst = wason::WasonInstance::make({'U', 'S', '8', '9'});
    DialogueState s = initial_state(inst, 1);

    auto respond_with = [&](std::map<char, wason::Stance> stances) {
        CollaboratorAction act;
        wason::StanceAction sa;
        sa.stances = std::move(stances);
        act.per_participant[0] = sa;
        return act;
    };

    Trajectory traj;
    traj.task = "wason";
    traj.task_instance = inst;

    // turn 0: support U only -> {Vowel}; later turns add 9 -> {Vowel, Odd}
    InterventionAction i0 = {WasonSuggestion{'U', wason::Stance::Support}, Quality::Helpful, 0};
    TurnRecord r0{i0, respond_with({{'U', wason::Stance::Support}}), {{0, 1.0}}, 0};
    InterventionAction i1 = {WasonSuggestion{'9', wason::Stance::Support}, Quality::Helpful, 1};
    TurnRecord r1{i1,
                  respond_with({{'U', wason::Stance::Support}, {'9', wason::Stance::Support}}),
                  {{0, 2.0}},
                  0};
    traj.turns = {r0, r1};
    traj.horizon = 2;
    traj.final_submission = WasonSubmission{{'U', '9'}};

    CHECK(wason_metrics::cg_gain(traj) == doctest::Approx(1.0));

    // no new frameworks after turn 0
    Trajectory flat = traj;
    flat.turns[1] = r0;
    flat.turns[1].intervention.turn = 1;
    CHECK(wason_metrics::cg_gain(flat) == doctest::Approx(0.0));
}

TEST_CASE("weights cg metrics count shared propositions") {
    auto truth = weights::BlockWeights::standard();
    DialogueState s = initial_state(truth, 2);

    auto assert_prop = [&](std::optional<weights::Proposition> a,
                           std::optional<weights::Proposition> b) {
        CollaboratorAction act;
        act.per_participant[0] = weights::PropositionAction{a};
        act.per_participant[1] = weights::PropositionAction{b};
        return act;
    };
    auto red10 = weights::Proposition::equality("red", "10g");
    auto green20 = weights::Proposition::equality("green", "20g");

    Trajectory traj;
    traj.task = "weights";
    traj.task_instance = truth;
    InterventionAction iv = {WeightsSuggestion{red10}, Quality::Irrelevant, 0};

    // turn 0: both assert red=10g (shared from the start); turn 1: only one
    // asserts green=20g; turn 2: the other catches up
    traj.turns.push_back({iv, assert_prop(red10, red10), {{0, 2.0}, {1, 2.0}}, 0});
    traj.turns.push_back({iv, assert_prop(green20, std::nullopt), {{0, 2.0}, {1, 1.0}}, 0});
    traj.turns.push_back({iv, assert_prop(std::nullopt, green20), {{0, 1.0}, {1, 2.0}}, 0});
    for (std::size_t t = 0; t < traj.turns.size(); ++t) {
        traj.turns[t].intervention.turn = static_cast<int>(t);
    }
    traj.horizon = 3;

    CHECK(weights_metrics::shared_props_at(traj, 0).size() == 1);
    CHECK(weights_metrics::shared_props_at(traj, 1).size() == 1);
    CHECK(weights_metrics::shared_props_at(traj, 2).size() == 2);
    CHECK(weights_metrics::cg_gain(traj) == doctest::Approx(1.0));

    traj.final_submission = WeightsSubmission{{{red10, green20}, {red10, green20}}};
    auto acc = weights_metrics::final_acc(traj);
    CHECK(acc.acc == doctest::Approx(2.0));
    CHECK(acc.shared == 2);

    auto series = weights_metrics::cumulative_cg_by_relation({traj});
    const auto& eq = series.series.at(weights::RelationKind::Equality);
    REQUIRE(eq.size() == 3);
    CHECK(eq[0] == doctest::Approx(1.0 / 30.0));
    CHECK(eq[2] == doctest::Approx(2.0 / 30.0));
    // monotone nondecreasing
    for (std::size_t t = 1; t < eq.size(); ++t) CHECK(eq[t] >= eq[t - 1]);
}

TEST_CASE("cumulative cg by relation rejects wason trajectories") {
    Trajectory traj;
    traj.task = "wason";
    traj.task_instance = wason::WasonInstance::make({'U', 'S', '8', '9'});
    CHECK_THROWS_AS(weights_metrics::cumulative_cg_by_relation({traj}), WrongTask);
}

TEST_CASE("episode runner propagates failures with the failing turn") {
    struct BrokenCollaborator : CollaboratorAgent {
        CollaboratorAction respond(const DialogueState& state, const InterventionAction&,
                                   RandomStream&) override {
            if (state.turn_index < 2) {
                CollaboratorAction ok;
                for (const auto& p : state.participants) {
                    ok.per_participant[p.index] = wason::StanceAction{};
                }
                return ok;
            }
            return {};  // missing everyone -> ParticipantMismatch inside step
        }
    };
    WasonEnv env;
    QualityMixture mix;
    ScriptedIntervener intervener(mix);
    BrokenCollaborator broken;
    try {
        run_episode(env, intervener, broken, 15, 3);
        FAIL("expected EpisodeFailure");
    } catch (const EpisodeFailure& e) {
        CHECK(e.failing_turn == 2);
    }
}
