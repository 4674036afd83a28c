#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "icr/agents.hpp"
#include "icr/envs.hpp"

using namespace icr;

namespace {

/// Verbatim-adoption reward delta for one participant: what the suggestion
/// does to their turn reward if folded into their current behavior.
double adoption_delta_wason(const DialogueState& state, int pid,
                            const WasonSuggestion& suggestion) {
    auto stances = wason_view::stance_state(state, pid);
    const auto& inst = std::get<wason::WasonInstance>(state.task_instance);
    double before = 0.0;
    auto it = stances.find(suggestion.face);
    if (it != stances.end()) before = wason::proxy_reward(suggestion.face, it->second);
    double after = wason::proxy_reward(suggestion.face, suggestion.stance);
    (void)inst;
    return after - before;
}

}  // namespace

TEST_CASE("mixture validation") {
    QualityMixture mix;
    mix.validate();
    QualityMixture bad{0.5, 0.5, 0.5};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("mixture draw frequencies converge to the configured weights") {
    QualityMixture mix;  // 0.5 / 0.25 / 0.25
    RandomStream rng(404);
    int counts[3] = {0, 0, 0};
    const int n = 20000;
    for (int i = 0; i < n; ++i) counts[static_cast<int>(mix.draw(rng))]++;
    CHECK(std::abs(counts[0] / double(n) - 0.5) < 0.02);
    CHECK(std::abs(counts[1] / double(n) - 0.25) < 0.02);
    CHECK(std::abs(counts[2] / double(n) - 0.25) < 0.02);
}

TEST_CASE("helpful raises and misleading lowers the adopter's reward (wason)") {
    WasonEnv env;
    QualityMixture mix;
    ScriptedIntervener intervener(mix);
    ExpertCollaborator collaborator(0.15);
    RandomStream inst_rng(5), int_rng(6), col_rng(7);

    for (int episode = 0; episode < 40; ++episode) {
        DialogueState state = initial_state(env.sample_instance(inst_rng), 3);
        for (int t = 0; t < 15; ++t) {
            InterventionAction iv = intervener.propose(state, int_rng);
            iv.turn = t;
            const auto& suggestion = std::get<WasonSuggestion>(iv.payload);
            for (const auto& p : state.participants) {
                double delta = adoption_delta_wason(state, p.index, suggestion);
                if (iv.quality_tag == Quality::Helpful) CHECK(delta > 0.0);
                if (iv.quality_tag == Quality::Misleading) CHECK(delta < 0.0);
            }
            state = step(state, iv, collaborator.respond(state, iv, col_rng));
        }
    }
}

TEST_CASE("helpful raises and misleading lowers the adopter's reward (weights)") {
    WeightsEnv env;
    QualityMixture mix;
    ScriptedIntervener intervener(mix);
    ExpertCollaborator collaborator(0.15);
    RandomStream inst_rng(15), int_rng(16), col_rng(17);

    for (int episode = 0; episode < 40; ++episode) {
        DialogueState state = initial_state(env.sample_instance(inst_rng), 3);
        const auto& truth = std::get<weights::BlockWeights>(state.task_instance);
        for (int t = 0; t < 15; ++t) {
            InterventionAction iv = intervener.propose(state, int_rng);
            iv.turn = t;
            const auto& suggestion = std::get<WeightsSuggestion>(iv.payload);
            // adopting = asserting the suggestion instead of abstaining
            double delta = weights::proposition_true(suggestion.prop, truth) ? 1.0 : -1.0;
            if (iv.quality_tag == Quality::Helpful) CHECK(delta > 0.0);
            if (iv.quality_tag == Quality::Misleading) CHECK(delta < 0.0);
            state = step(state, iv, collaborator.respond(state, iv, col_rng));
        }
    }
}

TEST_CASE("noise-free wason expert is turn-optimal by enumeration") {
    WasonEnv env;
    QualityMixture mix;
    ScriptedIntervener intervener(mix);
    ExpertCollaborator expert(0.0);
    RandomStream inst_rng(25), int_rng(26), col_rng(27);

    DialogueState state = initial_state(env.sample_instance(inst_rng), 3);
    const auto& inst = std::get<wason::WasonInstance>(state.task_instance);
    for (int t = 0; t < 15; ++t) {
        InterventionAction iv = intervener.propose(state, int_rng);
        iv.turn = t;
        CollaboratorAction act = expert.respond(state, iv, col_rng);
        for (const auto& [pid, move] : act.per_participant) {
            double got = wason::turn_reward(std::get<wason::StanceAction>(move), inst);
            // enumerate all 4^4 stance maps (omission/support/oppose/unsure)
            double best = -1e9;
            for (int mask = 0; mask < 256; ++mask) {
                wason::StanceAction candidate;
                int m = mask;
                for (char f : inst.faces) {
                    int choice = m % 4;
                    m /= 4;
                    if (choice > 0) {
                        candidate.stances[f] = static_cast<wason::Stance>(choice - 1);
                    }
                }
                best = std::max(best, wason::turn_reward(candidate, inst));
            }
            CHECK(got == doctest::Approx(best));
        }
        state = step(state, iv, act);
    }
}

TEST_CASE("noise-free weights expert matches the greedy oracle per turn") {
    WeightsEnv env;
    QualityMixture mix;
    ScriptedIntervener intervener(mix);
    ExpertCollaborator expert(0.0);
    RandomStream inst_rng(35), int_rng(36), col_rng(37);

    DialogueState state = initial_state(env.sample_instance(inst_rng), 3);
    for (int t = 0; t < 15; ++t) {
        InterventionAction iv = intervener.propose(state, int_rng);
        iv.turn = t;
        CollaboratorAction act = expert.respond(state, iv, col_rng);
        for (const auto& [pid, move] : act.per_participant) {
            // greedy oracle: the best single move is asserting any true
            // proposition (reward 2 = format + correctness)
            CHECK(env.move_reward(state, pid, move) == doctest::Approx(2.0));
        }
        state = step(state, iv, act);
    }
}

TEST_CASE("forced noise adopts the bad suggestion") {
    // noise = 1 always errs: a misleading suggestion gets adopted verbatim
    auto inst = wason::WasonInstance::make({'U', 'S', '8', '9'});
    DialogueState state = initial_state(inst, 1);
    InterventionAction iv;
    iv.payload = WasonSuggestion{'8', wason::Stance::Support};
    iv.quality_tag = Quality::Misleading;
    iv.turn = 0;
    ExpertCollaborator saboteur(1.0);
    RandomStream rng(1);
    CollaboratorAction act = saboteur.respond(state, iv, rng);
    const auto& sa = std::get<wason::StanceAction>(act.per_participant.at(0));
    CHECK(sa.stances.at('8') == wason::Stance::Support);

    // and at noise 0 the same suggestion is rejected
    ExpertCollaborator expert(0.0);
    CollaboratorAction good = expert.respond(state, iv, rng);
    const auto& ga = std::get<wason::StanceAction>(good.per_participant.at(0));
    CHECK(ga.stances.at('8') == wason::Stance::Oppose);
}

TEST_CASE("expert dataset has dialogues x horizon records and is deterministic") {
    WasonEnv env;
    QualityMixture mix;
    ExpertDataset a = collect_expert_dataset(env, mix, 10, 15, 77);
    CHECK(a.records.size() == 10 * 15);
    ExpertDataset b = collect_expert_dataset(env, mix, 10, 15, 77);
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        CHECK(expert_record_to_jsonl(a.records[i]) == expert_record_to_jsonl(b.records[i]));
    }
    // split tags are disjoint and both present
    CHECK(!a.split_view("train").empty());
    CHECK(!a.split_view("eval").empty());
    CHECK(a.split_view("train").size() + a.split_view("eval").size() == a.records.size());

    ExpertDataset tiny = collect_expert_dataset(env, mix, 1, 1, 5);
    CHECK(tiny.records.size() == 1);
}

TEST_CASE("expert records survive the JSONL round trip") {
    WeightsEnv env;
    QualityMixture mix;
    ExpertDataset ds = collect_expert_dataset(env, mix, 2, 5, 123);
    for (const auto& rec : ds.records) {
        std::string line = expert_record_to_jsonl(rec);
        ExpertRecord parsed = expert_record_from_jsonl(line);
        CHECK(expert_record_to_jsonl(parsed) == line);
    }
}

TEST_CASE("intervention payloads reference existing entities only") {
    WasonEnv wason_env;
    WeightsEnv weights_env;
    QualityMixture mix;
    ScriptedIntervener intervener(mix);
    ExpertCollaborator expert(0.2);

    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        Trajectory tw = run_episode(wason_env, intervener, expert, 15, seed);
        const auto& inst = std::get<wason::WasonInstance>(tw.task_instance);
        for (const auto& rec : tw.turns) {
            CHECK(inst.has_face(std::get<WasonSuggestion>(rec.intervention.payload).face));
        }
        Trajectory tb = run_episode(weights_env, intervener, expert, 15, seed);
        for (const auto& rec : tb.turns) {
            const auto& prop = std::get<WeightsSuggestion>(rec.intervention.payload).prop;
            CHECK(weights::is_known_entity(prop.lhs));
            CHECK(weights::is_known_entity(prop.rhs));
        }
    }
}
