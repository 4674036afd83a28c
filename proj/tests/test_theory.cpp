#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "icr/theory.hpp"

using namespace icr;
using namespace icr::theory;

TEST_CASE("single state single action closed form") {
    TinyMDP mdp;
    mdp.n_states = 1;
    mdp.n_actions = 1;
    mdp.gamma = 0.5;
    mdp.transition = {{{1.0}}};
    mdp.reward = {{1.0}};
    mdp.initial = {1.0};
    auto q = soft_value_iteration(mdp, 1.0);
    // V = Q with a single action, so Q = 1 + 0.5 Q => Q = 2
    CHECK(q.q[0][0] == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("small beta recovers hard value iteration") {
    RandomStream rng(71);
    for (int i = 0; i < 20; ++i) {
        auto mdp = TinyMDP::random(4, 3, 0.8, rng);
        auto soft = soft_value_iteration(mdp, 1e-8, 1e-12);
        auto hard = hard_value_iteration(mdp);
        for (int s = 0; s < mdp.n_states; ++s) {
            for (int a = 0; a < mdp.n_actions; ++a) {
                CHECK(std::abs(soft.q[s][a] - hard[s][a]) < 1e-6);
            }
        }
    }
}

TEST_CASE("symmetric actions get equal soft values") {
    TinyMDP mdp;
    mdp.n_states = 2;
    mdp.n_actions = 2;
    mdp.gamma = 0.9;
    mdp.transition = {{{0.5, 0.5}, {0.5, 0.5}}, {{1.0, 0.0}, {1.0, 0.0}}};
    mdp.reward = {{0.3, 0.3}, {-0.1, -0.1}};
    mdp.initial = {1.0, 0.0};
    auto q = soft_value_iteration(mdp, 0.7);
    CHECK(q.q[0][0] == doctest::Approx(q.q[0][1]).epsilon(1e-10));
    CHECK(q.q[1][0] == doctest::Approx(q.q[1][1]).epsilon(1e-10));
}

TEST_CASE("softmax policy round-trips Q up to per-state constants") {
    RandomStream rng(81);
    for (int i = 0; i < 100; ++i) {
        int ns = 2 + static_cast<int>(rng.next_below(7));
        int na = 2 + static_cast<int>(rng.next_below(4));
        auto mdp = TinyMDP::random(ns, na, 0.85, rng);
        auto q = soft_value_iteration(mdp, 0.5 + rng.next_double());
        auto pi = softmax_policy_from_q(q);
        CHECK(consistency_check(pi, q) < 1e-9);
    }
}

TEST_CASE("uniform Q row gives uniform policy and shift invariance") {
    SoftQTable q;
    q.beta = 0.7;
    q.q = {{1.5, 1.5, 1.5}};
    auto pi = softmax_policy_from_q(q);
    for (double p : pi[0]) CHECK(p == doctest::Approx(1.0 / 3.0));

    SoftQTable shifted = q;
    for (double& v : shifted.q[0]) v += 3.25;
    auto pi2 = softmax_policy_from_q(shifted);
    for (int a = 0; a < 3; ++a) CHECK(pi[0][a] == doctest::Approx(pi2[0][a]));
}

TEST_CASE("mamdp evaluation reduces to the mdp under identity influence") {
    RandomStream rng(91);
    for (int i = 0; i < 10; ++i) {
        auto mdp = TinyMDP::random(4, 3, 0.9, rng);
        TinyMAMDP m;
        m.mdp = mdp;
        m.n_interventions = 2;
        m.intervention_policy.assign(4, {0.3, 0.7});
        std::vector<std::vector<double>> eye(3, std::vector<double>(3, 0.0));
        for (int a = 0; a < 3; ++a) eye[a][a] = 1.0;
        m.influence.assign(4, std::vector<std::vector<std::vector<double>>>(2, eye));

        auto q = soft_value_iteration(mdp, 0.8);
        auto pi = softmax_policy_from_q(q);
        auto v = evaluate_policy_mdp(pi, mdp);
        double j_mdp = 0.0;
        for (int s = 0; s < 4; ++s) j_mdp += mdp.initial[s] * v[s];

        double j_mamdp = evaluate_policy_mamdp(lift_blind_policy(m, pi), m);
        CHECK(j_mamdp == doctest::Approx(j_mdp).epsilon(1e-9));
    }
}

TEST_CASE("zero reward means zero value") {
    RandomStream rng(101);
    auto mdp = TinyMDP::random(3, 2, 0.9, rng);
    for (auto& row : mdp.reward) {
        for (double& r : row) r = 0.0;
    }
    TinyMAMDP m;
    m.mdp = mdp;
    m.n_interventions = 1;
    m.intervention_policy.assign(3, {1.0});
    std::vector<std::vector<double>> eye(2, std::vector<double>(2, 0.0));
    eye[0][0] = eye[1][1] = 1.0;
    m.influence.assign(3, std::vector<std::vector<std::vector<double>>>(1, eye));
    CHECK(evaluate_policy_mamdp(uniform_mamdp_policy(m), m) == doctest::Approx(0.0));
}

TEST_CASE("mamdp evaluation matches a Monte-Carlo rollout oracle") {
    RandomStream rng(111);
    auto mdp = TinyMDP::random(4, 2, 0.9, rng);
    TinyMAMDP m;
    m.mdp = mdp;
    m.n_interventions = 2;
    m.intervention_policy.assign(4, {0.5, 0.5});
    // z=1 swaps the two actions
    std::vector<std::vector<double>> eye = {{1.0, 0.0}, {0.0, 1.0}};
    std::vector<std::vector<double>> swap = {{0.0, 1.0}, {1.0, 0.0}};
    m.influence.assign(4, {eye, swap});

    MamdpPolicy pi = uniform_mamdp_policy(m);
    pi[2][1] = {0.9, 0.1};  // some z-dependence
    double exact = evaluate_policy_mamdp(pi, m);

    RandomStream sim(222);
    const int n_rollouts = 1000000;
    const int depth = 180;  // gamma^180 is negligible
    double total = 0.0, total_sq = 0.0;
    for (int k = 0; k < n_rollouts; ++k) {
        // sample the start state
        double r = sim.next_double();
        int s = 0;
        double acc = 0.0;
        for (int t = 0; t < 4; ++t) {
            acc += m.mdp.initial[t];
            if (r < acc) {
                s = t;
                break;
            }
        }
        double ret = 0.0, discount = 1.0;
        for (int t = 0; t < depth; ++t) {
            int z = sim.next_double() < m.intervention_policy[s][0] ? 0 : 1;
            double ra = sim.next_double();
            int a = 0;
            double pa = 0.0;
            for (int c = 0; c < 2; ++c) {
                pa += pi[s][z][c];
                if (ra < pa) {
                    a = c;
                    break;
                }
            }
            int e = sim.next_double() < m.influence[s][z][a][0] ? 0 : 1;
            ret += discount * m.mdp.reward[s][e];
            discount *= m.mdp.gamma;
            double rt = sim.next_double();
            double pt = 0.0;
            int ns = 0;
            for (int t2 = 0; t2 < 4; ++t2) {
                pt += m.mdp.transition[s][e][t2];
                if (rt < pt) {
                    ns = t2;
                    break;
                }
            }
            s = ns;
        }
        total += ret;
        total_sq += ret * ret;
    }
    double mean = total / n_rollouts;
    double var = (total_sq - n_rollouts * mean * mean) / (n_rollouts - 1);
    double stderr = std::sqrt(var / n_rollouts);
    CHECK(std::abs(mean - exact) < 3.0 * stderr + 1e-6);
}

TEST_CASE("myopic limit equals the best single-step reward") {
    auto counter = suboptimality_counterexample();
    TinyMAMDP m = counter.mamdp;
    m.mdp.gamma = 1e-9;
    auto opt = optimal_mamdp_policy(m);
    // z0 -> a0 pays 1, z1 -> a2 pays 0.5; uniform mix = 0.75
    CHECK(opt.value == doctest::Approx(0.75).epsilon(1e-6));
}

TEST_CASE("the warning counterexample has the exact enumerated gap") {
    auto counter = suboptimality_counterexample();
    // enumeration oracle: all 9 deterministic policies over (z0, z1)
    double best = -1e18;
    double blind_best = -1e18;
    for (int a0 = 0; a0 < 3; ++a0) {
        for (int a1 = 0; a1 < 3; ++a1) {
            MamdpPolicy pi = uniform_mamdp_policy(counter.mamdp);
            pi[0][0] = {0.0, 0.0, 0.0};
            pi[0][1] = {0.0, 0.0, 0.0};
            pi[0][0][a0] = 1.0;
            pi[0][1][a1] = 1.0;
            double j = evaluate_policy_mamdp(pi, counter.mamdp);
            best = std::max(best, j);
            if (a0 == a1) blind_best = std::max(blind_best, j);
        }
    }
    CHECK(counter.optimal_value == doctest::Approx(best).epsilon(1e-9));
    CHECK(counter.gap > 0.0);
    // pinned regression values: J* = 7.5, J(std) = 5.0 at gamma = 0.9
    CHECK(counter.optimal_value == doctest::Approx(7.5).epsilon(1e-9));
    CHECK(counter.standard_value == doctest::Approx(5.0).epsilon(1e-9));
    CHECK(counter.gap == doctest::Approx(2.5).epsilon(1e-9));
    // and the optimum dominates every deterministic policy
    for (int a0 = 0; a0 < 3; ++a0) {
        for (int a1 = 0; a1 < 3; ++a1) {
            MamdpPolicy pi = uniform_mamdp_policy(counter.mamdp);
            pi[0][0].assign(3, 0.0);
            pi[0][1].assign(3, 0.0);
            pi[0][0][a0] = 1.0;
            pi[0][1][a1] = 1.0;
            CHECK(counter.optimal_value >=
                  evaluate_policy_mamdp(pi, counter.mamdp) - 1e-9);
        }
    }
}

TEST_CASE("escape clauses close the gap") {
    auto identity = counterexample_identity_influence();
    CHECK(std::abs(identity.gap) < 1e-9);
    auto internalized = counterexample_internalized_reward();
    CHECK(std::abs(internalized.gap) < 1e-9);
}

TEST_CASE("performance difference identity holds exactly") {
    RandomStream rng(131);
    for (int i = 0; i < 100; ++i) {
        auto mdp = TinyMDP::random(5, 3, 0.9, rng);
        auto qa = soft_value_iteration(mdp, 0.4 + rng.next_double());
        auto qb = soft_value_iteration(mdp, 0.4 + rng.next_double());
        auto pa = softmax_policy_from_q(qa);
        auto pb = softmax_policy_from_q(qb);
        CHECK(performance_difference_check(pa, pb, mdp) < 1e-9);
        CHECK(performance_difference_check(pa, pa, mdp) < 1e-12);
    }
}

TEST_CASE("grouping sub-actions preserves soft values") {
    RandomStream rng(141);
    for (int i = 0; i < 20; ++i) {
        auto mdp = FactoredMDP::random(2 + static_cast<int>(rng.next_below(3)),
                                       2 + static_cast<int>(rng.next_below(2)),
                                       2 + static_cast<int>(rng.next_below(2)), 0.9, rng);
        CHECK(grouping_residual(mdp, 0.8) < 1e-9);
    }
}

TEST_CASE("invariance training: divergence decreases in lambda, values respond") {
    auto counter = suboptimality_counterexample();
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        double prev_delta = std::numeric_limits<double>::infinity();
        for (double lambda : {0.01, 0.2, 1.0}) {
            auto result = train_tabular_invariance(counter.mamdp, lambda, seed);
            CHECK(result.delta_cf < prev_delta);
            prev_delta = result.delta_cf;
            CHECK(result.delta_cf >= 0.0);
            CHECK(result.value <= counter.optimal_value + 1e-9);
        }
    }
}

TEST_CASE("bound verification fits a positive constant and holds held-out") {
    auto counter = suboptimality_counterexample();
    std::vector<BoundMember> family;
    // the zero-regularization limit anchors the divergence coefficient: its
    // task residual is zero by construction while its gap stays positive
    auto anchor = soft_optimal_member(counter.mamdp);
    CHECK(anchor.eps_task < 1e-9);
    CHECK(anchor.delta_cf > 0.0);
    CHECK(counter.optimal_value - anchor.value > 0.0);
    family.push_back(
        {0.0, 0, counter.optimal_value - anchor.value, anchor.delta_cf, anchor.eps_task});
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        for (double lambda : {0.01, 0.2, 1.0}) {
            auto trained = train_tabular_invariance(counter.mamdp, lambda, seed);
            family.push_back({lambda, seed, counter.optimal_value - trained.value,
                              trained.delta_cf, trained.eps_task});
        }
    }
    auto report = verify_bound(family, counter.mamdp);
    CHECK(report.fitted_c > 0.0);
    CHECK(std::isfinite(report.fitted_c));
    CHECK(report.holds_on_held_out);
}

TEST_CASE("non-stochastic inputs are rejected") {
    TinyMDP mdp;
    mdp.n_states = 1;
    mdp.n_actions = 1;
    mdp.gamma = 0.9;
    mdp.transition = {{{0.7}}};
    mdp.reward = {{0.0}};
    mdp.initial = {1.0};
    CHECK_THROWS(soft_value_iteration(mdp, 1.0));
}
