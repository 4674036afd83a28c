#pragma once

#include <string>
#include <vector>

#include "icr/common.hpp"

namespace icr::theory {

/// Enumerable MDP small enough for exact solves.
struct TinyMDP {
    int n_states = 0;
    int n_actions = 0;
    std::vector<std::vector<std::vector<double>>> transition;  // P[s][a][s']
    std::vector<std::vector<double>> reward;                   // R[s][a]
    double gamma = 0.9;
    std::vector<double> initial;  // start distribution over states

    void validate() const;
    static TinyMDP random(int n_states, int n_actions, double gamma, RandomStream& rng);
};

struct SoftQTable {
    std::vector<std::vector<double>> q;  // Q[s][a]
    double beta = 1.0;

    std::vector<double> values() const;  // V(s) = beta * logsumexp(Q(s,.)/beta)
};

/// Fixed point of Q = R + gamma * E[V] with the soft (logsumexp) backup.
SoftQTable soft_value_iteration(const TinyMDP& mdp, double beta, double tol = 1e-10,
                                int max_iter = 100000);

/// Hard-max value iteration; the beta -> 0 oracle.
std::vector<std::vector<double>> hard_value_iteration(const TinyMDP& mdp, double tol = 1e-12,
                                                      int max_iter = 1000000);

/// pi(a|s) proportional to exp(Q(s,a)/beta).
std::vector<std::vector<double>> softmax_policy_from_q(const SoftQTable& q);

/// Verifies that beta*(log pi(a|s) - log uniform) + c(s) reproduces Q up to a
/// per-state constant; returns the max absolute deviation.
double consistency_check(const std::vector<std::vector<double>>& pi, const SoftQTable& q);

/// Exact policy evaluation in the plain MDP; returns V[s].
std::vector<double> evaluate_policy_mdp(const std::vector<std::vector<double>>& pi,
                                        const TinyMDP& mdp);

/// Both sides of the performance difference identity
/// J(pi) - J(pi') = 1/(1-gamma) E_{d^pi}[E_{a~pi}[A^{pi'}]]; returns |lhs-rhs|.
double performance_difference_check(const std::vector<std::vector<double>>& pi,
                                    const std::vector<std::vector<double>>& pi_prime,
                                    const TinyMDP& mdp);

// ---------------------------------------------------------------------------
// Modified-action MDP
// ---------------------------------------------------------------------------

/// MDP plus an intervention channel: the observed state is (s, z) where z is
/// drawn from the intervention policy, and the influence map may replace the
/// intended action before execution. The last z index (n_interventions) is a
/// reserved counterfactual view used only for divergence measurement.
struct TinyMAMDP {
    TinyMDP mdp;
    int n_interventions = 0;
    std::vector<std::vector<double>> intervention_policy;  // pi_I[s][z]
    // influence[s][z][intended][executed]
    std::vector<std::vector<std::vector<std::vector<double>>>> influence;
    // optional z-dependent reward override [s][z][executed]; empty -> use mdp.reward
    std::vector<std::vector<std::vector<double>>> reward_override;

    double reward(int s, int z, int executed) const;
    void validate() const;
};

/// Policy over observed states; pi[s][z][a] with z in [0, n_interventions]
/// (the extra column is the counterfactual view).
using MamdpPolicy = std::vector<std::vector<std::vector<double>>>;

MamdpPolicy uniform_mamdp_policy(const TinyMAMDP& m);
/// Lifts a z-blind MDP policy to the observed state space (same row for every
/// z, including the counterfactual column).
MamdpPolicy lift_blind_policy(const TinyMAMDP& m, const std::vector<std::vector<double>>& pi);

/// Exact value of a policy in the MAMDP (linear solve, no sampling).
double evaluate_policy_mamdp(const MamdpPolicy& pi, const TinyMAMDP& m);

struct OptimalMamdp {
    MamdpPolicy policy;  // deterministic argmax policy
    double value = 0.0;
    std::vector<std::vector<std::vector<double>>> q;  // Q[s][z][a]
};

/// Value iteration on the observed state space with the nested intervention
/// expectation.
OptimalMamdp optimal_mamdp_policy(const TinyMAMDP& m, double tol = 1e-12,
                                  int max_iter = 1000000);

/// Best achievable value among policies that ignore z entirely, and the value
/// of the underlying-MDP-optimal policy deployed z-blind.
double evaluate_blind_underlying_optimum(const TinyMAMDP& m);

struct Counterexample {
    TinyMAMDP mamdp;
    double optimal_value = 0.0;   // J*
    double standard_value = 0.0;  // J of the underlying-optimal z-blind policy
    double gap = 0.0;             // J* - J(pi_std) > 0
};

/// Instance where the intervention symbol is an advance warning of action
/// corruption: ignoring its meaning is provably costly.
Counterexample suboptimality_counterexample();
/// Escape clauses: the same construction with trivial influence and with the
/// corruption priced into the reward. Both must close the gap to zero.
Counterexample counterexample_identity_influence();
Counterexample counterexample_internalized_reward();

// ---------------------------------------------------------------------------
// Counterfactual-invariance training on the tiny MAMDP
// ---------------------------------------------------------------------------

struct TabularTrainResult {
    MamdpPolicy policy;
    double value = 0.0;      // exact J in the MAMDP
    double delta_cf = 0.0;   // on-policy mean KL to the counterfactual column
    double eps_task = 0.0;   // soft-Bellman residual (see verify_bound)
};

/// Exact-gradient ascent on J minus lambda_intent times the divergence from
/// the frozen counterfactual column; the desk-scale analog of the big
/// trainers, used to build policy families for the bound check.
TabularTrainResult train_tabular_invariance(const TinyMAMDP& m, double lambda_intent,
                                            std::uint64_t seed, int iters = 400,
                                            double lr = 0.5, double beta = 1.0);

/// On-policy counterfactual divergence of an arbitrary tabular policy.
double tabular_cf_divergence(const MamdpPolicy& pi, const TinyMAMDP& m);

/// The zero-regularization limit of the sweep: the exact soft-optimal policy
/// of the MAMDP with its intervention-marginal as the counterfactual view.
/// Its task residual vanishes by construction while its gap stays positive,
/// so it anchors the divergence coefficient of the bound fit.
TabularTrainResult soft_optimal_member(const TinyMAMDP& m, double beta = 1.0);

/// Soft-optimality residual of a policy in the MAMDP: the sup-norm soft-
/// Bellman residual of Q implied by beta*log pi anchored at optimal values.
double task_residual(const MamdpPolicy& pi, const TinyMAMDP& m, double beta = 1.0);

struct BoundMember {
    double lambda = 0.0;
    std::uint64_t seed = 0;
    double gap = 0.0;
    double delta_cf = 0.0;
    double eps_task = 0.0;
};

struct BoundReport {
    std::vector<BoundMember> members;
    double fitted_c = 0.0;
    double bound_constant = 0.0;  // 2*gamma*Rmax/(1-gamma)^2
    bool holds_on_held_out = false;
    double worst_slack = 0.0;  // min over held-out of rhs - gap
    bool qualitative_monotone = true;
};

/// Fits the minimal constant on the first half of the family and checks the
/// bound gap <= K*(eps + C*delta) on the second half.
BoundReport verify_bound(const std::vector<BoundMember>& family, const TinyMAMDP& m);

// ---------------------------------------------------------------------------
// Factored-action grouping
// ---------------------------------------------------------------------------

struct FactoredMDP {
    int n_states = 0;
    int n_first = 0;
    int n_second = 0;
    // reward[s][a1][a2], transition[s][a1][a2][s']
    std::vector<std::vector<std::vector<double>>> reward;
    std::vector<std::vector<std::vector<std::vector<double>>>> transition;
    double gamma = 0.9;

    static FactoredMDP random(int n_states, int n_first, int n_second, double gamma,
                              RandomStream& rng);
};

/// Solves the turn-level (joint-action) soft MDP and the sub-action
/// (two-stage) soft MDP; returns the sup-norm difference between their state
/// values. Grouping sub-actions must not change anything.
double grouping_residual(const FactoredMDP& mdp, double beta, double tol = 1e-12);

}  // namespace icr::theory
