#include "icr/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace icr::theory {

namespace {

double logsumexp(const std::vector<double>& v, double beta) {
    double mx = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (double x : v) sum += std::exp((x - mx) / beta);
    return mx + beta * std::log(sum);
}

/// Solves A x = b in place by Gaussian elimination with partial pivoting.
std::vector<double> solve_linear(std::vector<std::vector<double>> a, std::vector<double> b) {
    const int n = static_cast<int>(b.size());
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        for (int r = col + 1; r < n; ++r) {
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        }
        if (std::abs(a[pivot][col]) < 1e-12) throw SingularSystem("singular linear system");
        std::swap(a[col], a[pivot]);
        std::swap(b[col], b[pivot]);
        for (int r = col + 1; r < n; ++r) {
            double f = a[r][col] / a[col][col];
            if (f == 0.0) continue;
            for (int c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n, 0.0);
    for (int r = n - 1; r >= 0; --r) {
        double acc = b[r];
        for (int c = r + 1; c < n; ++c) acc -= a[r][c] * x[c];
        x[r] = acc / a[r][r];
    }
    return x;
}

}  // namespace

void TinyMDP::validate() const {
    if (n_states < 1 || n_states > 32 || n_actions < 1 || n_actions > 16) {
        throw IcrError("TinyMDP out of supported size range");
    }
    for (int s = 0; s < n_states; ++s) {
        for (int a = 0; a < n_actions; ++a) {
            double total = 0.0;
            for (double p : transition[s][a]) {
                if (p < -1e-15) throw IcrError("negative transition probability");
                total += p;
            }
            if (std::abs(total - 1.0) > 1e-12) throw IcrError("transition row does not sum to 1");
            if (!std::isfinite(reward[s][a])) throw IcrError("non-finite reward");
        }
    }
    if (gamma <= 0.0 || gamma >= 1.0) throw IcrError("gamma must lie in (0,1)");
    double total = std::accumulate(initial.begin(), initial.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-12) throw IcrError("initial distribution does not sum to 1");
}

TinyMDP TinyMDP::random(int n_states, int n_actions, double gamma, RandomStream& rng) {
    TinyMDP mdp;
    mdp.n_states = n_states;
    mdp.n_actions = n_actions;
    mdp.gamma = gamma;
    mdp.transition.assign(n_states, std::vector<std::vector<double>>(
                                        n_actions, std::vector<double>(n_states, 0.0)));
    mdp.reward.assign(n_states, std::vector<double>(n_actions, 0.0));
    for (int s = 0; s < n_states; ++s) {
        for (int a = 0; a < n_actions; ++a) {
            double total = 0.0;
            for (int t = 0; t < n_states; ++t) {
                double w = -std::log(std::max(1e-12, rng.next_double()));
                mdp.transition[s][a][t] = w;
                total += w;
            }
            for (int t = 0; t < n_states; ++t) mdp.transition[s][a][t] /= total;
            mdp.reward[s][a] = 2.0 * rng.next_double() - 1.0;
        }
    }
    mdp.initial.assign(n_states, 1.0 / n_states);
    mdp.validate();
    return mdp;
}

std::vector<double> SoftQTable::values() const {
    std::vector<double> v;
    v.reserve(q.size());
    for (const auto& row : q) v.push_back(logsumexp(row, beta));
    return v;
}

SoftQTable soft_value_iteration(const TinyMDP& mdp, double beta, double tol, int max_iter) {
    mdp.validate();
    SoftQTable table;
    table.beta = beta;
    table.q.assign(mdp.n_states, std::vector<double>(mdp.n_actions, 0.0));
    for (int iter = 0; iter < max_iter; ++iter) {
        auto v = table.values();
        double delta = 0.0;
        for (int s = 0; s < mdp.n_states; ++s) {
            for (int a = 0; a < mdp.n_actions; ++a) {
                double ev = 0.0;
                for (int t = 0; t < mdp.n_states; ++t) ev += mdp.transition[s][a][t] * v[t];
                double next = mdp.reward[s][a] + mdp.gamma * ev;
                delta = std::max(delta, std::abs(next - table.q[s][a]));
                table.q[s][a] = next;
            }
        }
        if (delta < tol) return table;
    }
    throw NonConvergent("soft value iteration did not converge");
}

std::vector<std::vector<double>> hard_value_iteration(const TinyMDP& mdp, double tol,
                                                      int max_iter) {
    mdp.validate();
    std::vector<std::vector<double>> q(mdp.n_states, std::vector<double>(mdp.n_actions, 0.0));
    for (int iter = 0; iter < max_iter; ++iter) {
        std::vector<double> v(mdp.n_states);
        for (int s = 0; s < mdp.n_states; ++s) {
            v[s] = *std::max_element(q[s].begin(), q[s].end());
        }
        double delta = 0.0;
        for (int s = 0; s < mdp.n_states; ++s) {
            for (int a = 0; a < mdp.n_actions; ++a) {
                double ev = 0.0;
                for (int t = 0; t < mdp.n_states; ++t) ev += mdp.transition[s][a][t] * v[t];
                double next = mdp.reward[s][a] + mdp.gamma * ev;
                delta = std::max(delta, std::abs(next - q[s][a]));
                q[s][a] = next;
            }
        }
        if (delta < tol) return q;
    }
    throw NonConvergent("hard value iteration did not converge");
}

std::vector<std::vector<double>> softmax_policy_from_q(const SoftQTable& q) {
    std::vector<std::vector<double>> pi(q.q.size());
    for (std::size_t s = 0; s < q.q.size(); ++s) {
        double lse = logsumexp(q.q[s], q.beta);
        pi[s].resize(q.q[s].size());
        for (std::size_t a = 0; a < q.q[s].size(); ++a) {
            pi[s][a] = std::exp((q.q[s][a] - lse) / q.beta);
        }
    }
    return pi;
}

double consistency_check(const std::vector<std::vector<double>>& pi, const SoftQTable& q) {
    double worst = 0.0;
    for (std::size_t s = 0; s < pi.size(); ++s) {
        double n = static_cast<double>(pi[s].size());
        // reconstruct Q from log pi up to the per-state constant, then pick the
        // constant that matches the mean and compare entrywise
        std::vector<double> rebuilt(pi[s].size());
        double mean_diff = 0.0;
        for (std::size_t a = 0; a < pi[s].size(); ++a) {
            rebuilt[a] = q.beta * (std::log(pi[s][a]) - std::log(1.0 / n));
            mean_diff += q.q[s][a] - rebuilt[a];
        }
        mean_diff /= n;
        for (std::size_t a = 0; a < pi[s].size(); ++a) {
            worst = std::max(worst, std::abs(rebuilt[a] + mean_diff - q.q[s][a]));
        }
    }
    return worst;
}

std::vector<double> evaluate_policy_mdp(const std::vector<std::vector<double>>& pi,
                                        const TinyMDP& mdp) {
    int n = mdp.n_states;
    std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
    std::vector<double> b(n, 0.0);
    for (int s = 0; s < n; ++s) {
        a[s][s] = 1.0;
        for (int act = 0; act < mdp.n_actions; ++act) {
            b[s] += pi[s][act] * mdp.reward[s][act];
            for (int t = 0; t < n; ++t) {
                a[s][t] -= mdp.gamma * pi[s][act] * mdp.transition[s][act][t];
            }
        }
    }
    return solve_linear(std::move(a), std::move(b));
}

double performance_difference_check(const std::vector<std::vector<double>>& pi,
                                    const std::vector<std::vector<double>>& pi_prime,
                                    const TinyMDP& mdp) {
    int n = mdp.n_states;
    auto v_pi = evaluate_policy_mdp(pi, mdp);
    auto v_pp = evaluate_policy_mdp(pi_prime, mdp);

    double j_pi = 0.0, j_pp = 0.0;
    for (int s = 0; s < n; ++s) {
        j_pi += mdp.initial[s] * v_pi[s];
        j_pp += mdp.initial[s] * v_pp[s];
    }
    double lhs = j_pi - j_pp;

    // discounted state distribution of pi: d = (1-gamma) rho0 (I - gamma P_pi)^-1,
    // obtained by solving the transposed system
    std::vector<std::vector<double>> at(n, std::vector<double>(n, 0.0));
    for (int s = 0; s < n; ++s) {
        at[s][s] = 1.0;
        for (int t = 0; t < n; ++t) {
            double p_ts = 0.0;
            for (int act = 0; act < mdp.n_actions; ++act) {
                p_ts += pi[t][act] * mdp.transition[t][act][s];
            }
            at[s][t] -= mdp.gamma * p_ts;
        }
    }
    std::vector<double> rho((std::size_t)n);
    for (int s = 0; s < n; ++s) rho[s] = (1.0 - mdp.gamma) * mdp.initial[s];
    auto d = solve_linear(std::move(at), std::move(rho));

    double rhs = 0.0;
    for (int s = 0; s < n; ++s) {
        double inner = 0.0;
        for (int act = 0; act < mdp.n_actions; ++act) {
            double q = mdp.reward[s][act];
            for (int t = 0; t < n; ++t) q += mdp.gamma * mdp.transition[s][act][t] * v_pp[t];
            inner += pi[s][act] * (q - v_pp[s]);
        }
        rhs += d[s] * inner;
    }
    rhs /= (1.0 - mdp.gamma);
    return std::abs(lhs - rhs);
}

// ---------------------------------------------------------------------------
// TinyMAMDP
// ---------------------------------------------------------------------------

double TinyMAMDP::reward(int s, int z, int executed) const {
    if (!reward_override.empty()) return reward_override[s][z][executed];
    return mdp.reward[s][executed];
}

void TinyMAMDP::validate() const {
    mdp.validate();
    if (n_interventions < 1) throw IcrError("need at least one intervention symbol");
    for (int s = 0; s < mdp.n_states; ++s) {
        double total = 0.0;
        for (int z = 0; z < n_interventions; ++z) total += intervention_policy[s][z];
        if (std::abs(total - 1.0) > 1e-12) throw IcrError("intervention policy not stochastic");
        for (int z = 0; z < n_interventions; ++z) {
            for (int a = 0; a < mdp.n_actions; ++a) {
                double row = 0.0;
                for (int e = 0; e < mdp.n_actions; ++e) row += influence[s][z][a][e];
                if (std::abs(row - 1.0) > 1e-12) throw IcrError("influence row not stochastic");
            }
        }
    }
}

MamdpPolicy uniform_mamdp_policy(const TinyMAMDP& m) {
    MamdpPolicy pi(m.mdp.n_states,
                   std::vector<std::vector<double>>(
                       m.n_interventions + 1,
                       std::vector<double>(m.mdp.n_actions, 1.0 / m.mdp.n_actions)));
    return pi;
}

MamdpPolicy lift_blind_policy(const TinyMAMDP& m, const std::vector<std::vector<double>>& pi) {
    MamdpPolicy out(m.mdp.n_states);
    for (int s = 0; s < m.mdp.n_states; ++s) {
        out[s].assign(m.n_interventions + 1, pi[s]);
    }
    return out;
}

double evaluate_policy_mamdp(const MamdpPolicy& pi, const TinyMAMDP& m) {
    m.validate();
    const int ns = m.mdp.n_states, nz = m.n_interventions, na = m.mdp.n_actions;
    const int dim = ns * nz;
    auto idx = [nz](int s, int z) { return s * nz + z; };

    std::vector<std::vector<double>> a(dim, std::vector<double>(dim, 0.0));
    std::vector<double> b(dim, 0.0);
    for (int s = 0; s < ns; ++s) {
        for (int z = 0; z < nz; ++z) {
            int row = idx(s, z);
            a[row][row] += 1.0;
            for (int act = 0; act < na; ++act) {
                double pa = pi[s][z][act];
                if (pa == 0.0) continue;
                for (int e = 0; e < na; ++e) {
                    double pe = pa * m.influence[s][z][act][e];
                    if (pe == 0.0) continue;
                    b[row] += pe * m.reward(s, z, e);
                    for (int t = 0; t < ns; ++t) {
                        double pt = pe * m.mdp.transition[s][e][t];
                        if (pt == 0.0) continue;
                        for (int z2 = 0; z2 < nz; ++z2) {
                            a[row][idx(t, z2)] -=
                                m.mdp.gamma * pt * m.intervention_policy[t][z2];
                        }
                    }
                }
            }
        }
    }
    auto v = solve_linear(std::move(a), std::move(b));
    double j = 0.0;
    for (int s = 0; s < ns; ++s) {
        for (int z = 0; z < nz; ++z) {
            j += m.mdp.initial[s] * m.intervention_policy[s][z] * v[idx(s, z)];
        }
    }
    return j;
}

OptimalMamdp optimal_mamdp_policy(const TinyMAMDP& m, double tol, int max_iter) {
    m.validate();
    const int ns = m.mdp.n_states, nz = m.n_interventions, na = m.mdp.n_actions;
    std::vector<std::vector<std::vector<double>>> q(
        ns, std::vector<std::vector<double>>(nz, std::vector<double>(na, 0.0)));

    for (int iter = 0; iter < max_iter; ++iter) {
        // V(s,z) = max_a Q, averaged over the next intervention draw
        std::vector<double> v_state(ns, 0.0);
        for (int s = 0; s < ns; ++s) {
            for (int z = 0; z < nz; ++z) {
                double best = *std::max_element(q[s][z].begin(), q[s][z].end());
                v_state[s] += m.intervention_policy[s][z] * best;
            }
        }
        double delta = 0.0;
        for (int s = 0; s < ns; ++s) {
            for (int z = 0; z < nz; ++z) {
                for (int a = 0; a < na; ++a) {
                    double next = 0.0;
                    for (int e = 0; e < na; ++e) {
                        double pe = m.influence[s][z][a][e];
                        if (pe == 0.0) continue;
                        double ev = 0.0;
                        for (int t = 0; t < ns; ++t) {
                            ev += m.mdp.transition[s][e][t] * v_state[t];
                        }
                        next += pe * (m.reward(s, z, e) + m.mdp.gamma * ev);
                    }
                    delta = std::max(delta, std::abs(next - q[s][z][a]));
                    q[s][z][a] = next;
                }
            }
        }
        if (delta < tol) {
            OptimalMamdp out;
            out.q = q;
            out.policy = uniform_mamdp_policy(m);
            for (int s = 0; s < ns; ++s) {
                for (int z = 0; z < nz; ++z) {
                    int best = static_cast<int>(
                        std::max_element(q[s][z].begin(), q[s][z].end()) - q[s][z].begin());
                    out.policy[s][z].assign(na, 0.0);
                    out.policy[s][z][best] = 1.0;
                }
                // counterfactual column mirrors the marginal best response
                out.policy[s][nz] = out.policy[s][0];
            }
            out.value = evaluate_policy_mamdp(out.policy, m);
            return out;
        }
    }
    throw NonConvergent("MAMDP value iteration did not converge");
}

double evaluate_blind_underlying_optimum(const TinyMAMDP& m) {
    auto q = hard_value_iteration(m.mdp);
    std::vector<std::vector<double>> pi(m.mdp.n_states,
                                        std::vector<double>(m.mdp.n_actions, 0.0));
    for (int s = 0; s < m.mdp.n_states; ++s) {
        int best = static_cast<int>(std::max_element(q[s].begin(), q[s].end()) - q[s].begin());
        pi[s][best] = 1.0;
    }
    return evaluate_policy_mamdp(lift_blind_policy(m, pi), m);
}

namespace {

/// Single recurring state; three actions: a0 pays 1, a1 pays 0, a2 pays 1/2.
/// Symbol z1 warns that an intended a0 will be corrupted to a1.
TinyMAMDP warning_mamdp() {
    TinyMAMDP m;
    m.mdp.n_states = 1;
    m.mdp.n_actions = 3;
    m.mdp.gamma = 0.9;
    m.mdp.transition = {{{1.0}, {1.0}, {1.0}}};
    m.mdp.reward = {{1.0, 0.0, 0.5}};
    m.mdp.initial = {1.0};
    m.n_interventions = 2;
    m.intervention_policy = {{0.5, 0.5}};
    auto identity = std::vector<std::vector<double>>{
        {1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}};
    auto corrupt_a0 = std::vector<std::vector<double>>{
        {0.0, 1.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}};
    m.influence = {{identity, corrupt_a0}};
    return m;
}

}  // namespace

Counterexample suboptimality_counterexample() {
    Counterexample out;
    out.mamdp = warning_mamdp();
    out.optimal_value = optimal_mamdp_policy(out.mamdp).value;
    out.standard_value = evaluate_blind_underlying_optimum(out.mamdp);
    out.gap = out.optimal_value - out.standard_value;
    if (out.gap <= 0.0) throw ConstructionFailure("counterexample gap is not positive");
    return out;
}

Counterexample counterexample_identity_influence() {
    Counterexample out;
    out.mamdp = warning_mamdp();
    auto identity = std::vector<std::vector<double>>{
        {1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}};
    out.mamdp.influence = {{identity, identity}};
    out.optimal_value = optimal_mamdp_policy(out.mamdp).value;
    out.standard_value = evaluate_blind_underlying_optimum(out.mamdp);
    out.gap = out.optimal_value - out.standard_value;
    return out;
}

Counterexample counterexample_internalized_reward() {
    Counterexample out;
    out.mamdp = warning_mamdp();
    // corrupted turns pay the fair value whatever runs: the influence is
    // perfectly captured in the reward structure
    out.mamdp.reward_override = {{{1.0, 0.0, 0.5}, {0.5, 0.5, 0.5}}};
    // the underlying MDP the standard policy optimizes internalizes the
    // expected modification as well
    TinyMAMDP internal = out.mamdp;
    for (int a = 0; a < 3; ++a) {
        double expected = 0.0;
        for (int z = 0; z < 2; ++z) {
            for (int e = 0; e < 3; ++e) {
                expected += internal.intervention_policy[0][z] *
                            internal.influence[0][z][a][e] * internal.reward(0, z, e);
            }
        }
        internal.mdp.reward[0][a] = expected;
    }
    out.optimal_value = optimal_mamdp_policy(out.mamdp).value;
    out.standard_value = evaluate_blind_underlying_optimum(internal);
    // evaluate the internal-optimal blind policy in the true MAMDP
    {
        auto q = hard_value_iteration(internal.mdp);
        std::vector<std::vector<double>> pi(1, std::vector<double>(3, 0.0));
        int best = static_cast<int>(std::max_element(q[0].begin(), q[0].end()) - q[0].begin());
        pi[0][best] = 1.0;
        out.standard_value = evaluate_policy_mamdp(lift_blind_policy(out.mamdp, pi), out.mamdp);
    }
    out.gap = out.optimal_value - out.standard_value;
    return out;
}

// ---------------------------------------------------------------------------
// Tabular counterfactual-invariance training
// ---------------------------------------------------------------------------

namespace {

/// Discounted observed-state distribution of a policy (normalized).
std::vector<std::vector<double>> observed_distribution(const MamdpPolicy& pi,
                                                       const TinyMAMDP& m) {
    const int ns = m.mdp.n_states, nz = m.n_interventions, na = m.mdp.n_actions;
    const int dim = ns * nz;
    auto idx = [nz](int s, int z) { return s * nz + z; };

    // d = (1-gamma) rho + gamma d P ; solve the transposed linear system
    std::vector<std::vector<double>> at(dim, std::vector<double>(dim, 0.0));
    std::vector<double> b(dim, 0.0);
    for (int s = 0; s < ns; ++s) {
        for (int z = 0; z < nz; ++z) {
            b[idx(s, z)] = (1.0 - m.mdp.gamma) * m.mdp.initial[s] * m.intervention_policy[s][z];
            at[idx(s, z)][idx(s, z)] += 1.0;
        }
    }
    for (int s = 0; s < ns; ++s) {
        for (int z = 0; z < nz; ++z) {
            for (int a = 0; a < na; ++a) {
                for (int e = 0; e < na; ++e) {
                    double pe = pi[s][z][a] * m.influence[s][z][a][e];
                    if (pe == 0.0) continue;
                    for (int t = 0; t < ns; ++t) {
                        for (int z2 = 0; z2 < nz; ++z2) {
                            double p = pe * m.mdp.transition[s][e][t] *
                                       m.intervention_policy[t][z2];
                            if (p != 0.0) {
                                at[idx(t, z2)][idx(s, z)] -= m.mdp.gamma * p;
                            }
                        }
                    }
                }
            }
        }
    }
    auto d = solve_linear(std::move(at), std::move(b));
    std::vector<std::vector<double>> out(ns, std::vector<double>(nz, 0.0));
    for (int s = 0; s < ns; ++s) {
        for (int z = 0; z < nz; ++z) out[s][z] = std::max(0.0, d[idx(s, z)]);
    }
    return out;
}

/// Q^pi over observed states, from the exact value function.
std::vector<std::vector<std::vector<double>>> observed_q(const MamdpPolicy& pi,
                                                         const TinyMAMDP& m) {
    const int ns = m.mdp.n_states, nz = m.n_interventions, na = m.mdp.n_actions;
    // value per observed state via the same linear system as evaluate
    const int dim = ns * nz;
    auto idx = [nz](int s, int z) { return s * nz + z; };
    std::vector<std::vector<double>> a(dim, std::vector<double>(dim, 0.0));
    std::vector<double> b(dim, 0.0);
    for (int s = 0; s < ns; ++s) {
        for (int z = 0; z < nz; ++z) {
            int row = idx(s, z);
            a[row][row] += 1.0;
            for (int act = 0; act < na; ++act) {
                for (int e = 0; e < na; ++e) {
                    double pe = pi[s][z][act] * m.influence[s][z][act][e];
                    if (pe == 0.0) continue;
                    b[row] += pe * m.reward(s, z, e);
                    for (int t = 0; t < ns; ++t) {
                        for (int z2 = 0; z2 < nz; ++z2) {
                            a[row][idx(t, z2)] -= m.mdp.gamma * pe *
                                                  m.mdp.transition[s][e][t] *
                                                  m.intervention_policy[t][z2];
                        }
                    }
                }
            }
        }
    }
    auto v = solve_linear(std::move(a), std::move(b));

    std::vector<std::vector<std::vector<double>>> q(
        ns, std::vector<std::vector<double>>(nz, std::vector<double>(na, 0.0)));
    for (int s = 0; s < ns; ++s) {
        for (int z = 0; z < nz; ++z) {
            for (int act = 0; act < na; ++act) {
                double total = 0.0;
                for (int e = 0; e < na; ++e) {
                    double pe = m.influence[s][z][act][e];
                    if (pe == 0.0) continue;
                    double ev = 0.0;
                    for (int t = 0; t < ns; ++t) {
                        double pt = m.mdp.transition[s][e][t];
                        if (pt == 0.0) continue;
                        double vn = 0.0;
                        for (int z2 = 0; z2 < nz; ++z2) {
                            vn += m.intervention_policy[t][z2] * v[idx(t, z2)];
                        }
                        ev += pt * vn;
                    }
                    total += pe * (m.reward(s, z, e) + m.mdp.gamma * ev);
                }
                q[s][z][act] = total;
            }
        }
    }
    return q;
}

}  // namespace

namespace {

/// Soft Bellman fixed point over observed states:
/// Q(s,z,a) = E_exec[R + gamma E_{s',z'}[beta lse(Q(s',z',.)/beta)]].
std::vector<std::vector<std::vector<double>>> mamdp_soft_q(const TinyMAMDP& m, double beta,
                                                           double tol = 1e-12) {
    const int ns = m.mdp.n_states, nz = m.n_interventions, na = m.mdp.n_actions;
    std::vector<std::vector<std::vector<double>>> q(
        ns, std::vector<std::vector<double>>(nz, std::vector<double>(na, 0.0)));
    for (int iter = 0; iter < 1000000; ++iter) {
        std::vector<double> v_state(ns, 0.0);
        for (int s = 0; s < ns; ++s) {
            for (int z = 0; z < nz; ++z) {
                v_state[s] += m.intervention_policy[s][z] * logsumexp(q[s][z], beta);
            }
        }
        double delta = 0.0;
        for (int s = 0; s < ns; ++s) {
            for (int z = 0; z < nz; ++z) {
                for (int a = 0; a < na; ++a) {
                    double next = 0.0;
                    for (int e = 0; e < na; ++e) {
                        double pe = m.influence[s][z][a][e];
                        if (pe == 0.0) continue;
                        double ev = 0.0;
                        for (int t = 0; t < ns; ++t) {
                            ev += m.mdp.transition[s][e][t] * v_state[t];
                        }
                        next += pe * (m.reward(s, z, e) + m.mdp.gamma * ev);
                    }
                    delta = std::max(delta, std::abs(next - q[s][z][a]));
                    q[s][z][a] = next;
                }
            }
        }
        if (delta < tol) return q;
    }
    throw NonConvergent("MAMDP soft value iteration did not converge");
}

}  // namespace

double tabular_cf_divergence(const MamdpPolicy& pi, const TinyMAMDP& m) {
    auto d = observed_distribution(pi, m);
    const int nz = m.n_interventions;
    double total = 0.0;
    for (int s = 0; s < m.mdp.n_states; ++s) {
        for (int z = 0; z < nz; ++z) {
            double kl = 0.0;
            for (int a = 0; a < m.mdp.n_actions; ++a) {
                double p = pi[s][z][a];
                if (p > 0.0) kl += p * (std::log(p) - std::log(pi[s][nz][a]));
            }
            total += d[s][z] * std::max(0.0, kl);
        }
    }
    return total;
}

double task_residual(const MamdpPolicy& pi, const TinyMAMDP& m, double beta) {
    auto q_soft = mamdp_soft_q(m, beta);
    // soft-optimal values anchor the implied Q so the soft-optimal policy has
    // residual exactly zero
    const int ns = m.mdp.n_states, nz = m.n_interventions, na = m.mdp.n_actions;
    std::vector<std::vector<double>> v_soft(ns, std::vector<double>(nz, 0.0));
    for (int s = 0; s < ns; ++s) {
        for (int z = 0; z < nz; ++z) v_soft[s][z] = logsumexp(q_soft[s][z], beta);
    }
    double worst = 0.0;
    for (int s = 0; s < ns; ++s) {
        for (int z = 0; z < nz; ++z) {
            for (int a = 0; a < na; ++a) {
                double implied = beta * std::log(std::max(1e-300, pi[s][z][a])) + v_soft[s][z];
                // soft Bellman backup of the implied Q under the true dynamics
                double backup = 0.0;
                for (int e = 0; e < na; ++e) {
                    double pe = m.influence[s][z][a][e];
                    if (pe == 0.0) continue;
                    double ev = 0.0;
                    for (int t = 0; t < ns; ++t) {
                        double pt = m.mdp.transition[s][e][t];
                        if (pt == 0.0) continue;
                        double vn = 0.0;
                        for (int z2 = 0; z2 < nz; ++z2) {
                            std::vector<double> implied_row(na);
                            for (int a2 = 0; a2 < na; ++a2) {
                                implied_row[a2] =
                                    beta * std::log(std::max(1e-300, pi[t][z2][a2])) +
                                    v_soft[t][z2];
                            }
                            vn += m.intervention_policy[t][z2] * logsumexp(implied_row, beta);
                        }
                        ev += pt * vn;
                    }
                    backup += pe * (m.reward(s, z, e) + m.mdp.gamma * ev);
                }
                worst = std::max(worst, std::abs(implied - backup));
            }
        }
    }
    return worst;
}

TabularTrainResult soft_optimal_member(const TinyMAMDP& m, double beta) {
    m.validate();
    const int ns = m.mdp.n_states, nz = m.n_interventions, na = m.mdp.n_actions;
    auto q_soft = mamdp_soft_q(m, beta);
    MamdpPolicy pi(ns, std::vector<std::vector<double>>(nz + 1, std::vector<double>(na, 0.0)));
    for (int s = 0; s < ns; ++s) {
        for (int z = 0; z < nz; ++z) {
            double lse = logsumexp(q_soft[s][z], beta);
            for (int a = 0; a < na; ++a) pi[s][z][a] = std::exp((q_soft[s][z][a] - lse) / beta);
        }
        for (int a = 0; a < na; ++a) {
            double marginal = 0.0;
            for (int z = 0; z < nz; ++z) marginal += m.intervention_policy[s][z] * pi[s][z][a];
            pi[s][nz][a] = marginal;
        }
    }
    TabularTrainResult out;
    out.policy = pi;
    out.value = evaluate_policy_mamdp(pi, m);
    out.delta_cf = tabular_cf_divergence(pi, m);
    out.eps_task = task_residual(pi, m, beta);
    return out;
}

TabularTrainResult train_tabular_invariance(const TinyMAMDP& m, double lambda_intent,
                                            std::uint64_t seed, int iters, double lr,
                                            double beta) {
    m.validate();
    const int ns = m.mdp.n_states, nz = m.n_interventions, na = m.mdp.n_actions;
    RandomStream rng(derive_seed(seed, "tabular-init"));

    // start from the soft-optimal policy of the underlying MDP, lifted z-blind;
    // the counterfactual column keeps this initialization and is never updated
    auto soft = soft_value_iteration(m.mdp, beta);
    auto blind = softmax_policy_from_q(soft);
    std::vector<std::vector<std::vector<double>>> theta(
        ns, std::vector<std::vector<double>>(nz + 1, std::vector<double>(na, 0.0)));
    for (int s = 0; s < ns; ++s) {
        for (int z = 0; z <= nz; ++z) {
            for (int a = 0; a < na; ++a) {
                theta[s][z][a] = std::log(std::max(1e-12, blind[s][a]));
                if (z < nz) theta[s][z][a] += 0.05 * rng.next_gaussian();
            }
        }
    }

    auto policy_of = [&](const std::vector<std::vector<std::vector<double>>>& th) {
        MamdpPolicy pi(ns, std::vector<std::vector<double>>(nz + 1, std::vector<double>(na)));
        for (int s = 0; s < ns; ++s) {
            for (int z = 0; z <= nz; ++z) {
                double lse = logsumexp(th[s][z], 1.0);
                for (int a = 0; a < na; ++a) pi[s][z][a] = std::exp(th[s][z][a] - lse);
            }
        }
        return pi;
    };

    for (int iter = 0; iter < iters; ++iter) {
        MamdpPolicy pi = policy_of(theta);
        auto d = observed_distribution(pi, m);
        auto q = observed_q(pi, m);
        for (int s = 0; s < ns; ++s) {
            for (int z = 0; z < nz; ++z) {
                double v = 0.0;
                for (int a = 0; a < na; ++a) v += pi[s][z][a] * q[s][z][a];
                double kl = 0.0;
                for (int a = 0; a < na; ++a) {
                    if (pi[s][z][a] > 0.0) {
                        kl += pi[s][z][a] * (std::log(pi[s][z][a]) - std::log(pi[s][nz][a]));
                    }
                }
                for (int a = 0; a < na; ++a) {
                    double adv = q[s][z][a] - v;
                    double pg = d[s][z] / (1.0 - m.mdp.gamma) * pi[s][z][a] * adv;
                    double ratio = std::log(pi[s][z][a]) - std::log(pi[s][nz][a]);
                    double dkl = d[s][z] * pi[s][z][a] * (ratio - kl);
                    theta[s][z][a] += lr * (pg - lambda_intent * dkl);
                }
            }
        }
    }

    TabularTrainResult out;
    out.policy = policy_of(theta);
    out.value = evaluate_policy_mamdp(out.policy, m);
    out.delta_cf = tabular_cf_divergence(out.policy, m);
    out.eps_task = task_residual(out.policy, m, beta);
    return out;
}

BoundReport verify_bound(const std::vector<BoundMember>& family, const TinyMAMDP& m) {
    if (family.size() < 3) throw IcrError("bound verification needs at least 3 policies");
    BoundReport report;
    report.members = family;

    double r_max = 0.0;
    for (int s = 0; s < m.mdp.n_states; ++s) {
        for (int z = 0; z < m.n_interventions; ++z) {
            for (int e = 0; e < m.mdp.n_actions; ++e) {
                r_max = std::max(r_max, std::abs(m.reward(s, z, e)));
            }
        }
    }
    double g = m.mdp.gamma;
    report.bound_constant = 2.0 * g * r_max / ((1.0 - g) * (1.0 - g));

    // fit the minimal C on the first half; validate on the rest
    std::size_t n_train = family.size() / 2;
    double c = 0.0;
    for (std::size_t i = 0; i < n_train; ++i) {
        const auto& mem = family[i];
        double needed = mem.gap / report.bound_constant - mem.eps_task;
        if (needed > 0.0 && mem.delta_cf > 1e-12) {
            c = std::max(c, needed / mem.delta_cf);
        }
    }
    report.fitted_c = c;

    report.holds_on_held_out = true;
    report.worst_slack = std::numeric_limits<double>::infinity();
    for (std::size_t i = n_train; i < family.size(); ++i) {
        const auto& mem = family[i];
        double rhs = report.bound_constant * (mem.eps_task + c * mem.delta_cf);
        double slack = rhs - mem.gap;
        report.worst_slack = std::min(report.worst_slack, slack);
        if (slack < -1e-9) report.holds_on_held_out = false;
    }

    // qualitative check on members with comparable task residuals
    double eps_span = 0.0;
    for (const auto& a : family) {
        for (const auto& b : family) eps_span = std::max(eps_span, std::abs(a.eps_task - b.eps_task));
    }
    double tol = 0.05 * eps_span;
    for (const auto& a : family) {
        for (const auto& b : family) {
            if (std::abs(a.eps_task - b.eps_task) > tol) continue;
            if (a.delta_cf < b.delta_cf - 1e-12 && a.gap > b.gap + 0.05 * std::abs(b.gap) + 1e-6) {
                report.qualitative_monotone = false;
            }
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Factored grouping
// ---------------------------------------------------------------------------

FactoredMDP FactoredMDP::random(int n_states, int n_first, int n_second, double gamma,
                                RandomStream& rng) {
    FactoredMDP mdp;
    mdp.n_states = n_states;
    mdp.n_first = n_first;
    mdp.n_second = n_second;
    mdp.gamma = gamma;
    mdp.reward.assign(n_states, std::vector<std::vector<double>>(
                                    n_first, std::vector<double>(n_second, 0.0)));
    mdp.transition.assign(
        n_states, std::vector<std::vector<std::vector<double>>>(
                      n_first, std::vector<std::vector<double>>(
                                   n_second, std::vector<double>(n_states, 0.0))));
    for (int s = 0; s < n_states; ++s) {
        for (int a1 = 0; a1 < n_first; ++a1) {
            for (int a2 = 0; a2 < n_second; ++a2) {
                mdp.reward[s][a1][a2] = 2.0 * rng.next_double() - 1.0;
                double total = 0.0;
                for (int t = 0; t < n_states; ++t) {
                    double w = -std::log(std::max(1e-12, rng.next_double()));
                    mdp.transition[s][a1][a2][t] = w;
                    total += w;
                }
                for (int t = 0; t < n_states; ++t) mdp.transition[s][a1][a2][t] /= total;
            }
        }
    }
    return mdp;
}

double grouping_residual(const FactoredMDP& mdp, double beta, double tol) {
    // joint solve: actions are (a1, a2) pairs
    TinyMDP joint;
    joint.n_states = mdp.n_states;
    joint.n_actions = mdp.n_first * mdp.n_second;
    joint.gamma = mdp.gamma;
    joint.initial.assign(mdp.n_states, 1.0 / mdp.n_states);
    joint.transition.assign(joint.n_states,
                            std::vector<std::vector<double>>(
                                joint.n_actions, std::vector<double>(joint.n_states, 0.0)));
    joint.reward.assign(joint.n_states, std::vector<double>(joint.n_actions, 0.0));
    for (int s = 0; s < mdp.n_states; ++s) {
        for (int a1 = 0; a1 < mdp.n_first; ++a1) {
            for (int a2 = 0; a2 < mdp.n_second; ++a2) {
                int a = a1 * mdp.n_second + a2;
                joint.reward[s][a] = mdp.reward[s][a1][a2];
                joint.transition[s][a] = mdp.transition[s][a1][a2];
            }
        }
    }
    auto v_joint = soft_value_iteration(joint, beta, tol).values();

    // sub-action solve: pick a1, then a2; reward and discount attach to the
    // completed pair so grouping must be value-preserving
    std::vector<double> v(mdp.n_states, 0.0);
    std::vector<double> v_next(mdp.n_states, 0.0);
    for (int iter = 0; iter < 1000000; ++iter) {
        double delta = 0.0;
        for (int s = 0; s < mdp.n_states; ++s) {
            std::vector<double> q1(mdp.n_first, 0.0);
            for (int a1 = 0; a1 < mdp.n_first; ++a1) {
                std::vector<double> q2(mdp.n_second, 0.0);
                for (int a2 = 0; a2 < mdp.n_second; ++a2) {
                    double ev = 0.0;
                    for (int t = 0; t < mdp.n_states; ++t) {
                        ev += mdp.transition[s][a1][a2][t] * v[t];
                    }
                    q2[a2] = mdp.reward[s][a1][a2] + mdp.gamma * ev;
                }
                q1[a1] = logsumexp(q2, beta);
            }
            v_next[s] = logsumexp(q1, beta);
            delta = std::max(delta, std::abs(v_next[s] - v[s]));
        }
        v.swap(v_next);
        if (delta < tol) break;
        if (iter + 1 == 1000000) throw NonConvergent("two-stage soft VI did not converge");
    }

    double worst = 0.0;
    for (int s = 0; s < mdp.n_states; ++s) {
        worst = std::max(worst, std::abs(v[s] - v_joint[s]));
    }
    return worst;
}

}  // namespace icr::theory
