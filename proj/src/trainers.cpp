#include "icr/trainers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace icr {

const char* to_string(Variant v) {
    switch (v) {
        case Variant::BC: return "bc";
        case Variant::PPO: return "ppo";
        case Variant::ICR: return "icr";
        case Variant::DPO: return "dpo";
        case Variant::IPO: return "ipo";
        case Variant::PSOIntent: return "pso-intent";
        case Variant::PSOSkeptical: return "pso-skeptical";
        case Variant::PPOCF: return "ppo-cf";
        case Variant::ICRMasked: return "icr-masked";
    }
    return "?";
}

Variant variant_from_string(const std::string& s) {
    for (Variant v : {Variant::BC, Variant::PPO, Variant::ICR, Variant::DPO, Variant::IPO,
                      Variant::PSOIntent, Variant::PSOSkeptical, Variant::PPOCF,
                      Variant::ICRMasked}) {
        if (s == to_string(v)) return v;
    }
    throw ConfigError("unknown variant: " + s);
}

void TrainerConfig::validate() const {
    if (lambda_h < 0 || lambda_intent < 0) throw ConfigError("KL coefficients must be >= 0");
    if (clip_eps <= 0) throw ConfigError("clip_eps must be positive");
    if (learning_rate <= 0 || bc_learning_rate <= 0) throw ConfigError("learning rate must be positive");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (gamma <= 0 || gamma >= 1) throw ConfigError("gamma must lie in (0,1)");
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (temperature <= 0) throw ConfigError("temperature must be positive");
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    mixture.validate();
}

VariantSpec apply_variant(Variant v) {
    VariantSpec spec;
    switch (v) {
        case Variant::BC:
        case Variant::DPO:
        case Variant::IPO:
            spec.online = false;
            break;
        case Variant::PPO:
            spec.force_zero_intent = true;  // lambda_intent = 0 for plain PPO
            break;
        case Variant::ICR:
            spec.uses_intent_term = true;
            break;
        case Variant::ICRMasked:
            spec.uses_intent_term = true;
            spec.eval_mask = true;
            break;
        case Variant::PSOIntent:
            spec.train_flag_even = spec.train_flag_odd = CfFlag::PSOPositive;
            spec.eval_flag = CfFlag::PSOPositive;
            spec.force_zero_intent = true;
            break;
        case Variant::PSOSkeptical:
            spec.train_flag_even = spec.train_flag_odd = CfFlag::PSOPositive;
            spec.eval_flag = CfFlag::CounterfactualNegative;  // inference-only swap
            spec.force_zero_intent = true;
            break;
        case Variant::PPOCF:
            spec.train_flag_even = CfFlag::CounterfactualNegative;
            spec.train_flag_odd = CfFlag::Factual;
            spec.force_zero_intent = true;
            break;
    }
    return spec;
}

double EmaBaseline::advantage_for(int bucket, double reward) {
    bucket = std::clamp(bucket, 0, 3);
    if (!seen_[bucket]) {
        value_[bucket] = reward;
        seen_[bucket] = true;
    }
    double adv = reward - value_[bucket];
    value_[bucket] = decay_ * value_[bucket] + (1.0 - decay_) * reward;
    return adv;
}

RolloutBatch collect_rollouts(const Environment& env, const SoftmaxPolicy& policy,
                              const TrainerConfig& cfg, const VariantSpec& spec,
                              std::uint64_t step_index, EmaBaseline& baseline) {
    RolloutBatch batch;
    std::uint64_t episode = 0;
    const bool icr_family = spec.uses_intent_term || cfg.variant == Variant::PPO;
    while (static_cast<int>(batch.items.size()) < cfg.batch_size) {
        std::uint64_t eseed = derive_seed(cfg.seed, "rollout", step_index, episode++);
        RandomStream inst_rng(derive_seed(eseed, "instance"));
        RandomStream int_rng(derive_seed(eseed, "intervener"));
        RandomStream col_rng(derive_seed(eseed, "collaborator"));

        ScriptedIntervener intervener(cfg.mixture);
        DialogueState state = initial_state(env.sample_instance(inst_rng),
                                            env.participant_count());
        for (int t = 0; t < cfg.horizon; ++t) {
            InterventionAction intervention = intervener.propose(state, int_rng);
            intervention.turn = t;
            CollaboratorAction joint;
            for (const auto& p : state.participants) {
                CfFlag flag = spec.train_flag(batch.items.size());
                if (icr_family && flag != CfFlag::Factual) {
                    throw IcrError("on-policy sampling must be factual for this variant");
                }
                ConditionedContext ctx = featurize(state, intervention, p.index, flag, false);
                auto [ids, lp] = sample_action(policy, ctx, col_rng);
                MoveRecord move = decode_action(policy.task, state.task_instance, ids);
                double reward = env.move_reward(state, p.index, move);

                RolloutItem item;
                item.counterfactual =
                    with_cf_flag(ctx, policy.task, CfFlag::CounterfactualNegative);
                item.factual = std::move(ctx);
                item.action = ids;
                for (const auto& [id, logp] : lp.per_subaction) item.old_logp.push_back(logp);
                item.reward = reward;
                int bucket = (t * 4) / std::max(1, cfg.horizon);
                item.advantage = baseline.advantage_for(bucket, reward);
                batch.items.push_back(std::move(item));
                joint.per_participant[p.index] = std::move(move);
            }
            state = step(state, intervention, joint);
        }
    }
    return batch;
}

namespace {

struct GradBuffer {
    std::vector<std::vector<double>> slots;  // same layout as params

    explicit GradBuffer(const SoftmaxPolicy& policy) {
        for (const auto& p : policy.params) slots.emplace_back(p.size(), 0.0);
    }

    /// grad[choice][feature] += dlogits[choice] * x[feature] / temperature
    void add(const SoftmaxPolicy& policy, int slot, const std::vector<double>& x,
             const std::vector<double>& dlogits) {
        int d = policy.feature_dim;
        double inv_t = 1.0 / policy.temperature;
        double* g = slots[slot].data();
        for (int f = 0; f < d; ++f) {
            double xf = x[f];
            if (xf == 0.0) continue;
            double scaled = xf * inv_t;
            for (std::size_t c = 0; c < dlogits.size(); ++c) {
                if (dlogits[c] != 0.0) g[c * d + f] += dlogits[c] * scaled;
            }
        }
    }
};

struct CommonTerms {
    double surrogate = 0.0;
    double kl_to_ref = 0.0;
    double entropy = 0.0;
};

/// Shared PPO machinery: clipped surrogate plus the reference KL penalty for
/// one item. Returns the current per-slot log-prob rows for reuse.
std::vector<std::vector<double>> accumulate_ppo_item(const SoftmaxPolicy& policy,
                                                     const SoftmaxPolicy& ref,
                                                     const RolloutItem& item,
                                                     const TrainerConfig& cfg, GradBuffer& grad,
                                                     CommonTerms& terms) {
    auto rows = action_logprobs(policy, item.factual);
    auto ref_rows = action_logprobs(ref, item.factual);
    int n_slots = policy.n_slots();
    std::vector<double> dlogits;

    for (int s = 0; s < n_slots; ++s) {
        const auto& row = rows[s];
        int a = item.action[s];
        double ratio = std::exp(row[a] - item.old_logp[s]);
        double clipped = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
        double unclipped_obj = ratio * item.advantage;
        double clipped_obj = clipped * item.advantage;
        terms.surrogate += std::min(unclipped_obj, clipped_obj);

        dlogits.assign(row.size(), 0.0);
        if (unclipped_obj <= clipped_obj) {
            // gradient of ratio*A through the softmax: A*r*(e_a - p)
            double coef = item.advantage * ratio;
            for (std::size_t c = 0; c < row.size(); ++c) {
                dlogits[c] = -coef * std::exp(row[c]);
            }
            dlogits[a] += coef;
        }

        // reference KL penalty: d/dz KL(pi || ref) = p .* (log p - log q - KL)
        double kl = 0.0;
        double entropy = 0.0;
        for (std::size_t c = 0; c < row.size(); ++c) {
            double p = std::exp(row[c]);
            kl += p * (row[c] - ref_rows[s][c]);
            entropy -= p * row[c];
        }
        terms.kl_to_ref += kl;
        terms.entropy += entropy;
        if (cfg.lambda_h != 0.0) {
            for (std::size_t c = 0; c < row.size(); ++c) {
                double p = std::exp(row[c]);
                dlogits[c] -= cfg.lambda_h * p * (row[c] - ref_rows[s][c] - kl);
            }
        }
        grad.add(policy, s, item.factual.features, dlogits);
    }
    return rows;
}

void check_stale(const SoftmaxPolicy& policy, const RolloutBatch& batch,
                 const TrainerConfig& cfg) {
    if (batch.items.empty()) throw IcrError("empty rollout batch");
    const auto& item = batch.items.front();
    auto rows = action_logprobs(policy, item.factual);
    for (std::size_t s = 0; s < item.action.size(); ++s) {
        if (std::abs(rows[s][item.action[s]] - item.old_logp[s]) > cfg.stale_threshold) {
            throw StaleBatch("batch log-probs diverge from the current policy snapshot");
        }
    }
}

/// Step size bounded by the curvature of the KL penalties: their Hessian
/// scales with the coefficients, so stability requires lr <= O(1/(1+lambda)).
double effective_lr(const TrainerConfig& cfg, double lambda_intent) {
    return std::min(cfg.learning_rate, 1.0 / (1.0 + cfg.lambda_h + lambda_intent));
}

void apply_gradient(SoftmaxPolicy& policy, const GradBuffer& grad, double scale,
                    double* update_norm) {
    double norm_sq = 0.0;
    for (std::size_t s = 0; s < policy.params.size(); ++s) {
        auto& w = policy.params[s];
        const auto& g = grad.slots[s];
        for (std::size_t i = 0; i < w.size(); ++i) {
            double delta = scale * g[i];
            w[i] += delta;
            norm_sq += delta * delta;
        }
    }
    if (update_norm) *update_norm = std::sqrt(norm_sq);
}

}  // namespace

UpdateDiagnostics ppo_update(SoftmaxPolicy& policy, const SoftmaxPolicy& ref,
                             const RolloutBatch& batch, const TrainerConfig& cfg) {
    check_stale(policy, batch, cfg);
    GradBuffer grad(policy);
    CommonTerms terms;
    double reward_sum = 0.0;
    for (const auto& item : batch.items) {
        accumulate_ppo_item(policy, ref, item, cfg, grad, terms);
        reward_sum += item.reward;
    }
    double n = static_cast<double>(batch.items.size());
    UpdateDiagnostics diag;
    diag.surrogate = terms.surrogate / n;
    diag.kl_to_ref = terms.kl_to_ref / n;
    diag.entropy = terms.entropy / n;
    diag.mean_reward = reward_sum / n;
    apply_gradient(policy, grad, effective_lr(cfg, 0.0) / n, &diag.update_norm);
    return diag;
}

UpdateDiagnostics icr_update(SoftmaxPolicy& policy, const SoftmaxPolicy& ref,
                             const RolloutBatch& batch, const TrainerConfig& cfg) {
    check_stale(policy, batch, cfg);
    GradBuffer grad(policy);
    CommonTerms terms;
    double reward_sum = 0.0;
    double intent_sum = 0.0;
    std::vector<double> dlogits;

    for (const auto& item : batch.items) {
        if (item.counterfactual.features.empty()) {
            throw MissingCounterfactualTwin("rollout item lacks its counterfactual twin");
        }
        auto rows = accumulate_ppo_item(policy, ref, item, cfg, grad, terms);
        // the one extra pass: evaluate the same sampled action sequence under
        // the counterfactual conditioning; values are consumed as constants
        auto cf_rows = action_logprobs(policy, item.counterfactual);

        for (std::size_t s = 0; s < rows.size(); ++s) {
            intent_sum += rows[s][item.action[s]] - cf_rows[s][item.action[s]];
        }
        if (cfg.lambda_intent != 0.0) {
            // descend the per-slot divergence from the frozen counterfactual
            // view; gradient flows through the factual branch only
            for (std::size_t s = 0; s < rows.size(); ++s) {
                const auto& row = rows[s];
                const auto& cf_row = cf_rows[s];
                double kl = 0.0;
                for (std::size_t c = 0; c < row.size(); ++c) {
                    kl += std::exp(row[c]) * (row[c] - cf_row[c]);
                }
                dlogits.assign(row.size(), 0.0);
                for (std::size_t c = 0; c < row.size(); ++c) {
                    double p = std::exp(row[c]);
                    dlogits[c] = -cfg.lambda_intent * p * (row[c] - cf_row[c] - kl);
                }
                grad.add(policy, static_cast<int>(s), item.factual.features, dlogits);
            }
        }
        reward_sum += item.reward;
    }

    double n = static_cast<double>(batch.items.size());
    UpdateDiagnostics diag;
    diag.surrogate = terms.surrogate / n;
    diag.kl_to_ref = terms.kl_to_ref / n;
    diag.entropy = terms.entropy / n;
    diag.mean_reward = reward_sum / n;
    diag.delta_cf_sampled = intent_sum / n;
    apply_gradient(policy, grad, effective_lr(cfg, cfg.lambda_intent) / n, &diag.update_norm);
    return diag;
}

double compute_cf_divergence(
    const SoftmaxPolicy& policy,
    const std::vector<std::pair<ConditionedContext, ConditionedContext>>& eval_contexts) {
    if (eval_contexts.empty()) throw IcrError("need at least one context pair");
    double total = 0.0;
    for (const auto& [factual, counterfactual] : eval_contexts) {
        total += action_kl_full(policy, factual, counterfactual);
    }
    return total / static_cast<double>(eval_contexts.size());
}

std::vector<std::pair<ConditionedContext, ConditionedContext>> build_eval_contexts(
    const Environment& env, const QualityMixture& mixture, int n_contexts, std::uint64_t seed) {
    std::vector<std::pair<ConditionedContext, ConditionedContext>> out;
    std::uint64_t episode = 0;
    while (static_cast<int>(out.size()) < n_contexts) {
        std::uint64_t eseed = derive_seed(seed, "eval-contexts", episode++);
        ScriptedIntervener intervener(mixture);
        ExpertCollaborator expert(0.1);
        Trajectory traj = run_episode(env, intervener, expert, 15, eseed);
        DialogueState state = initial_state(traj.task_instance, env.participant_count());
        for (const auto& rec : traj.turns) {
            for (const auto& p : state.participants) {
                if (static_cast<int>(out.size()) >= n_contexts) break;
                ConditionedContext f =
                    featurize(state, rec.intervention, p.index, CfFlag::Factual, false);
                ConditionedContext cf =
                    with_cf_flag(f, env.name(), CfFlag::CounterfactualNegative);
                out.emplace_back(std::move(f), std::move(cf));
            }
            state = step(state, rec.intervention, rec.actions);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Behavior cloning
// ---------------------------------------------------------------------------

SoftmaxPolicy train_bc(const ExpertDataset& dataset, const TrainerConfig& cfg,
                       std::vector<double>* nll_trace) {
    auto train = dataset.split_view("train");
    if (train.empty()) throw EmptyDataset("no training records");
    std::string task =
        std::holds_alternative<wason::WasonInstance>(train.front()->context.task_instance)
            ? "wason"
            : "weights";

    struct Example {
        ConditionedContext ctx;
        std::vector<int> target;
    };
    std::vector<Example> examples;
    for (const ExpertRecord* rec : train) {
        for (const auto& [pid, move] : rec->action.per_participant) {
            Example ex;
            ex.ctx = featurize(rec->context, rec->intervention, pid, CfFlag::Factual, false);
            ex.target = encode_move(task, rec->context.task_instance, move);
            examples.push_back(std::move(ex));
        }
    }

    SoftmaxPolicy policy = SoftmaxPolicy::zeros(task, cfg.temperature);
    RandomStream shuffle_rng(derive_seed(cfg.seed, "bc/shuffle"));
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<double> dlogits;
    for (int epoch = 0; epoch < cfg.bc_epochs; ++epoch) {
        // deterministic Fisher-Yates reshuffle per epoch
        for (std::size_t i = order.size(); i > 1; --i) {
            std::size_t j = shuffle_rng.next_below(i);
            std::swap(order[i - 1], order[j]);
        }
        double nll = 0.0;
        for (std::size_t idx : order) {
            const Example& ex = examples[idx];
            auto rows = action_logprobs(policy, ex.ctx);
            GradBuffer grad(policy);
            for (std::size_t s = 0; s < rows.size(); ++s) {
                int a = ex.target[s];
                nll -= rows[s][a];
                dlogits.assign(rows[s].size(), 0.0);
                for (std::size_t c = 0; c < rows[s].size(); ++c) {
                    dlogits[c] = -std::exp(rows[s][c]);
                }
                dlogits[a] += 1.0;
                grad.add(policy, static_cast<int>(s), ex.ctx.features, dlogits);
            }
            apply_gradient(policy, grad, cfg.bc_learning_rate, nullptr);
        }
        if (nll_trace) nll_trace->push_back(nll / static_cast<double>(examples.size()));
    }
    return policy;
}

// ---------------------------------------------------------------------------
// Preference optimization
// ---------------------------------------------------------------------------

PreferenceBuild build_preference_pairs(const ExpertDataset& dataset, RandomStream& rng) {
    PreferenceBuild out;
    auto train = dataset.split_view("train");
    if (train.empty()) throw EmptyDataset("no training records");
    std::string task =
        std::holds_alternative<wason::WasonInstance>(train.front()->context.task_instance)
            ? "wason"
            : "weights";

    for (const ExpertRecord* rec : train) {
        for (const auto& [pid, move] : rec->action.per_participant) {
            std::vector<int> preferred = encode_move(task, rec->context.task_instance, move);
            std::vector<int> dispreferred = preferred;
            bool flipped = false;

            if (task == "wason") {
                const auto& inst = std::get<wason::WasonInstance>(rec->context.task_instance);
                const auto correct = wason::correct_solution(inst);
                std::vector<int> flippable;
                for (int s = 0; s < 4; ++s) {
                    auto stance = static_cast<wason::Stance>(preferred[s]);
                    bool is_correct_card = correct.count(inst.faces[s]) > 0;
                    bool stance_right =
                        (is_correct_card && stance == wason::Stance::Support) ||
                        (!is_correct_card && stance == wason::Stance::Oppose);
                    if (stance_right) flippable.push_back(s);
                }
                if (!flippable.empty()) {
                    int s = flippable[rng.next_below(flippable.size())];
                    auto stance = static_cast<wason::Stance>(preferred[s]);
                    dispreferred[s] = static_cast<int>(stance == wason::Stance::Support
                                                           ? wason::Stance::Oppose
                                                           : wason::Stance::Support);
                    flipped = true;
                }
            } else {
                const auto& truth = std::get<weights::BlockWeights>(rec->context.task_instance);
                if (preferred[0] > 0) {
                    const auto& prop = weights_action_menu()[preferred[0] - 1];
                    if (weights::proposition_true(prop, truth)) {
                        std::optional<weights::Proposition> corrupted;
                        using weights::RelationKind;
                        if (prop.kind == RelationKind::Equality) {
                            // claim a different (hence false) weight for the block
                            std::vector<weights::Proposition> options;
                            for (const auto& lit : weights::literal_names()) {
                                if (lit != prop.rhs) {
                                    options.push_back(
                                        weights::Proposition::equality(prop.lhs, lit));
                                }
                            }
                            corrupted = options[rng.next_below(options.size())];
                        } else if (prop.kind == RelationKind::Order) {
                            corrupted = weights::Proposition::greater(prop.rhs, prop.lhs);
                        } else {
                            // a true inequality comes from ordered blocks; the
                            // reversed order claim is false and stays in-menu
                            auto a = prop.lhs, b = prop.rhs;
                            bool a_heavier =
                                truth.grams.at(a) > truth.grams.at(b);
                            corrupted = weights::Proposition::greater(a_heavier ? b : a,
                                                                      a_heavier ? a : b);
                        }
                        if (corrupted && !weights::proposition_true(*corrupted, truth)) {
                            dispreferred[0] = weights_menu_index(*corrupted) + 1;
                            flipped = true;
                        }
                    }
                }
            }

            if (!flipped) {
                ++out.skipped;
                continue;
            }
            PreferencePair pair;
            pair.context = featurize(rec->context, rec->intervention, pid, CfFlag::Factual, false);
            pair.preferred = std::move(preferred);
            pair.dispreferred = std::move(dispreferred);
            out.pairs.push_back(std::move(pair));
        }
    }
    return out;
}

double preference_margin(const SoftmaxPolicy& policy, const SoftmaxPolicy& ref,
                         const PreferencePair& pair) {
    auto rows = action_logprobs(policy, pair.context);
    auto ref_rows = action_logprobs(ref, pair.context);
    double h = 0.0;
    for (std::size_t s = 0; s < rows.size(); ++s) {
        h += rows[s][pair.preferred[s]] - ref_rows[s][pair.preferred[s]];
        h -= rows[s][pair.dispreferred[s]] - ref_rows[s][pair.dispreferred[s]];
    }
    return h;
}

namespace {

SoftmaxPolicy train_preference(const std::vector<PreferencePair>& pairs, const SoftmaxPolicy& ref,
                               double beta, const TrainerConfig& cfg, bool ipo) {
    if (pairs.empty()) throw EmptyPairs("no preference pairs");
    SoftmaxPolicy policy = ref;  // initialized from the reference (BC) policy
    RandomStream shuffle_rng(derive_seed(cfg.seed, "pref/shuffle"));
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<double> dlogits;
    for (int epoch = 0; epoch < cfg.offline_epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::size_t j = shuffle_rng.next_below(i);
            std::swap(order[i - 1], order[j]);
        }
        for (std::size_t idx : order) {
            const PreferencePair& pair = pairs[idx];
            auto rows = action_logprobs(policy, pair.context);
            auto ref_rows = action_logprobs(ref, pair.context);
            double h = 0.0;
            for (std::size_t s = 0; s < rows.size(); ++s) {
                h += rows[s][pair.preferred[s]] - ref_rows[s][pair.preferred[s]];
                h -= rows[s][pair.dispreferred[s]] - ref_rows[s][pair.dispreferred[s]];
            }
            // dL/dh; descent applies -lr * dL/dh through dh/dlogits
            double dl_dh;
            if (ipo) {
                dl_dh = 2.0 * (h - 1.0 / (2.0 * beta));
            } else {
                dl_dh = -beta / (1.0 + std::exp(beta * h));  // -beta * sigmoid(-beta h)
            }
            GradBuffer grad(policy);
            for (std::size_t s = 0; s < rows.size(); ++s) {
                dlogits.assign(rows[s].size(), 0.0);
                if (pair.preferred[s] == pair.dispreferred[s]) continue;
                // dh/dz = e_w - e_l (softmax terms cancel between the two
                // chosen-action log-probs of the same row)
                dlogits[pair.preferred[s]] = -dl_dh;
                dlogits[pair.dispreferred[s]] = dl_dh;
                grad.add(policy, static_cast<int>(s), pair.context.features, dlogits);
            }
            apply_gradient(policy, grad, cfg.offline_learning_rate, nullptr);
        }
    }
    return policy;
}

}  // namespace

SoftmaxPolicy train_dpo(const std::vector<PreferencePair>& pairs, const SoftmaxPolicy& ref,
                        double beta, const TrainerConfig& cfg) {
    return train_preference(pairs, ref, beta, cfg, /*ipo=*/false);
}

SoftmaxPolicy train_ipo(const std::vector<PreferencePair>& pairs, const SoftmaxPolicy& ref,
                        double beta, const TrainerConfig& cfg) {
    return train_preference(pairs, ref, beta, cfg, /*ipo=*/true);
}

// ---------------------------------------------------------------------------
// Online loop
// ---------------------------------------------------------------------------

TrainResult train_online(const Environment& env, const SoftmaxPolicy& bc_init,
                         const TrainerConfig& cfg) {
    cfg.validate();
    VariantSpec spec = apply_variant(cfg.variant);
    if (!spec.online) throw ConfigError("variant is not trained by the online loop");

    TrainerConfig effective = cfg;
    effective.lambda_intent = spec.lambda_intent(cfg);

    TrainResult result;
    result.policy = bc_init;
    result.policy.temperature = cfg.temperature;
    const SoftmaxPolicy& ref = bc_init;
    EmaBaseline baseline(cfg.baseline_decay);

    auto probe = build_eval_contexts(env, cfg.mixture, 64, derive_seed(cfg.seed, "probe"));
    auto t0 = std::chrono::steady_clock::now();
    double last_delta_cf = compute_cf_divergence(result.policy, probe);

    for (int step = 0; step < cfg.steps; ++step) {
        RolloutBatch batch =
            collect_rollouts(env, result.policy, effective, spec, step, baseline);
        UpdateDiagnostics diag = spec.uses_intent_term
                                     ? icr_update(result.policy, ref, batch, effective)
                                     : ppo_update(result.policy, ref, batch, effective);
        bool log_step = step % cfg.metrics_stride == 0 || step == cfg.steps - 1;
        if (log_step) {
            last_delta_cf = compute_cf_divergence(result.policy, probe);
            TrainStepRow row;
            row.step = step;
            row.mean_proxy_reward = diag.mean_reward;
            row.kl_to_ref = diag.kl_to_ref;
            row.delta_cf = last_delta_cf;
            row.entropy = diag.entropy;
            row.wallclock_s =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            result.rows.push_back(row);
        }
    }
    return result;
}

}  // namespace icr
