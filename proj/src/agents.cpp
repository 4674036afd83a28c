#include "icr/agents.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace icr {

using nlohmann::json;

void QualityMixture::validate() const {
    for (double p : {p_helpful, p_misleading, p_irrelevant}) {
        if (p < 0.0 || p > 1.0) throw ConfigError("mixture weights must lie in [0,1]");
    }
    if (std::abs(p_helpful + p_misleading + p_irrelevant - 1.0) > 1e-9) {
        throw ConfigError("mixture weights must sum to 1");
    }
}

Quality QualityMixture::draw(RandomStream& rng) const {
    double r = rng.next_double();
    if (r < p_helpful) return Quality::Helpful;
    if (r < p_helpful + p_misleading) return Quality::Misleading;
    return Quality::Irrelevant;
}

// ---------------------------------------------------------------------------
// ScriptedIntervener
// ---------------------------------------------------------------------------

namespace {

/// True iff no participant currently holds `stance` on `face`.
bool nobody_holds(const DialogueState& state, char face, wason::Stance stance) {
    for (const auto& p : state.participants) {
        auto stances = wason_view::stance_state(state, p.index);
        auto it = stances.find(face);
        if (it != stances.end() && it->second == stance) return false;
    }
    return true;
}

}  // namespace

InterventionAction ScriptedIntervener::propose(const DialogueState& state, RandomStream& rng) {
    Quality quality = mix_.draw(rng);
    if (std::holds_alternative<wason::WasonInstance>(state.task_instance)) {
        return propose_wason(state, quality, rng);
    }
    return propose_weights(state, quality, rng);
}

InterventionAction ScriptedIntervener::propose_wason(const DialogueState& state, Quality quality,
                                                     RandomStream& rng) const {
    const auto& inst = std::get<wason::WasonInstance>(state.task_instance);
    const auto correct = wason::correct_solution(inst);

    auto pick = [&rng](const std::vector<WasonSuggestion>& options)
        -> std::optional<WasonSuggestion> {
        if (options.empty()) return std::nullopt;
        return options[rng.next_below(options.size())];
    };

    std::optional<WasonSuggestion> chosen;
    Quality tag = quality;

    if (quality == Quality::Helpful) {
        // a correct move nobody has made yet, so verbatim adoption is a
        // strict improvement for every participant
        std::vector<WasonSuggestion> options;
        for (char f : inst.faces) {
            bool is_correct = correct.count(f) > 0;
            wason::Stance good = is_correct ? wason::Stance::Support : wason::Stance::Oppose;
            if (nobody_holds(state, f, good)) options.push_back({f, good});
        }
        chosen = pick(options);
    } else if (quality == Quality::Misleading) {
        std::vector<WasonSuggestion> options;
        for (char f : inst.faces) {
            bool is_correct = correct.count(f) > 0;
            wason::Stance bad = is_correct ? wason::Stance::Oppose : wason::Stance::Support;
            if (nobody_holds(state, f, bad)) options.push_back({f, bad});
        }
        chosen = pick(options);
    }

    if (!chosen) {
        // NoSuggestionAvailable for the drawn category: fall back to Irrelevant
        tag = Quality::Irrelevant;
        auto settled = wason_view::majority_support(state);
        std::vector<WasonSuggestion> options;
        for (char f : settled) options.push_back({f, wason::Stance::Support});
        if (options.empty()) {
            // nothing settled yet: nudge at a rule-irrelevant card
            for (char f : inst.faces) {
                if (!correct.count(f)) options.push_back({f, wason::Stance::Unsure});
            }
        }
        if (options.empty()) options.push_back({inst.faces[0], wason::Stance::Unsure});
        chosen = pick(options);
    }

    InterventionAction out;
    out.payload = *chosen;
    out.quality_tag = tag;
    out.turn = state.turn_index;
    return out;
}

InterventionAction ScriptedIntervener::propose_weights(const DialogueState& state, Quality quality,
                                                       RandomStream& rng) const {
    const auto& truth = std::get<weights::BlockWeights>(state.task_instance);

    std::set<weights::Proposition> anyone;
    std::set<weights::Proposition> everyone;
    bool first = true;
    for (const auto& p : state.participants) {
        auto mine = weights_view::asserted_props(state, p.index);
        anyone.insert(mine.begin(), mine.end());
        if (first) {
            everyone = mine;
            first = false;
        } else {
            std::set<weights::Proposition> next;
            std::set_intersection(everyone.begin(), everyone.end(), mine.begin(), mine.end(),
                                  std::inserter(next, next.begin()));
            everyone.swap(next);
        }
    }

    const auto curriculum = weights_expert_curriculum(truth);

    auto pick = [&rng](const std::vector<weights::Proposition>& options)
        -> std::optional<weights::Proposition> {
        if (options.empty()) return std::nullopt;
        return options[rng.next_below(options.size())];
    };

    std::optional<weights::Proposition> chosen;
    Quality tag = quality;

    if (quality == Quality::Helpful) {
        // fresh true propositions first, then true ones not yet in consensus
        std::vector<weights::Proposition> fresh, pending;
        for (const auto& p : curriculum) {
            if (!anyone.count(p)) {
                fresh.push_back(p);
            } else if (!everyone.count(p)) {
                pending.push_back(p);
            }
        }
        chosen = pick(fresh.empty() ? pending : fresh);
    } else if (quality == Quality::Misleading) {
        std::vector<weights::Proposition> options;
        for (const auto& p : weights::assertion_menu()) {
            if (!weights::proposition_true(p, truth) && !anyone.count(p) &&
                p.kind != weights::RelationKind::Inequality) {
                options.push_back(p);  // false weight claims or reversed orders
            }
        }
        chosen = pick(options);
    }

    if (!chosen) {
        tag = Quality::Irrelevant;
        std::vector<weights::Proposition> options(everyone.begin(), everyone.end());
        if (options.empty()) {
            // restate public knowledge
            for (const auto& name : truth.known_to_participants) {
                options.push_back(weights::Proposition::equality(
                    name, std::to_string(truth.grams.at(name)) + "g"));
            }
        }
        chosen = pick(options);
    }

    InterventionAction out;
    out.payload = WeightsSuggestion{*chosen};
    out.quality_tag = tag;
    out.turn = state.turn_index;
    return out;
}

// ---------------------------------------------------------------------------
// ExpertCollaborator
// ---------------------------------------------------------------------------

ExpertCollaborator::ExpertCollaborator(double adopt_noise) : adopt_noise_(adopt_noise) {
    if (adopt_noise < 0.0 || adopt_noise > 1.0) {
        throw ConfigError("adopt_noise must lie in [0,1]");
    }
}

CollaboratorAction ExpertCollaborator::respond(const DialogueState& state,
                                               const InterventionAction& intervention,
                                               RandomStream& rng) {
    CollaboratorAction action;
    for (const auto& p : state.participants) {
        if (std::holds_alternative<wason::WasonInstance>(state.task_instance)) {
            action.per_participant[p.index] = respond_wason(state, intervention, p.index, rng);
        } else {
            action.per_participant[p.index] = respond_weights(state, intervention, p.index, rng);
        }
    }
    return action;
}

MoveRecord ExpertCollaborator::respond_wason(const DialogueState& state,
                                             const InterventionAction& intervention,
                                             int participant, RandomStream& rng) const {
    const auto& inst = std::get<wason::WasonInstance>(state.task_instance);
    const auto correct = wason::correct_solution(inst);
    const auto& suggestion = std::get<WasonSuggestion>(intervention.payload);

    auto target_of = [&](char f) {
        return correct.count(f) ? wason::Stance::Support : wason::Stance::Oppose;
    };

    // beliefs are sticky: stances already taken persist, fresh cards get the
    // right stance, and past mistakes are only revisited when a helpful
    // suggestion points at them
    auto current = wason_view::stance_state(state, participant);
    wason::StanceAction act;
    for (char f : inst.faces) {
        auto it = current.find(f);
        act.stances[f] = it == current.end() ? target_of(f) : it->second;
    }
    bool suggestion_good = suggestion.stance == target_of(suggestion.face);
    if (suggestion_good) act.stances[suggestion.face] = suggestion.stance;

    // fallibility is front-loaded: before any evidence accumulates the expert
    // anchors on whatever the opener suggests, while later slips are rare
    double err_prob = state.turn_index == 0 ? std::min(1.0, 3.0 * adopt_noise_)
                                            : 0.2 * adopt_noise_;
    bool err = rng.next_double() < err_prob;
    if (err) {
        if (suggestion_good) {
            act.stances[suggestion.face] = wason::Stance::Unsure;  // withhold a good move
        } else {
            act.stances[suggestion.face] = suggestion.stance;  // swallow a bad one
        }
    }
    return act;
}

MoveRecord ExpertCollaborator::respond_weights(const DialogueState& state,
                                               const InterventionAction& intervention,
                                               int participant, RandomStream& rng) const {
    const auto& truth = std::get<weights::BlockWeights>(state.task_instance);
    const auto& suggestion = std::get<WeightsSuggestion>(intervention.payload);
    auto mine = weights_view::asserted_props(state, participant);

    bool err = rng.next_double() < adopt_noise_;
    bool suggestion_true = weights::proposition_true(suggestion.prop, truth);
    bool suggestion_fresh = !mine.count(suggestion.prop);

    weights::PropositionAction act;
    if (err) {
        if (suggestion_true && suggestion_fresh) {
            act.assertion = std::nullopt;  // ignore a good suggestion, contribute nothing
            return act;
        }
        act.assertion = suggestion.prop;  // adopt a bad or stale suggestion
        return act;
    }

    if (suggestion_true && suggestion_fresh) {
        act.assertion = suggestion.prop;
        return act;
    }
    // participants walk the curriculum from different offsets, so common
    // ground grows through adopted suggestions rather than identical scripts
    const auto curriculum = weights_expert_curriculum(truth);
    const std::size_t offset =
        (static_cast<std::size_t>(participant) * 7) % curriculum.size();
    for (std::size_t i = 0; i < curriculum.size(); ++i) {
        const auto& p = curriculum[(offset + i) % curriculum.size()];
        if (!mine.count(p)) {
            act.assertion = p;
            return act;
        }
    }
    // curriculum exhausted (cannot happen inside the standard horizon)
    act.assertion = curriculum.front();
    return act;
}

std::vector<weights::Proposition> weights_expert_curriculum(const weights::BlockWeights& truth) {
    using weights::Proposition;
    std::vector<Proposition> out;
    const auto& blocks = weights::block_names();
    // the five weight assignments first, known block leading
    std::vector<std::string> order;
    for (const auto& b : blocks) {
        if (truth.known_to_participants.count(b)) order.push_back(b);
    }
    for (const auto& b : blocks) {
        if (!truth.known_to_participants.count(b)) order.push_back(b);
    }
    for (const auto& b : order) {
        out.push_back(Proposition::equality(b, std::to_string(truth.grams.at(b)) + "g"));
    }
    // then orderings, widest weight gaps first
    std::vector<Proposition> orders;
    for (const auto& a : blocks) {
        for (const auto& b : blocks) {
            if (a != b && truth.grams.at(a) > truth.grams.at(b)) {
                orders.push_back(Proposition::greater(a, b));
            }
        }
    }
    std::stable_sort(orders.begin(), orders.end(),
                     [&](const Proposition& x, const Proposition& y) {
                         int gx = truth.grams.at(x.lhs) - truth.grams.at(x.rhs);
                         int gy = truth.grams.at(y.lhs) - truth.grams.at(y.rhs);
                         return gx > gy;
                     });
    out.insert(out.end(), orders.begin(), orders.end());
    // distinctness claims last
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        for (std::size_t j = i + 1; j < blocks.size(); ++j) {
            if (truth.grams.at(blocks[i]) != truth.grams.at(blocks[j])) {
                out.push_back(Proposition::inequality(blocks[i], blocks[j]));
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset collection
// ---------------------------------------------------------------------------

std::vector<const ExpertRecord*> ExpertDataset::split_view(const std::string& split) const {
    std::vector<const ExpertRecord*> out;
    for (const auto& rec : records) {
        if (rec.split == split) out.push_back(&rec);
    }
    return out;
}

ExpertDataset collect_expert_dataset(const Environment& env, const QualityMixture& mix,
                                     int n_dialogues, int horizon, std::uint64_t seed,
                                     double adopt_noise, double eval_fraction) {
    if (n_dialogues < 1) throw ConfigError("need at least one dialogue");
    ExpertDataset dataset;
    int n_eval = static_cast<int>(std::floor(n_dialogues * eval_fraction));

    for (int i = 0; i < n_dialogues; ++i) {
        ScriptedIntervener intervener(mix);
        ExpertCollaborator expert(adopt_noise);
        std::uint64_t episode_seed = derive_seed(seed, "expert/dialogue", i);
        Trajectory traj = run_episode(env, intervener, expert, horizon, episode_seed);

        std::string split = (i >= n_dialogues - n_eval) ? "eval" : "train";
        DialogueState state = initial_state(traj.task_instance, env.participant_count());
        for (const auto& rec : traj.turns) {
            ExpertRecord out;
            out.context = state;
            out.intervention = rec.intervention;
            out.action = rec.actions;
            out.rewards = rec.rewards;
            out.split = split;
            dataset.records.push_back(std::move(out));
            state = step(state, rec.intervention, rec.actions);
        }
    }
    return dataset;
}

std::string expert_record_to_jsonl(const ExpertRecord& rec) {
    json j;
    j["context"] = json::parse(state_to_json(rec.context));
    j["intervention"] = {{"payload", json::parse(payload_to_json_text(rec.intervention.payload))},
                         {"quality", to_string(rec.intervention.quality_tag)},
                         {"turn", rec.intervention.turn}};
    json actions = json::object();
    for (const auto& [pid, move] : rec.action.per_participant) {
        actions[std::to_string(pid)] = json::parse(move_to_json_text(move));
    }
    j["action"] = actions;
    json rewards = json::object();
    for (const auto& [pid, r] : rec.rewards) rewards[std::to_string(pid)] = r;
    j["reward"] = rewards;
    j["split"] = rec.split;
    return j.dump();
}

ExpertRecord expert_record_from_jsonl(const std::string& line) {
    json j = json::parse(line);
    static const std::set<std::string> allowed{"context", "intervention", "action", "reward",
                                               "split"};
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) throw IcrError("unknown expert record field: " + key);
    }
    ExpertRecord rec;
    rec.context = state_from_json(j.at("context").dump());
    rec.intervention.payload = payload_from_json_text(j.at("intervention").at("payload").dump());
    rec.intervention.quality_tag =
        quality_from_string(j.at("intervention").at("quality").get<std::string>());
    rec.intervention.turn = j.at("intervention").at("turn").get<int>();
    for (const auto& [pid, move] : j.at("action").items()) {
        rec.action.per_participant[std::stoi(pid)] = move_from_json_text(move.dump());
    }
    for (const auto& [pid, r] : j.at("reward").items()) {
        rec.rewards[std::stoi(pid)] = r.get<double>();
    }
    rec.split = j.at("split").get<std::string>();
    return rec;
}

}  // namespace icr
