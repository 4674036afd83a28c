#include "icr/mamdp.hpp"

#include <algorithm>
#include <sstream>

#include "json.hpp"

namespace icr {

using nlohmann::json;

const char* to_string(Quality q) {
    switch (q) {
        case Quality::Helpful: return "helpful";
        case Quality::Misleading: return "misleading";
        case Quality::Irrelevant: return "irrelevant";
    }
    return "?";
}

Quality quality_from_string(const std::string& s) {
    if (s == "helpful") return Quality::Helpful;
    if (s == "misleading") return Quality::Misleading;
    if (s == "irrelevant") return Quality::Irrelevant;
    throw IcrError("unknown quality: " + s);
}

namespace {

void hash_string(std::uint64_t& h, const std::string& s) {
    h = fnv1a(s, h);
    h = fnv1a_u64(s.size(), h);
}

void hash_payload(std::uint64_t& h, const InterventionPayload& payload) {
    if (const auto* ws = std::get_if<WasonSuggestion>(&payload)) {
        hash_string(h, "wason");
        h = fnv1a_u64(static_cast<std::uint64_t>(ws->face), h);
        h = fnv1a_u64(static_cast<std::uint64_t>(ws->stance), h);
    } else {
        const auto& p = std::get<WeightsSuggestion>(payload).prop;
        hash_string(h, "weights");
        h = fnv1a_u64(static_cast<std::uint64_t>(p.kind), h);
        hash_string(h, p.lhs);
        hash_string(h, p.rhs);
    }
}

void hash_move(std::uint64_t& h, const MoveRecord& move) {
    if (const auto* sa = std::get_if<wason::StanceAction>(&move)) {
        hash_string(h, "stance");
        for (const auto& [face, stance] : sa->stances) {
            h = fnv1a_u64(static_cast<std::uint64_t>(face), h);
            h = fnv1a_u64(static_cast<std::uint64_t>(stance), h);
        }
    } else {
        const auto& pa = std::get<weights::PropositionAction>(move);
        hash_string(h, "prop");
        if (pa.assertion) {
            h = fnv1a_u64(static_cast<std::uint64_t>(pa.assertion->kind), h);
            hash_string(h, pa.assertion->lhs);
            hash_string(h, pa.assertion->rhs);
        } else {
            hash_string(h, "abstain");
        }
    }
}

}  // namespace

std::uint64_t DialogueState::content_hash() const {
    std::uint64_t h = kFnvOffset;
    if (const auto* wi = std::get_if<wason::WasonInstance>(&task_instance)) {
        hash_string(h, "wason");
        for (char f : wi->faces) h = fnv1a_u64(static_cast<std::uint64_t>(f), h);
    } else {
        const auto& bw = std::get<weights::BlockWeights>(task_instance);
        hash_string(h, "weights");
        for (const auto& [name, grams] : bw.grams) {
            hash_string(h, name);
            h = fnv1a_u64(static_cast<std::uint64_t>(grams), h);
        }
    }
    h = fnv1a_u64(participants.size(), h);
    h = fnv1a_u64(static_cast<std::uint64_t>(turn_index), h);
    for (const auto& [intervention, action] : history) {
        hash_payload(h, intervention.payload);
        h = fnv1a_u64(static_cast<std::uint64_t>(intervention.turn), h);
        for (const auto& [pid, move] : action.per_participant) {
            h = fnv1a_u64(static_cast<std::uint64_t>(pid), h);
            hash_move(h, move);
        }
    }
    return h;
}

DialogueState initial_state(TaskInstance instance, int n_participants) {
    if (n_participants < 1 || n_participants > 6) {
        throw IcrError("participant count must be in [1,6]");
    }
    DialogueState s;
    s.task_instance = std::move(instance);
    for (int i = 0; i < n_participants; ++i) {
        s.participants.push_back({i, "P" + std::to_string(i + 1)});
    }
    return s;
}

DialogueState step(const DialogueState& state, const InterventionAction& intervention,
                   const CollaboratorAction& responses) {
    if (intervention.turn != state.turn_index) {
        throw TurnMismatch("intervention stamped for turn " + std::to_string(intervention.turn) +
                           " applied at turn " + std::to_string(state.turn_index));
    }
    if (responses.per_participant.size() != state.participants.size()) {
        throw ParticipantMismatch("expected " + std::to_string(state.participants.size()) +
                                  " responses, got " +
                                  std::to_string(responses.per_participant.size()));
    }
    for (const auto& p : state.participants) {
        if (!responses.per_participant.count(p.index)) {
            throw ParticipantMismatch("missing response for participant " +
                                      std::to_string(p.index));
        }
    }
    DialogueState next = state;
    next.history.emplace_back(intervention, responses);
    next.turn_index = state.turn_index + 1;
    return next;
}

Trajectory run_episode(const Environment& env, InterventionAgent& intervener,
                       CollaboratorAgent& collaborator, int horizon, std::uint64_t seed) {
    if (horizon < 1) throw IcrError("horizon must be >= 1");
    RandomStream instance_rng(derive_seed(seed, "episode/instance"));
    RandomStream intervener_rng(derive_seed(seed, "episode/intervener"));
    RandomStream collaborator_rng(derive_seed(seed, "episode/collaborator"));

    Trajectory traj;
    traj.seed = seed;
    traj.task = env.name();
    traj.horizon = horizon;
    {
        std::ostringstream id;
        id << env.name() << "-" << std::hex << seed;
        traj.episode_id = id.str();
    }

    DialogueState state = initial_state(env.sample_instance(instance_rng),
                                        env.participant_count());
    traj.task_instance = state.task_instance;

    for (int t = 0; t < horizon; ++t) {
        try {
            InterventionAction intervention = intervener.propose(state, intervener_rng);
            intervention.turn = t;
            CollaboratorAction responses =
                collaborator.respond(state, intervention, collaborator_rng);

            TurnRecord rec;
            rec.intervention = intervention;
            rec.actions = responses;
            for (const auto& [pid, move] : responses.per_participant) {
                env.validate_move(state, move);
                rec.rewards[pid] = env.move_reward(state, pid, move);
            }
            state = step(state, intervention, responses);
            rec.state_hash = state.content_hash();
            traj.turns.push_back(std::move(rec));
        } catch (const EpisodeFailure&) {
            throw;
        } catch (const IcrError& e) {
            throw EpisodeFailure(t, e.what());
        }
    }
    traj.final_submission = env.project_submission(state);
    return traj;
}

// ---------------------------------------------------------------------------
// Views
// ---------------------------------------------------------------------------

namespace wason_view {

std::map<char, wason::Stance> stance_state(const DialogueState& state, int participant) {
    std::map<char, wason::Stance> current;
    for (const auto& [intervention, action] : state.history) {
        auto it = action.per_participant.find(participant);
        if (it == action.per_participant.end()) continue;
        const auto& sa = std::get<wason::StanceAction>(it->second);
        for (const auto& [face, stance] : sa.stances) current[face] = stance;
    }
    return current;
}

std::set<char> supported_cards(const DialogueState& state, int participant) {
    std::set<char> out;
    for (const auto& [face, stance] : stance_state(state, participant)) {
        if (stance == wason::Stance::Support) out.insert(face);
    }
    return out;
}

std::set<char> majority_support(const DialogueState& state) {
    std::map<char, int> votes;
    for (const auto& p : state.participants) {
        for (char f : supported_cards(state, p.index)) votes[f]++;
    }
    std::set<char> out;
    const int needed = static_cast<int>(state.participants.size()) / 2 + 1;
    for (const auto& [face, n] : votes) {
        if (n >= needed) out.insert(face);
    }
    return out;
}

}  // namespace wason_view

namespace weights_view {

std::set<weights::Proposition> asserted_props(const DialogueState& state, int participant,
                                              int up_to_turn) {
    std::set<weights::Proposition> out;
    int limit = std::min<int>(up_to_turn, static_cast<int>(state.history.size()));
    for (int t = 0; t < limit; ++t) {
        const auto& action = state.history[t].second;
        auto it = action.per_participant.find(participant);
        if (it == action.per_participant.end()) continue;
        const auto& pa = std::get<weights::PropositionAction>(it->second);
        if (pa.assertion) out.insert(*pa.assertion);
    }
    return out;
}

std::set<weights::Proposition> asserted_props(const DialogueState& state, int participant) {
    return asserted_props(state, participant, state.turn_index);
}

}  // namespace weights_view

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

json payload_to_json(const InterventionPayload& payload) {
    json j;
    if (const auto* ws = std::get_if<WasonSuggestion>(&payload)) {
        j["card"] = std::string(1, ws->face);
        j["stance"] = wason::to_string(ws->stance);
    } else {
        const auto& p = std::get<WeightsSuggestion>(payload).prop;
        j["relation"] = weights::to_string(p.kind);
        j["lhs"] = p.lhs;
        j["rhs"] = p.rhs;
    }
    return j;
}

InterventionPayload payload_from_json(const json& j) {
    if (j.contains("card")) {
        WasonSuggestion ws;
        std::string card = j.at("card").get<std::string>();
        if (card.size() != 1) throw IcrError("card must be a single character");
        ws.face = card[0];
        ws.stance = wason::stance_from_string(j.at("stance").get<std::string>());
        return ws;
    }
    WeightsSuggestion s;
    std::string rel = j.at("relation").get<std::string>();
    std::string lhs = j.at("lhs").get<std::string>();
    std::string rhs = j.at("rhs").get<std::string>();
    if (rel == "equality") {
        s.prop = weights::Proposition::equality(lhs, rhs);
    } else if (rel == "inequality") {
        s.prop = weights::Proposition::inequality(lhs, rhs);
    } else if (rel == "order") {
        s.prop = weights::Proposition::greater(lhs, rhs);
    } else {
        throw IcrError("unknown relation: " + rel);
    }
    return s;
}

json move_to_json(const MoveRecord& move) {
    json j;
    if (const auto* sa = std::get_if<wason::StanceAction>(&move)) {
        json cards = json::array();
        json stances = json::object();
        for (const auto& [face, stance] : sa->stances) {
            cards.push_back(std::string(1, face));
            stances[std::string(1, face)] = wason::to_string(stance);
        }
        j["cards"] = cards;
        j["stances"] = stances;
    } else {
        const auto& pa = std::get<weights::PropositionAction>(move);
        if (pa.assertion) {
            j["assert"] = {{"relation", weights::to_string(pa.assertion->kind)},
                           {"lhs", pa.assertion->lhs},
                           {"rhs", pa.assertion->rhs}};
        } else {
            j["assert"] = nullptr;
        }
    }
    return j;
}

MoveRecord move_from_json(const json& j) {
    if (j.contains("stances")) {
        wason::StanceAction sa;
        for (const auto& [face, stance] : j.at("stances").items()) {
            if (face.size() != 1) throw IcrError("card keys must be single characters");
            sa.stances[face[0]] = wason::stance_from_string(stance.get<std::string>());
        }
        return sa;
    }
    weights::PropositionAction pa;
    const json& a = j.at("assert");
    if (!a.is_null()) {
        InterventionPayload p = payload_from_json(a);
        pa.assertion = std::get<WeightsSuggestion>(p).prop;
    }
    return pa;
}

json instance_to_json(const TaskInstance& instance) {
    json j;
    if (const auto* wi = std::get_if<wason::WasonInstance>(&instance)) {
        json cards = json::array();
        for (char f : wi->faces) cards.push_back(std::string(1, f));
        j["cards"] = cards;
    } else {
        const auto& bw = std::get<weights::BlockWeights>(instance);
        json weights_obj = json::object();
        for (const auto& [name, grams] : bw.grams) weights_obj[name] = grams;
        j["weights"] = weights_obj;
        j["known"] = json::array();
        for (const auto& name : bw.known_to_participants) j["known"].push_back(name);
    }
    return j;
}

TaskInstance instance_from_json(const std::string& task, const json& j) {
    if (task == "wason") {
        std::vector<char> faces;
        for (const auto& c : j.at("cards")) {
            std::string s = c.get<std::string>();
            if (s.size() != 1) throw IcrError("card must be one character");
            faces.push_back(s[0]);
        }
        return wason::WasonInstance::make(std::move(faces));
    }
    weights::BlockWeights bw;
    for (const auto& [name, grams] : j.at("weights").items()) {
        bw.grams[name] = grams.get<int>();
    }
    for (const auto& name : j.at("known")) {
        bw.known_to_participants.insert(name.get<std::string>());
    }
    return bw;
}

json submission_to_json(const Submission& sub) {
    json j;
    if (const auto* ws = std::get_if<WasonSubmission>(&sub)) {
        json cards = json::array();
        for (char f : ws->cards) cards.push_back(std::string(1, f));
        j = cards;
    } else {
        const auto& wsub = std::get<WeightsSubmission>(sub);
        j = json::array();
        for (const auto& props : wsub.per_participant) {
            json plist = json::array();
            for (const auto& p : props) {
                plist.push_back({{"relation", weights::to_string(p.kind)},
                                 {"lhs", p.lhs},
                                 {"rhs", p.rhs}});
            }
            j.push_back(plist);
        }
    }
    return j;
}

Submission submission_from_json(const std::string& task, const json& j) {
    if (task == "wason") {
        WasonSubmission ws;
        for (const auto& c : j) {
            std::string s = c.get<std::string>();
            ws.cards.insert(s[0]);
        }
        return ws;
    }
    WeightsSubmission wsub;
    for (const auto& plist : j) {
        std::set<weights::Proposition> props;
        for (const auto& pj : plist) {
            InterventionPayload p = payload_from_json(pj);
            props.insert(std::get<WeightsSuggestion>(p).prop);
        }
        wsub.per_participant.push_back(std::move(props));
    }
    return wsub;
}

}  // namespace

std::string trajectory_to_jsonl(const Trajectory& traj) {
    json j;
    j["episode_id"] = traj.episode_id;
    j["seed"] = traj.seed;
    j["task"] = traj.task;
    j["instance"] = instance_to_json(traj.task_instance);
    json turns = json::array();
    for (std::size_t t = 0; t < traj.turns.size(); ++t) {
        const TurnRecord& rec = traj.turns[t];
        json jt;
        jt["t"] = t;
        jt["intervention"] = {{"payload", payload_to_json(rec.intervention.payload)},
                              {"quality", to_string(rec.intervention.quality_tag)}};
        json actions = json::object();
        json rewards = json::object();
        for (const auto& [pid, move] : rec.actions.per_participant) {
            actions[std::to_string(pid)] = move_to_json(move);
        }
        for (const auto& [pid, r] : rec.rewards) {
            rewards[std::to_string(pid)] = r;
        }
        jt["actions"] = actions;
        jt["rewards"] = rewards;
        turns.push_back(jt);
    }
    j["turns"] = turns;
    j["final_submission"] = submission_to_json(traj.final_submission);
    json metrics = json::object();
    for (const auto& [k, v] : traj.metrics) metrics[k] = v;
    j["metrics"] = metrics;
    return j.dump();
}

std::string state_to_json(const DialogueState& state) {
    json j;
    j["task"] = std::holds_alternative<wason::WasonInstance>(state.task_instance) ? "wason"
                                                                                  : "weights";
    j["instance"] = instance_to_json(state.task_instance);
    j["participants"] = state.participants.size();
    json hist = json::array();
    for (const auto& [intervention, action] : state.history) {
        json jt;
        jt["intervention"] = {{"payload", payload_to_json(intervention.payload)},
                              {"quality", to_string(intervention.quality_tag)},
                              {"turn", intervention.turn}};
        json actions = json::object();
        for (const auto& [pid, move] : action.per_participant) {
            actions[std::to_string(pid)] = move_to_json(move);
        }
        jt["actions"] = actions;
        hist.push_back(jt);
    }
    j["history"] = hist;
    return j.dump();
}

DialogueState state_from_json(const std::string& text) {
    json j = json::parse(text);
    std::string task = j.at("task").get<std::string>();
    DialogueState state = initial_state(instance_from_json(task, j.at("instance")),
                                        j.at("participants").get<int>());
    for (const auto& jt : j.at("history")) {
        InterventionAction intervention;
        intervention.payload = payload_from_json(jt.at("intervention").at("payload"));
        intervention.quality_tag =
            quality_from_string(jt.at("intervention").at("quality").get<std::string>());
        intervention.turn = jt.at("intervention").at("turn").get<int>();
        CollaboratorAction action;
        for (const auto& [pid, move] : jt.at("actions").items()) {
            action.per_participant[std::stoi(pid)] = move_from_json(move);
        }
        state = step(state, intervention, action);
    }
    return state;
}

std::string move_to_json_text(const MoveRecord& move) { return move_to_json(move).dump(); }
MoveRecord move_from_json_text(const std::string& text) {
    return move_from_json(json::parse(text));
}
std::string payload_to_json_text(const InterventionPayload& payload) {
    return payload_to_json(payload).dump();
}
InterventionPayload payload_from_json_text(const std::string& text) {
    return payload_from_json(json::parse(text));
}

Trajectory trajectory_from_jsonl(const std::string& line) {
    json j = json::parse(line);
    static const std::set<std::string> allowed{"episode_id", "seed",  "task",   "instance",
                                               "turns",      "final_submission", "metrics"};
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) throw IcrError("unknown trajectory field: " + key);
    }
    Trajectory traj;
    traj.episode_id = j.at("episode_id").get<std::string>();
    traj.seed = j.at("seed").get<std::uint64_t>();
    traj.task = j.at("task").get<std::string>();
    traj.task_instance = instance_from_json(traj.task, j.at("instance"));
    for (const auto& jt : j.at("turns")) {
        TurnRecord rec;
        rec.intervention.payload = payload_from_json(jt.at("intervention").at("payload"));
        rec.intervention.quality_tag =
            quality_from_string(jt.at("intervention").at("quality").get<std::string>());
        rec.intervention.turn = jt.at("t").get<int>();
        for (const auto& [pid, move] : jt.at("actions").items()) {
            rec.actions.per_participant[std::stoi(pid)] = move_from_json(move);
        }
        for (const auto& [pid, r] : jt.at("rewards").items()) {
            rec.rewards[std::stoi(pid)] = r.get<double>();
        }
        traj.turns.push_back(std::move(rec));
    }
    traj.horizon = static_cast<int>(traj.turns.size());
    traj.final_submission = submission_from_json(traj.task, j.at("final_submission"));
    for (const auto& [k, v] : j.at("metrics").items()) {
        traj.metrics[k] = v.get<double>();
    }
    return traj;
}

}  // namespace icr
