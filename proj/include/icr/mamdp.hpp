#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "icr/common.hpp"
#include "icr/wason.hpp"
#include "icr/weights.hpp"

namespace icr {

enum class Quality { Helpful, Misleading, Irrelevant };
const char* to_string(Quality q);
Quality quality_from_string(const std::string& s);

struct ParticipantId {
    int index = 0;
    std::string display_name;
};

/// Intervention payloads are structured suggestions, one shape per task.
struct WasonSuggestion {
    char face{};
    wason::Stance stance{};
};
struct WeightsSuggestion {
    weights::Proposition prop;
};
using InterventionPayload = std::variant<WasonSuggestion, WeightsSuggestion>;

/// One suggestion from the intervention agent. The quality tag is logged for
/// analysis only; no policy featurization may read it.
struct InterventionAction {
    InterventionPayload payload;
    Quality quality_tag = Quality::Irrelevant;
    int turn = 0;
};

/// One participant's move for a turn.
using MoveRecord = std::variant<wason::StanceAction, weights::PropositionAction>;

/// The collaborator's joint response: exactly one move per participant.
struct CollaboratorAction {
    std::map<int, MoveRecord> per_participant;
};

using TaskInstance = std::variant<wason::WasonInstance, weights::BlockWeights>;

/// Interaction history. Value semantics: `step` returns a new state and the
/// history is append-only.
struct DialogueState {
    TaskInstance task_instance;
    std::vector<ParticipantId> participants;
    std::vector<std::pair<InterventionAction, CollaboratorAction>> history;
    int turn_index = 0;

    std::uint64_t content_hash() const;
};

DialogueState initial_state(TaskInstance instance, int n_participants);

/// Appends one (intervention, responses) pair. Throws TurnMismatch if the
/// intervention is stamped for a different turn and ParticipantMismatch if a
/// participant's move is missing or extra.
DialogueState step(const DialogueState& state, const InterventionAction& intervention,
                   const CollaboratorAction& responses);

/// Final submissions: Wason hands in a card set, Weights the per-participant
/// converged proposition sets.
struct WasonSubmission {
    std::set<char> cards;
};
struct WeightsSubmission {
    std::vector<std::set<weights::Proposition>> per_participant;
};
using Submission = std::variant<WasonSubmission, WeightsSubmission>;

struct TurnRecord {
    InterventionAction intervention;
    CollaboratorAction actions;
    std::map<int, double> rewards;  // per participant
    std::uint64_t state_hash = 0;   // hash of the state after this turn
};

struct Trajectory {
    std::string episode_id;
    std::uint64_t seed = 0;
    std::string task;  // "wason" | "weights"
    TaskInstance task_instance;
    std::vector<TurnRecord> turns;
    Submission final_submission;
    int horizon = 0;
    std::map<std::string, double> metrics;
};

// --- Environment and agent interfaces ---------------------------------------

class Environment {
  public:
    virtual ~Environment() = default;
    virtual std::string name() const = 0;
    virtual int participant_count() const = 0;
    virtual TaskInstance sample_instance(RandomStream& rng) const = 0;
    /// Proxy reward for one participant's move in the given (pre-move) state.
    virtual double move_reward(const DialogueState& state, int participant,
                               const MoveRecord& move) const = 0;
    virtual void validate_move(const DialogueState& state, const MoveRecord& move) const = 0;
    /// The distinguished end-of-episode submission query.
    virtual Submission project_submission(const DialogueState& state) const = 0;
};

class InterventionAgent {
  public:
    virtual ~InterventionAgent() = default;
    virtual InterventionAction propose(const DialogueState& state, RandomStream& rng) = 0;
};

class CollaboratorAgent {
  public:
    virtual ~CollaboratorAgent() = default;
    virtual CollaboratorAction respond(const DialogueState& state,
                                       const InterventionAction& intervention,
                                       RandomStream& rng) = 0;
};

/// Runs one episode of `horizon` turns. Deterministic given (env instance
/// stream, agent identifiers, seed, horizon); agents receive independent
/// derived streams.
Trajectory run_episode(const Environment& env, InterventionAgent& intervener,
                       CollaboratorAgent& collaborator, int horizon, std::uint64_t seed);

// --- Per-participant derived views ------------------------------------------

namespace wason_view {
/// Latest stance per card for one participant (later turns override).
std::map<char, wason::Stance> stance_state(const DialogueState& state, int participant);
/// Cards the participant currently supports.
std::set<char> supported_cards(const DialogueState& state, int participant);
/// Cards supported by a strict majority of participants.
std::set<char> majority_support(const DialogueState& state);
}  // namespace wason_view

namespace weights_view {
/// All propositions asserted by a participant up to and including turn
/// `up_to_turn` (exclusive end; pass state.turn_index for "all so far").
std::set<weights::Proposition> asserted_props(const DialogueState& state, int participant,
                                              int up_to_turn);
std::set<weights::Proposition> asserted_props(const DialogueState& state, int participant);
}  // namespace weights_view

// --- Serialization -----------------------------------------------------------

/// One strict-JSON line per trajectory with exactly the documented fields.
std::string trajectory_to_jsonl(const Trajectory& traj);
/// Rejects lines with unknown top-level fields.
Trajectory trajectory_from_jsonl(const std::string& line);

std::string state_to_json(const DialogueState& state);
DialogueState state_from_json(const std::string& text);
std::string move_to_json_text(const MoveRecord& move);
MoveRecord move_from_json_text(const std::string& text);
std::string payload_to_json_text(const InterventionPayload& payload);
InterventionPayload payload_from_json_text(const std::string& text);

}  // namespace icr
