#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "icr/common.hpp"

namespace icr::weights {

/// Ground truth for one task instance. Participants only ever know the
/// weights of the blocks listed in `known_to_participants`.
struct BlockWeights {
    std::map<std::string, int> grams;          // block name -> weight in grams
    std::set<std::string> known_to_participants;

    static BlockWeights standard();  // red/blue 10, green 20, purple 30, yellow 50; red known
    bool has_block(const std::string& name) const { return grams.count(name) > 0; }
};

enum class RelationKind { Equality, Inequality, Order };

/// An atomic claim over blocks and weight literals, stored in canonical form:
///  - Equality/Inequality operands are sorted lexicographically, literals last.
///  - Order is always lhs > rhs.
/// Construct through `make` so the canonicalization cannot be bypassed.
struct Proposition {
    RelationKind kind{};
    std::string lhs;
    std::string rhs;

    static Proposition make(RelationKind kind, std::string a, std::string b);
    static Proposition equality(std::string a, std::string b);
    static Proposition inequality(std::string a, std::string b);
    static Proposition greater(std::string lhs, std::string rhs);  // lhs > rhs

    std::string text() const;  // e.g. "green > red", "blue = 10g"
    bool operator<(const Proposition& o) const;
    bool operator==(const Proposition& o) const;
};

/// A participant's move for one turn: assert one proposition or abstain.
struct PropositionAction {
    std::optional<Proposition> assertion;
};

bool is_literal(const std::string& entity);          // "10g", "20g", ...
int literal_grams(const std::string& entity);        // throws on non-literal
const std::vector<std::string>& block_names();       // the five blocks
const std::vector<std::string>& literal_names();     // the four weight literals
bool is_known_entity(const std::string& entity);

/// Structured belief record mirroring the task's wire schema:
/// {"equality": {...}, "inequality": {...}, "order": {e: {">": [...], "<": [...]}},
///  "uncertain": {...}}.
struct BeliefStructure {
    std::map<std::string, std::vector<std::string>> equality;
    std::map<std::string, std::vector<std::string>> inequality;
    std::map<std::string, std::vector<std::string>> order_gt;  // entity > each listed
    std::map<std::string, std::vector<std::string>> order_lt;  // entity < each listed
    std::map<std::string, std::vector<std::string>> uncertain;

    std::size_t edge_count() const;
};

/// Parses the single-quote-tolerant JSON-like belief text. The emitter always
/// writes strict JSON; the parser accepts both forms.
BeliefStructure parse_belief(const std::string& text);
std::string emit_belief(const BeliefStructure& belief);  // strict JSON, double quotes

/// Flattens a belief structure to a canonical proposition set. With closure
/// enabled, equality is closed symmetrically/transitively and order
/// transitively (over equality classes) first. Contradictions raise
/// InconsistentBelief carrying a minimal witness.
std::set<Proposition> atomize(const BeliefStructure& belief, bool closure);

/// Closure over an already-atomized set; idempotent.
std::set<Proposition> close_propositions(const std::set<Proposition>& props);

/// Evaluates a proposition against ground truth grams.
bool proposition_true(const Proposition& p, const BlockWeights& truth);

/// Deductive view over a proposition set plus the publicly known weights.
/// Used by scripted agents and featurization: everything here is derivable
/// from asserted beliefs, never from hidden ground truth.
class BeliefDeduction {
  public:
    BeliefDeduction(const std::set<Proposition>& asserted, const BlockWeights& truth);

    bool entails(const Proposition& p) const;
    bool contradicts(const Proposition& p) const;
    bool consistent() const { return consistent_; }

  private:
    int class_of(const std::string& e) const;
    std::map<std::string, int> entity_class_;
    std::vector<std::optional<int>> class_value_;         // grams if pinned by a literal
    std::vector<std::vector<bool>> greater_;              // closed order over classes
    std::set<std::pair<int, int>> unequal_;               // inequality over classes
    bool consistent_ = true;
};

// --- Scores -----------------------------------------------------------------

/// C_norm = clamp((#true - #false) / max(1, #props), 0, 1); empty set is
/// neutral 0.5.
double correctness_score(const std::set<Proposition>& props, const BlockWeights& truth);

struct AgreementScore {
    int n_shared = 0;
    double a_norm = 0.0;
};

/// Shared-belief count across all participants with the progressive boost:
/// linear up to 3 shared, quadratic ramp on (3,10], saturated at 1 beyond 10.
AgreementScore agreement_score(const std::vector<std::set<Proposition>>& per_participant);

struct RewardBreakdown {
    double format_score = 0.0;   // S_F
    double correctness = 0.0;    // C_norm
    double agreement = 0.0;      // A_norm
    double combined = 0.0;       // R_norm = 0.7*A + 0.2*C + 0.1*S_F
    double final = 0.0;          // piecewise map onto [-1, +5]
};

/// Evaluation-time composite. Inputs must lie in [0,1].
RewardBreakdown gold_reward(double s_f, double c_norm, double a_norm);

struct AccReport {
    double acc = 0.0;        // number of true propositions in the common ground
    int shared = 0;          // |cg_props|
    int universe = 0;        // size of the enumerated proposition universe
};

AccReport acc_metric(const std::set<Proposition>& cg_props, const BlockWeights& truth);

/// All canonical propositions over the five blocks and four literals.
/// Literal-literal pairs are excluded (their truth is instance-independent).
const std::vector<Proposition>& proposition_universe();
int universe_size(RelationKind kind);

/// The no-press assertion menu: weight assignments (block = literal),
/// block-block distinctness claims and block-block orderings. Policies,
/// scripted agents and suggestions all draw from this fixed list.
const std::vector<Proposition>& assertion_menu();
int assertion_menu_index(const Proposition& p);  // -1 if absent

const char* to_string(RelationKind k);

}  // namespace icr::weights
