#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "icr/common.hpp"

namespace icr::wason {

enum class Stance { Support, Oppose, Unsure };

enum class CardCategory { Vowel, Consonant, Even, Odd };

/// A visible card face plus its derived category.
struct Card {
    char face{};
    CardCategory category{};
};

/// Four distinct faces under the fixed rule "vowel implies even".
/// Faces are stored sorted (digits before letters) so that sub-action slot k
/// always refers to faces[k].
struct WasonInstance {
    std::vector<char> faces;  // exactly 4, sorted, distinct

    static WasonInstance make(std::vector<char> faces);
    /// Canonical layout: one vowel, one consonant, one even, one odd.
    /// With mixed=true any non-degenerate 4-card draw is allowed.
    static WasonInstance sample(RandomStream& rng, bool mixed = false);

    bool has_face(char f) const;
    int slot_of(char f) const;  // index into faces; throws UnknownCard
};

/// Per-turn stance declaration. Omitted faces mean "no stance this turn",
/// which is distinct from an explicit Unsure.
struct StanceAction {
    std::map<char, Stance> stances;
};

/// The category set spanned by a participant's supported cards, e.g. {Vowel}
/// or {Vowel, Odd}. Identifies a "solution type" for common-ground counting.
struct SolutionFramework {
    std::set<CardCategory> categories;
    bool operator<(const SolutionFramework& o) const { return categories < o.categories; }
    bool operator==(const SolutionFramework& o) const { return categories == o.categories; }
};

CardCategory classify_card(char face);
bool is_solution_card(CardCategory c);  // vowel or odd

/// Faces that must be flipped to test the rule: vowels and odd numbers.
std::set<char> correct_solution(const WasonInstance& inst);

/// Per-card stance reward: +1 for the logically right stance, -1 for the
/// wrong one, +0.5 for declared uncertainty.
double proxy_reward(const Card& card, Stance stance);
double proxy_reward(char face, Stance stance);

/// Sum of per-card rewards over the stances present in the action.
double turn_reward(const StanceAction& action, const WasonInstance& inst);

/// Symmetric per-card accuracy of a final submission in [0,1]: credit for
/// selecting each solution card and for leaving out each non-solution card.
double final_accuracy(const std::set<char>& submission, const WasonInstance& inst);

/// Framework of a supported set; empty set carries no framework.
std::optional<SolutionFramework> framework_of(const std::set<char>& supported,
                                              const WasonInstance& inst);

const char* to_string(Stance s);
const char* to_string(CardCategory c);
Stance stance_from_string(const std::string& s);  // case-insensitive; consider_later -> Unsure

}  // namespace icr::wason
