#include "icr/wason.hpp"

#include <algorithm>
#include <cctype>

namespace icr::wason {

CardCategory classify_card(char face) {
    unsigned char c = static_cast<unsigned char>(face);
    if (std::isdigit(c)) {
        return ((face - '0') % 2 == 0) ? CardCategory::Even : CardCategory::Odd;
    }
    if (std::isalpha(c)) {
        char up = static_cast<char>(std::toupper(c));
        bool vowel = up == 'A' || up == 'E' || up == 'I' || up == 'O' || up == 'U';
        return vowel ? CardCategory::Vowel : CardCategory::Consonant;
    }
    throw InvalidFace(std::string("not a letter or digit: '") + face + "'");
}

bool is_solution_card(CardCategory c) {
    return c == CardCategory::Vowel || c == CardCategory::Odd;
}

WasonInstance WasonInstance::make(std::vector<char> faces) {
    if (faces.size() != 4) throw IcrError("instance needs exactly 4 cards");
    std::sort(faces.begin(), faces.end());
    if (std::adjacent_find(faces.begin(), faces.end()) != faces.end()) {
        throw IcrError("instance faces must be distinct");
    }
    bool nondegenerate = false;
    for (char f : faces) {
        if (is_solution_card(classify_card(f))) nondegenerate = true;
    }
    if (!nondegenerate) throw IcrError("degenerate instance: no vowel or odd card");
    WasonInstance inst;
    inst.faces = std::move(faces);
    return inst;
}

WasonInstance WasonInstance::sample(RandomStream& rng, bool mixed) {
    static const std::string vowels = "AEIOU";
    static const std::string consonants = "BCDFGHJKLMNPQRSTVWXYZ";
    static const std::string evens = "02468";
    static const std::string odds = "13579";
    if (!mixed) {
        std::vector<char> faces{
            vowels[rng.next_below(vowels.size())],
            consonants[rng.next_below(consonants.size())],
            evens[rng.next_below(evens.size())],
            odds[rng.next_below(odds.size())],
        };
        return make(std::move(faces));
    }
    const std::string pool = vowels + consonants + evens + odds;
    for (;;) {
        std::set<char> picked;
        while (picked.size() < 4) picked.insert(pool[rng.next_below(pool.size())]);
        std::vector<char> faces(picked.begin(), picked.end());
        bool ok = false;
        for (char f : faces) ok = ok || is_solution_card(classify_card(f));
        if (ok) return make(std::move(faces));
    }
}

bool WasonInstance::has_face(char f) const {
    return std::find(faces.begin(), faces.end(), f) != faces.end();
}

int WasonInstance::slot_of(char f) const {
    for (std::size_t i = 0; i < faces.size(); ++i) {
        if (faces[i] == f) return static_cast<int>(i);
    }
    throw UnknownCard(std::string("card '") + f + "' not in instance");
}

std::set<char> correct_solution(const WasonInstance& inst) {
    std::set<char> out;
    for (char f : inst.faces) {
        if (is_solution_card(classify_card(f))) out.insert(f);
    }
    return out;
}

double proxy_reward(const Card& card, Stance stance) {
    if (stance == Stance::Unsure) return 0.5;
    bool solution = is_solution_card(card.category);
    bool support = stance == Stance::Support;
    return (support == solution) ? 1.0 : -1.0;
}

double proxy_reward(char face, Stance stance) {
    return proxy_reward(Card{face, classify_card(face)}, stance);
}

double turn_reward(const StanceAction& action, const WasonInstance& inst) {
    double total = 0.0;
    for (const auto& [face, stance] : action.stances) {
        if (!inst.has_face(face)) {
            throw UnknownCard(std::string("stance on card '") + face + "' outside instance");
        }
        total += proxy_reward(face, stance);
    }
    return total;
}

double final_accuracy(const std::set<char>& submission, const WasonInstance& inst) {
    for (char f : submission) {
        if (!inst.has_face(f)) {
            throw UnknownCard(std::string("submission card '") + f + "' outside instance");
        }
    }
    const std::set<char> correct = correct_solution(inst);
    int hits = 0;
    for (char f : inst.faces) {
        bool in_sub = submission.count(f) > 0;
        bool in_correct = correct.count(f) > 0;
        if (in_sub == in_correct) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(inst.faces.size());
}

std::optional<SolutionFramework> framework_of(const std::set<char>& supported,
                                              const WasonInstance& inst) {
    for (char f : supported) {
        if (!inst.has_face(f)) {
            throw UnknownCard(std::string("supported card '") + f + "' outside instance");
        }
    }
    if (supported.empty()) return std::nullopt;
    SolutionFramework fw;
    for (char f : supported) fw.categories.insert(classify_card(f));
    return fw;
}

const char* to_string(Stance s) {
    switch (s) {
        case Stance::Support: return "support";
        case Stance::Oppose: return "oppose";
        case Stance::Unsure: return "unsure";
    }
    return "?";
}

const char* to_string(CardCategory c) {
    switch (c) {
        case CardCategory::Vowel: return "vowel";
        case CardCategory::Consonant: return "consonant";
        case CardCategory::Even: return "even";
        case CardCategory::Odd: return "odd";
    }
    return "?";
}

Stance stance_from_string(const std::string& s) {
    std::string low;
    low.reserve(s.size());
    for (char c : s) low.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (low == "support") return Stance::Support;
    if (low == "oppose") return Stance::Oppose;
    if (low == "unsure" || low == "consider_later") return Stance::Unsure;
    throw IcrError("unknown stance string: " + s);
}

}  // namespace icr::wason
