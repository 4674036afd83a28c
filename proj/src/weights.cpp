#include "icr/weights.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "json.hpp"

namespace icr::weights {

using nlohmann::json;

BlockWeights BlockWeights::standard() {
    BlockWeights w;
    w.grams = {{"red", 10}, {"blue", 10}, {"green", 20}, {"purple", 30}, {"yellow", 50}};
    w.known_to_participants = {"red"};
    return w;
}

const std::vector<std::string>& block_names() {
    static const std::vector<std::string> names{"blue", "green", "purple", "red", "yellow"};
    return names;
}

const std::vector<std::string>& literal_names() {
    static const std::vector<std::string> names{"10g", "20g", "30g", "50g"};
    return names;
}

bool is_literal(const std::string& entity) {
    if (entity.size() < 2 || entity.back() != 'g') return false;
    for (std::size_t i = 0; i + 1 < entity.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(entity[i]))) return false;
    }
    return true;
}

int literal_grams(const std::string& entity) {
    if (!is_literal(entity)) throw IcrError("not a weight literal: " + entity);
    return std::stoi(entity.substr(0, entity.size() - 1));
}

bool is_known_entity(const std::string& entity) {
    if (is_literal(entity)) {
        const auto& lits = literal_names();
        return std::find(lits.begin(), lits.end(), entity) != lits.end();
    }
    const auto& blocks = block_names();
    return std::find(blocks.begin(), blocks.end(), entity) != blocks.end();
}

Proposition Proposition::make(RelationKind kind, std::string a, std::string b) {
    if (a == b) throw IcrError("proposition operands must differ: " + a);
    Proposition p;
    p.kind = kind;
    if (kind == RelationKind::Order) {
        p.lhs = std::move(a);
        p.rhs = std::move(b);
        return p;
    }
    // symmetric relations: sort operands, literals after blocks
    bool a_lit = is_literal(a), b_lit = is_literal(b);
    bool swap = (a_lit && !b_lit) || (a_lit == b_lit && a > b);
    p.lhs = swap ? std::move(b) : std::move(a);
    p.rhs = swap ? std::move(a) : std::move(b);
    return p;
}

Proposition Proposition::equality(std::string a, std::string b) {
    return make(RelationKind::Equality, std::move(a), std::move(b));
}
Proposition Proposition::inequality(std::string a, std::string b) {
    return make(RelationKind::Inequality, std::move(a), std::move(b));
}
Proposition Proposition::greater(std::string lhs, std::string rhs) {
    return make(RelationKind::Order, std::move(lhs), std::move(rhs));
}

std::string Proposition::text() const {
    const char* op = kind == RelationKind::Equality     ? " = "
                     : kind == RelationKind::Inequality ? " != "
                                                        : " > ";
    return lhs + op + rhs;
}

bool Proposition::operator<(const Proposition& o) const {
    if (kind != o.kind) return kind < o.kind;
    if (lhs != o.lhs) return lhs < o.lhs;
    return rhs < o.rhs;
}

bool Proposition::operator==(const Proposition& o) const {
    return kind == o.kind && lhs == o.lhs && rhs == o.rhs;
}

std::size_t BeliefStructure::edge_count() const {
    std::size_t n = 0;
    for (const auto& [k, v] : equality) n += v.size();
    for (const auto& [k, v] : inequality) n += v.size();
    for (const auto& [k, v] : order_gt) n += v.size();
    for (const auto& [k, v] : order_lt) n += v.size();
    return n;
}

namespace {

void check_entity(const std::string& name) {
    if (!is_known_entity(name)) throw UnknownEntity("unknown entity: " + name);
}

std::map<std::string, std::vector<std::string>> read_edge_map(const json& j,
                                                              const std::string& field) {
    std::map<std::string, std::vector<std::string>> out;
    if (!j.contains(field)) return out;
    const json& m = j.at(field);
    if (!m.is_object()) throw MalformedBelief("'" + field + "' must be an object");
    for (const auto& [key, value] : m.items()) {
        check_entity(key);
        if (!value.is_array()) throw MalformedBelief("'" + field + "." + key + "' must be a list");
        for (const auto& item : value) {
            if (!item.is_string()) throw MalformedBelief("entity names must be strings");
            std::string name = item.get<std::string>();
            check_entity(name);
            out[key].push_back(std::move(name));
        }
    }
    return out;
}

/// Converts the prompt-style single-quoted form to strict JSON. Quotes are
/// only ever used as string delimiters in this schema, so a straight swap of
/// delimiter kind is safe.
std::string normalize_quotes(const std::string& text) {
    if (text.find('\'') == std::string::npos) return text;
    std::string out = text;
    for (char& c : out) {
        if (c == '\'') c = '"';
    }
    return out;
}

}  // namespace

BeliefStructure parse_belief(const std::string& text) {
    json j;
    try {
        j = json::parse(normalize_quotes(text));
    } catch (const json::parse_error& e) {
        throw MalformedBelief(std::string("belief is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw MalformedBelief("belief must be a JSON object");
    static const std::set<std::string> allowed{"equality", "inequality", "order", "uncertain"};
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) throw MalformedBelief("unknown belief field: " + key);
    }

    BeliefStructure belief;
    belief.equality = read_edge_map(j, "equality");
    belief.inequality = read_edge_map(j, "inequality");
    belief.uncertain = read_edge_map(j, "uncertain");

    if (j.contains("order")) {
        const json& m = j.at("order");
        if (!m.is_object()) throw MalformedBelief("'order' must be an object");
        for (const auto& [key, value] : m.items()) {
            check_entity(key);
            if (!value.is_object()) {
                throw MalformedBelief("'order." + key + "' must be an object with '>'/'<'");
            }
            for (const auto& [dir, list] : value.items()) {
                if (dir != ">" && dir != "<") {
                    throw MalformedBelief("order direction must be '>' or '<', got " + dir);
                }
                if (!list.is_array()) throw MalformedBelief("order lists must be arrays");
                for (const auto& item : list) {
                    if (!item.is_string()) throw MalformedBelief("entity names must be strings");
                    std::string name = item.get<std::string>();
                    check_entity(name);
                    if (dir == ">") {
                        belief.order_gt[key].push_back(std::move(name));
                    } else {
                        belief.order_lt[key].push_back(std::move(name));
                    }
                }
            }
        }
    }
    return belief;
}

std::string emit_belief(const BeliefStructure& belief) {
    json j;
    auto edge_map = [](const std::map<std::string, std::vector<std::string>>& m) {
        json out = json::object();
        for (const auto& [k, v] : m) out[k] = v;
        return out;
    };
    j["equality"] = edge_map(belief.equality);
    j["inequality"] = edge_map(belief.inequality);
    json order = json::object();
    std::set<std::string> order_keys;
    for (const auto& [k, v] : belief.order_gt) order_keys.insert(k);
    for (const auto& [k, v] : belief.order_lt) order_keys.insert(k);
    for (const auto& k : order_keys) {
        json entry = json::object();
        if (auto it = belief.order_gt.find(k); it != belief.order_gt.end()) entry[">"] = it->second;
        if (auto it = belief.order_lt.find(k); it != belief.order_lt.end()) entry["<"] = it->second;
        order[k] = entry;
    }
    j["order"] = order;
    j["uncertain"] = edge_map(belief.uncertain);
    return j.dump();
}

// ---------------------------------------------------------------------------
// Closure engine. Entities are mapped to equality classes (union-find), order
// runs between classes and is closed transitively, inequality is kept as an
// edge set over classes. All contradiction checks live here.
// ---------------------------------------------------------------------------

namespace {

struct ClosureEngine {
    std::vector<std::string> entities;
    std::map<std::string, int> index;
    std::vector<int> parent;

    int find(int x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }

    int intern(const std::string& e) {
        auto it = index.find(e);
        if (it != index.end()) return it->second;
        int id = static_cast<int>(entities.size());
        entities.push_back(e);
        index.emplace(e, id);
        parent.push_back(id);
        return id;
    }

    std::vector<std::pair<int, int>> order_edges;  // lhs > rhs (entity ids)
    std::vector<std::pair<int, int>> ineq_edges;
    std::vector<std::pair<int, int>> eq_edges;

    void add(const Proposition& p) {
        int a = intern(p.lhs), b = intern(p.rhs);
        switch (p.kind) {
            case RelationKind::Equality: eq_edges.emplace_back(a, b); break;
            case RelationKind::Inequality: ineq_edges.emplace_back(a, b); break;
            case RelationKind::Order: order_edges.emplace_back(a, b); break;
        }
    }

    // Union equality classes; a class may carry at most one literal value.
    void merge_equalities(bool throw_on_conflict) {
        for (auto [a, b] : eq_edges) {
            int ra = find(a), rb = find(b);
            if (ra != rb) parent[ra] = rb;
        }
        if (!throw_on_conflict) return;
        std::map<int, std::string> value_of;
        for (std::size_t i = 0; i < entities.size(); ++i) {
            if (!is_literal(entities[i])) continue;
            int r = find(static_cast<int>(i));
            auto it = value_of.find(r);
            if (it != value_of.end() && it->second != entities[i]) {
                throw InconsistentBelief("equality chain links distinct weights " + it->second +
                                         " and " + entities[i]);
            }
            value_of.emplace(r, entities[i]);
        }
    }

    int n_classes() const { return static_cast<int>(entities.size()); }

    /// Floyd-Warshall style reachability over class-level order edges.
    std::vector<std::vector<bool>> closed_order(bool throw_on_cycle) {
        int n = n_classes();
        std::vector<std::vector<bool>> gt(n, std::vector<bool>(n, false));
        auto* self = const_cast<ClosureEngine*>(this);
        for (auto [a, b] : order_edges) {
            int ra = self->find(a), rb = self->find(b);
            if (ra == rb && throw_on_cycle) {
                throw InconsistentBelief("order between equals: " + entities[a] + " > " +
                                         entities[b]);
            }
            if (ra != rb) gt[ra][rb] = true;
        }
        for (int k = 0; k < n; ++k) {
            for (int i = 0; i < n; ++i) {
                if (!gt[i][k]) continue;
                for (int j = 0; j < n; ++j) {
                    if (gt[k][j]) gt[i][j] = true;
                }
            }
        }
        if (throw_on_cycle) {
            for (int i = 0; i < n; ++i) {
                if (gt[i][i]) {
                    throw InconsistentBelief("order cycle through " + entities[i]);
                }
                for (int j = 0; j < n; ++j) {
                    if (i < j && gt[i][j] && gt[j][i]) {
                        throw InconsistentBelief("mutual order " + entities[i] + " > " +
                                                 entities[j] + " and " + entities[j] + " > " +
                                                 entities[i]);
                    }
                }
            }
        }
        return gt;
    }

    void check_inequality_conflicts() {
        for (auto [a, b] : ineq_edges) {
            if (find(a) == find(b)) {
                throw InconsistentBelief("claimed both equal and unequal: " + entities[a] +
                                         " vs " + entities[b]);
            }
        }
    }
};

std::set<Proposition> props_from_belief(const BeliefStructure& belief) {
    std::set<Proposition> props;
    for (const auto& [lhs, partners] : belief.equality) {
        for (const auto& rhs : partners) props.insert(Proposition::equality(lhs, rhs));
    }
    for (const auto& [lhs, partners] : belief.inequality) {
        for (const auto& rhs : partners) props.insert(Proposition::inequality(lhs, rhs));
    }
    for (const auto& [lhs, partners] : belief.order_gt) {
        for (const auto& rhs : partners) props.insert(Proposition::greater(lhs, rhs));
    }
    for (const auto& [lhs, partners] : belief.order_lt) {
        for (const auto& rhs : partners) props.insert(Proposition::greater(rhs, lhs));
    }
    return props;
}

}  // namespace

std::set<Proposition> close_propositions(const std::set<Proposition>& props) {
    ClosureEngine eng;
    for (const auto& p : props) eng.add(p);
    eng.merge_equalities(/*throw_on_conflict=*/true);
    eng.check_inequality_conflicts();
    auto gt = eng.closed_order(/*throw_on_cycle=*/true);

    // classes -> member lists
    std::map<int, std::vector<int>> members;
    for (int i = 0; i < eng.n_classes(); ++i) members[eng.find(i)].push_back(i);

    std::set<Proposition> out;
    // expanded equality: all pairs within a class
    for (const auto& [root, ids] : members) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
            for (std::size_t j = i + 1; j < ids.size(); ++j) {
                out.insert(Proposition::equality(eng.entities[ids[i]], eng.entities[ids[j]]));
            }
        }
    }
    // inequality lifted over classes
    for (auto [a, b] : eng.ineq_edges) {
        for (int ia : members[eng.find(a)]) {
            for (int ib : members[eng.find(b)]) {
                out.insert(Proposition::inequality(eng.entities[ia], eng.entities[ib]));
            }
        }
    }
    // transitive order lifted over classes
    for (const auto& [ra, ids_a] : members) {
        for (const auto& [rb, ids_b] : members) {
            if (!gt[ra][rb]) continue;
            for (int ia : ids_a) {
                for (int ib : ids_b) {
                    out.insert(Proposition::greater(eng.entities[ia], eng.entities[ib]));
                }
            }
        }
    }
    return out;
}

std::set<Proposition> atomize(const BeliefStructure& belief, bool closure) {
    std::set<Proposition> props = props_from_belief(belief);
    if (!closure) {
        // still reject outright contradictions
        ClosureEngine eng;
        for (const auto& p : props) eng.add(p);
        eng.merge_equalities(true);
        eng.check_inequality_conflicts();
        eng.closed_order(true);
        return props;
    }
    return close_propositions(props);
}

bool proposition_true(const Proposition& p, const BlockWeights& truth) {
    auto value = [&](const std::string& e) -> int {
        if (is_literal(e)) return literal_grams(e);
        auto it = truth.grams.find(e);
        if (it == truth.grams.end()) throw UnknownEntity("no ground truth for " + e);
        return it->second;
    };
    int l = value(p.lhs), r = value(p.rhs);
    switch (p.kind) {
        case RelationKind::Equality: return l == r;
        case RelationKind::Inequality: return l != r;
        case RelationKind::Order: return l > r;
    }
    return false;
}

// ---------------------------------------------------------------------------
// BeliefDeduction
// ---------------------------------------------------------------------------

BeliefDeduction::BeliefDeduction(const std::set<Proposition>& asserted,
                                 const BlockWeights& truth) {
    ClosureEngine eng;
    for (const auto& p : asserted) eng.add(p);
    // publicly known weights enter as equality facts
    for (const auto& name : truth.known_to_participants) {
        auto it = truth.grams.find(name);
        if (it == truth.grams.end()) continue;
        std::string lit = std::to_string(it->second) + "g";
        eng.add(Proposition::equality(name, lit));
    }
    // make sure every universe entity has an id so queries never miss
    for (const auto& b : block_names()) eng.intern(b);
    for (const auto& l : literal_names()) eng.intern(l);

    try {
        eng.merge_equalities(true);
        eng.check_inequality_conflicts();
        // classes pinned to distinct literal values are ordered by those
        // values, so order chains may pass through numeric facts
        std::map<int, int> value_of_class;
        for (std::size_t i = 0; i < eng.entities.size(); ++i) {
            if (is_literal(eng.entities[i])) {
                value_of_class[eng.find(static_cast<int>(i))] = literal_grams(eng.entities[i]);
            }
        }
        for (const auto& [ca, va] : value_of_class) {
            for (const auto& [cb, vb] : value_of_class) {
                if (va > vb) eng.order_edges.emplace_back(ca, cb);
            }
        }
        greater_ = eng.closed_order(true);
    } catch (const InconsistentBelief&) {
        consistent_ = false;
        eng.merge_equalities(false);
        greater_ = eng.closed_order(false);
    }

    for (std::size_t i = 0; i < eng.entities.size(); ++i) {
        entity_class_[eng.entities[i]] = eng.find(static_cast<int>(i));
    }
    class_value_.assign(eng.entities.size(), std::nullopt);
    for (std::size_t i = 0; i < eng.entities.size(); ++i) {
        if (is_literal(eng.entities[i])) {
            class_value_[eng.find(static_cast<int>(i))] = literal_grams(eng.entities[i]);
        }
    }
    for (auto [a, b] : eng.ineq_edges) {
        int ra = eng.find(a), rb = eng.find(b);
        unequal_.insert({std::min(ra, rb), std::max(ra, rb)});
    }
}

int BeliefDeduction::class_of(const std::string& e) const {
    auto it = entity_class_.find(e);
    if (it == entity_class_.end()) throw UnknownEntity("unknown entity: " + e);
    return it->second;
}

bool BeliefDeduction::entails(const Proposition& p) const {
    int a = class_of(p.lhs), b = class_of(p.rhs);
    auto va = class_value_[a], vb = class_value_[b];
    switch (p.kind) {
        case RelationKind::Equality:
            return a == b || (va && vb && *va == *vb);
        case RelationKind::Order:
            return greater_[a][b] || (va && vb && *va > *vb);
        case RelationKind::Inequality:
            if (a == b) return false;
            if (unequal_.count({std::min(a, b), std::max(a, b)})) return true;
            if (greater_[a][b] || greater_[b][a]) return true;
            return va && vb && *va != *vb;
    }
    return false;
}

bool BeliefDeduction::contradicts(const Proposition& p) const {
    switch (p.kind) {
        case RelationKind::Equality:
            return entails(Proposition::inequality(p.lhs, p.rhs)) ||
                   entails(Proposition::greater(p.lhs, p.rhs)) ||
                   entails(Proposition::greater(p.rhs, p.lhs));
        case RelationKind::Order: {
            int a = class_of(p.lhs), b = class_of(p.rhs);
            if (a == b) return true;  // equal entities cannot be ordered
            auto va = class_value_[a], vb = class_value_[b];
            if (va && vb && *va <= *vb) return true;
            return greater_[b][a];
        }
        case RelationKind::Inequality:
            return entails(Proposition::equality(p.lhs, p.rhs));
    }
    return false;
}

// ---------------------------------------------------------------------------
// Scores
// ---------------------------------------------------------------------------

double correctness_score(const std::set<Proposition>& props, const BlockWeights& truth) {
    if (props.empty()) return 0.5;
    int n_true = 0, n_false = 0;
    for (const auto& p : props) {
        (proposition_true(p, truth) ? n_true : n_false)++;
    }
    double raw = static_cast<double>(n_true - n_false) / static_cast<double>(props.size());
    return std::clamp(raw, 0.0, 1.0);
}

AgreementScore agreement_score(const std::vector<std::set<Proposition>>& per_participant) {
    if (per_participant.size() < 2) {
        throw FewerThanTwoParticipants("agreement needs at least two participants");
    }
    std::set<Proposition> shared = per_participant.front();
    for (std::size_t i = 1; i < per_participant.size(); ++i) {
        std::set<Proposition> next;
        std::set_intersection(shared.begin(), shared.end(), per_participant[i].begin(),
                              per_participant[i].end(), std::inserter(next, next.begin()));
        shared.swap(next);
    }
    AgreementScore out;
    out.n_shared = static_cast<int>(shared.size());
    double n = static_cast<double>(out.n_shared);
    if (out.n_shared <= 3) {
        out.a_norm = 0.1 * n / 3.0;
    } else if (out.n_shared <= 10) {
        double t = (n - 3.0) / 7.0;
        out.a_norm = 0.1 + 0.9 * t * t;
    } else {
        out.a_norm = 1.0;
    }
    return out;
}

RewardBreakdown gold_reward(double s_f, double c_norm, double a_norm) {
    for (double v : {s_f, c_norm, a_norm}) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw OutOfRangeInput("gold reward inputs must lie in [0,1]");
        }
    }
    RewardBreakdown out;
    out.format_score = s_f;
    out.correctness = c_norm;
    out.agreement = a_norm;
    out.combined = 0.7 * a_norm + 0.2 * c_norm + 0.1 * s_f;
    if (out.combined < 0.5) {
        out.final = -1.0 + 2.0 * out.combined;
    } else {
        out.final = std::min(5.0, 10.0 * (out.combined - 0.5));
    }
    return out;
}

AccReport acc_metric(const std::set<Proposition>& cg_props, const BlockWeights& truth) {
    AccReport out;
    out.shared = static_cast<int>(cg_props.size());
    out.universe = static_cast<int>(proposition_universe().size());
    int n_true = 0;
    for (const auto& p : cg_props) {
        if (proposition_true(p, truth)) ++n_true;
    }
    out.acc = static_cast<double>(n_true);
    return out;
}

const std::vector<Proposition>& proposition_universe() {
    static const std::vector<Proposition> universe = [] {
        std::vector<Proposition> out;
        const auto& blocks = block_names();
        const auto& lits = literal_names();
        // symmetric relations: block-block pairs and block-literal pairs
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            for (std::size_t j = i + 1; j < blocks.size(); ++j) {
                out.push_back(Proposition::equality(blocks[i], blocks[j]));
                out.push_back(Proposition::inequality(blocks[i], blocks[j]));
            }
            for (const auto& lit : lits) {
                out.push_back(Proposition::equality(blocks[i], lit));
                out.push_back(Proposition::inequality(blocks[i], lit));
            }
        }
        // order: every ordered pair involving at least one block
        auto add_order = [&out](const std::string& a, const std::string& b) {
            out.push_back(Proposition::greater(a, b));
        };
        for (const auto& a : blocks) {
            for (const auto& b : blocks) {
                if (a != b) add_order(a, b);
            }
            for (const auto& l : lits) {
                add_order(a, l);
                add_order(l, a);
            }
        }
        std::sort(out.begin(), out.end());
        return out;
    }();
    return universe;
}

const std::vector<Proposition>& assertion_menu() {
    static const std::vector<Proposition> menu = [] {
        std::vector<Proposition> out;
        const auto& blocks = block_names();
        const auto& lits = literal_names();
        for (const auto& b : blocks) {
            for (const auto& l : lits) out.push_back(Proposition::equality(b, l));
        }
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            for (std::size_t j = i + 1; j < blocks.size(); ++j) {
                out.push_back(Proposition::inequality(blocks[i], blocks[j]));
            }
        }
        for (const auto& a : blocks) {
            for (const auto& b : blocks) {
                if (a != b) out.push_back(Proposition::greater(a, b));
            }
        }
        return out;
    }();
    return menu;
}

int assertion_menu_index(const Proposition& p) {
    const auto& menu = assertion_menu();
    for (std::size_t i = 0; i < menu.size(); ++i) {
        if (menu[i] == p) return static_cast<int>(i);
    }
    return -1;
}

int universe_size(RelationKind kind) {
    int n = 0;
    for (const auto& p : proposition_universe()) {
        if (p.kind == kind) ++n;
    }
    return n;
}

const char* to_string(RelationKind k) {
    switch (k) {
        case RelationKind::Equality: return "equality";
        case RelationKind::Inequality: return "inequality";
        case RelationKind::Order: return "order";
    }
    return "?";
}

}  // namespace icr::weights
