#include "icr/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <future>
#include <iomanip>
#include <limits>
#include <sstream>

#include "icr/envs.hpp"
#include "json.hpp"

namespace icr {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
    auto begin = s.find_first_not_of(" \t\r\n");
    auto end = s.find_last_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
    }
}

long long parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        long long x = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
    }
}

std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace

void ExperimentConfig::validate() const {
    if (task != "wason" && task != "weights") throw ConfigError("task must be wason or weights");
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (participants < 1 || participants > 6) throw ConfigError("participants must be in [1,6]");
    if (n_eval_dialogues < 1) throw ConfigError("n_eval_dialogues must be >= 1");
    if (n_train_dialogues < 1) throw ConfigError("n_train_dialogues must be >= 1");
    if (seeds.empty()) throw ConfigError("need at least one seed");
    mixture.validate();
    trainer.validate();
}

std::map<std::string, std::string> ExperimentConfig::to_kv() const {
    std::map<std::string, std::string> kv;
    kv["task"] = task;
    kv["variant"] = to_string(variant);
    kv["horizon"] = std::to_string(horizon);
    kv["participants"] = std::to_string(participants);
    kv["n_eval_dialogues"] = std::to_string(n_eval_dialogues);
    kv["n_train_dialogues"] = std::to_string(n_train_dialogues);
    kv["eval_seed"] = std::to_string(eval_seed);
    {
        std::string s;
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(seeds[i]);
        }
        kv["seeds"] = s;
    }
    {
        std::string s;
        for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
            if (i) s += ",";
            s += format_double(lambda_grid[i]);
        }
        kv["lambda_grid"] = s;
    }
    kv["p_helpful"] = format_double(mixture.p_helpful);
    kv["p_misleading"] = format_double(mixture.p_misleading);
    kv["p_irrelevant"] = format_double(mixture.p_irrelevant);
    kv["output_dir"] = output_dir;
    kv["lambda_h"] = format_double(trainer.lambda_h);
    kv["lambda_intent"] = format_double(trainer.lambda_intent);
    kv["clip_eps"] = format_double(trainer.clip_eps);
    kv["learning_rate"] = format_double(trainer.learning_rate);
    kv["batch_size"] = std::to_string(trainer.batch_size);
    kv["gamma"] = format_double(trainer.gamma);
    kv["steps"] = std::to_string(trainer.steps);
    kv["temperature"] = format_double(trainer.temperature);
    kv["bc_epochs"] = std::to_string(trainer.bc_epochs);
    kv["bc_learning_rate"] = format_double(trainer.bc_learning_rate);
    kv["beta"] = format_double(trainer.beta);
    kv["offline_epochs"] = std::to_string(trainer.offline_epochs);
    kv["offline_learning_rate"] = format_double(trainer.offline_learning_rate);
    kv["adopt_noise"] = format_double(trainer.adopt_noise);
    kv["baseline_decay"] = format_double(trainer.baseline_decay);
    kv["metrics_stride"] = std::to_string(trainer.metrics_stride);
    return kv;
}

void ExperimentConfig::apply_override(const std::string& key, const std::string& value) {
    if (key == "task") {
        task = value;
    } else if (key == "variant") {
        variant = variant_from_string(value);
    } else if (key == "horizon") {
        horizon = static_cast<int>(parse_int(key, value));
        trainer.horizon = horizon;
    } else if (key == "participants") {
        participants = static_cast<int>(parse_int(key, value));
    } else if (key == "n_eval_dialogues") {
        n_eval_dialogues = static_cast<int>(parse_int(key, value));
    } else if (key == "n_train_dialogues") {
        n_train_dialogues = static_cast<int>(parse_int(key, value));
    } else if (key == "eval_seed") {
        eval_seed = static_cast<std::uint64_t>(parse_int(key, value));
    } else if (key == "seeds") {
        seeds.clear();
        for (const auto& tok : split(value, ',')) {
            if (!tok.empty()) seeds.push_back(static_cast<std::uint64_t>(parse_int(key, tok)));
        }
    } else if (key == "lambda_grid") {
        lambda_grid.clear();
        for (const auto& tok : split(value, ',')) {
            if (!tok.empty()) lambda_grid.push_back(parse_double(key, tok));
        }
    } else if (key == "p_helpful") {
        mixture.p_helpful = parse_double(key, value);
        trainer.mixture = mixture;
    } else if (key == "p_misleading") {
        mixture.p_misleading = parse_double(key, value);
        trainer.mixture = mixture;
    } else if (key == "p_irrelevant") {
        mixture.p_irrelevant = parse_double(key, value);
        trainer.mixture = mixture;
    } else if (key == "output_dir") {
        output_dir = value;
    } else if (key == "lambda_h") {
        trainer.lambda_h = parse_double(key, value);
    } else if (key == "lambda_intent") {
        trainer.lambda_intent = parse_double(key, value);
    } else if (key == "clip_eps") {
        trainer.clip_eps = parse_double(key, value);
    } else if (key == "learning_rate") {
        trainer.learning_rate = parse_double(key, value);
    } else if (key == "batch_size") {
        trainer.batch_size = static_cast<int>(parse_int(key, value));
    } else if (key == "gamma") {
        trainer.gamma = parse_double(key, value);
    } else if (key == "steps") {
        trainer.steps = static_cast<int>(parse_int(key, value));
    } else if (key == "temperature") {
        trainer.temperature = parse_double(key, value);
    } else if (key == "bc_epochs") {
        trainer.bc_epochs = static_cast<int>(parse_int(key, value));
    } else if (key == "bc_learning_rate") {
        trainer.bc_learning_rate = parse_double(key, value);
    } else if (key == "beta") {
        trainer.beta = parse_double(key, value);
    } else if (key == "offline_epochs") {
        trainer.offline_epochs = static_cast<int>(parse_int(key, value));
    } else if (key == "offline_learning_rate") {
        trainer.offline_learning_rate = parse_double(key, value);
    } else if (key == "adopt_noise") {
        trainer.adopt_noise = parse_double(key, value);
    } else if (key == "baseline_decay") {
        trainer.baseline_decay = parse_double(key, value);
    } else if (key == "metrics_stride") {
        trainer.metrics_stride = static_cast<int>(parse_int(key, value));
    } else {
        throw ConfigError("unknown config key: " + key);
    }
}

ExperimentConfig ExperimentConfig::from_kv(const std::map<std::string, std::string>& kv) {
    ExperimentConfig config;
    for (const auto& [key, value] : kv) config.apply_override(key, value);
    config.trainer.mixture = config.mixture;
    config.trainer.horizon = config.horizon;
    config.validate();
    return config;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto pos = t.find('=');
        if (pos == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + " is not key = value");
        }
        kv[trim(t.substr(0, pos))] = trim(t.substr(pos + 1));
    }
    return from_kv(kv);
}

std::uint64_t ExperimentConfig::config_hash() const {
    std::uint64_t h = kFnvOffset;
    for (const auto& [key, value] : to_kv()) {
        if (key == "output_dir") continue;  // location does not change the experiment
        h = fnv1a(key, h);
        h = fnv1a(value, h);
    }
    return h;
}

std::uint64_t ExperimentConfig::protocol_hash() const {
    std::uint64_t h = fnv1a("protocol");
    h = fnv1a(task, h);
    h = fnv1a_u64(static_cast<std::uint64_t>(horizon), h);
    h = fnv1a_u64(static_cast<std::uint64_t>(participants), h);
    h = fnv1a_u64(static_cast<std::uint64_t>(n_eval_dialogues), h);
    h = fnv1a_u64(eval_seed, h);
    h = fnv1a(format_double(mixture.p_helpful), h);
    h = fnv1a(format_double(mixture.p_misleading), h);
    h = fnv1a(format_double(mixture.p_irrelevant), h);
    return h;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace {

struct DialogueMetrics {
    double acc = 0.0;
    double cg = 0.0;
    double gold = 0.0;
};

DialogueMetrics score_trajectory(const Trajectory& traj) {
    DialogueMetrics m;
    if (traj.task == "wason") {
        m.acc = wason_metrics::final_submission_accuracy(traj);
        m.cg = wason_metrics::cg_gain(traj);
    } else {
        m.acc = weights_metrics::final_acc(traj).acc;
        m.cg = weights_metrics::cg_gain(traj);
        m.gold = weights_metrics::final_gold_reward(traj).final;
    }
    return m;
}

}  // namespace

EvalResult run_evaluation(const ExperimentConfig& config, const SoftmaxPolicy& policy) {
    config.validate();
    if (policy.task != config.task) throw ConfigError("policy/task mismatch");
    auto env = make_environment(config.task, config.participants);
    VariantSpec spec = apply_variant(config.variant);

    const int n = config.n_eval_dialogues;
    std::vector<Trajectory> trajs(n);

    // per-episode seeds are independent of the variant so that every policy
    // faces the same intervener stream
    auto run_one = [&](int k) {
        PolicyCollaborator collaborator(policy, spec.eval_flag, spec.eval_mask);
        ScriptedIntervener intervener(config.mixture);
        std::uint64_t eseed = derive_seed(config.eval_seed, "eval/episode", k);
        return run_episode(*env, intervener, collaborator, config.horizon, eseed);
    };

    const int workers = std::min<int>(8, n);
    std::vector<std::future<void>> futures;
    std::atomic<int> next{0};
    for (int w = 0; w < workers; ++w) {
        futures.push_back(std::async(std::launch::async, [&] {
            for (;;) {
                int k = next.fetch_add(1);
                if (k >= n) return;
                trajs[k] = run_one(k);
            }
        }));
    }
    for (auto& f : futures) f.get();

    double acc_sum = 0, acc_sq = 0, cg_sum = 0, cg_sq = 0, gold_sum = 0;
    for (int k = 0; k < n; ++k) {
        auto& traj = trajs[k];
        DialogueMetrics m = score_trajectory(traj);
        traj.metrics["acc"] = m.acc;
        traj.metrics["cg_gain"] = m.cg;
        if (config.task == "weights") traj.metrics["gold_reward"] = m.gold;
        acc_sum += m.acc;
        acc_sq += m.acc * m.acc;
        cg_sum += m.cg;
        cg_sq += m.cg * m.cg;
        gold_sum += m.gold;
    }

    EvalResult out;
    out.trajectories = std::move(trajs);
    out.summary.task = config.task;
    out.summary.variant = to_string(config.variant);
    out.summary.seed = config.trainer.seed;
    out.summary.n_dialogues = n;
    out.summary.acc_mean = acc_sum / n;
    out.summary.cg_mean = cg_sum / n;
    if (n > 1) {
        double acc_var = std::max(0.0, (acc_sq - n * out.summary.acc_mean * out.summary.acc_mean) /
                                           (n - 1));
        double cg_var = std::max(0.0, (cg_sq - n * out.summary.cg_mean * out.summary.cg_mean) /
                                          (n - 1));
        out.summary.acc_stderr = std::sqrt(acc_var / n);
        out.summary.cg_stderr = std::sqrt(cg_var / n);
    } else {
        out.summary.acc_stderr = std::numeric_limits<double>::quiet_NaN();
        out.summary.cg_stderr = std::numeric_limits<double>::quiet_NaN();
    }
    if (config.task == "weights") out.summary.extra["gold_reward_mean"] = gold_sum / n;
    out.summary.config_hash = config.config_hash();
    out.summary.protocol_hash = config.protocol_hash();
    return out;
}

// ---------------------------------------------------------------------------
// Training pipeline
// ---------------------------------------------------------------------------

TrainedVariant train_variant(const ExperimentConfig& config, std::uint64_t seed) {
    config.validate();
    auto env = make_environment(config.task, config.participants);

    TrainerConfig tcfg = config.trainer;
    tcfg.seed = seed;
    tcfg.mixture = config.mixture;
    tcfg.horizon = config.horizon;
    tcfg.variant = config.variant;

    // the expert dataset is a protocol artifact: same for every variant/seed
    ExpertDataset dataset =
        collect_expert_dataset(*env, config.mixture, config.n_train_dialogues, config.horizon,
                               derive_seed(config.eval_seed, "dataset"), tcfg.adopt_noise);
    SoftmaxPolicy bc = train_bc(dataset, tcfg);

    TrainedVariant out;
    switch (config.variant) {
        case Variant::BC:
            out.policy = bc;
            return out;
        case Variant::DPO:
        case Variant::IPO: {
            RandomStream rng(derive_seed(seed, "pairs"));
            PreferenceBuild build = build_preference_pairs(dataset, rng);
            out.policy = config.variant == Variant::DPO
                             ? train_dpo(build.pairs, bc, tcfg.beta, tcfg)
                             : train_ipo(build.pairs, bc, tcfg.beta, tcfg);
            return out;
        }
        default: {
            TrainResult result = train_online(*env, bc, tcfg);
            out.policy = std::move(result.policy);
            out.rows = std::move(result.rows);
            return out;
        }
    }
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& config) {
    config.validate();
    if (config.lambda_grid.empty()) throw NoWork("empty lambda grid");
    std::vector<AblationRow> rows;
    for (double lambda : config.lambda_grid) {
        for (std::uint64_t seed : config.seeds) {
            ExperimentConfig cell = config;
            cell.variant = Variant::ICR;
            cell.trainer.variant = Variant::ICR;
            cell.trainer.lambda_intent = lambda;
            TrainedVariant trained = train_variant(cell, seed);
            for (const auto& row : trained.rows) {
                rows.push_back({lambda, seed, row.step, row.mean_proxy_reward, row.delta_cf});
            }
        }
    }
    return rows;
}

std::vector<CgCurveRow> emit_cg_curves(const std::vector<Trajectory>& trajectories) {
    auto series = weights_metrics::cumulative_cg_by_relation(trajectories);
    std::vector<CgCurveRow> rows;
    for (const auto& [kind, values] : series.series) {
        for (int t = 0; t < static_cast<int>(values.size()); ++t) {
            rows.push_back({weights::to_string(kind), t, values[t]});
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

void write_eval_summary(const EvalSummary& summary, const std::string& path) {
    json j;
    j["task"] = summary.task;
    j["variant"] = summary.variant;
    j["seed"] = summary.seed;
    j["n_dialogues"] = summary.n_dialogues;
    j["acc_mean"] = summary.acc_mean;
    j["cg_mean"] = summary.cg_mean;
    if (std::isnan(summary.acc_stderr)) {
        j["acc_stderr"] = nullptr;
        j["cg_stderr"] = nullptr;
    } else {
        j["acc_stderr"] = summary.acc_stderr;
        j["cg_stderr"] = summary.cg_stderr;
    }
    j["extra"] = summary.extra;
    j["config_hash"] = summary.config_hash;
    j["protocol_hash"] = summary.protocol_hash;
    std::ofstream out(path);
    if (!out) throw IcrError("cannot write " + path);
    out << j.dump(2) << "\n";
}

EvalSummary read_eval_summary(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IcrError("cannot read " + path);
    json j = json::parse(in);
    EvalSummary s;
    s.task = j.at("task").get<std::string>();
    s.variant = j.at("variant").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.n_dialogues = j.at("n_dialogues").get<int>();
    s.acc_mean = j.at("acc_mean").get<double>();
    s.cg_mean = j.at("cg_mean").get<double>();
    s.acc_stderr = j.at("acc_stderr").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                : j.at("acc_stderr").get<double>();
    s.cg_stderr = j.at("cg_stderr").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                              : j.at("cg_stderr").get<double>();
    for (const auto& [k, v] : j.at("extra").items()) s.extra[k] = v.get<double>();
    s.config_hash = j.at("config_hash").get<std::uint64_t>();
    s.protocol_hash = j.at("protocol_hash").get<std::uint64_t>();
    return s;
}

void write_trajectories(const std::vector<Trajectory>& trajs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IcrError("cannot write " + path);
    for (const auto& traj : trajs) out << trajectory_to_jsonl(traj) << "\n";
}

std::vector<Trajectory> read_trajectories(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IcrError("cannot read " + path);
    std::vector<Trajectory> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!trim(line).empty()) out.push_back(trajectory_from_jsonl(line));
    }
    return out;
}

void write_train_csv(const std::vector<TrainStepRow>& rows, std::uint64_t config_hash,
                     const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IcrError("cannot write " + path);
    out << "# config_hash=" << config_hash << "\n";
    out << "step,mean_proxy_reward,kl_to_ref,delta_cf,entropy,wallclock_s\n";
    for (const auto& r : rows) {
        out << r.step << "," << format_double(r.mean_proxy_reward) << ","
            << format_double(r.kl_to_ref) << "," << format_double(r.delta_cf) << ","
            << format_double(r.entropy) << "," << format_double(r.wallclock_s) << "\n";
    }
}

void write_ablation_csv(const std::vector<AblationRow>& rows, std::uint64_t config_hash,
                        const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IcrError("cannot write " + path);
    out << "# config_hash=" << config_hash << "\n";
    out << "lambda,seed,step,reward,delta_cf\n";
    for (const auto& r : rows) {
        out << format_double(r.lambda) << "," << r.seed << "," << r.step << ","
            << format_double(r.reward) << "," << format_double(r.delta_cf) << "\n";
    }
}

void write_curves_csv(const std::vector<CgCurveRow>& rows, std::uint64_t config_hash,
                      const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IcrError("cannot write " + path);
    out << "# config_hash=" << config_hash << "\n";
    out << "relation,turn,mean_cumulative_cg\n";
    for (const auto& r : rows) {
        out << r.relation << "," << r.turn << "," << format_double(r.mean_cumulative_cg) << "\n";
    }
}

std::string report_table(const std::vector<EvalSummary>& summaries) {
    if (summaries.empty()) throw NoWork("nothing to report");
    for (const auto& s : summaries) {
        if (s.protocol_hash != summaries.front().protocol_hash) {
            throw ConfigError("refusing to mix runs with different evaluation protocols");
        }
    }
    std::ostringstream os;
    os << "task=" << summaries.front().task
       << " dialogues=" << summaries.front().n_dialogues << "\n";
    os << std::left << std::setw(16) << "variant" << std::right << std::setw(12) << "ACC"
       << std::setw(12) << "+/-" << std::setw(12) << "CG" << std::setw(12) << "+/-"
       << "\n";
    for (const auto& s : summaries) {
        os << std::left << std::setw(16) << s.variant << std::right << std::fixed
           << std::setprecision(4) << std::setw(12) << s.acc_mean << std::setw(12)
           << s.acc_stderr << std::setw(12) << s.cg_mean << std::setw(12) << s.cg_stderr
           << "\n";
        os.unsetf(std::ios::fixed);
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Theory verification suite
// ---------------------------------------------------------------------------

bool VerifyReport::all_passed() const {
    for (const auto& c : checks) {
        if (!c.passed) return false;
    }
    return true;
}

std::string VerifyReport::render() const {
    std::ostringstream os;
    for (const auto& c : checks) {
        os << (c.passed ? "[PASS] " : "[FAIL] ") << std::left << std::setw(44) << c.name
           << " measured=" << std::setprecision(6) << c.measured;
        if (!c.detail.empty()) os << "  (" << c.detail << ")";
        os << "\n";
    }
    return os.str();
}

std::string VerifyReport::to_json() const {
    json j = json::array();
    for (const auto& c : checks) {
        j.push_back({{"name", c.name},
                     {"passed", c.passed},
                     {"measured", c.measured},
                     {"detail", c.detail}});
    }
    return j.dump(2);
}

VerifyReport run_verification(std::uint64_t seed) {
    using namespace theory;
    VerifyReport report;

    {  // soft Bellman round-trip on random instances
        RandomStream rng(derive_seed(seed, "verify/soft"));
        double worst = 0.0;
        for (int i = 0; i < 100; ++i) {
            int ns = 2 + static_cast<int>(rng.next_below(7));
            int na = 2 + static_cast<int>(rng.next_below(3));
            auto mdp = TinyMDP::random(ns, na, 0.9, rng);
            auto q = soft_value_iteration(mdp, 0.7);
            worst = std::max(worst, consistency_check(softmax_policy_from_q(q), q));
        }
        report.checks.push_back({"soft-bellman softmax round-trip (100 MDPs)", worst < 1e-9,
                                 worst, "max deviation, tolerance 1e-9"});
    }

    {  // the modified-action suboptimality construction and its escape clauses
        auto counter = suboptimality_counterexample();
        report.checks.push_back({"modified-action optimality gap > 0", counter.gap > 0.0,
                                 counter.gap, "J* - J(std)"});
        auto identity = counterexample_identity_influence();
        report.checks.push_back({"gap closes under trivial influence",
                                 std::abs(identity.gap) < 1e-9, identity.gap, ""});
        auto internal = counterexample_internalized_reward();
        report.checks.push_back({"gap closes under internalized reward",
                                 std::abs(internal.gap) < 1e-9, internal.gap, ""});
    }

    {  // grouping sub-actions preserves values
        RandomStream rng(derive_seed(seed, "verify/grouping"));
        double worst = 0.0;
        for (int i = 0; i < 20; ++i) {
            auto mdp = FactoredMDP::random(2 + static_cast<int>(rng.next_below(3)),
                                           2 + static_cast<int>(rng.next_below(2)),
                                           2 + static_cast<int>(rng.next_below(2)), 0.9, rng);
            worst = std::max(worst, grouping_residual(mdp, 0.8));
        }
        report.checks.push_back({"sub-action grouping residual (20 MDPs)", worst < 1e-9, worst,
                                 "max |V_joint - V_factored|, tolerance 1e-9"});
    }

    {  // performance difference identity
        RandomStream rng(derive_seed(seed, "verify/pdl"));
        double worst = 0.0;
        for (int i = 0; i < 100; ++i) {
            auto mdp = TinyMDP::random(5, 3, 0.9, rng);
            auto qa = soft_value_iteration(mdp, 0.5);
            auto qb = soft_value_iteration(mdp, 2.0);
            worst = std::max(worst, performance_difference_check(softmax_policy_from_q(qa),
                                                                 softmax_policy_from_q(qb), mdp));
        }
        report.checks.push_back({"performance difference identity (100 pairs)", worst < 1e-9,
                                 worst, "max |lhs - rhs|, tolerance 1e-9"});
    }

    {  // divergence bound on the counterexample family
        auto counter = suboptimality_counterexample();
        std::vector<BoundMember> family;
        // the zero-regularization limit anchors the fit (zero residual,
        // positive gap)
        auto anchor = soft_optimal_member(counter.mamdp);
        family.push_back(
            {0.0, 0, counter.optimal_value - anchor.value, anchor.delta_cf, anchor.eps_task});
        bool monotone = true;
        for (std::uint64_t s : {1ull, 2ull, 3ull}) {
            double prev = std::numeric_limits<double>::infinity();
            for (double lambda : {0.01, 0.2, 1.0}) {
                auto trained = train_tabular_invariance(counter.mamdp, lambda, s);
                BoundMember mem;
                mem.lambda = lambda;
                mem.seed = s;
                mem.gap = counter.optimal_value - trained.value;
                mem.delta_cf = trained.delta_cf;
                mem.eps_task = trained.eps_task;
                family.push_back(mem);
                if (mem.delta_cf >= prev) monotone = false;
                prev = mem.delta_cf;
            }
        }
        auto bound = verify_bound(family, counter.mamdp);
        report.checks.push_back({"divergence bound holds on held-out policies",
                                 bound.holds_on_held_out && bound.fitted_c > 0.0,
                                 bound.worst_slack,
                                 "fitted C=" + std::to_string(bound.fitted_c)});
        report.checks.push_back({"cf divergence strictly decreasing in lambda", monotone,
                                 family.back().delta_cf, "3 seeds x {0.01,0.2,1.0}"});
    }

    return report;
}

}  // namespace icr
