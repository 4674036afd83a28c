#pragma once

#include <map>
#include <string>
#include <vector>

#include "icr/metrics.hpp"
#include "icr/theory.hpp"
#include "icr/trainers.hpp"

namespace icr {

/// Flat key=value experiment configuration. Every run artifact embeds the
/// config hash; `report` refuses to aggregate runs whose protocol fields
/// (task, horizon, mixture, evaluation seed) disagree.
struct ExperimentConfig {
    std::string task = "wason";
    Variant variant = Variant::ICR;
    int horizon = 15;
    int participants = 3;
    int n_eval_dialogues = 100;
    int n_train_dialogues = 100;
    std::uint64_t eval_seed = 1000;  // shared intervener/episode stream for eval
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::vector<double> lambda_grid = {0.01, 0.2, 1.0};
    QualityMixture mixture;
    std::string output_dir = "out";
    TrainerConfig trainer;

    void validate() const;
    std::map<std::string, std::string> to_kv() const;
    static ExperimentConfig from_kv(const std::map<std::string, std::string>& kv);
    static ExperimentConfig from_file(const std::string& path);
    void apply_override(const std::string& key, const std::string& value);

    std::uint64_t config_hash() const;
    std::uint64_t protocol_hash() const;
};

struct EvalSummary {
    std::string task;
    std::string variant;
    std::uint64_t seed = 0;
    int n_dialogues = 0;
    double acc_mean = 0.0;
    double acc_stderr = 0.0;  // NaN when n == 1
    double cg_mean = 0.0;
    double cg_stderr = 0.0;
    std::map<std::string, double> extra;  // gold reward etc.
    std::uint64_t config_hash = 0;
    std::uint64_t protocol_hash = 0;
};

struct EvalResult {
    EvalSummary summary;
    std::vector<Trajectory> trajectories;
};

/// Runs the fixed-intervener evaluation protocol: n_eval_dialogues episodes of
/// `horizon` turns against the scripted mixed-quality intervener. Episodes run
/// concurrently; aggregation is a deterministic reduce over episode index.
EvalResult run_evaluation(const ExperimentConfig& config, const SoftmaxPolicy& policy);

/// Convenience pipeline: dataset -> BC -> variant training for one seed.
struct TrainedVariant {
    SoftmaxPolicy policy;
    std::vector<TrainStepRow> rows;  // online variants only
};
TrainedVariant train_variant(const ExperimentConfig& config, std::uint64_t seed);

struct AblationRow {
    double lambda = 0.0;
    std::uint64_t seed = 0;
    int step = 0;
    double reward = 0.0;
    double delta_cf = 0.0;
};

/// Fig-3b style sweep: ICR training runs over the lambda grid and seed list.
std::vector<AblationRow> run_ablation(const ExperimentConfig& config);

struct CgCurveRow {
    std::string relation;
    int turn = 0;
    double mean_cumulative_cg = 0.0;
};

/// Fig-3a style curves; weights-task trajectories only.
std::vector<CgCurveRow> emit_cg_curves(const std::vector<Trajectory>& trajectories);

// --- Files -------------------------------------------------------------------

void write_eval_summary(const EvalSummary& summary, const std::string& path);
EvalSummary read_eval_summary(const std::string& path);
void write_trajectories(const std::vector<Trajectory>& trajs, const std::string& path);
std::vector<Trajectory> read_trajectories(const std::string& path);
void write_train_csv(const std::vector<TrainStepRow>& rows, std::uint64_t config_hash,
                     const std::string& path);
void write_ablation_csv(const std::vector<AblationRow>& rows, std::uint64_t config_hash,
                        const std::string& path);
void write_curves_csv(const std::vector<CgCurveRow>& rows, std::uint64_t config_hash,
                      const std::string& path);

/// Combines per-variant eval summaries into one table, enforcing identical
/// protocol hashes. Returns the rendered text table.
std::string report_table(const std::vector<EvalSummary>& summaries);

// --- Theory suite ---------------------------------------------------------------

struct VerifyCheck {
    std::string name;
    bool passed = false;
    double measured = 0.0;
    std::string detail;
};

struct VerifyReport {
    std::vector<VerifyCheck> checks;
    bool all_passed() const;
    std::string render() const;       // one line per check
    std::string to_json() const;
};

/// Executable forms of the soft-optimality, suboptimality, grouping and
/// divergence-bound results on tiny instances.
VerifyReport run_verification(std::uint64_t seed = 7);

}  // namespace icr
