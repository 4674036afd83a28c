#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "icr/envs.hpp"
#include "icr/harness.hpp"

namespace fs = std::filesystem;
using namespace icr;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;  // key=value
};

ExperimentConfig load_config(const CommonOpts& opts) {
    ExperimentConfig config;
    if (!opts.config_path.empty()) config = ExperimentConfig::from_file(opts.config_path);
    for (const auto& kv : opts.overrides) {
        auto pos = kv.find('=');
        if (pos == std::string::npos) throw ConfigError("override must be key=value: " + kv);
        config.apply_override(kv.substr(0, pos), kv.substr(pos + 1));
    }
    config.trainer.mixture = config.mixture;
    config.trainer.horizon = config.horizon;
    config.validate();
    return config;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "flat key=value config file");
    cmd->add_option("--set", opts.overrides, "config overrides as key=value")
        ->take_all();
}

std::string run_tag(const ExperimentConfig& config, std::uint64_t seed) {
    return config.task + "_" + to_string(config.variant) + "_seed" + std::to_string(seed);
}

void ensure_output_dir(const ExperimentConfig& config) {
    if (const char* env_root = std::getenv("ICR_OUTPUT_ROOT")) {
        // env override of the output root only; everything else comes from config
        fs::create_directories(fs::path(env_root) / config.output_dir);
        return;
    }
    fs::create_directories(config.output_dir);
}

fs::path output_root(const ExperimentConfig& config) {
    if (const char* env_root = std::getenv("ICR_OUTPUT_ROOT")) {
        return fs::path(env_root) / config.output_dir;
    }
    return fs::path(config.output_dir);
}

int cmd_collect(const CommonOpts& opts) {
    ExperimentConfig config = load_config(opts);
    ensure_output_dir(config);
    auto env = make_environment(config.task, config.participants);
    ExpertDataset dataset =
        collect_expert_dataset(*env, config.mixture, config.n_train_dialogues, config.horizon,
                               derive_seed(config.eval_seed, "dataset"),
                               config.trainer.adopt_noise);
    fs::path path = output_root(config) / (config.task + "_expert.jsonl");
    std::ofstream out(path);
    for (const auto& rec : dataset.records) out << expert_record_to_jsonl(rec) << "\n";
    std::cout << "wrote " << dataset.records.size() << " records to " << path.string() << "\n";
    return 0;
}

int cmd_train(const CommonOpts& opts) {
    ExperimentConfig config = load_config(opts);
    ensure_output_dir(config);
    for (std::uint64_t seed : config.seeds) {
        TrainedVariant trained = train_variant(config, seed);
        fs::path root = output_root(config);
        std::string tag = run_tag(config, seed);
        save_checkpoint(trained.policy, (root / (tag + ".ckpt.json")).string());
        if (!trained.rows.empty()) {
            write_train_csv(trained.rows, config.config_hash(),
                            (root / (tag + "_train.csv")).string());
        }
        std::cout << "trained " << tag << "\n";
    }
    return 0;
}

int cmd_eval(const CommonOpts& opts) {
    ExperimentConfig config = load_config(opts);
    ensure_output_dir(config);
    fs::path root = output_root(config);
    for (std::uint64_t seed : config.seeds) {
        std::string tag = run_tag(config, seed);
        fs::path ckpt = root / (tag + ".ckpt.json");
        if (!fs::exists(ckpt)) {
            throw CheckpointMissing("checkpoint not found: " + ckpt.string() +
                                    " (run `icr train` first)");
        }
        ExperimentConfig run = config;
        run.trainer.seed = seed;
        EvalResult result = run_evaluation(run, load_checkpoint(ckpt.string()));
        write_eval_summary(result.summary, (root / (tag + "_eval.json")).string());
        write_trajectories(result.trajectories, (root / (tag + "_trajectories.jsonl")).string());
        std::cout << tag << ": ACC " << result.summary.acc_mean << "  CG "
                  << result.summary.cg_mean << "\n";
    }
    return 0;
}

int cmd_ablate(const CommonOpts& opts) {
    ExperimentConfig config = load_config(opts);
    ensure_output_dir(config);
    auto rows = run_ablation(config);
    fs::path path = output_root(config) / (config.task + "_ablation.csv");
    write_ablation_csv(rows, config.config_hash(), path.string());
    std::cout << "wrote " << rows.size() << " rows to " << path.string() << "\n";
    return 0;
}

int cmd_curves(const CommonOpts& opts, const std::string& trajectories_path) {
    ExperimentConfig config = load_config(opts);
    ensure_output_dir(config);
    auto trajs = read_trajectories(trajectories_path);
    auto rows = emit_cg_curves(trajs);
    fs::path path = output_root(config) / (config.task + "_cg_curves.csv");
    write_curves_csv(rows, config.config_hash(), path.string());
    std::cout << "wrote " << rows.size() << " rows to " << path.string() << "\n";
    return 0;
}

int cmd_verify(const CommonOpts& opts) {
    ExperimentConfig config = load_config(opts);
    ensure_output_dir(config);
    VerifyReport report = run_verification();
    std::cout << report.render();
    fs::path path = output_root(config) / "verify_report.json";
    std::ofstream out(path);
    out << report.to_json() << "\n";
    return report.all_passed() ? 0 : 2;
}

int cmd_report(const CommonOpts& opts, const std::vector<std::string>& summary_paths) {
    std::vector<EvalSummary> summaries;
    for (const auto& p : summary_paths) summaries.push_back(read_eval_summary(p));
    std::cout << report_table(summaries);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"partner-aware collaborator training and evaluation"};
    app.require_subcommand(1);

    CommonOpts collect_opts, train_opts, eval_opts, ablate_opts, curves_opts, verify_opts,
        report_opts;
    std::string curves_trajectories;
    std::vector<std::string> report_paths;

    add_common(app.add_subcommand("collect", "collect the scripted expert dataset"),
               collect_opts);
    add_common(app.add_subcommand("train", "train the configured variant"), train_opts);
    add_common(app.add_subcommand("eval", "run the fixed-intervener evaluation"), eval_opts);
    add_common(app.add_subcommand("ablate", "lambda sweep with per-step reward curves"),
               ablate_opts);
    auto* curves = app.add_subcommand("curves", "emit cumulative common-ground curves");
    add_common(curves, curves_opts);
    curves->add_option("--trajectories", curves_trajectories, "trajectory JSONL file")
        ->required();
    add_common(app.add_subcommand("verify", "run the exact theory checks"), verify_opts);
    auto* report = app.add_subcommand("report", "combine eval summaries into one table");
    report->add_option("summaries", report_paths, "eval summary JSON files")->required();

    try {
        app.parse(argc, argv);
        if (app.got_subcommand("collect")) return cmd_collect(collect_opts);
        if (app.got_subcommand("train")) return cmd_train(train_opts);
        if (app.got_subcommand("eval")) return cmd_eval(eval_opts);
        if (app.got_subcommand("ablate")) return cmd_ablate(ablate_opts);
        if (app.got_subcommand("curves")) return cmd_curves(curves_opts, curves_trajectories);
        if (app.got_subcommand("verify")) return cmd_verify(verify_opts);
        if (app.got_subcommand("report")) return cmd_report(report_opts, report_paths);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const IcrError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
