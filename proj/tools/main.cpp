// Command-line front end: train-pi, train-ac, evaluate, spreads, check.
// Exit codes: 0 ok, 1 usage, 2 configuration/validation/IO, 3 divergence.
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "optmm/harness.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<std::size_t> workers;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "experiment config (JSON); omit for defaults");
    cmd->add_option("--seed", opts.seed, "master seed override");
    cmd->add_option("--out", opts.out_dir, "output directory override");
    cmd->add_option("--workers", opts.workers, "path-generation worker threads");
}

optmm::ExperimentConfig resolve_config(const CommonOpts& opts) {
    optmm::ExperimentConfig cfg =
        opts.config_path.empty() ? optmm::default_config() : optmm::load_config(opts.config_path);
    if (opts.seed) cfg.seed = *opts.seed;
    if (opts.out_dir) cfg.output_dir = *opts.out_dir;
    if (opts.workers) cfg.workers = *opts.workers;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"options market-making simulator and trainer"};
    app.require_subcommand(1);

    CommonOpts train_pi_opts, train_ac_opts, eval_opts, spreads_opts, check_opts;

    CLI::App* train_pi = app.add_subcommand("train-pi", "policy-iteration training");
    add_common(train_pi, train_pi_opts);

    CLI::App* train_ac = app.add_subcommand("train-ac", "actor-critic training");
    add_common(train_ac, train_ac_opts);

    CLI::App* evaluate = app.add_subcommand("evaluate", "evaluate a trained policy");
    add_common(evaluate, eval_opts);
    std::string eval_ckpt;
    std::size_t n_paths = 100;
    std::size_t dump_paths = 0;
    evaluate->add_option("--checkpoint", eval_ckpt, "checkpoint JSON to evaluate")->required();
    evaluate->add_option("--n-paths", n_paths, "number of evaluation episodes");
    evaluate->add_option("--dump-paths", dump_paths, "also write the first N trajectories as CSV");

    CLI::App* spreads = app.add_subcommand("spreads", "dump bid/ask spread matrices at (t, q)");
    add_common(spreads, spreads_opts);
    std::string spreads_ckpt;
    double spreads_t = 0.0;
    std::string q_source = "q1";
    spreads->add_option("--checkpoint", spreads_ckpt,
                        "checkpoint JSON (omit for the untrained flat-value policy)");
    spreads->add_option("--t", spreads_t, "quote time");
    spreads->add_option("--q", q_source, "inventory: q1, q2, q3 or a JSON file of a nested array");

    CLI::App* check = app.add_subcommand("check", "run the invariant suite");
    add_common(check, check_opts);
    double fault_gamma_bias = 0.0;
    check->add_option("--fault-gamma-bias", fault_gamma_bias,
                      "test hook: bias the gamma under check")
        ->group("");  // hidden

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (train_pi->parsed()) {
            optmm::ExperimentConfig cfg = resolve_config(train_pi_opts);
            cfg.algo = optmm::AlgoKind::policy_iteration;
            optmm::cmd_train(cfg, cfg.output_dir);
        } else if (train_ac->parsed()) {
            optmm::ExperimentConfig cfg = resolve_config(train_ac_opts);
            cfg.algo = optmm::AlgoKind::actor_critic;
            optmm::cmd_train(cfg, cfg.output_dir);
        } else if (evaluate->parsed()) {
            const optmm::ExperimentConfig cfg = resolve_config(eval_opts);
            optmm::cmd_evaluate(cfg, eval_ckpt, n_paths, cfg.output_dir, dump_paths);
        } else if (spreads->parsed()) {
            const optmm::ExperimentConfig cfg = resolve_config(spreads_opts);
            const std::string out =
                (std::filesystem::path(cfg.output_dir) / "spreads.json").string();
            std::filesystem::create_directories(cfg.output_dir);
            optmm::cmd_spreads(cfg, spreads_ckpt, spreads_t, q_source, out);
            std::cout << "wrote " << out << "\n";
        } else if (check->parsed()) {
            const optmm::ExperimentConfig cfg = resolve_config(check_opts);
            std::filesystem::create_directories(cfg.output_dir);
            const std::string out =
                (std::filesystem::path(cfg.output_dir) / "check_report.json").string();
            optmm::FaultInjection fault;
            fault.gamma_bias = fault_gamma_bias;
            const bool ok = optmm::cmd_check(cfg, out, fault);
            if (!ok) {
                std::cerr << "hard invariant failure (see " << out << ")\n";
                return 2;
            }
        }
    } catch (const optmm::DivergenceError& e) {
        std::cerr << "training diverged: " << e.what() << "\n";
        return 3;
    } catch (const optmm::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
