#pragma once

#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "optmm/checks.hpp"
#include "optmm/config.hpp"
#include "optmm/market_sim.hpp"
#include "optmm/rl_algos.hpp"

namespace optmm {

namespace harness_detail {

/// Shortest round-tripping decimal form; keeps CSVs byte-stable across runs.
inline std::string fmt(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw ConfigError("write failed for '" + path.string() + "'");
}

inline void write_json(const std::filesystem::path& path, const json& j) {
    write_text(path, j.dump(2) + "\n");
}

inline json summary_to_json(const SampleSummary& s) {
    json j;
    j["n"] = s.n;
    j["mean"] = s.mean;
    j["stddev"] = s.stddev;
    j["std_error"] = s.std_error();
    j["min"] = s.min;
    j["max"] = s.max;
    j["q05"] = s.q05;
    j["q25"] = s.q25;
    j["q50"] = s.q50;
    j["q75"] = s.q75;
    j["q95"] = s.q95;
    j["histogram"] = {{"bin_rule", "freedman-diaconis"},
                      {"edges", s.histogram.edges},
                      {"counts", s.histogram.counts}};
    return j;
}

inline std::string returns_csv(const std::vector<double>& raw, const std::vector<double>& reg) {
    std::string csv = "path,raw_return,regularized_return\n";
    for (std::size_t p = 0; p < raw.size(); ++p)
        csv += std::to_string(p) + "," + fmt(raw[p]) + "," + fmt(reg[p]) + "\n";
    return csv;
}

inline json report_to_json(const TrainingReport& report, const ExperimentConfig& cfg) {
    json j;
    j["algo"] = report.algo;
    j["seed"] = report.seed;
    j["config"] = config_to_json(cfg);
    j["losses"] = report.losses;
    if (!report.policy_losses.empty()) j["policy_losses"] = report.policy_losses;
    json iters = json::array();
    for (const auto& it : report.iterations) {
        json rec;
        rec["iteration"] = it.iteration;
        rec["loss"] = it.loss;
        rec["eval_raw"] = summary_to_json(it.eval_raw);
        rec["eval_regularized"] = summary_to_json(it.eval_reg);
        iters.push_back(rec);
    }
    j["iterations"] = iters;
    if (report.algo == "actor_critic") {
        j["min_posted_mean"] = report.min_posted_mean;
        j["max_posted_mean"] = report.max_posted_mean;
    }
    return j;
}

}  // namespace harness_detail

/// Builds a quoting-policy provider from a checkpoint: value nets drive the
/// closed-form construction, policy-mean nets drive the capped network policy.
struct CheckpointPolicy {
    const Checkpoint* ck;
    const OptionGrid* grid;
    std::optional<int> q_max;

    GaussianQuotePolicy operator()(double t, const IntMatrix& q, double S) const {
        if (ck->kind == "value") {
            NetValueFn value{&ck->net, &ck->encoding, S};
            return closed_form_policy(value, t, q, *grid, ck->gamma_temp, q_max);
        }
        return network_policy(ck->net, ck->encoding, t, q, S, *grid, ck->gamma_temp, ck->cap);
    }
};

/// Trains per the config's algo section and writes checkpoint(s), the report
/// JSON, the loss CSV and one per-evaluation returns CSV into out_dir.
inline void cmd_train(const ExperimentConfig& cfg, const std::string& out_dir) {
    namespace fs = std::filesystem;
    using harness_detail::fmt;
    cfg.validate();
    fs::create_directories(out_dir);
    const EncodingConfig enc = cfg.encoding();
    const std::string fingerprint = grid_fingerprint(cfg.grid);
    const auto t_start = std::chrono::steady_clock::now();

    TrainingReport report;
    if (cfg.algo == AlgoKind::policy_iteration) {
        auto result = policy_iteration(cfg.grid, cfg.sim, cfg.pi, cfg.net.value, enc,
                                       StreamFactory{cfg.seed}, cfg.workers);
        report = std::move(result.report);

        Checkpoint ck{"value", std::move(result.theta), enc, cfg.pi.gamma_temp, 0.0, fingerprint};
        harness_detail::write_json(fs::path(out_dir) / "value_net.json", checkpoint_to_json(ck));

        std::string csv =
            "iteration,martingale_loss,eval_mean_raw,eval_std_raw,eval_mean_reg,eval_std_reg\n";
        for (const auto& it : report.iterations)
            csv += std::to_string(it.iteration) + "," + fmt(it.loss) + "," +
                   fmt(it.eval_raw.mean) + "," + fmt(it.eval_raw.stddev) + "," +
                   fmt(it.eval_reg.mean) + "," + fmt(it.eval_reg.stddev) + "\n";
        harness_detail::write_text(fs::path(out_dir) / "losses.csv", csv);

        for (std::size_t i = 0; i < report.eval_raw_returns.size(); ++i)
            harness_detail::write_text(
                fs::path(out_dir) /
                    ("returns_iter_" + std::to_string(report.iterations[i].iteration) + ".csv"),
                harness_detail::returns_csv(report.eval_raw_returns[i],
                                            report.eval_reg_returns[i]));
    } else {
        auto result = actor_critic(cfg.grid, cfg.sim, cfg.ac, cfg.net.value, cfg.net.policy, enc,
                                   StreamFactory{cfg.seed}, cfg.workers);
        report = std::move(result.report);

        Checkpoint vck{"value", std::move(result.theta), enc, cfg.ac.gamma_temp, 0.0, fingerprint};
        harness_detail::write_json(fs::path(out_dir) / "value_net.json", checkpoint_to_json(vck));
        Checkpoint pck{"policy_mean", std::move(result.phi), enc, cfg.ac.gamma_temp, cfg.ac.cap,
                       fingerprint};
        harness_detail::write_json(fs::path(out_dir) / "policy_net.json", checkpoint_to_json(pck));

        std::string csv =
            "episode,critic_loss,policy_loss,eval_mean_raw,eval_std_raw,eval_mean_reg,eval_std_reg\n";
        std::size_t next_eval = 0;
        for (std::size_t e = 0; e < report.losses.size(); ++e) {
            const std::size_t episode = e + 1;
            std::string eval_cols = ",nan,nan,nan,nan";
            if (next_eval < report.iterations.size() &&
                report.iterations[next_eval].iteration == episode) {
                const auto& it = report.iterations[next_eval];
                eval_cols = "," + fmt(it.eval_raw.mean) + "," + fmt(it.eval_raw.stddev) + "," +
                            fmt(it.eval_reg.mean) + "," + fmt(it.eval_reg.stddev);
                ++next_eval;
            }
            csv += std::to_string(episode) + "," + fmt(report.losses[e]) + "," +
                   fmt(report.policy_losses[e]) + eval_cols + "\n";
        }
        harness_detail::write_text(fs::path(out_dir) / "losses.csv", csv);

        for (std::size_t i = 0; i < report.eval_raw_returns.size(); ++i)
            harness_detail::write_text(
                fs::path(out_dir) /
                    ("returns_ep_" + std::to_string(report.iterations[i].iteration) + ".csv"),
                harness_detail::returns_csv(report.eval_raw_returns[i],
                                            report.eval_reg_returns[i]));
    }

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    report.wall_clock_seconds = wall;
    // the serialized report omits timing so reruns stay byte-identical
    harness_detail::write_json(fs::path(out_dir) / "report.json",
                               harness_detail::report_to_json(report, cfg));
    std::cout << "training finished in " << wall << " s; artifacts in " << out_dir << "\n";
}

/// One CSV row per step: state, spreads, fills and reward components.
inline std::string trajectory_csv(const Trajectory& traj, const OptionGrid& grid) {
    using harness_detail::fmt;
    const std::size_t m = grid.num_strikes(), n = grid.num_maturities();
    std::string csv = "t,S";
    auto block = [&](const char* prefix) {
        for (std::size_t i = 1; i <= m; ++i)
            for (std::size_t j = 1; j <= n; ++j)
                csv += "," + std::string(prefix) + "_" + std::to_string(i) + "_" +
                       std::to_string(j);
    };
    block("q");
    block("eps_bid");
    block("eps_ask");
    block("dNp");
    block("dNm");
    csv += ",spread_pnl,theta_gamma_pnl,entropy_bonus\n";
    for (const auto& s : traj.steps) {
        csv += fmt(s.t) + "," + fmt(s.S);
        for (std::size_t k = 0; k < m * n; ++k) csv += "," + std::to_string(s.q.at_flat(k));
        for (std::size_t k = 0; k < m * n; ++k) csv += "," + fmt(s.eps[k]);
        for (std::size_t k = 0; k < m * n; ++k) csv += "," + fmt(s.eps[m * n + k]);
        for (std::size_t k = 0; k < m * n; ++k)
            csv += "," + std::to_string(s.fills.dN_plus.at_flat(k));
        for (std::size_t k = 0; k < m * n; ++k)
            csv += "," + std::to_string(s.fills.dN_minus.at_flat(k));
        csv += "," + fmt(s.spread_pnl) + "," + fmt(s.theta_gamma_pnl) + "," +
               fmt(s.entropy_bonus) + "\n";
    }
    return csv;
}

/// Evaluates a checkpointed policy over n_paths episodes; emits returns.csv,
/// summary.json and optionally the first dump_paths trajectories.
inline void cmd_evaluate(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                         std::size_t n_paths, const std::string& out_dir,
                         std::size_t dump_paths = 0) {
    namespace fs = std::filesystem;
    cfg.validate();
    const Checkpoint ck = load_checkpoint(checkpoint_path, cfg.grid);
    fs::create_directories(out_dir);

    SimConfig sim = cfg.sim;
    sim.gamma_temp = ck.gamma_temp;
    const CheckpointPolicy policy{&ck, &cfg.grid, sim.q_max};
    const StreamFactory streams{cfg.seed};
    const ReturnStats stats = evaluate_policy(
        policy, cfg.grid, sim, n_paths,
        [&](std::size_t p) { return streams.stream(stream_tag::eval, p); }, cfg.workers);

    harness_detail::write_text(fs::path(out_dir) / "returns.csv",
                               harness_detail::returns_csv(stats.raw_returns, stats.reg_returns));
    json summary;
    summary["n_paths"] = n_paths;
    summary["seed"] = cfg.seed;
    summary["checkpoint_kind"] = ck.kind;
    summary["raw"] = harness_detail::summary_to_json(stats.raw);
    summary["regularized"] = harness_detail::summary_to_json(stats.regularized);
    harness_detail::write_json(fs::path(out_dir) / "summary.json", summary);

    for (std::size_t p = 0; p < std::min(dump_paths, n_paths); ++p) {
        RngStream rng = streams.stream(stream_tag::eval, p);
        const Trajectory traj = generate_path(policy, cfg.grid, sim, rng);
        harness_detail::write_text(
            fs::path(out_dir) / ("trajectory_" + std::to_string(p) + ".csv"),
            trajectory_csv(traj, cfg.grid));
    }
}

/// Bundled inventory scenarios for spread inspection.
inline IntMatrix builtin_inventory(const std::string& name) {
    if (name == "q1") return IntMatrix(5, 4, 0);
    if (name == "q2")
        return IntMatrix{{6, 7, 8, 9}, {3, 4, 5, 6}, {0, 1, 2, 3}, {3, 4, 5, 6}, {6, 7, 8, 9}};
    if (name == "q3")
        return IntMatrix{{3, 4, -5, -6}, {1, 2, -3, -4}, {0, 1, -1, 1}, {1, -2, 3, 4},
                         {2, -3, 4, 5}};
    throw ConfigError("unknown builtin inventory '" + name + "' (expected q1, q2 or q3)");
}

inline IntMatrix inventory_from_source(const std::string& q_source, const OptionGrid& grid) {
    IntMatrix q;
    if (q_source == "q1" || q_source == "q2" || q_source == "q3") {
        q = builtin_inventory(q_source);
    } else {
        std::ifstream in(q_source);
        if (!in) throw ConfigError("cannot open inventory file '" + q_source + "'");
        json j;
        try {
            in >> j;
        } catch (const json::parse_error& e) {
            throw ConfigError("parse error in inventory '" + q_source + "': " + e.what());
        }
        if (!j.is_array() || j.empty() || !j[0].is_array())
            throw ConfigError("inventory file must hold a nested array");
        q = IntMatrix(j.size(), j[0].size());
        for (std::size_t i = 0; i < q.rows(); ++i) {
            if (j[i].size() != q.cols()) throw ConfigError("inventory file has ragged rows");
            for (std::size_t c = 0; c < q.cols(); ++c) q(i, c) = j[i][c].get<int>();
        }
    }
    if (q.rows() != grid.num_strikes() || q.cols() != grid.num_maturities())
        throw ConfigError("inventory shape does not match the configured grid");
    return q;
}

/// Emits the bid/ask mean matrices and per-option standard deviation at
/// (t, q). An empty checkpoint path inspects the untrained flat-value policy.
inline json spreads_json(const ExperimentConfig& cfg, const std::string& checkpoint_path, double t,
                         const std::string& q_source) {
    cfg.validate();
    if (t < 0.0 || t >= cfg.sim.T) throw ConfigError("spreads: t must lie in [0, T)");
    const IntMatrix q = inventory_from_source(q_source, cfg.grid);

    GaussianQuotePolicy pol;
    if (checkpoint_path.empty()) {
        auto zero_v = [](double, const IntMatrix&) { return 0.0; };
        pol = closed_form_policy(zero_v, t, q, cfg.grid, cfg.sim.gamma_temp, cfg.sim.q_max);
    } else {
        const Checkpoint ck = load_checkpoint(checkpoint_path, cfg.grid);
        const CheckpointPolicy policy{&ck, &cfg.grid, cfg.sim.q_max};
        pol = policy(t, q, cfg.sim.S0);
    }

    const std::size_t m = cfg.grid.num_strikes(), n = cfg.grid.num_maturities();
    json bid = json::array(), ask = json::array(), std_mat = json::array(), qj = json::array();
    for (std::size_t i = 0; i < m; ++i) {
        json brow = json::array(), arow = json::array(), srow = json::array(),
             qrow = json::array();
        for (std::size_t j = 0; j < n; ++j) {
            brow.push_back(pol.mean[bid_index(cfg.grid, i, j)]);
            arow.push_back(pol.mean[ask_index(cfg.grid, i, j)]);
            srow.push_back(std::sqrt(pol.var[bid_index(cfg.grid, i, j)]));
            qrow.push_back(q(i, j));
        }
        bid.push_back(brow);
        ask.push_back(arow);
        std_mat.push_back(srow);
        qj.push_back(qrow);
    }
    json out;
    out["t"] = t;
    out["q"] = qj;
    out["bid_mean"] = bid;
    out["ask_mean"] = ask;
    out["std"] = std_mat;
    return out;
}

inline void cmd_spreads(const ExperimentConfig& cfg, const std::string& checkpoint_path, double t,
                        const std::string& q_source, const std::string& out_path) {
    harness_detail::write_json(out_path, spreads_json(cfg, checkpoint_path, t, q_source));
}

/// Runs the invariant suite; returns true when every hard check passed.
inline bool cmd_check(const ExperimentConfig& cfg, const std::string& out_path,
                      const FaultInjection& fault = {}) {
    cfg.validate();
    const std::vector<CheckResult> results = run_all_checks(cfg, fault);
    json j;
    j["seed"] = cfg.seed;
    json arr = json::array();
    bool all_hard = true;
    for (const auto& r : results) {
        arr.push_back({{"name", r.name},
                       {"passed", r.passed},
                       {"hard", r.hard},
                       {"details", r.details}});
        if (r.hard && !r.passed) all_hard = false;
    }
    j["checks"] = arr;
    j["all_hard_passed"] = all_hard;
    if (!out_path.empty()) harness_detail::write_json(out_path, j);
    for (const auto& r : results)
        std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.details << "\n";
    return all_hard;
}

}  // namespace optmm
