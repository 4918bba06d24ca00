#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "optmm/approximator.hpp"
#include "optmm/grid.hpp"
#include "optmm/market_sim.hpp"
#include "optmm/rl_algos.hpp"

namespace optmm {

/// Configuration/validation failure; the CLI maps it to exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using json = nlohmann::json;

enum class AlgoKind { policy_iteration, actor_critic };

struct NetConfig {
    NetSpec value{64, 2};
    NetSpec policy{64, 2};
    double q_scale = 5.0;
    bool include_price = false;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string output_dir = "out";
    std::size_t workers = 1;
    SimConfig sim;
    OptionGrid grid;
    NetConfig net;
    AlgoKind algo = AlgoKind::policy_iteration;
    PolicyIterConfig pi;
    ActorCriticConfig ac;

    EncodingConfig encoding() const {
        EncodingConfig enc;
        enc.t_scale = sim.T;
        enc.q_scale = net.q_scale;
        enc.include_price = net.include_price;
        enc.s_scale = sim.S0;
        return enc;
    }

    void validate() const {
        try {
            sim.validate();
            grid.validate(sim.T);
            pi.validate();
            ac.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        if (net.q_scale <= 0.0) throw ConfigError("net.q_scale must be positive");
        if (workers < 1) throw ConfigError("workers must be >= 1");
    }
};

/// The bundled default experiment: demo grid, standard horizon and price
/// dynamics, policy iteration.
inline ExperimentConfig default_config() {
    ExperimentConfig cfg;
    cfg.grid = demo_grid();
    cfg.sim.gamma_temp = 0.01;
    cfg.pi.gamma_temp = cfg.sim.gamma_temp;
    cfg.ac.gamma_temp = cfg.sim.gamma_temp;
    return cfg;
}

namespace detail {

inline Matrix matrix_from_json(const json& j, const std::string& name) {
    if (!j.is_array() || j.empty() || !j[0].is_array())
        throw ConfigError("grid." + name + " must be a nested array");
    Matrix m(j.size(), j[0].size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (j[i].size() != m.cols()) throw ConfigError("grid." + name + " has ragged rows");
        for (std::size_t c = 0; c < m.cols(); ++c) m(i, c) = j[i][c].get<double>();
    }
    return m;
}

inline json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

inline void reject_unknown_keys(const json& j, std::initializer_list<const char*> known,
                                const std::string& section) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known)
            if (it.key() == k) ok = true;
        if (!ok) throw ConfigError("unknown key '" + section + "." + it.key() + "'");
    }
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
    if (j.contains(key) && !j[key].is_null()) out = j[key].get<T>();
}

}  // namespace detail

inline json config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;
    j["workers"] = cfg.workers;

    json sim;
    sim["T"] = cfg.sim.T;
    sim["dt"] = cfg.sim.dt;
    sim["S0"] = cfg.sim.S0;
    sim["mu"] = cfg.sim.mu;
    sim["sigma"] = cfg.sim.sigma;
    sim["gamma_temp"] = cfg.sim.gamma_temp;
    sim["q_max"] = cfg.sim.q_max ? json(*cfg.sim.q_max) : json(nullptr);
    sim["sampled_entropy"] = cfg.sim.sampled_entropy;
    sim["include_s_squared"] = cfg.sim.include_s_squared;
    sim["carry_sigma"] = cfg.sim.carry_sigma ? json(*cfg.sim.carry_sigma) : json(nullptr);
    j["sim"] = sim;

    json grid;
    grid["strikes"] = cfg.grid.strikes;
    grid["maturities"] = cfg.grid.maturities;
    grid["vol_surface"] = detail::matrix_to_json(cfg.grid.vol_surface);
    grid["A"] = detail::matrix_to_json(cfg.grid.A);
    grid["B"] = detail::matrix_to_json(cfg.grid.B);
    grid["r"] = cfg.grid.r;
    j["grid"] = grid;

    json net;
    net["value_width"] = cfg.net.value.hidden_width;
    net["value_blocks"] = cfg.net.value.residual_blocks;
    net["policy_width"] = cfg.net.policy.hidden_width;
    net["policy_blocks"] = cfg.net.policy.residual_blocks;
    net["q_scale"] = cfg.net.q_scale;
    net["include_price"] = cfg.net.include_price;
    j["net"] = net;

    json algo;
    if (cfg.algo == AlgoKind::policy_iteration) {
        json pi;
        pi["iterations"] = cfg.pi.outer_iterations;
        pi["paths_per_iteration"] = cfg.pi.paths_per_iteration;
        pi["alpha"] = cfg.pi.alpha;
        pi["inner_epochs"] = cfg.pi.inner_epochs;
        pi["residual_mode"] =
            cfg.pi.residual_mode == ResidualMode::literal ? "literal" : "rate_normalized";
        pi["fill_term_mode"] = cfg.pi.fill_term_mode == FillTermMode::closed_form_mean
                                   ? "closed_form_mean"
                                   : "expanded_literal";
        pi["stop_gradient"] = cfg.pi.stop_gradient_through_mean;
        pi["optimizer"] = cfg.pi.optimizer == OptimizerKind::sgd ? "sgd" : "adam";
        pi["grad_clip"] = cfg.pi.grad_clip;
        pi["eval_paths"] = cfg.pi.eval_paths;
        algo["policy_iteration"] = pi;
    } else {
        json ac;
        ac["episodes"] = cfg.ac.episodes;
        ac["alpha"] = cfg.ac.alpha;
        ac["beta"] = cfg.ac.beta;
        ac["cap"] = cfg.ac.cap;
        ac["actor_sign"] = cfg.ac.actor_sign == ActorSign::ascent ? "ascent" : "paper_literal";
        ac["grad_through_delta"] = cfg.ac.grad_through_delta;
        ac["optimizer"] = cfg.ac.optimizer == OptimizerKind::sgd ? "sgd" : "adam";
        ac["grad_clip"] = cfg.ac.grad_clip;
        ac["eval_every"] = cfg.ac.eval_every;
        ac["eval_paths"] = cfg.ac.eval_paths;
        algo["actor_critic"] = ac;
    }
    j["algo"] = algo;
    return j;
}

inline ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig cfg = default_config();
    detail::reject_unknown_keys(j, {"seed", "output_dir", "workers", "sim", "grid", "net", "algo"},
                                "");
    detail::read_if(j, "seed", cfg.seed);
    detail::read_if(j, "output_dir", cfg.output_dir);
    detail::read_if(j, "workers", cfg.workers);

    if (j.contains("sim")) {
        const json& s = j["sim"];
        detail::reject_unknown_keys(s,
                                    {"T", "dt", "S0", "mu", "sigma", "gamma_temp", "q_max",
                                     "sampled_entropy", "include_s_squared", "carry_sigma"},
                                    "sim");
        detail::read_if(s, "T", cfg.sim.T);
        detail::read_if(s, "dt", cfg.sim.dt);
        detail::read_if(s, "S0", cfg.sim.S0);
        detail::read_if(s, "mu", cfg.sim.mu);
        detail::read_if(s, "sigma", cfg.sim.sigma);
        detail::read_if(s, "gamma_temp", cfg.sim.gamma_temp);
        if (s.contains("q_max") && !s["q_max"].is_null()) cfg.sim.q_max = s["q_max"].get<int>();
        detail::read_if(s, "sampled_entropy", cfg.sim.sampled_entropy);
        detail::read_if(s, "include_s_squared", cfg.sim.include_s_squared);
        if (s.contains("carry_sigma") && !s["carry_sigma"].is_null())
            cfg.sim.carry_sigma = s["carry_sigma"].get<double>();
    }

    if (j.contains("grid")) {
        const json& g = j["grid"];
        detail::reject_unknown_keys(g, {"strikes", "maturities", "vol_surface", "A", "B", "r"},
                                    "grid");
        detail::read_if(g, "strikes", cfg.grid.strikes);
        detail::read_if(g, "maturities", cfg.grid.maturities);
        if (g.contains("vol_surface"))
            cfg.grid.vol_surface = detail::matrix_from_json(g["vol_surface"], "vol_surface");
        if (g.contains("A")) cfg.grid.A = detail::matrix_from_json(g["A"], "A");
        if (g.contains("B")) cfg.grid.B = detail::matrix_from_json(g["B"], "B");
        detail::read_if(g, "r", cfg.grid.r);
    }

    if (j.contains("net")) {
        const json& n = j["net"];
        detail::reject_unknown_keys(n,
                                    {"value_width", "value_blocks", "policy_width",
                                     "policy_blocks", "q_scale", "include_price"},
                                    "net");
        detail::read_if(n, "value_width", cfg.net.value.hidden_width);
        detail::read_if(n, "value_blocks", cfg.net.value.residual_blocks);
        detail::read_if(n, "policy_width", cfg.net.policy.hidden_width);
        detail::read_if(n, "policy_blocks", cfg.net.policy.residual_blocks);
        detail::read_if(n, "q_scale", cfg.net.q_scale);
        detail::read_if(n, "include_price", cfg.net.include_price);
    }

    if (j.contains("algo")) {
        const json& a = j["algo"];
        detail::reject_unknown_keys(a, {"policy_iteration", "actor_critic"}, "algo");
        if (a.contains("policy_iteration") && a.contains("actor_critic"))
            throw ConfigError("algo: choose one of policy_iteration or actor_critic");
        if (a.contains("policy_iteration")) {
            cfg.algo = AlgoKind::policy_iteration;
            const json& p = a["policy_iteration"];
            detail::reject_unknown_keys(p,
                                        {"iterations", "paths_per_iteration", "alpha",
                                         "inner_epochs", "residual_mode", "fill_term_mode",
                                         "stop_gradient", "optimizer", "grad_clip", "eval_paths"},
                                        "algo.policy_iteration");
            detail::read_if(p, "iterations", cfg.pi.outer_iterations);
            detail::read_if(p, "paths_per_iteration", cfg.pi.paths_per_iteration);
            detail::read_if(p, "alpha", cfg.pi.alpha);
            detail::read_if(p, "inner_epochs", cfg.pi.inner_epochs);
            if (p.contains("residual_mode")) {
                const std::string mode = p["residual_mode"].get<std::string>();
                if (mode == "literal")
                    cfg.pi.residual_mode = ResidualMode::literal;
                else if (mode == "rate_normalized")
                    cfg.pi.residual_mode = ResidualMode::rate_normalized;
                else
                    throw ConfigError("algo.policy_iteration.residual_mode: '" + mode + "'");
            }
            if (p.contains("fill_term_mode")) {
                const std::string mode = p["fill_term_mode"].get<std::string>();
                if (mode == "closed_form_mean")
                    cfg.pi.fill_term_mode = FillTermMode::closed_form_mean;
                else if (mode == "expanded_literal")
                    cfg.pi.fill_term_mode = FillTermMode::expanded_literal;
                else
                    throw ConfigError("algo.policy_iteration.fill_term_mode: '" + mode + "'");
            }
            detail::read_if(p, "stop_gradient", cfg.pi.stop_gradient_through_mean);
            if (p.contains("optimizer")) {
                const std::string o = p["optimizer"].get<std::string>();
                if (o == "sgd")
                    cfg.pi.optimizer = OptimizerKind::sgd;
                else if (o == "adam")
                    cfg.pi.optimizer = OptimizerKind::adam;
                else
                    throw ConfigError("algo.policy_iteration.optimizer: '" + o + "'");
            }
            detail::read_if(p, "grad_clip", cfg.pi.grad_clip);
            detail::read_if(p, "eval_paths", cfg.pi.eval_paths);
        } else if (a.contains("actor_critic")) {
            cfg.algo = AlgoKind::actor_critic;
            const json& p = a["actor_critic"];
            detail::reject_unknown_keys(p,
                                        {"episodes", "alpha", "beta", "cap", "actor_sign",
                                         "grad_through_delta", "optimizer", "grad_clip",
                                         "eval_every", "eval_paths"},
                                        "algo.actor_critic");
            detail::read_if(p, "episodes", cfg.ac.episodes);
            detail::read_if(p, "alpha", cfg.ac.alpha);
            detail::read_if(p, "beta", cfg.ac.beta);
            detail::read_if(p, "cap", cfg.ac.cap);
            if (p.contains("actor_sign")) {
                const std::string s = p["actor_sign"].get<std::string>();
                if (s == "ascent")
                    cfg.ac.actor_sign = ActorSign::ascent;
                else if (s == "paper_literal")
                    cfg.ac.actor_sign = ActorSign::paper_literal;
                else
                    throw ConfigError("algo.actor_critic.actor_sign: '" + s + "'");
            }
            detail::read_if(p, "grad_through_delta", cfg.ac.grad_through_delta);
            if (p.contains("optimizer")) {
                const std::string o = p["optimizer"].get<std::string>();
                if (o == "sgd")
                    cfg.ac.optimizer = OptimizerKind::sgd;
                else if (o == "adam")
                    cfg.ac.optimizer = OptimizerKind::adam;
                else
                    throw ConfigError("algo.actor_critic.optimizer: '" + o + "'");
            }
            detail::read_if(p, "grad_clip", cfg.ac.grad_clip);
            detail::read_if(p, "eval_every", cfg.ac.eval_every);
            detail::read_if(p, "eval_paths", cfg.ac.eval_paths);
        }
    }

    // one temperature drives the simulator, the policies and the residuals
    cfg.pi.gamma_temp = cfg.sim.gamma_temp;
    cfg.ac.gamma_temp = cfg.sim.gamma_temp;
    cfg.validate();
    return cfg;
}

/// Loads a config file; an empty (or whitespace-only) file yields the full
/// default experiment. Parse errors carry the file name and position.
inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) return default_config();
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("parse error in '" + path + "': " + e.what());
    }
    try {
        return config_from_json(j);
    } catch (const json::exception& e) {
        throw ConfigError("invalid config '" + path + "': " + e.what());
    }
}

/// Stable fingerprint of the instrument universe; checkpoints refuse to load
/// against a different grid.
inline std::string grid_fingerprint(const OptionGrid& grid) {
    std::string canon = std::to_string(grid.num_strikes()) + "x" +
                        std::to_string(grid.num_maturities());
    auto push = [&canon](double v) {
        char buf[32];
        auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
        canon.append(buf, p);
        canon.push_back(',');
    };
    for (double v : grid.strikes) push(v);
    for (double v : grid.maturities) push(v);
    for (double v : grid.vol_surface.flat()) push(v);
    for (double v : grid.A.flat()) push(v);
    for (double v : grid.B.flat()) push(v);
    push(grid.r);
    // FNV-1a 64
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : canon) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char out[17];
    static const char* hex = "0123456789abcdef";
    for (int i = 0; i < 16; ++i) out[i] = hex[(h >> (60 - 4 * i)) & 0xf];
    out[16] = '\0';
    return out;
}

struct Checkpoint {
    std::string kind;  // "value" or "policy_mean"
    Approximator net;
    EncodingConfig encoding;
    double gamma_temp = 0.01;
    double cap = 0.1;
    std::string fingerprint;
};

inline json checkpoint_to_json(const Checkpoint& ck) {
    json j;
    j["format_version"] = 1;
    j["kind"] = ck.kind;
    json shapes = json::array();
    for (const auto& l : ck.net.layer_shapes()) shapes.push_back({l.in, l.out});
    j["layer_shapes"] = shapes;
    j["residual_blocks"] = ck.net.residual_blocks();
    j["params"] = ck.net.params();
    j["encoding"] = {{"t_scale", ck.encoding.t_scale},
                     {"q_scale", ck.encoding.q_scale},
                     {"include_price", ck.encoding.include_price},
                     {"s_scale", ck.encoding.s_scale}};
    j["gamma_temp"] = ck.gamma_temp;
    j["cap"] = ck.cap;
    j["grid_fingerprint"] = ck.fingerprint;
    return j;
}

inline Checkpoint checkpoint_from_json(const json& j, const OptionGrid& expected_grid) {
    if (!j.contains("format_version") || j["format_version"].get<int>() != 1)
        throw ConfigError("checkpoint: unsupported format version");
    const std::string fp = j["grid_fingerprint"].get<std::string>();
    if (fp != grid_fingerprint(expected_grid))
        throw ConfigError("checkpoint grid fingerprint mismatch: checkpoint was trained on a "
                          "different instrument universe");
    std::vector<LayerShape> shapes;
    for (const auto& s : j["layer_shapes"]) shapes.push_back({s[0].get<std::size_t>(),
                                                              s[1].get<std::size_t>()});
    Checkpoint ck{j["kind"].get<std::string>(),
                  Approximator(shapes, j["residual_blocks"].get<std::size_t>()),
                  EncodingConfig{},
                  j["gamma_temp"].get<double>(),
                  j["cap"].get<double>(),
                  fp};
    const auto params = j["params"].get<std::vector<double>>();
    if (params.size() != ck.net.param_count())
        throw ConfigError("checkpoint: parameter count does not match layer shapes");
    ck.net.params() = params;
    const json& e = j["encoding"];
    ck.encoding.t_scale = e["t_scale"].get<double>();
    ck.encoding.q_scale = e["q_scale"].get<double>();
    ck.encoding.include_price = e["include_price"].get<bool>();
    ck.encoding.s_scale = e["s_scale"].get<double>();
    return ck;
}

inline Checkpoint load_checkpoint(const std::string& path, const OptionGrid& expected_grid) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError("parse error in checkpoint '" + path + "': " + e.what());
    }
    try {
        return checkpoint_from_json(j, expected_grid);
    } catch (const json::exception& e) {
        throw ConfigError("invalid checkpoint '" + path + "': " + e.what());
    }
}

}  // namespace optmm
