#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "optmm/grid.hpp"
#include "optmm/matrix.hpp"
#include "optmm/parallel.hpp"
#include "optmm/policy.hpp"
#include "optmm/pricing.hpp"
#include "optmm/rng.hpp"
#include "optmm/stats.hpp"

namespace optmm {

struct SimConfig {
    double T = 1.0;
    double dt = 0.01;
    double S0 = 100.0;
    double mu = 0.01;
    double sigma = 0.05;
    double gamma_temp = 0.01;
    std::uint64_t seed = 0;
    std::optional<int> q_max;
    bool sampled_entropy = false;      // entropy bonus from -log pi(sampled eps) instead of closed form
    bool include_s_squared = false;    // S^2 factor on the convexity carry term
    std::optional<double> carry_sigma; // overrides the underlying sigma in the carry term

    std::size_t num_steps() const { return static_cast<std::size_t>(std::llround(T / dt)); }

    void validate() const {
        if (!(dt > 0.0) || !(T > 0.0)) throw std::invalid_argument("sim: T and dt must be positive");
        const double k = T / dt;
        if (std::abs(k - std::llround(k)) > 1e-9 * std::max(1.0, k))
            throw std::invalid_argument("sim: T/dt must be an integer number of steps");
        if (!(gamma_temp > 0.0)) throw std::invalid_argument("sim: gamma_temp must be positive");
        if (!(S0 > 0.0)) throw std::invalid_argument("sim: S0 must be positive");
        if (q_max && *q_max < 0) throw std::invalid_argument("sim: q_max must be nonnegative");
    }
};

struct MarketState {
    double t = 0.0;
    double S = 0.0;
    IntMatrix q;
};

struct FillEvent {
    IntMatrix dN_plus;   // buy market orders hitting our bid, entries in {0,1}
    IntMatrix dN_minus;  // sell market orders hitting our ask
};

struct TrajectoryStep {
    double t = 0.0;
    double S = 0.0;
    IntMatrix q;                  // inventory at the start of the step
    std::vector<double> eps;      // sampled spreads, bid block then ask block
    FillEvent fills;              // after any inventory-cap censoring
    double spread_pnl = 0.0;
    double theta_gamma_pnl = 0.0;
    double entropy_bonus = 0.0;
    double hedge_delta = 0.0;     // underlying shares neutralizing book delta
};

struct Trajectory {
    std::vector<TrajectoryStep> steps;
    double final_t = 0.0;
    double final_S = 0.0;
    IntMatrix final_q;

    double raw_return() const {
        double r = 0.0;
        for (const auto& s : steps) r += s.spread_pnl + s.theta_gamma_pnl;
        return r;
    }
    double regularized_return() const {
        double r = 0.0;
        for (const auto& s : steps) r += s.spread_pnl + s.theta_gamma_pnl + s.entropy_bonus;
        return r;
    }
};

/// Exact log-Euler step: S' = S exp((mu - sigma^2/2) dt + sigma sqrt(dt) Z).
inline double gbm_step(double S, double mu, double sigma, double dt, RngStream& rng) {
    if (!(S > 0.0)) throw std::domain_error("gbm_step: S must be positive");
    if (!(dt > 0.0)) throw std::domain_error("gbm_step: dt must be positive");
    return S * std::exp((mu - 0.5 * sigma * sigma) * dt + sigma * std::sqrt(dt) * rng.normal());
}

/// Clamped linear intensities max(0, A - B eps) per option side, laid out
/// like the spread vector. The raw linear form can go negative for wide
/// spreads; clamping keeps the arrival rates admissible.
inline std::vector<double> intensities(std::span<const double> eps, const OptionGrid& grid) {
    const std::size_t mn = grid.num_options();
    if (eps.size() != 2 * mn) throw std::invalid_argument("intensities: eps dim != 2mn");
    std::vector<double> lambda(2 * mn);
    for (std::size_t i = 0; i < grid.num_strikes(); ++i)
        for (std::size_t j = 0; j < grid.num_maturities(); ++j) {
            const std::size_t bi = bid_index(grid, i, j), ai = ask_index(grid, i, j);
            lambda[bi] = std::max(0.0, grid.A(i, j) - grid.B(i, j) * eps[bi]);
            lambda[ai] = std::max(0.0, grid.A(i, j) - grid.B(i, j) * eps[ai]);
        }
    return lambda;
}

/// One Bernoulli(min(lambda dt, 1)) draw per option side; at most one
/// contract per side per step, matching unit inventory increments.
inline FillEvent sample_fills(std::span<const double> lambda, double dt, const OptionGrid& grid,
                              RngStream& rng) {
    const std::size_t mn = grid.num_options();
    if (lambda.size() != 2 * mn) throw std::invalid_argument("sample_fills: lambda dim != 2mn");
    const std::size_t m = grid.num_strikes(), n = grid.num_maturities();
    FillEvent ev{IntMatrix(m, n, 0), IntMatrix(m, n, 0)};
    for (std::size_t c = 0; c < 2 * mn; ++c) {
        const double p = std::min(lambda[c] * dt, 1.0);
        const bool fill = rng.uniform01() < p;
        if (!fill) continue;
        if (c < mn)
            ev.dN_plus.at_flat(c) = 1;
        else
            ev.dN_minus.at_flat(c - mn) = 1;
    }
    return ev;
}

/// Zeroes fills that would push |q| past q_max; the associated spread P&L is
/// dropped with them.
inline FillEvent censor_fills(const IntMatrix& q, const FillEvent& fills,
                              std::optional<int> q_max) {
    FillEvent out = fills;
    if (!q_max) return out;
    for (std::size_t k = 0; k < q.size(); ++k) {
        if (out.dN_plus.at_flat(k) && q.at_flat(k) + 1 > *q_max) out.dN_plus.at_flat(k) = 0;
        if (out.dN_minus.at_flat(k) && q.at_flat(k) - 1 < -*q_max) out.dN_minus.at_flat(k) = 0;
    }
    return out;
}

/// q' = q + dN+ - dN-, censoring against q_max first.
inline IntMatrix apply_fills(const IntMatrix& q, const FillEvent& fills,
                             std::optional<int> q_max = std::nullopt) {
    require_same_shape(q, fills.dN_plus, "apply_fills");
    require_same_shape(q, fills.dN_minus, "apply_fills");
    const FillEvent kept = censor_fills(q, fills, q_max);
    IntMatrix out = q;
    for (std::size_t k = 0; k < q.size(); ++k)
        out.at_flat(k) += kept.dN_plus.at_flat(k) - kept.dN_minus.at_flat(k);
    return out;
}

/// Shares of the underlying offsetting the book's first-order price risk.
inline double hedge_delta(const GreeksGrid& greeks, const IntMatrix& q) {
    require_same_shape(greeks.delta, q, "hedge_delta");
    double h = 0.0;
    for (std::size_t k = 0; k < q.size(); ++k)
        h += greeks.delta.at_flat(k) * q.at_flat(k);
    return h;
}

/// Policies are queried per step at the pre-fill state.
template <typename P>
concept PolicyProvider = requires(P p, double t, const IntMatrix& q, double S) {
    { p(t, q, S) } -> std::convertible_to<GaussianQuotePolicy>;
};

/// Simulates one episode. Per step: quote, sample spreads, draw fills from
/// the clamped intensities, book spread revenue / inventory carry / entropy
/// bonus, apply fills, advance the mid-price. Terminal value is zero: the
/// episode simply ends at T with the final state recorded.
template <PolicyProvider P>
Trajectory generate_path(P&& policy_provider, const OptionGrid& grid, const SimConfig& cfg,
                         RngStream& rng) {
    cfg.validate();
    const std::size_t K = cfg.num_steps();
    const std::size_t m = grid.num_strikes(), n = grid.num_maturities();
    const double carry_sigma = cfg.carry_sigma.value_or(cfg.sigma);

    Trajectory traj;
    traj.steps.reserve(K);
    double S = cfg.S0;
    IntMatrix q(m, n, 0);

    for (std::size_t k = 0; k < K; ++k) {
        const double t = static_cast<double>(k) * cfg.dt;
        const GreeksGrid greeks = grid_greeks(t, S, grid);
        const GaussianQuotePolicy policy = policy_provider(t, q, S);
        if (policy.dim() != 2 * m * n) throw std::invalid_argument("generate_path: policy dim");

        TrajectoryStep step;
        step.t = t;
        step.S = S;
        step.q = q;
        step.eps = policy.sample(rng);
        const std::vector<double> lambda = intensities(step.eps, grid);
        const FillEvent raw = sample_fills(lambda, cfg.dt, grid, rng);
        step.fills = censor_fills(q, raw, cfg.q_max);

        double spread = 0.0;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                if (step.fills.dN_plus(i, j)) spread += step.eps[bid_index(grid, i, j)];
                if (step.fills.dN_minus(i, j)) spread += step.eps[ask_index(grid, i, j)];
            }
        step.spread_pnl = spread;
        step.theta_gamma_pnl =
            theta_gamma_rate(greeks, q, carry_sigma, S, cfg.include_s_squared) * cfg.dt;
        step.entropy_bonus = cfg.gamma_temp * cfg.dt *
                             (cfg.sampled_entropy ? -policy.log_prob(step.eps) : policy.entropy());
        step.hedge_delta = hedge_delta(greeks, q);

        q = apply_fills(q, step.fills);  // already censored
        S = gbm_step(S, cfg.mu, cfg.sigma, cfg.dt, rng);
        traj.steps.push_back(std::move(step));
    }
    traj.final_t = cfg.T;
    traj.final_S = S;
    traj.final_q = q;
    return traj;
}

struct ReturnStats {
    SampleSummary raw;
    SampleSummary regularized;
    std::vector<double> raw_returns;
    std::vector<double> reg_returns;
};

/// Simulates n_paths episodes, one seed-derived stream per path index, and
/// summarizes the raw and entropy-regularized episode returns.
template <PolicyProvider P>
ReturnStats evaluate_policy(P&& policy_provider, const OptionGrid& grid, const SimConfig& cfg,
                            std::size_t n_paths,
                            const std::function<RngStream(std::size_t)>& stream_for_path,
                            std::size_t workers = 1) {
    if (n_paths == 0) throw std::invalid_argument("evaluate_policy: n_paths must be >= 1");
    ReturnStats stats;
    stats.raw_returns.resize(n_paths);
    stats.reg_returns.resize(n_paths);
    parallel_for(n_paths, workers, [&](std::size_t p) {
        RngStream rng = stream_for_path(p);
        const Trajectory traj = generate_path(policy_provider, grid, cfg, rng);
        stats.raw_returns[p] = traj.raw_return();
        stats.reg_returns[p] = traj.regularized_return();
    });
    stats.raw = summarize(stats.raw_returns);
    stats.regularized = summarize(stats.reg_returns);
    return stats;
}

}  // namespace optmm
