#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "optmm/config.hpp"
#include "optmm/grid.hpp"
#include "optmm/market_sim.hpp"
#include "optmm/policy.hpp"
#include "optmm/pricing.hpp"
#include "optmm/rl_algos.hpp"
#include "optmm/stats.hpp"

namespace optmm {

struct CheckResult {
    std::string name;
    bool passed = false;
    bool hard = true;  // statistical checks report but do not gate the exit code
    std::string details;
};

/// Test hook: biases injected into computed quantities so a deliberately
/// broken pipeline is caught and named by the report.
struct FaultInjection {
    double gamma_bias = 0.0;
};

namespace checks_detail {

inline long double bs_price_ld(long double S, long double K, long double tau, long double sigma) {
    const long double st = sigma * sqrtl(tau);
    const long double d1 = (logl(S / K) + 0.5L * sigma * sigma * tau) / st;
    auto N = [](long double x) { return 0.5L * erfcl(-x * 0.70710678118654752440L); };
    return S * N(d1) - K * N(d1 - st);
}

}  // namespace checks_detail

/// Analytic delta/gamma/theta against fourth-order central stencils of an
/// extended-precision price, over strikes within 1.5 sigmas of spot.
inline CheckResult check_greeks_fd(std::uint64_t seed, std::size_t tuples = 1000,
                                   const FaultInjection& fault = {}) {
    RngStream rng(seed, stream_tag::checks, 1);
    double worst = 0.0;
    for (std::size_t rep = 0; rep < tuples; ++rep) {
        const double S = 50.0 + 150.0 * rng.uniform01();
        const double tau = 0.5 + 4.5 * rng.uniform01();
        const double sigma = 0.1 + 0.4 * rng.uniform01();
        const double K = S * std::exp((3.0 * rng.uniform01() - 1.5) * sigma * std::sqrt(tau));
        const CallQuote q = bs_call(S, K, tau, sigma);

        auto f = [&](long double s) { return checks_detail::bs_price_ld(s, K, tau, sigma); };
        const long double hS = 1e-4L * S;
        const double fd_d = static_cast<double>(
            (-f(S + 2 * hS) + 8 * f(S + hS) - 8 * f(S - hS) + f(S - 2 * hS)) / (12 * hS));
        const double fd_g = static_cast<double>(
            (-f(S + 2 * hS) + 16 * f(S + hS) - 30 * f(S) + 16 * f(S - hS) - f(S - 2 * hS)) /
            (12 * hS * hS));
        auto g = [&](long double t) { return checks_detail::bs_price_ld(S, K, t, sigma); };
        const long double ht = 1e-4L * tau;
        const double fd_t = static_cast<double>(
            -(-g(tau + 2 * ht) + 8 * g(tau + ht) - 8 * g(tau - ht) + g(tau - 2 * ht)) / (12 * ht));

        const double gamma_checked = q.gamma + fault.gamma_bias;
        worst = std::max(worst, std::abs(q.delta - fd_d) / std::max(std::abs(fd_d), 1e-12));
        worst = std::max(worst, std::abs(gamma_checked - fd_g) / std::max(std::abs(fd_g), 1e-12));
        worst = std::max(worst, std::abs(q.theta - fd_t) / std::max(std::abs(fd_t), 1e-12));
    }
    CheckResult r;
    r.name = "greeks_finite_difference";
    r.passed = worst < 1e-6;
    r.details = "worst relative error " + std::to_string(worst) + " over " +
                std::to_string(tuples) + " tuples (tolerance 1e-6)";
    return r;
}

/// Closed-form Gaussian entropy against the direct half-log-det.
inline CheckResult check_entropy_identity(const OptionGrid& grid, std::uint64_t seed,
                                          std::size_t cases = 100) {
    RngStream rng(seed, stream_tag::checks, 2);
    double worst = 0.0;
    for (std::size_t rep = 0; rep <= cases; ++rep) {
        OptionGrid g = grid;
        double gamma_temp = 0.01;
        if (rep > 0) {  // rep 0 keeps the configured grid itself
            for (std::size_t k = 0; k < g.B.size(); ++k)
                g.B.at_flat(k) = 0.2 + 9.8 * rng.uniform01();
            gamma_temp = 0.001 + rng.uniform01();
        }
        const std::vector<double> var = make_variances(g, gamma_temp);
        const double closed = entropy_from_variances(var);
        double direct = 0.0;
        for (double v : var) direct += 0.5 * std::log(2.0 * M_PI * M_E * v);
        worst = std::max(worst, std::abs(closed - direct));
    }
    CheckResult r;
    r.name = "entropy_identity";
    r.passed = worst < 1e-10;
    r.details = "worst |closed - half log det| = " + std::to_string(worst) + " (tolerance 1e-10)";
    return r;
}

/// Closed-form policy mean against brute-force maximization of the
/// per-component quote objective.
inline CheckResult check_policy_argmax(std::uint64_t seed, std::size_t cases = 100) {
    RngStream rng(seed, stream_tag::checks, 3);
    double worst = 0.0;
    for (std::size_t rep = 0; rep < cases; ++rep) {
        OptionGrid g = toy_grid();
        g.A = Matrix{{20.0 + 60.0 * rng.uniform01()}};
        g.B = Matrix{{2.0 + 8.0 * rng.uniform01()}};
        double table[9];
        for (double& v : table) v = 2.0 * rng.normal();
        auto tab_v = [&](double, const IntMatrix& q) { return table[q(0, 0) + 4]; };
        IntMatrix q(1, 1, static_cast<int>(rep % 7) - 3);
        const auto pol = closed_form_policy(tab_v, 0.5, q, g, 0.01);

        auto vertex = [&](double dv) {
            double best_eps = -10.0, best_val = -1e300;
            for (long k = 0; k <= 300000; ++k) {
                const double eps = -10.0 + 1e-4 * static_cast<double>(k);
                const double val = (g.A(0, 0) - g.B(0, 0) * eps) * (dv + eps);
                if (val > best_val) {
                    best_val = val;
                    best_eps = eps;
                }
            }
            return best_eps;
        };
        const double dv_up = table[q(0, 0) + 5] - table[q(0, 0) + 4];
        const double dv_dn = table[q(0, 0) + 3] - table[q(0, 0) + 4];
        worst = std::max(worst, std::abs(pol.mean[0] - vertex(dv_up)));
        worst = std::max(worst, std::abs(pol.mean[1] - vertex(dv_dn)));
    }
    CheckResult r;
    r.name = "policy_argmax_grid_search";
    r.passed = worst <= 1e-4;
    r.details = "worst |mean - argmax| = " + std::to_string(worst) + " (grid step 1e-4)";
    return r;
}

/// Reverse-mode gradients (network, martingale loss, critic loss, score)
/// against central finite differences on small nets.
inline CheckResult check_gradients(std::uint64_t seed, std::size_t seeds = 5) {
    const OptionGrid grid = toy_grid();
    SimConfig sim;
    sim.T = 0.05;
    sim.dt = 0.01;
    sim.gamma_temp = 0.01;
    EncodingConfig enc;
    double worst = 0.0;

    for (std::size_t s = 0; s < seeds; ++s) {
        RngStream init(seed + s, stream_tag::checks, 4);
        Approximator theta = Approximator::make(enc.dim(1), 8, 1, 1);
        Approximator phi = Approximator::make(enc.dim(1), 6, 1, 2);
        theta.init_params(init);
        phi.init_params(init);
        for (auto& p : theta.params()) p += 0.05 * init.normal();
        for (auto& p : phi.params()) p += 0.05 * init.normal();

        auto provider = [&](double t, const IntMatrix& q, double S) {
            NetValueFn v{&theta, &enc, S};
            return closed_form_policy(v, t, q, grid, sim.gamma_temp);
        };
        RngStream path_rng(seed + s, stream_tag::checks, 5);
        std::vector<Trajectory> data = {generate_path(provider, grid, sim, path_rng)};

        {  // martingale loss gradient
            const LossResult res = martingale_loss(theta, enc, data, grid, sim.gamma_temp, sim.dt);
            double scale = 1e-8;
            for (double g : res.grad) scale = std::max(scale, std::abs(g));
            for (std::size_t i = 0; i < theta.param_count(); ++i) {
                const double h = 1e-5, save = theta.params()[i];
                theta.params()[i] = save + h;
                const double up =
                    martingale_loss(theta, enc, data, grid, sim.gamma_temp, sim.dt).loss;
                theta.params()[i] = save - h;
                const double dn =
                    martingale_loss(theta, enc, data, grid, sim.gamma_temp, sim.dt).loss;
                theta.params()[i] = save;
                worst = std::max(worst, std::abs(res.grad[i] - (up - dn) / (2 * h)) / scale);
            }
        }
        {  // critic loss gradient
            const LossResult res =
                critic_loss(theta, enc, data[0], phi, enc, grid, sim.gamma_temp, sim.dt, 0.1);
            double scale = 1e-8;
            for (double g : res.grad) scale = std::max(scale, std::abs(g));
            for (std::size_t i = 0; i < theta.param_count(); ++i) {
                const double h = 1e-5, save = theta.params()[i];
                theta.params()[i] = save + h;
                const double up =
                    critic_loss(theta, enc, data[0], phi, enc, grid, sim.gamma_temp, sim.dt, 0.1)
                        .loss;
                theta.params()[i] = save - h;
                const double dn =
                    critic_loss(theta, enc, data[0], phi, enc, grid, sim.gamma_temp, sim.dt, 0.1)
                        .loss;
                theta.params()[i] = save;
                worst = std::max(worst, std::abs(res.grad[i] - (up - dn) / (2 * h)) / scale);
            }
        }
        {  // score function gradient
            IntMatrix q(1, 1, 1);
            std::vector<double> eps = {0.03, 0.08};
            std::vector<double> grad(phi.param_count(), 0.0);
            policy_mean_score(phi, enc, 0.02, q, 100.0, eps, grid, sim.gamma_temp, 0.1, grad);
            double scale = 1e-8;
            for (double g : grad) scale = std::max(scale, std::abs(g));
            for (std::size_t i = 0; i < phi.param_count(); ++i) {
                const double h = 1e-5, save = phi.params()[i];
                phi.params()[i] = save + h;
                const double up =
                    network_policy(phi, enc, 0.02, q, 100.0, grid, sim.gamma_temp, 0.1)
                        .log_prob(eps);
                phi.params()[i] = save - h;
                const double dn =
                    network_policy(phi, enc, 0.02, q, 100.0, grid, sim.gamma_temp, 0.1)
                        .log_prob(eps);
                phi.params()[i] = save;
                worst = std::max(worst, std::abs(grad[i] - (up - dn) / (2 * h)) / scale);
            }
        }
    }
    CheckResult r;
    r.name = "gradient_finite_difference";
    r.passed = worst < 1e-4;
    r.details = "worst relative error " + std::to_string(worst) + " over " +
                std::to_string(seeds) + " seeds (tolerance 1e-4)";
    return r;
}

/// Chi-square goodness of fit for the per-side fill frequencies at fixed
/// spreads (99% confidence).
inline CheckResult check_fill_statistics(const OptionGrid& grid, std::uint64_t seed,
                                         std::size_t steps = 100000) {
    RngStream rng(seed, stream_tag::checks, 6);
    const std::size_t sides = 2 * grid.num_options();
    std::vector<double> eps(sides, 5.0);
    const auto lam = intensities(eps, grid);
    const double dt = 0.01;
    std::vector<std::size_t> hits(sides, 0);
    for (std::size_t k = 0; k < steps; ++k) {
        const FillEvent ev = sample_fills(lam, dt, grid, rng);
        for (std::size_t c = 0; c < sides; ++c)
            hits[c] += c < sides / 2 ? ev.dN_plus.at_flat(c) : ev.dN_minus.at_flat(c - sides / 2);
    }
    double chi2 = 0.0;
    for (std::size_t c = 0; c < sides; ++c) {
        const double expect = std::min(lam[c] * dt, 1.0) * static_cast<double>(steps);
        const double d = static_cast<double>(hits[c]) - expect;
        chi2 += d * d / expect + d * d / (static_cast<double>(steps) - expect);
    }
    const double crit = chi_square_quantile(static_cast<double>(sides), 0.99);
    CheckResult r;
    r.name = "fill_frequency_chi_square";
    r.hard = false;
    r.passed = chi2 < crit;
    r.details = "chi2 = " + std::to_string(chi2) + " vs 99% critical value " +
                std::to_string(crit) + " (" + std::to_string(sides) + " dof)";
    return r;
}

/// Monte Carlo improvement statistic on the single-option universe: fit a
/// value net to the baseline policy's data, rebuild the closed-form policy,
/// and require the paired objective difference to clear -2 standard errors.
inline CheckResult check_policy_improvement(std::uint64_t seed, std::size_t n_paths = 400) {
    const OptionGrid grid = toy_grid();
    SimConfig sim;
    sim.gamma_temp = 0.01;
    PolicyIterConfig cfg;
    cfg.outer_iterations = 2;
    cfg.paths_per_iteration = 8;
    cfg.inner_epochs = 20;
    cfg.alpha = 2e-7;
    cfg.residual_mode = ResidualMode::rate_normalized;
    cfg.grad_clip = 10.0;
    cfg.eval_paths = 1;
    EncodingConfig enc;

    const auto trained =
        policy_iteration(grid, sim, cfg, NetSpec{16, 1}, enc, StreamFactory{seed});
    const ImprovementStats st =
        verify_policy_improvement(trained.theta, enc, grid, sim, n_paths, StreamFactory{seed});

    CheckResult r;
    r.name = "policy_improvement_monte_carlo";
    r.hard = false;
    r.passed = st.pass;
    r.details = "paired diff " + std::to_string(st.diff_mean) + " +- " + std::to_string(st.diff_se) +
                " (baseline " + std::to_string(st.baseline_mean) + ", candidate " +
                std::to_string(st.candidate_mean) + ", pass if diff >= -2 se)";
    return r;
}

/// Full invariant suite at desk scale.
inline std::vector<CheckResult> run_all_checks(const ExperimentConfig& cfg,
                                               const FaultInjection& fault = {}) {
    std::vector<CheckResult> results;
    results.push_back(check_greeks_fd(cfg.seed, 1000, fault));
    results.push_back(check_entropy_identity(cfg.grid, cfg.seed));
    results.push_back(check_policy_argmax(cfg.seed));
    results.push_back(check_gradients(cfg.seed));
    results.push_back(check_fill_statistics(cfg.grid, cfg.seed));
    results.push_back(check_policy_improvement(cfg.seed));
    return results;
}

}  // namespace optmm
