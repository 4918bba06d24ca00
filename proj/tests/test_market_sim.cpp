#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "optmm/market_sim.hpp"
#include "optmm/stats.hpp"
#include "oracles.hpp"

using namespace optmm;

namespace {

// constant-mean policy provider over a given grid
struct ConstantPolicy {
    const OptionGrid* grid;
    double gamma_temp;
    double mean_value;
    GaussianQuotePolicy operator()(double, const IntMatrix&, double) const {
        GaussianQuotePolicy p;
        p.m = grid->num_strikes();
        p.n = grid->num_maturities();
        p.var = make_variances(*grid, gamma_temp);
        p.mean.assign(2 * grid->num_options(), mean_value);
        return p;
    }
};

SimConfig toy_sim() {
    SimConfig cfg;
    cfg.T = 1.0;
    cfg.dt = 0.01;
    cfg.S0 = 100.0;
    cfg.mu = 0.01;
    cfg.sigma = 0.05;
    cfg.gamma_temp = 0.01;
    return cfg;
}

}  // namespace

TEST_CASE("gbm_step noiseless limits", "[market_sim]") {
    RngStream rng(1, stream_tag::paths);
    CHECK(gbm_step(100.0, 0.02, 0.0, 0.01, rng) == Catch::Approx(100.0 * std::exp(0.0002)));
    CHECK(gbm_step(100.0, 0.0, 0.0, 0.01, rng) == 100.0);
    CHECK_THROWS_AS(gbm_step(-1.0, 0.0, 0.1, 0.01, rng), std::domain_error);
}

TEST_CASE("gbm_step log-return sample mean matches the drift", "[market_sim]") {
    RngStream rng(99, stream_tag::paths);
    const double mu = 0.01, sigma = 0.05, dt = 0.01;
    const std::size_t n = 1000000;
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k)
        acc += std::log(gbm_step(100.0, mu, sigma, dt, rng) / 100.0);
    const double want = (mu - 0.5 * sigma * sigma) * dt;  // 8.75e-5
    const double se = sigma * std::sqrt(dt) / std::sqrt(double(n));
    CHECK(std::abs(acc / n - want) < 3 * se);
}

TEST_CASE("intensities: linear in spread, clamped at zero", "[market_sim]") {
    const OptionGrid grid = demo_grid();
    std::vector<double> eps(40, 0.1);
    const auto lam = intensities(eps, grid);
    // the A=56, B=5 option quoted at 0.1 arrives at rate 55.5
    CHECK(lam[bid_index(grid, 2, 0)] == Catch::Approx(55.5));
    CHECK(lam[ask_index(grid, 2, 0)] == Catch::Approx(55.5));

    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            const double root = grid.A(i, j) / grid.B(i, j);
            std::vector<double> at_root(40, root);
            std::vector<double> beyond(40, 2.0 * root);
            CHECK(intensities(at_root, grid)[bid_index(grid, i, j)] == 0.0);
            CHECK(intensities(beyond, grid)[ask_index(grid, i, j)] == 0.0);
        }

    // negative sampled spreads are admissible and raise the rate
    std::vector<double> neg(40, -0.5);
    CHECK(intensities(neg, grid)[bid_index(grid, 2, 0)] == Catch::Approx(58.5));
}

TEST_CASE("sample_fills degenerate probabilities", "[market_sim]") {
    const OptionGrid grid = toy_grid();
    RngStream rng(2, stream_tag::paths);

    std::vector<double> none = {0.0, 0.0};
    const FillEvent ev0 = sample_fills(none, 0.01, grid, rng);
    CHECK(ev0.dN_plus(0, 0) == 0);
    CHECK(ev0.dN_minus(0, 0) == 0);

    std::vector<double> huge = {200.0, 200.0};  // lambda dt >= 1: deterministic fill
    for (int rep = 0; rep < 20; ++rep) {
        const FillEvent ev1 = sample_fills(huge, 0.01, grid, rng);
        CHECK(ev1.dN_plus(0, 0) == 1);
        CHECK(ev1.dN_minus(0, 0) == 1);
    }
}

TEST_CASE("sample_fills frequency matches lambda dt", "[market_sim]") {
    const OptionGrid grid = toy_grid();
    RngStream rng(3, stream_tag::paths);
    std::vector<double> lam = {55.5, 20.0};
    const double dt = 0.01;
    const std::size_t n = 1000000;
    std::size_t hits_b = 0, hits_a = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const FillEvent ev = sample_fills(lam, dt, grid, rng);
        hits_b += ev.dN_plus(0, 0);
        hits_a += ev.dN_minus(0, 0);
    }
    const double pb = 0.555, pa = 0.2;
    CHECK(std::abs(double(hits_b) / n - pb) < 3 * std::sqrt(pb * (1 - pb) / n));
    CHECK(std::abs(double(hits_a) / n - pa) < 3 * std::sqrt(pa * (1 - pa) / n));
}

TEST_CASE("apply_fills arithmetic and cap rule", "[market_sim]") {
    IntMatrix q(2, 2, 0);
    FillEvent none{IntMatrix(2, 2, 0), IntMatrix(2, 2, 0)};
    CHECK(apply_fills(q, none) == q);

    FillEvent both{IntMatrix(2, 2, 0), IntMatrix(2, 2, 0)};
    both.dN_plus(0, 1) = 1;
    both.dN_minus(0, 1) = 1;
    CHECK(apply_fills(q, both)(0, 1) == 0);  // simultaneous fills cancel

    IntMatrix at_cap(2, 2, 0);
    at_cap(1, 0) = 3;
    FillEvent buy{IntMatrix(2, 2, 0), IntMatrix(2, 2, 0)};
    buy.dN_plus(1, 0) = 1;
    CHECK(apply_fills(at_cap, buy, 3)(1, 0) == 3);   // breaching fill discarded
    CHECK(apply_fills(at_cap, buy)(1, 0) == 4);      // no cap: applied
    const FillEvent kept = censor_fills(at_cap, buy, 3);
    CHECK(kept.dN_plus(1, 0) == 0);
}

TEST_CASE("hedge_delta is the inventory-weighted option delta", "[market_sim]") {
    const OptionGrid grid = demo_grid();
    const GreeksGrid g = grid_greeks(0.0, 100.0, grid);

    IntMatrix zero(5, 4, 0);
    CHECK(hedge_delta(g, zero) == 0.0);

    IntMatrix unit(5, 4, 0);
    unit(2, 0) = 1;  // K=100, maturity 2 on the demo surface (vol 0.1)
    CHECK(hedge_delta(g, unit) == Catch::Approx(0.5281859888985083).epsilon(1e-12));
    CHECK(hedge_delta(g, unit) == g.delta(2, 0));

    IntMatrix mixed(5, 4, 0), negated(5, 4, 0);
    mixed(0, 0) = 4;
    mixed(3, 2) = -7;
    for (std::size_t k = 0; k < mixed.size(); ++k) negated.at_flat(k) = -mixed.at_flat(k);
    CHECK(hedge_delta(g, negated) == -hedge_delta(g, mixed));
}

TEST_CASE("intensity-root policy trades nothing", "[market_sim]") {
    const OptionGrid grid = toy_grid();
    SimConfig cfg = toy_sim();
    cfg.gamma_temp = 1e-12;  // near-deterministic sampling around the root
    ConstantPolicy pol{&grid, cfg.gamma_temp, 56.0 / 5.0};
    RngStream rng(7, stream_tag::paths);
    const Trajectory traj = generate_path(pol, grid, cfg, rng);
    CHECK(traj.final_q(0, 0) == 0);
    for (const auto& s : traj.steps) {
        CHECK(s.spread_pnl == 0.0);
        CHECK(s.theta_gamma_pnl == 0.0);  // q stays zero
    }
    CHECK(traj.raw_return() == 0.0);
    // the regularized return is exactly the accumulated entropy bonus
    double bonus = 0.0;
    for (const auto& s : traj.steps) bonus += s.entropy_bonus;
    CHECK(traj.regularized_return() == Catch::Approx(bonus));
}

TEST_CASE("fixed seed reproduces the trajectory bit for bit", "[market_sim]") {
    const OptionGrid grid = demo_grid();
    SimConfig cfg = toy_sim();
    ConstantPolicy pol{&grid, cfg.gamma_temp, 5.0};
    RngStream r1(42, stream_tag::paths, 0);
    RngStream r2(42, stream_tag::paths, 0);
    const Trajectory a = generate_path(pol, grid, cfg, r1);
    const Trajectory b = generate_path(pol, grid, cfg, r2);
    REQUIRE(a.steps.size() == b.steps.size());
    CHECK(a.final_S == b.final_S);
    CHECK(a.final_q == b.final_q);
    for (std::size_t k = 0; k < a.steps.size(); ++k) {
        CHECK(a.steps[k].eps == b.steps[k].eps);
        CHECK(a.steps[k].spread_pnl == b.steps[k].spread_pnl);
        CHECK(a.steps[k].S == b.steps[k].S);
    }
}

TEST_CASE("episode bookkeeping telescopes exactly", "[market_sim]") {
    const OptionGrid grid = demo_grid();
    SimConfig cfg = toy_sim();
    ConstantPolicy pol{&grid, cfg.gamma_temp, 4.0};
    RngStream rng(11, stream_tag::paths, 1);
    const Trajectory traj = generate_path(pol, grid, cfg, rng);
    REQUIRE(traj.steps.size() == 100);

    double spread = 0.0, tg = 0.0, bonus = 0.0;
    IntMatrix q(5, 4, 0);
    for (const auto& s : traj.steps) {
        // recorded spread pnl recomputes from eps and fills
        double step_spread = 0.0;
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                if (s.fills.dN_plus(i, j)) step_spread += s.eps[bid_index(grid, i, j)];
                if (s.fills.dN_minus(i, j)) step_spread += s.eps[ask_index(grid, i, j)];
            }
        CHECK(s.spread_pnl == step_spread);
        CHECK(s.q == q);
        q = apply_fills(q, s.fills);
        spread += s.spread_pnl;
        tg += s.theta_gamma_pnl;
        bonus += s.entropy_bonus;
    }
    CHECK(traj.final_q == q);  // unbounded inventory: fills account exactly
    CHECK(traj.raw_return() == Catch::Approx(spread + tg).epsilon(1e-15));
    CHECK(traj.regularized_return() == Catch::Approx(spread + tg + bonus).epsilon(1e-15));
}

TEST_CASE("constant-mean policy fill frequency matches the Bernoulli oracle", "[market_sim]") {
    const OptionGrid grid = toy_grid();
    SimConfig cfg = toy_sim();
    // quote at the revenue-maximizing constant spread A/2B: p = (A/2) dt each side
    ConstantPolicy pol{&grid, cfg.gamma_temp, 5.6};
    std::size_t fills = 0;
    const std::size_t paths = 2000;
    double expected_p = 0.0;
    {
        // E[lambda dt] with Gaussian spread around 5.6: E[A - B eps] dt = (A/2) dt
        expected_p = 0.5 * 56.0 * cfg.dt;
    }
    for (std::size_t p = 0; p < paths; ++p) {
        RngStream rng(1000, stream_tag::paths, p);
        const Trajectory traj = generate_path(pol, grid, cfg, rng);
        for (const auto& s : traj.steps) fills += s.fills.dN_plus(0, 0) + s.fills.dN_minus(0, 0);
    }
    const double n_draws = double(paths) * 100.0 * 2.0;
    const double p_hat = double(fills) / n_draws;
    const double se = std::sqrt(expected_p * (1 - expected_p) / n_draws);
    CHECK(std::abs(p_hat - expected_p) < 3 * se);
}

TEST_CASE("fill frequencies pass a chi-square test at fixed spreads", "[market_sim]") {
    const OptionGrid grid = demo_grid();
    RngStream rng(4, stream_tag::checks);
    std::vector<double> eps(40, 5.0);
    const auto lam = intensities(eps, grid);
    const double dt = 0.01;
    const std::size_t n = 100000;
    std::vector<std::size_t> hits(40, 0);
    for (std::size_t k = 0; k < n; ++k) {
        const FillEvent ev = sample_fills(lam, dt, grid, rng);
        for (std::size_t c = 0; c < 40; ++c)
            hits[c] += c < 20 ? ev.dN_plus.at_flat(c) : ev.dN_minus.at_flat(c - 20);
    }
    double chi2 = 0.0;
    for (std::size_t c = 0; c < 40; ++c) {
        const double expect = std::min(lam[c] * dt, 1.0) * double(n);
        const double expect0 = double(n) - expect;
        const double d1 = double(hits[c]) - expect;
        chi2 += d1 * d1 / expect + d1 * d1 / expect0;
    }
    CHECK(chi2 < chi_square_quantile(40.0, 0.99));
}

TEST_CASE("raising all spreads weakly lowers expected fill counts", "[market_sim]") {
    const OptionGrid grid = demo_grid();
    SimConfig cfg = toy_sim();
    auto total_fills = [&](double mean_spread) {
        ConstantPolicy pol{&grid, cfg.gamma_temp, mean_spread};
        std::size_t fills = 0;
        for (std::size_t p = 0; p < 60; ++p) {
            RngStream rng(500, stream_tag::paths, p);
            const Trajectory traj = generate_path(pol, grid, cfg, rng);
            for (const auto& s : traj.steps)
                for (std::size_t k = 0; k < 20; ++k)
                    fills += s.fills.dN_plus.at_flat(k) + s.fills.dN_minus.at_flat(k);
        }
        return fills;
    };
    const std::size_t lo = total_fills(4.0);
    const std::size_t hi = total_fills(6.0);
    CHECK(hi < lo);
}

TEST_CASE("inventory cap keeps the book inside the bound", "[market_sim]") {
    const OptionGrid grid = toy_grid();
    SimConfig cfg = toy_sim();
    cfg.q_max = 2;
    ConstantPolicy pol{&grid, cfg.gamma_temp, 2.0};  // heavy two-sided flow
    RngStream rng(6, stream_tag::paths);
    const Trajectory traj = generate_path(pol, grid, cfg, rng);
    for (const auto& s : traj.steps) CHECK(std::abs(s.q(0, 0)) <= 2);
    CHECK(std::abs(traj.final_q(0, 0)) <= 2);
}

TEST_CASE("sampled-entropy mode books the log-density bonus", "[market_sim]") {
    const OptionGrid grid = toy_grid();
    SimConfig cfg = toy_sim();
    cfg.sampled_entropy = true;
    ConstantPolicy pol{&grid, cfg.gamma_temp, 5.6};
    RngStream rng(8, stream_tag::paths);
    const Trajectory traj = generate_path(pol, grid, cfg, rng);
    const GaussianQuotePolicy p = pol(0.0, IntMatrix(1, 1, 0), 100.0);
    for (const auto& s : traj.steps) {
        const double expect = cfg.gamma_temp * cfg.dt * -p.log_prob(s.eps);
        CHECK(s.entropy_bonus == Catch::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("evaluate_policy summarizes per-path returns", "[market_sim]") {
    const OptionGrid grid = toy_grid();
    SimConfig cfg = toy_sim();
    ConstantPolicy pol{&grid, cfg.gamma_temp, 5.6};
    auto streams = [](std::size_t p) { return RngStream(9, stream_tag::eval, p); };

    const ReturnStats one = evaluate_policy(pol, grid, cfg, 1, streams);
    CHECK(one.raw.n == 1);
    CHECK(one.raw.mean == one.raw.min);
    CHECK(one.raw.mean == one.raw.max);
    CHECK(one.raw.stddev == 0.0);

    const ReturnStats many = evaluate_policy(pol, grid, cfg, 200, streams);
    CHECK(many.raw.n == 200);
    CHECK(many.raw.min <= many.raw.q05);
    CHECK(many.raw.q05 <= many.raw.q50);
    CHECK(many.raw.q50 <= many.raw.q95);
    CHECK(many.raw.q95 <= many.raw.max);

    // parallel evaluation reduces to the same numbers in the same order
    const ReturnStats par = evaluate_policy(pol, grid, cfg, 200, streams, 2);
    CHECK(par.raw_returns == many.raw_returns);
}

TEST_CASE("zero-intensity policy gives a degenerate return distribution", "[market_sim]") {
    const OptionGrid grid = toy_grid();
    SimConfig cfg = toy_sim();
    ConstantPolicy pol{&grid, 1e-12, 56.0 / 5.0};
    cfg.gamma_temp = 1e-12;
    auto streams = [](std::size_t p) { return RngStream(10, stream_tag::eval, p); };
    const ReturnStats stats = evaluate_policy(pol, grid, cfg, 50, streams);
    CHECK(stats.raw.stddev == 0.0);
    CHECK(stats.raw.mean == 0.0);
}

TEST_CASE("baseline quoting earns a positive mean return on the demo grid", "[market_sim]") {
    const OptionGrid grid = demo_grid();
    SimConfig cfg = toy_sim();
    auto zero_v = [](double, const IntMatrix&) { return 0.0; };
    auto pol = [&](double t, const IntMatrix& q, double) {
        return closed_form_policy(zero_v, t, q, grid, cfg.gamma_temp);
    };
    auto streams = [](std::size_t p) { return RngStream(20, stream_tag::eval, p); };
    const ReturnStats stats = evaluate_policy(pol, grid, cfg, 1000, streams, 2);

    // analytic per-step expectation: sum over sides of (A^2/4B - gamma/2) dt,
    // theta drift contributes zero in expectation for symmetric quotes
    double per_step = 0.0;
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            per_step += 2.0 * (grid.A(i, j) * grid.A(i, j) / (4.0 * grid.B(i, j)) -
                               cfg.gamma_temp / 2.0) * cfg.dt;
    const double expected = per_step * 100.0;
    CHECK(stats.raw.mean > 0.0);
    CHECK(std::abs(stats.raw.mean - expected) < 5.0 * stats.raw.std_error());
}
