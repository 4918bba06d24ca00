// Independent reference implementations used only to derive expected values.
// Nothing here may call into the library code paths it checks.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracles {

inline double phi(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }

/// Call value as the lognormal expectation E[(S_T - K)+] e^{-r tau}, by
/// composite Simpson over z from the exact payoff kink to +12 std devs.
inline double lognormal_call_quadrature(double S, double K, double tau, double sigma,
                                        double r = 0.0, int panels = 20000) {
    const double drift = (r - 0.5 * sigma * sigma) * tau;
    const double vol = sigma * std::sqrt(tau);
    const double z_kink = (std::log(K / S) - drift) / vol;
    const double z_hi = std::max(z_kink + 1.0, 12.0);
    auto f = [&](double z) {
        const double st = S * std::exp(drift + vol * z);
        return phi(z) * (st - K);
    };
    const double h = (z_hi - z_kink) / (2.0 * panels);
    double acc = f(z_kink) + f(z_hi);
    for (int i = 1; i < 2 * panels; ++i)
        acc += f(z_kink + h * i) * (i % 2 ? 4.0 : 2.0);
    return std::exp(-r * tau) * acc * h / 3.0;
}

/// Cox-Ross-Rubinstein binomial tree (European call).
inline double binomial_call(double S, double K, double tau, double sigma, double r = 0.0,
                            int steps = 10000) {
    const double dt = tau / steps;
    const double u = std::exp(sigma * std::sqrt(dt));
    const double d = 1.0 / u;
    const double p = (std::exp(r * dt) - d) / (u - d);
    std::vector<double> v(steps + 1);
    for (int i = 0; i <= steps; ++i) {
        const double st = S * std::pow(u, 2 * i - steps);
        v[i] = std::max(st - K, 0.0);
    }
    const double disc = std::exp(-r * dt);
    for (int n = steps; n-- > 0;)
        for (int i = 0; i <= n; ++i) v[i] = disc * (p * v[i + 1] + (1.0 - p) * v[i]);
    return v[0];
}

inline double central_diff(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double central_diff2(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
}

/// Extended-precision call price, so finite-difference stencils at step
/// 1e-4 S are not limited by double-rounding cancellation.
inline long double bs_price_ld(long double S, long double K, long double tau, long double sigma,
                               long double r = 0.0L) {
    const long double st = sigma * sqrtl(tau);
    const long double d1 = (logl(S / K) + (r + 0.5L * sigma * sigma) * tau) / st;
    const long double d2 = d1 - st;
    auto N = [](long double x) { return 0.5L * erfcl(-x * 0.70710678118654752440L); };
    return S * N(d1) - K * expl(-r * tau) * N(d2);
}

/// Fourth-order central stencils over the extended-precision price.
inline double fd_delta(double S, double K, double tau, double sigma, double r = 0.0) {
    const long double h = 1e-4L * S;
    auto f = [&](long double s) { return bs_price_ld(s, K, tau, sigma, r); };
    return static_cast<double>((-f(S + 2 * h) + 8 * f(S + h) - 8 * f(S - h) + f(S - 2 * h)) /
                               (12 * h));
}

inline double fd_gamma(double S, double K, double tau, double sigma, double r = 0.0) {
    const long double h = 1e-4L * S;
    auto f = [&](long double s) { return bs_price_ld(s, K, tau, sigma, r); };
    return static_cast<double>(
        (-f(S + 2 * h) + 16 * f(S + h) - 30 * f(S) + 16 * f(S - h) - f(S - 2 * h)) / (12 * h * h));
}

inline double fd_theta(double S, double K, double tau, double sigma, double r = 0.0) {
    const long double h = 1e-4L * tau;
    auto f = [&](long double t) { return bs_price_ld(S, K, t, sigma, r); };
    // d/dt = -d/dtau
    return static_cast<double>(-(-f(tau + 2 * h) + 8 * f(tau + h) - 8 * f(tau - h) + f(tau - 2 * h)) /
                               (12 * h));
}

/// Brute-force argmax of the per-component quote objective
/// (A - B eps)(dv + eps) over an eps grid.
inline double grid_search_vertex(double A, double B, double dv, double lo = -10.0,
                                 double hi = 20.0, double step = 1e-4) {
    double best_eps = lo, best_val = -1e300;
    const long n = static_cast<long>((hi - lo) / step);
    for (long k = 0; k <= n; ++k) {
        const double eps = lo + step * static_cast<double>(k);
        const double val = (A - B * eps) * (dv + eps);
        if (val > best_val) {
            best_val = val;
            best_eps = eps;
        }
    }
    return best_eps;
}

/// Relative error with an absolute floor for near-zero references.
inline double rel_err(double got, double want, double floor_ = 1e-12) {
    return std::abs(got - want) / std::max(std::abs(want), floor_);
}

}  // namespace oracles
