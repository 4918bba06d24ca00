#pragma once

#include <cmath>
#include <stdexcept>

#include "optmm/grid.hpp"
#include "optmm/matrix.hpp"

namespace optmm {

inline double norm_pdf(double x) {
    static constexpr double inv_sqrt_2pi = 0.3989422804014327;
    return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

struct CallQuote {
    double price;
    double delta;  // dV/dS
    double gamma;  // d2V/dS2
    double theta;  // dV/dt with tau = maturity - t, so theta <= 0 at r = 0
};

/// European call value and sensitivities under lognormal dynamics with the
/// option's own implied vol. tau is clamped below at 1e-12 so an episode
/// ending exactly at a quote time cannot divide by zero.
inline CallQuote bs_call(double S, double K, double tau, double sigma, double r = 0.0) {
    if (!(S > 0.0)) throw std::domain_error("bs_call: S must be positive");
    if (!(K > 0.0)) throw std::domain_error("bs_call: K must be positive");
    if (!(tau > 0.0)) throw std::domain_error("bs_call: tau must be positive");
    if (!(sigma > 0.0)) throw std::domain_error("bs_call: sigma must be positive");

    tau = std::max(tau, 1e-12);
    const double sqrt_tau = std::sqrt(tau);
    const double sig_sqrt_tau = sigma * sqrt_tau;
    const double d1 = (std::log(S / K) + (r + 0.5 * sigma * sigma) * tau) / sig_sqrt_tau;
    const double d2 = d1 - sig_sqrt_tau;
    const double disc = std::exp(-r * tau);

    CallQuote q;
    q.price = S * norm_cdf(d1) - K * disc * norm_cdf(d2);
    q.delta = norm_cdf(d1);
    q.gamma = norm_pdf(d1) / (S * sig_sqrt_tau);
    q.theta = -S * norm_pdf(d1) * sigma / (2.0 * sqrt_tau) - r * K * disc * norm_cdf(d2);
    return q;
}

/// Per-option price/delta/gamma/theta over the whole grid at one (t, S).
struct GreeksGrid {
    Matrix price;
    Matrix delta;
    Matrix gamma;
    Matrix theta;
};

inline GreeksGrid grid_greeks(double t, double S, const OptionGrid& grid) {
    const std::size_t m = grid.num_strikes(), n = grid.num_maturities();
    GreeksGrid g{Matrix(m, n), Matrix(m, n), Matrix(m, n), Matrix(m, n)};
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const CallQuote q =
                bs_call(S, grid.strikes[i], grid.maturities[j] - t, grid.vol_surface(i, j), grid.r);
            g.price(i, j) = q.price;
            g.delta(i, j) = q.delta;
            g.gamma(i, j) = q.gamma;
            g.theta(i, j) = q.theta;
        }
    }
    return g;
}

/// Inventory carry rate: sum over options of (theta + 0.5 sigma^2 [S^2] gamma) * q.
/// The literal wealth dynamics omit the S^2 factor on the convexity term;
/// include_s_squared switches the diffusion-consistent variant on.
inline double theta_gamma_rate(const GreeksGrid& greeks, const IntMatrix& q,
                               double sigma_underlying, double S,
                               bool include_s_squared = false) {
    require_same_shape(greeks.theta, q, "theta_gamma_rate");
    const double conv = 0.5 * sigma_underlying * sigma_underlying *
                        (include_s_squared ? S * S : 1.0);
    double rate = 0.0;
    for (std::size_t i = 0; i < q.rows(); ++i)
        for (std::size_t j = 0; j < q.cols(); ++j)
            rate += (greeks.theta(i, j) + conv * greeks.gamma(i, j)) * q(i, j);
    return rate;
}

}  // namespace optmm
