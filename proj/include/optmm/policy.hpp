#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "optmm/approximator.hpp"
#include "optmm/grid.hpp"
#include "optmm/matrix.hpp"
#include "optmm/rng.hpp"

namespace optmm {

/// Component layout for all 2mn spread vectors: bid block then ask block,
/// row-major (strike-major) over (i, j).
inline std::size_t bid_index(const OptionGrid& g, std::size_t i, std::size_t j) {
    return g.flat(i, j);
}
inline std::size_t ask_index(const OptionGrid& g, std::size_t i, std::size_t j) {
    return g.num_options() + g.flat(i, j);
}

/// Per-component variances gamma/(2B), identical for the bid and ask of one
/// option; independent of time, inventory and the value function.
inline std::vector<double> make_variances(const OptionGrid& grid, double gamma_temp) {
    if (!(gamma_temp > 0.0)) throw std::invalid_argument("gamma_temp must be positive");
    const std::size_t mn = grid.num_options();
    std::vector<double> var(2 * mn);
    for (std::size_t i = 0; i < grid.num_strikes(); ++i)
        for (std::size_t j = 0; j < grid.num_maturities(); ++j) {
            const double v = gamma_temp / (2.0 * grid.B(i, j));
            var[bid_index(grid, i, j)] = v;
            var[ask_index(grid, i, j)] = v;
        }
    return var;
}

/// Closed-form differential entropy mn(1 + log 2pi) + sum log(gamma/2B),
/// written against the bid-block variances so every caller shares one code
/// path (and bit pattern).
inline double entropy_from_variances(std::span<const double> var) {
    const std::size_t mn = var.size() / 2;
    double h = static_cast<double>(mn) * (1.0 + std::log(2.0 * M_PI));
    for (std::size_t c = 0; c < mn; ++c) h += std::log(var[c]);
    return h;
}

inline double quote_policy_entropy(const OptionGrid& grid, double gamma_temp) {
    return entropy_from_variances(make_variances(grid, gamma_temp));
}

/// Diagonal Gaussian over the 2mn bid/ask spreads.
struct GaussianQuotePolicy {
    std::vector<double> mean;  // 2mn
    std::vector<double> var;   // 2mn
    std::size_t m = 0, n = 0;

    std::size_t dim() const { return mean.size(); }

    double entropy() const { return entropy_from_variances(var); }

    double log_prob(std::span<const double> eps) const {
        if (eps.size() != mean.size()) throw std::invalid_argument("log_prob: shape mismatch");
        double lp = 0.0;
        for (std::size_t c = 0; c < mean.size(); ++c) {
            const double d = eps[c] - mean[c];
            lp += -0.5 * std::log(2.0 * M_PI * var[c]) - d * d / (2.0 * var[c]);
        }
        return lp;
    }

    std::vector<double> sample(RngStream& rng) const {
        std::vector<double> eps(mean.size());
        for (std::size_t c = 0; c < mean.size(); ++c)
            eps[c] = mean[c] + std::sqrt(var[c]) * rng.normal();
        return eps;
    }
};

/// Value function interface used by the closed-form construction.
template <typename F>
concept ValueFn = requires(F f, double t, const IntMatrix& q) {
    { f(t, q) } -> std::convertible_to<double>;
};

/// Gaussian policy whose mean solves the per-component quadratic
///   max over eps of (A - B eps)(eps + V(q +/- unit) - V(q)),
/// i.e. A/2B + (V(q) - V(q +/- unit))/2, with variance gamma/2B.
/// Exactly 2mn+1 value evaluations. When q_max is set, perturbed inventories
/// are clamped the same way the simulator clamps fills.
template <ValueFn F>
GaussianQuotePolicy closed_form_policy(F&& value_fn, double t, const IntMatrix& q,
                                       const OptionGrid& grid, double gamma_temp,
                                       std::optional<int> q_max = std::nullopt) {
    const std::size_t m = grid.num_strikes(), n = grid.num_maturities();
    if (q.rows() != m || q.cols() != n) throw std::invalid_argument("closed_form_policy: q shape");
    GaussianQuotePolicy pol;
    pol.m = m;
    pol.n = n;
    pol.var = make_variances(grid, gamma_temp);
    pol.mean.assign(2 * m * n, 0.0);

    IntMatrix scratch = q;
    const double v_base = value_fn(t, scratch);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const int q0 = q(i, j);
            int up = q0 + 1, down = q0 - 1;
            if (q_max) {
                up = std::min(up, *q_max);
                down = std::max(down, -*q_max);
            }
            scratch(i, j) = up;
            const double v_up = value_fn(t, scratch);
            scratch(i, j) = down;
            const double v_down = value_fn(t, scratch);
            scratch(i, j) = q0;
            const double base_spread = grid.A(i, j) / (2.0 * grid.B(i, j));
            pol.mean[bid_index(grid, i, j)] = base_spread + 0.5 * (v_base - v_up);
            pol.mean[ask_index(grid, i, j)] = base_spread + 0.5 * (v_base - v_down);
        }
    }
    return pol;
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// sigmoid rounds to exactly 0 or 1 for |x| beyond ~37/745; the quoting cap
/// is an open interval, so saturated outputs are pulled one representable
/// step inside.
inline double open_unit_sigmoid(double x) {
    const double s = sigmoid(x);
    constexpr double lo = 1e-300;
    const double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
    return std::min(std::max(s, lo), hi);
}

/// Gaussian policy with mean cap * sigmoid(raw network output); keeps every
/// posted mean spread strictly inside (0, cap).
inline GaussianQuotePolicy network_policy(const Approximator& mean_net, const EncodingConfig& enc,
                                          double t, const IntMatrix& q, double S,
                                          const OptionGrid& grid, double gamma_temp, double cap) {
    const std::size_t mn = grid.num_options();
    if (mean_net.out_dim() != 2 * mn)
        throw std::invalid_argument("network_policy: net output dim != 2mn");
    GaussianQuotePolicy pol;
    pol.m = grid.num_strikes();
    pol.n = grid.num_maturities();
    pol.var = make_variances(grid, gamma_temp);
    std::vector<double> x(enc.dim(mn));
    encode_state(t, q, S, enc, x);
    pol.mean = mean_net.forward(x);
    for (double& v : pol.mean) v = cap * open_unit_sigmoid(v);
    return pol;
}

/// Accumulates scale * d log pi(eps | t, q) / d phi into grad, chaining the
/// Gaussian density through the capped-sigmoid output map.
inline void policy_mean_score(const Approximator& mean_net, const EncodingConfig& enc, double t,
                              const IntMatrix& q, double S, std::span<const double> eps,
                              const OptionGrid& grid, double gamma_temp, double cap,
                              std::span<double> grad, double scale = 1.0) {
    const std::size_t mn = grid.num_options();
    if (eps.size() != 2 * mn) throw std::invalid_argument("score: eps dim != 2mn");
    if (mean_net.out_dim() != 2 * mn) throw std::invalid_argument("score: net output dim != 2mn");
    const std::vector<double> var = make_variances(grid, gamma_temp);
    std::vector<double> x(enc.dim(mn));
    encode_state(t, q, S, enc, x);
    const std::vector<double> raw = mean_net.forward(x);
    std::vector<double> upstream(2 * mn);
    for (std::size_t c = 0; c < 2 * mn; ++c) {
        const double s = open_unit_sigmoid(raw[c]);
        const double mean_c = cap * s;
        upstream[c] = (eps[c] - mean_c) / var[c] * cap * s * (1.0 - s);
    }
    mean_net.accumulate_grad(x, upstream, grad, scale);
}

}  // namespace optmm
