#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "optmm/matrix.hpp"

namespace optmm {

/// The instrument universe quoted by the market maker: an m-strike by
/// n-maturity grid of calls, each with its own implied vol and linear fill
/// intensity lambda = A - B * spread.
struct OptionGrid {
    std::vector<double> strikes;     // m, strictly increasing
    std::vector<double> maturities;  // n, strictly increasing, all beyond the trading horizon
    Matrix vol_surface;              // m x n implied vols
    Matrix A;                        // m x n intensity intercepts
    Matrix B;                        // m x n intensity slopes (> 0 so spread variance gamma/2B is positive)
    double r = 0.0;                  // risk-free rate

    std::size_t num_strikes() const { return strikes.size(); }
    std::size_t num_maturities() const { return maturities.size(); }
    std::size_t num_options() const { return strikes.size() * maturities.size(); }

    /// Flat index of option (i, j) in row-major (strike-major) order.
    std::size_t flat(std::size_t i, std::size_t j) const { return i * maturities.size() + j; }

    /// Throws std::invalid_argument naming the offending field/entry.
    void validate(double horizon) const {
        const std::size_t m = strikes.size(), n = maturities.size();
        if (m == 0 || n == 0) throw std::invalid_argument("grid: empty strikes or maturities");
        for (std::size_t i = 1; i < m; ++i)
            if (!(strikes[i] > strikes[i - 1]))
                throw std::invalid_argument("grid.strikes must be strictly increasing");
        for (std::size_t j = 1; j < n; ++j)
            if (!(maturities[j] > maturities[j - 1]))
                throw std::invalid_argument("grid.maturities must be strictly increasing");
        for (std::size_t j = 0; j < n; ++j)
            if (!(maturities[j] > horizon))
                throw std::invalid_argument("grid.maturities[" + std::to_string(j) +
                                            "] must exceed the trading horizon");
        auto check_positive = [&](const Matrix& mat, const char* name) {
            if (mat.rows() != m || mat.cols() != n)
                throw std::invalid_argument(std::string("grid.") + name + " has wrong shape");
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    if (!(mat(i, j) > 0.0) || !std::isfinite(mat(i, j)))
                        throw std::invalid_argument(std::string("grid.") + name + "(" +
                                                    std::to_string(i) + "," + std::to_string(j) +
                                                    ") must be positive");
        };
        check_positive(vol_surface, "vol_surface");
        check_positive(A, "A");
        check_positive(B, "B");
    }
};

/// Bundled demo universe: 5 strikes x 4 maturities around spot 100 with a
/// symmetric vol smile and strike-dependent intensity parameters.
inline OptionGrid demo_grid() {
    OptionGrid g;
    g.strikes = {90.0, 95.0, 100.0, 105.0, 110.0};
    g.maturities = {2.0, 3.0, 4.0, 5.0};
    g.vol_surface = Matrix{{0.2, 0.2, 0.18, 0.18},
                           {0.14, 0.14, 0.12, 0.12},
                           {0.1, 0.1, 0.08, 0.08},
                           {0.14, 0.14, 0.12, 0.12},
                           {0.2, 0.2, 0.18, 0.18}};
    g.A = Matrix{{36, 34, 32, 30},
                 {46, 44, 42, 40},
                 {56, 54, 52, 50},
                 {46, 44, 42, 40},
                 {36, 34, 32, 30}};
    g.B = Matrix{{3, 3, 3, 3},
                 {4, 4, 4, 4},
                 {5, 5, 5, 5},
                 {4, 4, 4, 4},
                 {3, 3, 3, 3}};
    g.r = 0.0;
    return g;
}

/// Single-option universe used by small-scale studies: the ATM front option
/// of the demo grid (A=56, B=5, vol 0.1, maturity 2).
inline OptionGrid toy_grid() {
    OptionGrid g;
    g.strikes = {100.0};
    g.maturities = {2.0};
    g.vol_surface = Matrix{{0.1}};
    g.A = Matrix{{56.0}};
    g.B = Matrix{{5.0}};
    g.r = 0.0;
    return g;
}

}  // namespace optmm
