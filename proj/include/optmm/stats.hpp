#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace optmm {

/// Quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> sorted, double p) {
    if (sorted.empty()) throw std::invalid_argument("quantile: empty sample");
    if (sorted.size() == 1) return sorted[0];
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

struct Histogram {
    std::vector<double> edges;       // bins + 1 entries
    std::vector<std::size_t> counts; // bins entries
};

/// Freedman-Diaconis binning; degenerate samples collapse to a single bin.
inline Histogram fd_histogram(const std::vector<double>& sample) {
    Histogram h;
    if (sample.empty()) return h;
    std::vector<double> sorted = sample;
    std::sort(sorted.begin(), sorted.end());
    const double lo = sorted.front(), hi = sorted.back();
    const double iqr = quantile(sorted, 0.75) - quantile(sorted, 0.25);
    const double width = 2.0 * iqr / std::cbrt(static_cast<double>(sorted.size()));
    std::size_t bins = 1;
    if (width > 0.0 && hi > lo)
        bins = static_cast<std::size_t>(std::ceil((hi - lo) / width));
    bins = std::max<std::size_t>(1, std::min<std::size_t>(bins, 1000));
    h.edges.resize(bins + 1);
    for (std::size_t b = 0; b <= bins; ++b)
        h.edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins);
    h.counts.assign(bins, 0);
    for (double x : sample) {
        std::size_t b = bins == 1 || hi == lo
                            ? 0
                            : static_cast<std::size_t>((x - lo) / (hi - lo) * static_cast<double>(bins));
        if (b >= bins) b = bins - 1;
        ++h.counts[b];
    }
    return h;
}

struct SampleSummary {
    std::size_t n = 0;
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation (n-1)
    double min = 0.0;
    double max = 0.0;
    double q05 = 0.0, q25 = 0.0, q50 = 0.0, q75 = 0.0, q95 = 0.0;
    Histogram histogram;

    double std_error() const { return n > 0 ? stddev / std::sqrt(static_cast<double>(n)) : 0.0; }
};

inline SampleSummary summarize(const std::vector<double>& sample) {
    SampleSummary s;
    s.n = sample.size();
    if (sample.empty()) return s;
    double sum = 0.0;
    for (double x : sample) sum += x;
    s.mean = sum / static_cast<double>(s.n);
    double ss = 0.0;
    for (double x : sample) ss += (x - s.mean) * (x - s.mean);
    s.stddev = s.n > 1 ? std::sqrt(ss / static_cast<double>(s.n - 1)) : 0.0;
    std::vector<double> sorted = sample;
    std::sort(sorted.begin(), sorted.end());
    s.min = sorted.front();
    s.max = sorted.back();
    s.q05 = quantile(sorted, 0.05);
    s.q25 = quantile(sorted, 0.25);
    s.q50 = quantile(sorted, 0.50);
    s.q75 = quantile(sorted, 0.75);
    s.q95 = quantile(sorted, 0.95);
    s.histogram = fd_histogram(sample);
    return s;
}

/// Upper quantile of the chi-square distribution via the Wilson-Hilferty
/// cube approximation (adequate for the dof >= 10 used by the fill checks).
inline double chi_square_quantile(double dof, double p) {
    // standard normal quantile via Acklam-style rational approximation
    auto norm_quantile = [](double q) {
        if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("norm_quantile: p in (0,1)");
        static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
        static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
        static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00,  2.938163982698783e+00};
        static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
        const double plow = 0.02425;
        double x;
        if (q < plow) {
            double u = std::sqrt(-2.0 * std::log(q));
            x = (((((c[0] * u + c[1]) * u + c[2]) * u + c[3]) * u + c[4]) * u + c[5]) /
                ((((d[0] * u + d[1]) * u + d[2]) * u + d[3]) * u + 1.0);
        } else if (q <= 1.0 - plow) {
            double u = q - 0.5, t = u * u;
            x = (((((a[0] * t + a[1]) * t + a[2]) * t + a[3]) * t + a[4]) * t + a[5]) * u /
                (((((b[0] * t + b[1]) * t + b[2]) * t + b[3]) * t + b[4]) * t + 1.0);
        } else {
            double u = std::sqrt(-2.0 * std::log(1.0 - q));
            x = -(((((c[0] * u + c[1]) * u + c[2]) * u + c[3]) * u + c[4]) * u + c[5]) /
                ((((d[0] * u + d[1]) * u + d[2]) * u + d[3]) * u + 1.0);
        }
        return x;
    };
    const double z = norm_quantile(p);
    const double t = 1.0 - 2.0 / (9.0 * dof) + z * std::sqrt(2.0 / (9.0 * dof));
    return dof * t * t * t;
}

/// Slope of the least-squares line through (0, y0), (1, y1), ...
inline double least_squares_slope(const std::vector<double>& y) {
    const std::size_t n = y.size();
    if (n < 2) return 0.0;
    const double xbar = static_cast<double>(n - 1) / 2.0;
    double ybar = 0.0;
    for (double v : y) ybar += v;
    ybar /= static_cast<double>(n);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = static_cast<double>(i) - xbar;
        num += dx * (y[i] - ybar);
        den += dx * dx;
    }
    return num / den;
}

}  // namespace optmm
