#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "nngp/kernel.hpp"
#include "nngp/netsim.hpp"
#include "nngp/rng.hpp"
#include "nngp/threads.hpp"

namespace nngp {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// Acklam's rational approximation refined by one Halley step; ~1e-15 accurate.
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_quantile: p must be in (0,1)");
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
    if (p < plow) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double e = normal_cdf(x) - p;
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

// Survival function of the Kolmogorov distribution.
inline double kolmogorov_q(double lambda) {
    if (lambda < 1e-10) return 1.0;
    if (lambda < 1.18) {
        // theta-function form converges fast for small arguments
        const double f = std::numbers::pi * std::numbers::pi / (8.0 * lambda * lambda);
        double cdf = 0.0;
        for (int j = 1; j <= 9; j += 2) cdf += std::exp(-f * j * j);
        cdf *= std::sqrt(2.0 * std::numbers::pi) / lambda;
        return std::clamp(1.0 - cdf, 0.0, 1.0);
    }
    double q = 0.0;
    double sign = 1.0;
    for (int j = 1; j <= 100; ++j) {
        const double term = std::exp(-2.0 * j * j * lambda * lambda);
        q += sign * term;
        if (term < 1e-16) break;
        sign = -sign;
    }
    return std::clamp(2.0 * q, 0.0, 1.0);
}

struct KsResult {
    double d = 0.0;
    double p = 1.0;
};

// Two-sided KS statistic of the samples against N(0, variance), with the
// asymptotic p-value at sqrt(S) scaling.
inline KsResult ks_distance(std::vector<double> samples, double variance) {
    if (samples.empty()) throw std::domain_error("ks_distance: no samples");
    if (!(variance > 0.0)) throw std::domain_error("ks_distance: variance must be > 0");
    std::sort(samples.begin(), samples.end());
    const double sd = std::sqrt(variance);
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double cdf = normal_cdf(samples[i] / sd);
        const double above = (static_cast<double>(i) + 1.0) / n - cdf;
        const double below = cdf - static_cast<double>(i) / n;
        d = std::max({d, above, below});
    }
    return {d, kolmogorov_q(std::sqrt(n) * d)};
}

// Evaluation points for characteristic-function comparisons: the origin plus
// low-discrepancy points filling the ball whose radius keeps the Gaussian
// characteristic function non-negligible.
struct TGrid {
    Eigen::MatrixXd points; // k x count, column 0 is the origin

    static double halton(std::uint64_t index, std::uint64_t base) {
        double f = 1.0, r = 0.0;
        while (index > 0) {
            f /= static_cast<double>(base);
            r += f * static_cast<double>(index % base);
            index /= base;
        }
        return r;
    }

    static TGrid make(const CovMatrix& cov, int count = 200) {
        if (count < 1) throw std::domain_error("TGrid: count must be >= 1");
        static const std::uint64_t primes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29,
                                               31, 37, 41, 43, 47, 53, 59, 61, 67, 71};
        const Eigen::Index k = cov.size();
        if (k > static_cast<Eigen::Index>(std::size(primes)) - 1)
            throw std::domain_error("TGrid: dimension too large for the Halton basis set");
        const double radius = 3.0 / std::sqrt(std::max(cov.m.diagonal().maxCoeff(), 1e-300));
        TGrid grid;
        grid.points = Eigen::MatrixXd::Zero(k, count);
        for (int i = 1; i < count; ++i) {
            Eigen::VectorXd z(k);
            for (Eigen::Index j = 0; j < k; ++j)
                z[j] = normal_quantile(std::clamp(halton(i, primes[j]), 1e-12, 1.0 - 1e-12));
            const double norm = z.norm();
            const double u = std::clamp(halton(i, primes[k]), 1e-12, 1.0 - 1e-12);
            const double rad = radius * std::pow(u, 1.0 / static_cast<double>(k));
            grid.points.col(i) = norm > 0.0 ? Eigen::VectorXd(rad * z / norm)
                                            : Eigen::VectorXd::Zero(k);
        }
        return grid;
    }
};

// sup over the grid of |empirical characteristic function - exp(-t'St/2)|,
// evaluated per unit and maxed. Parallel across grid points with a fixed
// per-point summation order.
inline double ecf_distance(const SampleBatch& batch, const CovMatrix& cov, const TGrid& grid,
                           int threads = 1) {
    if (batch.k != cov.size()) throw std::domain_error("ecf_distance: batch/cov size mismatch");
    if (batch.layer != cov.layer)
        throw std::domain_error("ecf_distance: batch layer does not match covariance layer");
    const Eigen::Index npts = grid.points.cols();
    const Eigen::Index k = batch.k;
    std::vector<double> per_point(static_cast<std::size_t>(npts), 0.0);
    parallel_for(npts, threads, [&](std::int64_t begin, std::int64_t end) {
        for (std::int64_t pi = begin; pi < end; ++pi) {
            const Eigen::VectorXd t = grid.points.col(pi);
            const double target = std::exp(-0.5 * t.dot(cov.m * t));
            double worst = 0.0;
            for (std::int64_t u = 0; u < batch.units; ++u) {
                double cs = 0.0, sn = 0.0;
                for (std::int64_t s = 0; s < batch.samples; ++s) {
                    double dot = 0.0;
                    for (Eigen::Index r = 0; r < k; ++r) dot += t[r] * batch.at(s, u, r);
                    cs += std::cos(dot);
                    sn += std::sin(dot);
                }
                const double inv_s = 1.0 / static_cast<double>(batch.samples);
                worst = std::max(worst, std::hypot(cs * inv_s - target, sn * inv_s));
            }
            per_point[static_cast<std::size_t>(pi)] = worst;
        }
    });
    double out = 0.0;
    for (double v : per_point) out = std::max(out, v);
    return out;
}

// Relative Frobenius distance between an empirical covariance and its target.
inline double cov_frobenius_error(const CovMatrix& empirical, const CovMatrix& target) {
    if (empirical.size() != target.size())
        throw std::domain_error("cov_frobenius_error: shape mismatch");
    const double denom = target.m.norm();
    if (denom == 0.0) throw std::domain_error("cov_frobenius_error: zero target norm");
    return (empirical.m - target.m).norm() / denom;
}

struct RateFit {
    double slope = 0.0;
    double stderr_slope = 0.0;
};

// Least-squares slope of log(error) against log(n).
inline RateFit rate_fit(const std::vector<std::pair<double, double>>& errors) {
    if (errors.size() < 3) throw std::domain_error("rate_fit: need >= 3 widths");
    std::vector<double> lx, ly;
    for (const auto& [n, e] : errors) {
        if (!(e > 0.0)) throw std::domain_error("rate_fit: errors must be positive");
        lx.push_back(std::log(n));
        ly.push_back(std::log(e));
    }
    const double m = static_cast<double>(lx.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i];
        my += ly[i];
    }
    mx /= m;
    my /= m;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    RateFit fit;
    fit.slope = sxy / sxx;
    double rss = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        const double pred = my + fit.slope * (lx[i] - mx);
        rss += (ly[i] - pred) * (ly[i] - pred);
    }
    fit.stderr_slope = lx.size() > 2 ? std::sqrt(rss / (m - 2.0) / sxx) : 0.0;
    return fit;
}

struct MomentMargin {
    int theta = 0;
    double empirical = 0.0;
    double se = 0.0;   // bootstrap standard error of the empirical moment
    double bound = 0.0;
    bool pass = false;
};

// Checks the empirical 2*theta increment moment between two inputs of a
// shared-weights batch against the layerwise bound, allowing Monte Carlo
// slack of four bootstrap standard errors.
inline MomentMargin moment_bound_check(const SampleBatch& batch, std::int64_t unit,
                                       Eigen::Index input_x, Eigen::Index input_y, int theta,
                                       double bound, double dist, int bootstrap_resamples = 200) {
    if (theta < 1 || theta > 4)
        throw std::domain_error("moment_bound_check: theta outside supported range 1..4");
    if (input_x < 0 || input_y < 0 || input_x >= batch.k || input_y >= batch.k)
        throw std::domain_error("moment_bound_check: input index out of range");
    const std::int64_t s_count = batch.samples;
    std::vector<double> powers(static_cast<std::size_t>(s_count));
    double mean = 0.0;
    for (std::int64_t s = 0; s < s_count; ++s) {
        const double diff = std::abs(batch.at(s, unit, input_y) - batch.at(s, unit, input_x));
        double v = diff * diff;
        for (int t = 1; t < theta; ++t) v *= diff * diff;
        powers[static_cast<std::size_t>(s)] = v;
        mean += v;
    }
    mean /= static_cast<double>(s_count);

    double se = 0.0;
    if (s_count > 1 && bootstrap_resamples > 0) {
        double acc = 0.0, acc2 = 0.0;
        for (int b = 0; b < bootstrap_resamples; ++b) {
            RandomStream stream(batch.seed, StreamTag::bootstrap, static_cast<std::uint64_t>(b),
                                static_cast<std::uint64_t>(unit),
                                static_cast<std::uint64_t>(theta));
            double bm = 0.0;
            for (std::int64_t s = 0; s < s_count; ++s) {
                const std::uint64_t idx = stream.bits(static_cast<std::uint64_t>(s)) %
                                          static_cast<std::uint64_t>(s_count);
                bm += powers[static_cast<std::size_t>(idx)];
            }
            bm /= static_cast<double>(s_count);
            acc += bm;
            acc2 += bm * bm;
        }
        const double bmean = acc / bootstrap_resamples;
        se = std::sqrt(std::max(acc2 / bootstrap_resamples - bmean * bmean, 0.0));
    }

    MomentMargin margin;
    margin.theta = theta;
    margin.empirical = mean;
    margin.se = se;
    margin.bound = bound * std::pow(dist, 2 * theta);
    margin.pass = mean == 0.0 ? margin.bound >= 0.0
                              : mean <= margin.bound * (1.0 + 4.0 * se / mean);
    return margin;
}

struct RinfResult {
    double value = 0.0;
    double tail_bound = 0.0; // contribution the finite prefix cannot see
};

// Product-topology sequence metric truncated to a finite prefix:
// sum_i (|a_i - b_i| / (1 + |a_i - b_i|)) / 2^i.
inline RinfResult rinf_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::domain_error("rinf_distance: prefix length mismatch");
    RinfResult out;
    double scale = 1.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        scale *= 0.5;
        const double d = std::abs(a[i] - b[i]);
        out.value += scale * d / (1.0 + d);
    }
    out.tail_bound = scale;
    return out;
}

} // namespace nngp
