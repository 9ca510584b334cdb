#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "nngp/activation.hpp"
#include "nngp/linalg.hpp"

namespace nngp {

struct QuadratureSpec {
    int nodes_per_axis = 64;
    double degenerate_variance_floor = 1e-12;

    void validate() const {
        if (nodes_per_axis < 2) throw std::domain_error("quadrature needs >= 2 nodes per axis");
        if (degenerate_variance_floor < 0.0)
            throw std::domain_error("degenerate variance floor must be nonnegative");
    }
};

struct GaussRule {
    Eigen::ArrayXd x;
    Eigen::ArrayXd w;
};

namespace detail {

// Golub-Welsch: nodes are eigenvalues of the Jacobi matrix, weights come from
// the first eigenvector components scaled by the zeroth moment.
inline GaussRule golub_welsch(const Eigen::VectorXd& offdiag, double mu0) {
    const int n = static_cast<int>(offdiag.size()) + 1;
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i + 1 < n; ++i) {
        jacobi(i, i + 1) = offdiag[i];
        jacobi(i + 1, i) = offdiag[i];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
    GaussRule rule;
    rule.x = es.eigenvalues().array();
    rule.w.resize(n);
    for (int i = 0; i < n; ++i) {
        const double v0 = es.eigenvectors()(0, i);
        rule.w[i] = mu0 * v0 * v0;
    }
    return rule;
}

// weight exp(-x^2) on the whole line
inline GaussRule make_hermite(int n) {
    Eigen::VectorXd b(n - 1);
    for (int k = 1; k < n; ++k) b[k - 1] = std::sqrt(k / 2.0);
    return golub_welsch(b, std::sqrt(std::numbers::pi));
}

// weight 1 on [-1, 1]
inline GaussRule make_legendre(int n) {
    Eigen::VectorXd b(n - 1);
    for (int k = 1; k < n; ++k) b[k - 1] = k / std::sqrt(4.0 * k * k - 1.0);
    return golub_welsch(b, 2.0);
}

inline const GaussRule& cached_rule(int n, bool hermite) {
    static std::mutex mu;
    static std::map<std::pair<int, bool>, GaussRule> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto [it, inserted] = cache.try_emplace({n, hermite});
    if (inserted) it->second = hermite ? make_hermite(n) : make_legendre(n);
    return it->second;
}

} // namespace detail

inline const GaussRule& gauss_hermite(int n) { return detail::cached_rule(n, true); }
inline const GaussRule& gauss_legendre(int n) { return detail::cached_rule(n, false); }

// Evaluates E[phi(T)] for T ~ N(mean, var) and E[phi(U)phi(V)] for centered
// bivariate Gaussians. Activations without breakpoints integrate on tensorized
// Gauss-Hermite nodes; activations with breakpoints (kinks would wreck the
// spectral rate) use composite Gauss-Legendre panels on a truncated range,
// split at every breakpoint and capped at 3 standard deviations per panel.
// Bivariate integrals factor as V = rho*(sv/su)*U + sqrt(var_v(1-rho^2))*Z.
//
// Holds scratch buffers; create one instance per thread and reuse.
class GaussianExpectation {
public:
    GaussianExpectation(const Activation& act, const QuadratureSpec& spec)
        : act_(act), spec_(spec) {
        spec_.validate();
        // truncation radius grows with the envelope exponent so polynomial
        // tails stay below roundoff relative to the integral
        trunc_sigmas_ = 9.0 + 0.5 * std::max(1.0, act.envelope().m);
        panel_nodes_ = std::max(12, spec_.nodes_per_axis / 4);
    }

    double one_dim(double mean, double var) const {
        if (var < 0.0) {
            if (var < -spec_.degenerate_variance_floor)
                throw std::domain_error("negative variance in Gaussian expectation");
            var = 0.0;
        }
        if (var <= spec_.degenerate_variance_floor) return act_(mean);
        AxisRule rule;
        build_axis(mean, std::sqrt(var), act_.breakpoints(), rule);
        apply_activation(act_, rule.t);
        return fixed_order_dot(rule.w, rule.t);
    }

    double bivariate(double var_u, double var_v, double cov_uv) const {
        const double floor = spec_.degenerate_variance_floor;
        if (var_u < -floor || var_v < -floor)
            throw std::domain_error("negative variance in bivariate expectation");
        var_u = std::max(var_u, 0.0);
        var_v = std::max(var_v, 0.0);
        if (var_u <= floor && var_v <= floor) {
            const double p0 = act_(0.0);
            return p0 * p0;
        }
        if (var_u <= floor) return act_(0.0) * one_dim(0.0, var_v);
        if (var_v <= floor) return act_(0.0) * one_dim(0.0, var_u);

        const double denom = std::sqrt(var_u * var_v);
        double rho = cov_uv / denom;
        if (std::abs(rho) > 1.0 + 1e-8)
            throw std::domain_error("covariance matrix indefinite beyond tolerance");
        rho = std::clamp(rho, -1.0, 1.0);

        const double su = std::sqrt(var_u);
        if (rho == 1.0 || rho == -1.0) return degenerate_line(su, rho * std::sqrt(var_v / var_u));

        const double slope = rho * std::sqrt(var_v / var_u);
        const double cond_sd = std::sqrt(var_v * (1.0 - rho * rho));

        // The outer integrand is phi(u) * E[phi(slope*u + cond_sd*Z)]. The
        // second factor is smooth but has boundary layers of width
        // cond_sd/|slope| where slope*u crosses a breakpoint; at correlations
        // near +-1 those layers are far narrower than a panel, so refine the
        // panel edges around each crossing.
        merged_bps_.assign(act_.breakpoints().begin(), act_.breakpoints().end());
        if (!act_.breakpoints().empty() && slope != 0.0) {
            const double layer_width = cond_sd / std::abs(slope);
            for (double b : act_.breakpoints()) {
                const double crossing = b / slope;
                merged_bps_.push_back(crossing);
                for (double w : {2.0, 8.0, 32.0}) {
                    merged_bps_.push_back(crossing - w * layer_width);
                    merged_bps_.push_back(crossing + w * layer_width);
                }
            }
            std::sort(merged_bps_.begin(), merged_bps_.end());
        }
        build_axis(0.0, su, merged_bps_, outer_);
        outer_phi_ = outer_.t;
        apply_activation(act_, outer_phi_);

        double total = 0.0;
        for (Eigen::Index i = 0; i < outer_.t.size(); ++i) {
            build_axis(slope * outer_.t[i], cond_sd, act_.breakpoints(), inner_);
            apply_activation(act_, inner_.t);
            total += outer_.w[i] * outer_phi_[i] * fixed_order_dot(inner_.w, inner_.t);
        }
        return total;
    }

private:
    struct AxisRule {
        Eigen::ArrayXd t;
        Eigen::ArrayXd w;
    };

    // V = c * U exactly: one-dimensional integral of phi(u) * phi(c*u).
    double degenerate_line(double su, double c) const {
        std::vector<double> bps = act_.breakpoints();
        for (double b : act_.breakpoints()) bps.push_back(b / c);
        std::sort(bps.begin(), bps.end());
        AxisRule rule;
        build_axis(0.0, su, bps, rule);
        scratch_ = rule.t;
        apply_activation(act_, scratch_);
        rule.t *= c;
        apply_activation(act_, rule.t);
        double total = 0.0;
        for (Eigen::Index i = 0; i < rule.t.size(); ++i)
            total += rule.w[i] * scratch_[i] * rule.t[i];
        return total;
    }

    // Nodes/weights approximating the integral of h against N(mean, sd^2).
    void build_axis(double mean, double sd, const std::vector<double>& bps,
                    AxisRule& rule) const {
        if (bps.empty()) {
            const GaussRule& gh = gauss_hermite(spec_.nodes_per_axis);
            rule.t = mean + std::numbers::sqrt2 * sd * gh.x;
            rule.w = gh.w / std::sqrt(std::numbers::pi);
            return;
        }
        const double lo = mean - trunc_sigmas_ * sd;
        const double hi = mean + trunc_sigmas_ * sd;
        edges_.clear();
        edges_.push_back(lo);
        for (double b : bps)
            if (b > lo && b < hi) edges_.push_back(b);
        edges_.push_back(hi);

        const GaussRule& gl = gauss_legendre(panel_nodes_);
        const double max_width = 3.0 * sd;
        Eigen::Index total = 0;
        panel_count_.clear();
        for (std::size_t e = 0; e + 1 < edges_.size(); ++e) {
            const int parts =
                std::max<int>(1, static_cast<int>(std::ceil((edges_[e + 1] - edges_[e]) / max_width)));
            panel_count_.push_back(parts);
            total += parts * gl.x.size();
        }
        rule.t.resize(total);
        rule.w.resize(total);
        const double inv_norm = 1.0 / (sd * std::sqrt(2.0 * std::numbers::pi));
        Eigen::Index at = 0;
        for (std::size_t e = 0; e + 1 < edges_.size(); ++e) {
            const double span = edges_[e + 1] - edges_[e];
            const int parts = panel_count_[e];
            for (int p = 0; p < parts; ++p) {
                const double a = edges_[e] + span * p / parts;
                const double b = edges_[e] + span * (p + 1) / parts;
                const double mid = 0.5 * (a + b);
                const double half = 0.5 * (b - a);
                auto t = rule.t.segment(at, gl.x.size());
                auto w = rule.w.segment(at, gl.x.size());
                t = mid + half * gl.x;
                w = gl.w * half * inv_norm * (-0.5 * ((t - mean) / sd).square()).exp();
                at += gl.x.size();
            }
        }
    }

    // Summation order must not depend on anything but the rule itself, so
    // parallel layer evaluations stay bit-identical.
    static double fixed_order_dot(const Eigen::ArrayXd& a, const Eigen::ArrayXd& b) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < a.size(); ++i) total += a[i] * b[i];
        return total;
    }

    Activation act_; // by value: instances outlive any caller temporary
    QuadratureSpec spec_;
    double trunc_sigmas_;
    int panel_nodes_;
    mutable AxisRule outer_;
    mutable AxisRule inner_;
    mutable Eigen::ArrayXd outer_phi_;
    mutable Eigen::ArrayXd scratch_;
    mutable std::vector<double> merged_bps_;
    mutable std::vector<double> edges_;
    mutable std::vector<int> panel_count_;
};

inline double bivariate_expectation(double var_u, double var_v, double cov_uv,
                                    const Activation& act, const QuadratureSpec& spec = {}) {
    return GaussianExpectation(act, spec).bivariate(var_u, var_v, cov_uv);
}

inline double gaussian_expectation(const Activation& act, double mean, double var,
                                   const QuadratureSpec& spec = {}) {
    return GaussianExpectation(act, spec).one_dim(mean, var);
}

} // namespace nngp
