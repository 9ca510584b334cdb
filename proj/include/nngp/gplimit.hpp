#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nngp/errors.hpp"
#include "nngp/kernel.hpp"
#include "nngp/netsim.hpp"
#include "nngp/rng.hpp"
#include "nngp/threads.hpp"

namespace nngp {

struct GpSampleRequest {
    const CovMatrix* cov = nullptr;
    std::int64_t units = 1;
    std::int64_t samples = 1;
    double jitter = 1e-10; // relative to max diagonal
    std::uint64_t seed = 0;
    int threads = 1;
};

namespace detail {

// Symmetric factorization with escalating relative jitter, then an
// eigenvalue-clip fallback. Deep kernels on fine grids are near-singular.
inline Eigen::MatrixXd gp_factor(const Eigen::MatrixXd& cov, double jitter_start) {
    const double max_diag = std::max(cov.diagonal().maxCoeff(), 0.0);
    double jitter = std::max(jitter_start, 0.0);
    for (;;) {
        Eigen::MatrixXd shifted = cov;
        shifted.diagonal().array() += jitter * max_diag;
        Eigen::LLT<Eigen::MatrixXd> llt(shifted);
        if (llt.info() == Eigen::Success) return llt.matrixL();
        if (jitter >= 1e-6 || max_diag == 0.0) break;
        jitter = jitter == 0.0 ? 1e-12 : jitter * 10.0;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const double min_eig = es.eigenvalues().minCoeff();
    if (min_eig < -1e-6 * std::max(max_diag, 1e-300))
        throw NumericError("covariance factorization failed; min eigenvalue " +
                           std::to_string(min_eig));
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

} // namespace detail

// S*U independent draws from N_k(0, cov + jitter-scaled identity); units are
// independent (the limit law factorizes across units). Deterministic per
// (seed, sample, unit) regardless of the thread budget.
inline SampleBatch sample_gp(const GpSampleRequest& req) {
    if (!req.cov) throw std::domain_error("sample_gp: missing covariance");
    if (req.units < 1 || req.samples < 1)
        throw std::domain_error("sample_gp: units and samples must be >= 1");
    if (req.jitter < 0.0) throw std::domain_error("sample_gp: jitter must be >= 0");
    const Eigen::Index k = req.cov->size();
    Eigen::MatrixXd factor = detail::gp_factor(req.cov->m, req.jitter);

    SampleBatch batch;
    batch.samples = req.samples;
    batch.units = req.units;
    batch.k = k;
    batch.layer = req.cov->layer;
    batch.width = 0; // limit process
    batch.seed = req.seed;
    batch.activation_name = "gp-limit";
    batch.values.resize(static_cast<std::size_t>(req.samples * req.units * k));

    parallel_for(req.samples, req.threads, [&](std::int64_t begin, std::int64_t end) {
        std::vector<double> z(static_cast<std::size_t>(k));
        for (std::int64_t s = begin; s < end; ++s) {
            for (std::int64_t u = 0; u < req.units; ++u) {
                RandomStream stream(req.seed, StreamTag::gp_draw,
                                    static_cast<std::uint64_t>(s),
                                    static_cast<std::uint64_t>(u));
                stream.fill_normals(z);
                for (Eigen::Index r = 0; r < k; ++r) {
                    double acc = 0.0;
                    for (Eigen::Index j = 0; j < k; ++j)
                        acc += factor(r, j) * z[static_cast<std::size_t>(j)];
                    batch.at(s, u, r) = acc;
                }
            }
        }
    });
    return batch;
}

// Dyadic grid on the segment [x0, x1]: 2^levels + 1 points including both
// endpoints; level j uses every 2^(levels-j)-th point.
inline InputSet segment_grid(const Eigen::VectorXd& x0, const Eigen::VectorXd& x1, int levels,
                             Eigen::Index max_points = 4097) {
    if (x0.size() != x1.size()) throw std::domain_error("segment endpoints of different dimension");
    if (x0 == x1) throw std::domain_error("segment endpoints must differ");
    if (levels < 1) throw std::domain_error("segment needs >= 1 dyadic level");
    const Eigen::Index count = (Eigen::Index{1} << levels) + 1;
    if (count > max_points)
        throw ResourceError("segment grid of " + std::to_string(count) +
                            " points exceeds grid budget " + std::to_string(max_points));
    Eigen::MatrixXd x(x0.size(), count);
    for (Eigen::Index i = 0; i < count; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(count - 1);
        x.col(i) = x0 + t * (x1 - x0);
    }
    return InputSet::from_matrix(std::move(x));
}

// Final-layer covariance on the finest dyadic grid of the segment. Grid
// points shared between levels get identical kernel entries by construction.
inline CovMatrix segment_kernel(const Eigen::VectorXd& x0, const Eigen::VectorXd& x1, int levels,
                                const Activation& act, const NetworkParams& params,
                                const QuadratureSpec& quad = {}, int threads = 1,
                                Eigen::Index max_points = 4097) {
    const InputSet grid = segment_grid(x0, x1, levels, max_points);
    return kernel_at_depth(grid, act, params, quad, threads).back();
}

// One sampled trajectory on the finest dyadic grid; values are a single joint
// draw, so every coarser level is a strided view of the same numbers.
struct SegmentPath {
    Eigen::VectorXd x0;
    Eigen::VectorXd x1;
    int levels = 0;
    Eigen::VectorXd values; // size 2^levels + 1
};

struct HolderEstimate {
    double gamma = 0.0;
    double stderr_slope = 0.0;
    int used_scales = 0;
    int excluded_scales = 0;                     // scales whose max increment was exactly 0
    std::vector<double> scale;                   // h_j = 2^-j * |x1 - x0|
    std::vector<double> max_increment;           // sup over level-j intervals
};

// Regresses log(max increment at scale 2^-j) on log(scale) over the dyadic
// levels; the slope estimates the path's Hölder exponent, with a +-2 SE band
// from the regression.
inline HolderEstimate holder_exponent_estimate(const SegmentPath& path) {
    if (path.levels < 4) throw std::domain_error("holder estimate needs >= 4 dyadic levels");
    const Eigen::Index fine = path.values.size() - 1;
    if (fine != (Eigen::Index{1} << path.levels))
        throw std::domain_error("path values inconsistent with level count");
    const double seg_len = (path.x1 - path.x0).norm();

    HolderEstimate est;
    std::vector<double> log_h, log_m;
    for (int j = 1; j <= path.levels; ++j) {
        const Eigen::Index stride = fine >> j;
        const Eigen::Index steps = Eigen::Index{1} << j;
        double worst = 0.0;
        for (Eigen::Index i = 0; i < steps; ++i)
            worst = std::max(worst, std::abs(path.values[(i + 1) * stride] -
                                             path.values[i * stride]));
        const double h = seg_len * std::pow(2.0, -j);
        est.scale.push_back(h);
        est.max_increment.push_back(worst);
        if (worst == 0.0) {
            ++est.excluded_scales;
            continue;
        }
        log_h.push_back(std::log(h));
        log_m.push_back(std::log(worst));
    }
    const std::size_t n = log_h.size();
    if (n < 2) throw std::domain_error("holder estimate: fewer than 2 usable scales");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += log_h[i];
        my += log_m[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (log_h[i] - mx) * (log_h[i] - mx);
        sxy += (log_h[i] - mx) * (log_m[i] - my);
    }
    est.gamma = sxy / sxx;
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double fit = my + est.gamma * (log_h[i] - mx);
        rss += (log_m[i] - fit) * (log_m[i] - fit);
    }
    est.used_scales = static_cast<int>(n);
    est.stderr_slope = n > 2 ? std::sqrt(rss / (static_cast<double>(n) - 2.0) / sxx) : 0.0;
    return est;
}

// Draws `paths` independent trajectories on the finest grid of the segment.
inline std::vector<SegmentPath> sample_segment_paths(const CovMatrix& grid_cov,
                                                     const Eigen::VectorXd& x0,
                                                     const Eigen::VectorXd& x1, int levels,
                                                     std::int64_t paths, double jitter,
                                                     std::uint64_t seed, int threads = 1) {
    GpSampleRequest req;
    req.cov = &grid_cov;
    req.units = 1;
    req.samples = paths;
    req.jitter = jitter;
    req.seed = seed;
    req.threads = threads;
    SampleBatch batch = sample_gp(req);
    std::vector<SegmentPath> out(static_cast<std::size_t>(paths));
    for (std::int64_t p = 0; p < paths; ++p) {
        SegmentPath& sp = out[static_cast<std::size_t>(p)];
        sp.x0 = x0;
        sp.x1 = x1;
        sp.levels = levels;
        sp.values.resize(batch.k);
        for (Eigen::Index r = 0; r < batch.k; ++r) sp.values[r] = batch.at(p, 0, r);
    }
    return out;
}

} // namespace nngp
