#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nngp/activation.hpp"
#include "nngp/quadrature.hpp"
#include "nngp/threads.hpp"

namespace nngp {

struct NetworkParams {
    int depth = 3;           // number of layers L >= 1
    double sigma_w_sq = 1.0; // weight variance
    double sigma_b_sq = 0.1; // bias variance

    void validate() const {
        if (depth < 1) throw std::domain_error("depth must be >= 1");
        if (!(sigma_w_sq > 0.0)) throw std::domain_error("sigma_w_sq must be > 0");
        if (!(sigma_b_sq >= 0.0)) throw std::domain_error("sigma_b_sq must be >= 0");
    }
};

// k distinct input vectors, stored as the columns of an I x k matrix.
class InputSet {
public:
    static InputSet from_matrix(Eigen::MatrixXd x) {
        if (x.size() == 0) throw std::domain_error("input set is empty");
        if (!x.allFinite()) throw std::domain_error("input entries must be finite");
        for (Eigen::Index a = 0; a < x.cols(); ++a)
            for (Eigen::Index b = a + 1; b < x.cols(); ++b)
                if (x.col(a) == x.col(b))
                    throw std::domain_error("inputs must be pairwise distinct (columns " +
                                            std::to_string(a) + " and " + std::to_string(b) + ")");
        InputSet s;
        s.x_ = std::move(x);
        return s;
    }

    const Eigen::MatrixXd& matrix() const { return x_; }
    Eigen::Index dim() const { return x_.rows(); }
    Eigen::Index count() const { return x_.cols(); }

private:
    InputSet() = default;
    Eigen::MatrixXd x_;
};

struct CovMatrix {
    Eigen::MatrixXd m;
    int layer = 0;
    Eigen::Index size() const { return m.rows(); }
};

struct PsdRepairResult {
    CovMatrix cov;
    double largest_clip = 0.0;
};

// Clips eigenvalues below rel_floor * max(diagonal) up to that floor and
// reports the largest adjustment. Matrices that are already compliant pass
// through untouched.
inline PsdRepairResult psd_repair(const Eigen::MatrixXd& m, double rel_floor = 0.0,
                                  int layer = 0) {
    if (m.rows() != m.cols()) throw std::domain_error("psd_repair: matrix not square");
    const double scale = std::max(m.cwiseAbs().maxCoeff(), 1e-300);
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
        throw std::domain_error("psd_repair: matrix asymmetric beyond tolerance");
    const double max_diag = m.diagonal().maxCoeff();
    const double floor = rel_floor * std::max(max_diag, 0.0);

    Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    const double min_eig = es.eigenvalues().minCoeff();
    if (min_eig < -1e-8 * std::max(max_diag, 0.0))
        throw std::domain_error("psd_repair: eigenvalue " + std::to_string(min_eig) +
                                " below admissible tolerance");
    PsdRepairResult out;
    out.cov.layer = layer;
    if (min_eig >= floor) {
        out.cov.m = m;
        return out;
    }
    Eigen::VectorXd d = es.eigenvalues();
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        if (d[i] < floor) {
            out.largest_clip = std::max(out.largest_clip, floor - d[i]);
            d[i] = floor;
        }
    }
    Eigen::MatrixXd rep = es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
    out.cov.m = 0.5 * (rep + rep.transpose());
    return out;
}

// First-layer covariance: sigma_b^2 + sigma_w^2 <x_r, x_s>. Exact.
inline CovMatrix base_kernel(const InputSet& inputs, const NetworkParams& params) {
    params.validate();
    const Eigen::MatrixXd& x = inputs.matrix();
    CovMatrix cov;
    cov.layer = 1;
    cov.m = params.sigma_b_sq * Eigen::MatrixXd::Ones(x.cols(), x.cols()) +
            params.sigma_w_sq * (x.transpose() * x);
    cov.m = 0.5 * (cov.m + cov.m.transpose());
    return cov;
}

// One step of the layerwise covariance recursion:
//   next_rs = sigma_b^2 + sigma_w^2 * E[phi(U)phi(V)],
// with (U, V) centered Gaussian with covariance taken from `prev`.
// Entries are independent; they may be computed in parallel and each entry's
// quadrature has a fixed summation order, so results do not depend on the
// thread budget.
inline CovMatrix layer_step(const CovMatrix& prev, const Activation& act,
                            const NetworkParams& params, const QuadratureSpec& quad = {},
                            int threads = 1) {
    params.validate();
    const Eigen::Index k = prev.size();
    std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
    pairs.reserve(static_cast<std::size_t>(k) * (k + 1) / 2);
    for (Eigen::Index r = 0; r < k; ++r)
        for (Eigen::Index s = r; s < k; ++s) pairs.emplace_back(r, s);
    Eigen::MatrixXd next(k, k);
    parallel_for(static_cast<std::int64_t>(pairs.size()), threads,
                 [&](std::int64_t begin, std::int64_t end) {
        GaussianExpectation expect(act, quad);
        for (std::int64_t p = begin; p < end; ++p) {
            const auto [r, s] = pairs[static_cast<std::size_t>(p)];
            const double e = expect.bivariate(prev.m(r, r), prev.m(s, s), prev.m(r, s));
            next(r, s) = params.sigma_b_sq + params.sigma_w_sq * e;
            next(s, r) = next(r, s);
        }
    });
    PsdRepairResult rep = psd_repair(next, 0.0, prev.layer + 1);
    return std::move(rep.cov);
}

// Covariances for layers 1..L; element 1 is base_kernel exactly.
inline std::vector<CovMatrix> kernel_at_depth(const InputSet& inputs, const Activation& act,
                                              const NetworkParams& params,
                                              const QuadratureSpec& quad = {},
                                              int threads = 1) {
    std::vector<CovMatrix> out;
    out.reserve(params.depth);
    out.push_back(base_kernel(inputs, params));
    for (int l = 2; l <= params.depth; ++l)
        out.push_back(layer_step(out.back(), act, params, quad, threads));
    return out;
}

// E[|N(0,1)|^(2 theta)] = (2 theta - 1)!!
inline double abs_normal_moment(int theta) {
    if (theta < 0) throw std::domain_error("abs_normal_moment: theta must be >= 0");
    double v = 1.0;
    for (int j = 3; j <= 2 * theta - 1; j += 2) v *= j;
    return v;
}

// Layer-l constant bounding E|f(y) - f(x)|^(2 theta) <= H * ||y - x||^(2 theta)
// uniformly in width: H = C_theta^l * (sigma_w^2)^(l*theta) * (L_phi^2)^((l-1)*theta).
inline double holder_moment_bound(int theta, int layer, const NetworkParams& params,
                                  double l_phi) {
    if (theta < 1) throw std::domain_error("holder_moment_bound: theta must be >= 1");
    if (layer < 1) throw std::domain_error("holder_moment_bound: layer must be >= 1");
    if (!(l_phi > 0.0)) throw std::domain_error("holder_moment_bound: L_phi must be > 0");
    const double log_h = layer * std::log(abs_normal_moment(theta)) +
                         layer * theta * std::log(params.sigma_w_sq) +
                         (layer - 1) * theta * 2.0 * std::log(l_phi);
    if (log_h > std::log(std::numeric_limits<double>::max()))
        throw std::range_error("holder_moment_bound overflows: log value " +
                               std::to_string(log_h));
    return std::exp(log_h);
}

} // namespace nngp
