#pragma once

#include <Eigen/Dense>

#include "nngp/activation.hpp"

namespace nngp {

inline void apply_activation(const Activation& act, Eigen::ArrayXd& v) {
    using K = Activation::Kind;
    switch (act.kind()) {
        case K::identity:
            return;
        case K::relu:
            v = v.max(0.0);
            return;
        case K::tanh:
            v = v.tanh();
            return;
        default:
            for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = act(v[i]);
    }
}

inline void apply_activation(const Activation& act, Eigen::MatrixXd& m) {
    using K = Activation::Kind;
    switch (act.kind()) {
        case K::identity:
            return;
        case K::relu:
            m = m.cwiseMax(0.0);
            return;
        case K::tanh:
            m = m.array().tanh().matrix();
            return;
        default:
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = act(m(i, j));
    }
}

// Factor F with F*F^T = m for a symmetric PSD matrix: Cholesky when positive
// definite, eigenvalue square root with negative dust clipped to zero otherwise.
inline Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& m) {
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    Eigen::VectorXd d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * d.asDiagonal();
}

} // namespace nngp
