#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "nngp/kernel.hpp"
#include "support/oracles.hpp"

using namespace nngp;

namespace {

InputSet two_unit_vectors() {
    Eigen::MatrixXd x(2, 2);
    x << 1, 0, 0, 1;
    return InputSet::from_matrix(x);
}

} // namespace

TEST_CASE("base kernel from the inner-product formula", "[kernel]") {
    NetworkParams p{.depth = 1, .sigma_w_sq = 2.0, .sigma_b_sq = 1.0};
    const CovMatrix cov = base_kernel(two_unit_vectors(), p);
    CHECK(cov.layer == 1);
    CHECK(cov.m(0, 0) == 3.0);
    CHECK(cov.m(1, 1) == 3.0);
    CHECK(cov.m(0, 1) == 1.0);
    CHECK(cov.m(1, 0) == 1.0);

    // single zero input: just the bias variance
    Eigen::MatrixXd zero(3, 1);
    zero.setZero();
    NetworkParams pz{.depth = 1, .sigma_w_sq = 1.0, .sigma_b_sq = 0.5};
    CHECK(base_kernel(InputSet::from_matrix(zero), pz).m(0, 0) == 0.5);

    // ||x||^2 with zero bias
    Eigen::MatrixXd ones(2, 1);
    ones << 1, 1;
    NetworkParams p1{.depth = 1, .sigma_w_sq = 1.0, .sigma_b_sq = 0.0};
    CHECK(base_kernel(InputSet::from_matrix(ones), p1).m(0, 0) == 2.0);
}

TEST_CASE("duplicate inputs are rejected", "[kernel]") {
    Eigen::MatrixXd x(2, 2);
    x << 1, 1, 2, 2;
    CHECK_THROWS_AS(InputSet::from_matrix(x), std::domain_error);
    Eigen::MatrixXd bad(1, 1);
    bad << std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(InputSet::from_matrix(bad), std::domain_error);
}

TEST_CASE("layer step on identity and relu", "[kernel]") {
    CovMatrix prev;
    prev.layer = 1;
    prev.m.resize(2, 2);
    prev.m << 1.0, 0.5, 0.5, 1.0;
    NetworkParams ident{.depth = 2, .sigma_w_sq = 1.0, .sigma_b_sq = 0.0};
    const CovMatrix same = layer_step(prev, Activation::identity(), ident);
    CHECK(same.layer == 2);
    CHECK(same.m(0, 0) == Catch::Approx(1.0).margin(1e-12));
    CHECK(same.m(0, 1) == Catch::Approx(0.5).margin(1e-12));

    CovMatrix indep;
    indep.layer = 1;
    indep.m = Eigen::MatrixXd::Identity(2, 2);
    const CovMatrix r = layer_step(indep, Activation::relu(), ident);
    CHECK(r.m(0, 0) == Catch::Approx(0.5).margin(1e-9));
    CHECK(r.m(0, 1) == Catch::Approx(1.0 / (2.0 * std::numbers::pi)).margin(1e-9));

    CovMatrix single;
    single.layer = 1;
    single.m.resize(1, 1);
    single.m << 3.0;
    NetworkParams affine{.depth = 2, .sigma_w_sq = 2.0, .sigma_b_sq = 1.0};
    CHECK(layer_step(single, Activation::identity(), affine).m(0, 0) ==
          Catch::Approx(7.0).margin(1e-10));
}

TEST_CASE("identity recursion fixed point over ten layers", "[kernel]") {
    Eigen::MatrixXd x(3, 3);
    x << 0.3, -1.2, 0.0, 0.7, 0.1, -0.4, -0.5, 0.9, 1.1;
    const InputSet inputs = InputSet::from_matrix(x);
    NetworkParams p{.depth = 10, .sigma_w_sq = 1.0, .sigma_b_sq = 0.0};
    const auto kernels = kernel_at_depth(inputs, Activation::identity(), p);
    REQUIRE(kernels.size() == 10);
    const double scale = kernels.front().m.cwiseAbs().maxCoeff();
    for (const auto& k : kernels)
        CHECK((k.m - kernels.front().m).cwiseAbs().maxCoeff() <= 1e-12 * scale);
}

TEST_CASE("identity recursion with bias unrolls affinely", "[kernel]") {
    Eigen::MatrixXd x(2, 2);
    x << 1, 0, 0, 1;
    const InputSet inputs = InputSet::from_matrix(x);
    const double c = 0.3;
    NetworkParams p{.depth = 5, .sigma_w_sq = 1.0, .sigma_b_sq = c};
    const auto kernels = kernel_at_depth(inputs, Activation::identity(), p);
    const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(2, 2);
    for (std::size_t l = 0; l < kernels.size(); ++l) {
        const Eigen::MatrixXd want =
            kernels.front().m + static_cast<double>(l) * c * ones;
        CHECK((kernels[l].m - want).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("relu depth-3 kernel matches the nested Monte Carlo oracle", "[kernel]") {
    Eigen::MatrixXd x(4, 3);
    x << 0.9, -0.3, 0.4, -0.2, 0.8, 0.1, 0.5, 0.6, -0.7, -1.0, 0.2, 0.3;
    const InputSet inputs = InputSet::from_matrix(x);
    NetworkParams p{.depth = 3, .sigma_w_sq = 2.0, .sigma_b_sq = 0.1};
    const auto kernels = kernel_at_depth(inputs, Activation::relu(), p, {}, 2);
    const auto mc = oracles::mc_kernel_recursion(inputs, Activation::relu(), p, 2'000'000, 5150);
    for (Eigen::Index r = 0; r < 3; ++r)
        for (Eigen::Index c = 0; c < 3; ++c) {
            INFO("entry " << r << "," << c);
            CHECK(std::abs(kernels.back().m(r, c) - mc.mean(r, c)) <=
                  4.0 * std::max(mc.se(r, c), 1e-12));
        }
}

TEST_CASE("kernels stay symmetric PSD with dominated diagonal", "[kernel]") {
    Eigen::MatrixXd x(4, 3);
    x << 0.9, -0.3, 0.4, -0.2, 0.8, 0.1, 0.5, 0.6, -0.7, -1.0, 0.2, 0.3;
    const InputSet inputs = InputSet::from_matrix(x);
    NetworkParams p{.depth = 4, .sigma_w_sq = 1.7, .sigma_b_sq = 0.2};
    for (const auto& act : {Activation::relu(), Activation::tanh(), Activation::erf()}) {
        const auto kernels = kernel_at_depth(inputs, act, p);
        for (const auto& k : kernels) {
            CHECK((k.m - k.m.transpose()).cwiseAbs().maxCoeff() <=
                  1e-12 * k.m.cwiseAbs().maxCoeff());
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k.m);
            CHECK(es.eigenvalues().minCoeff() >= -1e-12 * k.m.diagonal().maxCoeff());
            for (Eigen::Index i = 0; i < k.size(); ++i)
                CHECK(k.m(i, i) >= p.sigma_b_sq);
        }
    }
}

TEST_CASE("layer step is identical across thread budgets", "[kernel]") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 7);
    const InputSet inputs = InputSet::from_matrix(x);
    NetworkParams p{.depth = 3, .sigma_w_sq = 1.5, .sigma_b_sq = 0.3};
    const auto serial = kernel_at_depth(inputs, Activation::tanh(), p, {}, 1);
    const auto parallel = kernel_at_depth(inputs, Activation::tanh(), p, {}, 4);
    for (std::size_t l = 0; l < serial.size(); ++l)
        CHECK(serial[l].m == parallel[l].m); // bit-identical
}

TEST_CASE("psd repair", "[kernel]") {
    Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(2, 2);
    const auto clean = psd_repair(eye);
    CHECK(clean.largest_clip == 0.0);
    CHECK(clean.cov.m == eye);

    Eigen::MatrixXd rank1 = Eigen::MatrixXd::Ones(2, 2);
    const auto r1 = psd_repair(rank1);
    CHECK(r1.largest_clip == 0.0);
    CHECK(r1.cov.m == rank1);

    Eigen::MatrixXd slightly(2, 2);
    slightly << 1.0, 1.0 + 1e-10, 1.0 + 1e-10, 1.0;
    const auto fixed = psd_repair(slightly);
    CHECK(fixed.largest_clip == Catch::Approx(1e-10).epsilon(0.05));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fixed.cov.m);
    CHECK(es.eigenvalues().minCoeff() >= -1e-15);

    Eigen::MatrixXd asym(2, 2);
    asym << 1.0, 0.5, 0.2, 1.0;
    CHECK_THROWS_AS(psd_repair(asym), std::domain_error);

    Eigen::MatrixXd indef(2, 2);
    indef << 1.0, 2.0, 2.0, 1.0; // eigenvalues 3 and -1
    CHECK_THROWS_AS(psd_repair(indef), std::domain_error);
}

TEST_CASE("absolute normal moments", "[kernel]") {
    CHECK(abs_normal_moment(0) == 1.0);
    CHECK(abs_normal_moment(1) == 1.0);
    CHECK(abs_normal_moment(2) == 3.0);
    CHECK(abs_normal_moment(3) == 15.0);
    CHECK(abs_normal_moment(4) == 105.0);
    CHECK_THROWS_AS(abs_normal_moment(-1), std::domain_error);
}

TEST_CASE("increment moment bound constants", "[kernel]") {
    NetworkParams p{.depth = 3, .sigma_w_sq = 2.0, .sigma_b_sq = 0.1};
    CHECK(holder_moment_bound(1, 3, p, 1.0) == Catch::Approx(8.0).epsilon(1e-12));
    NetworkParams unit{.depth = 4, .sigma_w_sq = 1.0, .sigma_b_sq = 0.1};
    for (int l : {1, 2, 5})
        CHECK(holder_moment_bound(1, l, unit, 1.0) == Catch::Approx(1.0).epsilon(1e-12));
    // theta=2, sigma_w^2=1, L=2, layer 2: 3^2 * (2^2)^2 = 144
    CHECK(holder_moment_bound(2, 2, unit, 2.0) == Catch::Approx(144.0).epsilon(1e-12));
    CHECK_THROWS_AS(holder_moment_bound(0, 1, p, 1.0), std::domain_error);
    CHECK_THROWS_AS(holder_moment_bound(1, 0, p, 1.0), std::domain_error);
    CHECK_THROWS_AS(holder_moment_bound(1, 1, p, 0.0), std::domain_error);
    // overflow carries the exponent in a range error
    NetworkParams big{.depth = 1, .sigma_w_sq = 1e100, .sigma_b_sq = 0.1};
    CHECK_THROWS_AS(holder_moment_bound(4, 400, big, 1e50), std::range_error);
}
