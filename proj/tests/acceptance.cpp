// Acceptance suite: one line per criterion, every tolerance pinned in code.
// Exit status is zero only if all criteria pass.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "nngp/config.hpp"
#include "nngp/diagnostics.hpp"
#include "nngp/gplimit.hpp"
#include "nngp/kernel.hpp"
#include "nngp/netsim.hpp"
#include "nngp/report.hpp"
#include "nngp/runner.hpp"
#include "support/oracles.hpp"

using namespace nngp;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
    double budget_s = 0.0;
};

int g_threads = 2;

Eigen::MatrixXd fixed_random_inputs(Eigen::Index dim, Eigen::Index count, std::uint64_t seed) {
    Eigen::MatrixXd x(dim, count);
    RandomStream st(seed, StreamTag::oracle);
    std::uint64_t idx = 0;
    for (Eigen::Index c = 0; c < count; ++c)
        for (Eigen::Index r = 0; r < dim; ++r) x(r, c) = st.normal(idx++);
    return x;
}

// 1. depth-3 kernels for relu and tanh against a 1e7-sample nested Monte
//    Carlo oracle, every entry within 4 standard errors
Outcome criterion_kernel_oracle() {
    Outcome out;
    out.budget_s = 120.0;
    const InputSet inputs = InputSet::from_matrix(fixed_random_inputs(4, 3, 1001));
    NetworkParams p{.depth = 3, .sigma_w_sq = 2.0, .sigma_b_sq = 0.1};
    out.pass = true;
    std::uint64_t oracle_seed = 4400;
    for (const auto& act : {Activation::relu(), Activation::tanh()}) {
        const auto kernels = kernel_at_depth(inputs, act, p, {}, g_threads);
        const auto mc =
            oracles::mc_kernel_recursion(inputs, act, p, 10'000'000, oracle_seed++, g_threads);
        double worst = 0.0;
        for (Eigen::Index r = 0; r < 3; ++r)
            for (Eigen::Index c = 0; c < 3; ++c) {
                const double sigmas = std::abs(kernels.back().m(r, c) - mc.mean(r, c)) /
                                      std::max(mc.se(r, c), 1e-300);
                worst = std::max(worst, sigmas);
            }
        out.detail += std::string(act.name()) + " worst |dev|=" +
                      std::to_string(worst) + " se; ";
        if (worst > 4.0) out.pass = false;
    }
    return out;
}

// 2. identity activation with zero bias: all ten layer kernels equal the
//    first to 1e-12 relative
Outcome criterion_identity_fixed_point() {
    Outcome out;
    out.budget_s = 1.0;
    const InputSet inputs = InputSet::from_matrix(fixed_random_inputs(3, 4, 1002));
    NetworkParams p{.depth = 10, .sigma_w_sq = 1.0, .sigma_b_sq = 0.0};
    const auto kernels = kernel_at_depth(inputs, Activation::identity(), p, {}, g_threads);
    const double scale = kernels.front().m.cwiseAbs().maxCoeff();
    double worst = 0.0;
    for (const auto& k : kernels)
        worst = std::max(worst, (k.m - kernels.front().m).cwiseAbs().maxCoeff() / scale);
    out.pass = worst <= 1e-12;
    out.detail = "max relative deviation " + std::to_string(worst);
    return out;
}

// 3. closed relu values at 64 nodes, each to 1e-6
Outcome criterion_relu_closed_values() {
    Outcome out;
    out.budget_s = 1.0;
    QuadratureSpec quad; // 64 nodes per axis
    const double indep = bivariate_expectation(1.0, 1.0, 0.0, Activation::relu(), quad);
    const double same = bivariate_expectation(1.0, 1.0, 1.0, Activation::relu(), quad);
    const double err0 = std::abs(indep - 1.0 / (2.0 * std::numbers::pi));
    const double err1 = std::abs(same - 0.5);
    out.pass = err0 <= 1e-6 && err1 <= 1e-6;
    out.detail = "errors " + std::to_string(err0) + ", " + std::to_string(err1);
    return out;
}

// 4. first-layer marginals at three inputs pass Bonferroni-corrected KS at
//    family level 0.01 with 1e5 samples
Outcome criterion_layer1_ks() {
    Outcome out;
    out.budget_s = 30.0;
    const InputSet inputs = InputSet::from_matrix(fixed_random_inputs(3, 3, 1004));
    NetworkParams p{.depth = 2, .sigma_w_sq = 2.0, .sigma_b_sq = 0.1};
    const Activation act = Activation::relu();
    NetSimRequest req;
    req.inputs = &inputs;
    req.act = &act;
    req.params = p;
    req.width = 64;
    req.samples = 100000;
    req.seed = 90210;
    req.threads = g_threads;
    const auto batches = sample_network(req);
    const CovMatrix base = base_kernel(inputs, p);
    const double level = 0.01 / 3.0;
    double min_p = 1.0;
    std::vector<double> col(static_cast<std::size_t>(req.samples));
    for (Eigen::Index r = 0; r < 3; ++r) {
        for (std::int64_t s = 0; s < req.samples; ++s)
            col[static_cast<std::size_t>(s)] = batches[0].at(s, 0, r);
        min_p = std::min(min_p, ks_distance(col, base.m(r, r)).p);
    }
    out.pass = min_p >= level;
    out.detail = "min p " + std::to_string(min_p) + " vs per-test level " + std::to_string(level);
    return out;
}

// 5. relu depth 3, ladder {8,64,512,4096}: covariance error strictly
//    decreasing, log-log slope in [-0.7,-0.3], final ECF distance < 0.05
Outcome criterion_convergence_trend() {
    Outcome out;
    out.budget_s = 600.0;
    const InputSet inputs = InputSet::from_matrix(fixed_random_inputs(3, 3, 1005));
    NetworkParams p{.depth = 3, .sigma_w_sq = 2.0, .sigma_b_sq = 0.1};
    const Activation act = Activation::relu();
    const auto kernels = kernel_at_depth(inputs, act, p, {}, g_threads);
    const CovMatrix& target = kernels.back();
    std::vector<std::pair<double, double>> errs;
    double final_ecf = 0.0;
    for (std::int64_t n : {8, 64, 512, 4096}) {
        NetSimRequest req;
        req.inputs = &inputs;
        req.act = &act;
        req.params = p;
        req.width = n;
        req.samples = 10000;
        req.seed = 515;
        req.threads = g_threads;
        const auto batches = sample_network(req);
        const CovMatrix emp = empirical_cov(batches.back(), 0);
        errs.emplace_back(static_cast<double>(n), cov_frobenius_error(emp, target));
        if (n == 4096)
            final_ecf = ecf_distance(batches.back(), target, TGrid::make(target), g_threads);
    }
    bool decreasing = true;
    for (std::size_t i = 0; i + 1 < errs.size(); ++i)
        if (errs[i + 1].second >= errs[i].second) decreasing = false;
    const RateFit fit = rate_fit(errs);
    out.pass = decreasing && fit.slope >= -0.7 && fit.slope <= -0.3 && final_ecf < 0.05;
    std::ostringstream d;
    d << "errors";
    for (const auto& [n, e] : errs) d << ' ' << e;
    d << "; slope " << fit.slope << "; ecf(4096) " << final_ecf;
    out.detail = d.str();
    return out;
}

// 6. increment moment bound with the explicit layer constant holds for
//    theta in {1,2} at every width, within four bootstrap standard errors
Outcome criterion_moment_bounds() {
    Outcome out;
    out.budget_s = 300.0;
    Eigen::MatrixXd xm(3, 2);
    xm << 0.2, 0.2, -0.4, -0.4, 0.1, 1.1; // distance exactly 1
    const InputSet inputs = InputSet::from_matrix(xm);
    NetworkParams p{.depth = 3, .sigma_w_sq = 2.0, .sigma_b_sq = 0.1};
    const Activation act = Activation::relu();
    const double dist = 1.0;
    out.pass = true;
    std::ostringstream d;
    for (std::int64_t n : {8, 64, 512, 4096}) {
        NetSimRequest req;
        req.inputs = &inputs;
        req.act = &act;
        req.params = p;
        req.width = n;
        req.samples = 10000;
        req.seed = 616;
        req.threads = g_threads;
        const auto batches = sample_network(req);
        for (int theta : {1, 2}) {
            const double bound = holder_moment_bound(theta, p.depth, p, 1.0);
            const auto margin = moment_bound_check(batches.back(), 0, 0, 1, theta, bound, dist);
            if (!margin.pass) {
                out.pass = false;
                d << "FAIL n=" << n << " theta=" << theta << "; ";
            }
        }
    }
    d << "bounds " << holder_moment_bound(1, 3, p, 1.0) << "/"
      << holder_moment_bound(2, 3, p, 1.0);
    out.detail = d.str();
    return out;
}

// 7. per-realization Lipschitz witness bounds every increment of every
//    sampled realization, all three input pairs, with 1e-9 relative slack
Outcome criterion_lipschitz_witness() {
    Outcome out;
    out.budget_s = 60.0;
    const Eigen::MatrixXd xm = fixed_random_inputs(3, 3, 1007);
    const InputSet inputs = InputSet::from_matrix(xm);
    NetworkParams p{.depth = 3, .sigma_w_sq = 2.0, .sigma_b_sq = 0.1};
    const Activation act = Activation::relu();
    NetSimRequest req;
    req.inputs = &inputs;
    req.act = &act;
    req.params = p;
    req.width = 64;
    req.samples = 1000;
    req.seed = 717;
    req.threads = g_threads;
    const auto res = sample_network_with_witness(req);
    std::int64_t violations = 0, checks = 0;
    for (std::int64_t s = 0; s < req.samples; ++s)
        for (int l = 0; l < p.depth; ++l) {
            const SampleBatch& b = res.batches[static_cast<std::size_t>(l)];
            const double h = res.per_realization[static_cast<std::size_t>(s)]
                                 .witness[static_cast<std::size_t>(l)][0];
            for (Eigen::Index r = 0; r < 3; ++r)
                for (Eigen::Index q = r + 1; q < 3; ++q) {
                    const double lhs = std::abs(b.at(s, 0, r) - b.at(s, 0, q));
                    const double rhs = h * (xm.col(r) - xm.col(q)).norm() * (1.0 + 1e-9);
                    ++checks;
                    if (lhs > rhs) ++violations;
                }
        }
    out.pass = violations == 0;
    out.detail = std::to_string(violations) + " violations in " + std::to_string(checks) +
                 " checks";
    return out;
}

// 8. cross-unit independence at width 4096: max |corr| < 0.05
Outcome criterion_cross_unit() {
    Outcome out;
    out.budget_s = 300.0;
    const InputSet inputs = InputSet::from_matrix(fixed_random_inputs(3, 2, 1008));
    NetworkParams p{.depth = 3, .sigma_w_sq = 2.0, .sigma_b_sq = 0.1};
    const Activation act = Activation::relu();
    NetSimRequest req;
    req.inputs = &inputs;
    req.act = &act;
    req.params = p;
    req.width = 4096;
    req.units = 4;
    req.samples = 10000;
    req.seed = 818;
    req.threads = g_threads;
    const auto batches = sample_network(req);
    const auto corr = cross_unit_corr(batches.back());
    out.pass = corr.max_abs < 0.05 && corr.skipped_pairs == 0;
    out.detail = "max |corr| " + std::to_string(corr.max_abs);
    return out;
}

// 9. removing any one point of a nine-point segment kernel reproduces the
//    exact submatrix to 1e-12
Outcome criterion_projective_consistency() {
    Outcome out;
    out.budget_s = 5.0;
    Eigen::VectorXd x0(3), x1(3);
    x0 << 0.1, -0.2, 0.4;
    x1 << 0.9, 0.5, -0.3;
    NetworkParams p{.depth = 3, .sigma_w_sq = 1.5, .sigma_b_sq = 0.2};
    const Activation act = Activation::relu();
    const CovMatrix full = segment_kernel(x0, x1, 3, act, p, {}, g_threads);
    const InputSet grid = segment_grid(x0, x1, 3);
    double worst = 0.0;
    for (Eigen::Index drop = 0; drop < 9; ++drop) {
        Eigen::MatrixXd reduced(3, 8);
        Eigen::Index at = 0;
        for (Eigen::Index c = 0; c < 9; ++c)
            if (c != drop) reduced.col(at++) = grid.matrix().col(c);
        const CovMatrix sub =
            kernel_at_depth(InputSet::from_matrix(reduced), act, p, {}, g_threads).back();
        Eigen::Index rr = 0;
        for (Eigen::Index r = 0; r < 9; ++r) {
            if (r == drop) continue;
            Eigen::Index cc = 0;
            for (Eigen::Index c = 0; c < 9; ++c) {
                if (c == drop) continue;
                worst = std::max(worst, std::abs(sub.m(rr, cc) - full.m(r, c)));
                ++cc;
            }
            ++rr;
        }
    }
    out.pass = worst <= 1e-12;
    out.detail = "max submatrix deviation " + std::to_string(worst);
    return out;
}

// 10. depth-2 relu limit paths on a unit segment: mean exponent estimate in
//     (0.7, 1.05) over 100 paths with standard error < 0.05
Outcome criterion_holder_exponent() {
    Outcome out;
    out.budget_s = 120.0;
    Eigen::VectorXd x0(2), x1(2);
    x0 << 0.0, 0.0;
    x1 << 1.0, 0.0;
    NetworkParams p{.depth = 2, .sigma_w_sq = 2.0, .sigma_b_sq = 0.1};
    const int levels = 10;
    const CovMatrix cov = segment_kernel(x0, x1, levels, Activation::relu(), p, {}, g_threads);
    const auto paths = sample_segment_paths(cov, x0, x1, levels, 100, 1e-10, 1010, g_threads);
    double sum = 0.0, sum_sq = 0.0;
    for (const auto& path : paths) {
        const double g = holder_exponent_estimate(path).gamma;
        sum += g;
        sum_sq += g * g;
    }
    const double np = static_cast<double>(paths.size());
    const double mean = sum / np;
    const double se = std::sqrt(std::max(sum_sq / np - mean * mean, 0.0) / np);
    out.pass = mean > 0.7 && mean < 1.05 && se < 0.05;
    out.detail = "mean gamma " + std::to_string(mean) + ", se " + std::to_string(se);
    return out;
}

// 11. converge runs with different thread budgets produce byte-identical
//     reports under --no-timestamp
Outcome criterion_determinism() {
    Outcome out;
    out.budget_s = 600.0;
    namespace fs = std::filesystem;
    const std::string dir = "acceptance_determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    {
        std::ofstream cfg(dir + "/exp.cfg");
        cfg << "seed = 11011\n"
               "depth = 2\n"
               "sigma_w_sq = 2\n"
               "sigma_b_sq = 0.1\n"
               "activation = relu\n"
               "inputs = 1,0 ; 0,1\n"
               "widths = 8,64\n"
               "samples = 2000\n"
               "units = 2\n"
               "theta = 1\n";
    }
    auto run = [&](int threads, const std::string& sub) {
        std::ostringstream cmd;
        cmd << NNGP_CLI_PATH << " converge --config " << dir << "/exp.cfg --threads " << threads
            << " --out " << dir << "/" << sub << " --no-timestamp > " << dir << "/" << sub
            << ".log 2>&1";
        return std::system(cmd.str().c_str());
    };
    const int rc1 = run(1, "a");
    const int rc2 = run(2, "b");
    auto bytes = [](const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        std::stringstream buf;
        buf << in.rdbuf();
        return buf.str();
    };
    const std::string ra = bytes(dir + "/a/report.json");
    const std::string rb = bytes(dir + "/b/report.json");
    const std::string ma = bytes(dir + "/a/manifest.json");
    const std::string mb = bytes(dir + "/b/manifest.json");
    out.pass = rc1 == 0 && rc2 == 0 && !ra.empty() && ra == rb && ma == mb;
    out.detail = "report bytes " + std::to_string(ra.size()) + " vs " +
                 std::to_string(rb.size()) + (ra == rb ? " (identical)" : " (DIFFER)") +
                 ", cli exits " + std::to_string(rc1) + "/" + std::to_string(rc2);
    fs::remove_all(dir);
    return out;
}

} // namespace

int main(int argc, char** argv) {
    if (argc > 1) g_threads = std::atoi(argv[1]);
    if (g_threads < 1) g_threads = resolve_threads(0);

    struct Entry {
        const char* name;
        std::function<Outcome()> fn;
    };
    const std::vector<Entry> criteria = {
        {"kernel matches 1e7-sample Monte Carlo oracle (relu, tanh, depth 3)",
         criterion_kernel_oracle},
        {"identity activation fixed point over 10 layers", criterion_identity_fixed_point},
        {"closed relu quadrature values at 64 nodes", criterion_relu_closed_values},
        {"first-layer marginals pass Bonferroni KS (family 0.01)", criterion_layer1_ks},
        {"covariance error decreases with width, slope in [-0.7,-0.3], final ecf < 0.05",
         criterion_convergence_trend},
        {"uniform-in-width increment moment bounds (theta 1,2)", criterion_moment_bounds},
        {"per-realization Lipschitz witness bounds all increments",
         criterion_lipschitz_witness},
        {"cross-unit correlation < 0.05 at width 4096", criterion_cross_unit},
        {"projective consistency of the nine-point segment kernel",
         criterion_projective_consistency},
        {"mean path exponent in (0.7, 1.05) with se < 0.05", criterion_holder_exponent},
        {"byte-identical converge reports across thread budgets", criterion_determinism},
    };

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = criteria[i].fn();
        } catch (const std::exception& e) {
            out.pass = false;
            out.detail = std::string("exception: ") + e.what();
        }
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_budget = out.budget_s <= 0.0 || elapsed <= out.budget_s;
        const bool pass = out.pass && in_budget;
        if (!pass) ++failed;
        std::printf("[%s] criterion %2zu: %s  (%.1fs%s) %s\n", pass ? "PASS" : "FAIL", i + 1,
                    criteria[i].name, elapsed, in_budget ? "" : " OVER BUDGET",
                    out.detail.c_str());
        std::fflush(stdout);
    }
    if (failed == 0) {
        std::printf("all %zu acceptance criteria passed\n", criteria.size());
        return 0;
    }
    std::printf("%d acceptance criteria FAILED\n", failed);
    return 1;
}
