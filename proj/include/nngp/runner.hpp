#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "nngp/config.hpp"
#include "nngp/diagnostics.hpp"
#include "nngp/gplimit.hpp"
#include "nngp/kernel.hpp"
#include "nngp/netsim.hpp"
#include "nngp/report.hpp"
#include "nngp/threads.hpp"

namespace nngp {

struct RunOptions {
    int threads = 0; // 0 = resolve from env / hardware
    bool no_timestamp = false;
    std::string out_override;
};

namespace detail {

struct WidthArtifacts {
    std::vector<CovMatrix> empirical; // per width, final layer, unit 0, uncentered
};

inline void append_ks_marginals(const SampleBatch& batch, const CovMatrix& cov,
                                std::vector<MarginalKs>& out) {
    std::vector<double> column(static_cast<std::size_t>(batch.samples));
    for (std::int64_t u = 0; u < batch.units; ++u) {
        for (Eigen::Index r = 0; r < batch.k; ++r) {
            const double variance = cov.m(r, r);
            if (!(variance > 0.0)) continue; // degenerate marginal: constant 0
            for (std::int64_t s = 0; s < batch.samples; ++s)
                column[static_cast<std::size_t>(s)] = batch.at(s, u, r);
            const KsResult ks = ks_distance(column, variance);
            out.push_back({batch.layer, static_cast<int>(r), static_cast<int>(u), ks.d, ks.p});
        }
    }
}

inline bool bonferroni_pass(const std::vector<MarginalKs>& ks, double family_level) {
    if (ks.empty()) return true;
    const double level = family_level / static_cast<double>(ks.size());
    for (const auto& m : ks)
        if (m.p < level) return false;
    return true;
}

} // namespace detail

// Full pipeline: kernels, width ladder diagnostics, optional path-regularity
// run, checks. Throws nothing; failures mark the report partial and name the
// stage.
inline ConvergenceReport run_experiment(const ExperimentConfig& cfg, const RunOptions& opt,
                                        detail::WidthArtifacts* artifacts = nullptr) {
    const int threads = resolve_threads(opt.threads);
    ConvergenceReport rep;
    rep.seed = cfg.seed;
    rep.config_echo = emit_config(cfg);
    if (!opt.no_timestamp) rep.timestamp = detail::rfc3339_now();

    std::string stage = "activation";
    try {
        const Activation act = cfg.make_activation();
        rep.finite_dimensional_only = !act.lipschitz_constant().has_value();
        const InputSet inputs = InputSet::from_matrix(cfg.inputs);
        const Eigen::Index k = inputs.count();

        stage = "kernel";
        rep.kernels = kernel_at_depth(inputs, act, cfg.params, cfg.quad, threads);
        if (k <= 16) {
            QuadratureSpec refined = cfg.quad;
            refined.nodes_per_axis *= 2;
            const auto fine = kernel_at_depth(inputs, act, cfg.params, refined, threads);
            rep.quad_refinement_delta =
                (fine.back().m - rep.kernels.back().m).cwiseAbs().maxCoeff();
        }
        const CovMatrix& target = rep.kernels.back();

        const double l_phi = act.lipschitz_constant().value_or(0.0);
        const double pair_dist = k >= 2 ? (inputs.matrix().col(1) - inputs.matrix().col(0)).norm()
                                        : 0.0;

        for (std::int64_t n : cfg.widths) {
            stage = "netsim n=" + std::to_string(n);
            NetSimRequest req;
            req.inputs = &inputs;
            req.params = cfg.params;
            req.act = &act;
            req.width = n;
            req.units = cfg.units;
            req.samples = cfg.samples;
            req.seed = cfg.seed;
            req.threads = threads;
            req.element_budget = cfg.element_budget;
            const std::vector<SampleBatch> batches = sample_network(req);
            const SampleBatch& final_batch = batches.back();

            WidthRecord w;
            w.n = n;
            detail::append_ks_marginals(batches.front(), rep.kernels.front(), w.ks_layer1);
            detail::append_ks_marginals(final_batch, target, w.ks_final);
            w.ks_family_pass = detail::bonferroni_pass(w.ks_layer1, cfg.ks_family_level);

            const CovMatrix emp = empirical_cov(final_batch, 0, false);
            const CovMatrix emp_centered = empirical_cov(final_batch, 0, true);
            w.cov_frobenius_error = cov_frobenius_error(emp, target);
            w.cov_frobenius_error_centered = cov_frobenius_error(emp_centered, target);
            if (artifacts) artifacts->empirical.push_back(emp);

            stage = "ecf n=" + std::to_string(n);
            const TGrid grid = TGrid::make(target);
            w.ecf_distance = ecf_distance(final_batch, target, grid, threads);

            if (!rep.finite_dimensional_only && k >= 2) {
                stage = "moments n=" + std::to_string(n);
                for (int theta : cfg.theta) {
                    const double bound =
                        holder_moment_bound(theta, cfg.params.depth, cfg.params, l_phi);
                    w.moment_margins.push_back(
                        moment_bound_check(final_batch, 0, 0, 1, theta, bound, pair_dist));
                }
            }
            if (cfg.units >= 2) {
                stage = "cross-unit n=" + std::to_string(n);
                const CrossUnitCorr cu = cross_unit_corr(final_batch);
                w.cross_unit_available = true;
                w.cross_unit_corr = cu.max_abs;
                w.cross_unit_skipped = cu.skipped_pairs;
            }
            rep.widths.push_back(std::move(w));
        }

        if (rep.widths.size() >= 3) {
            stage = "rate";
            std::vector<std::pair<double, double>> pts;
            for (const auto& w : rep.widths)
                pts.emplace_back(static_cast<double>(w.n), w.cov_frobenius_error);
            rep.rate = rate_fit(pts);
            rep.has_rate = true;
        }

        if (cfg.has_segment() && !rep.finite_dimensional_only) {
            stage = "holder";
            const CovMatrix grid_cov =
                segment_kernel(*cfg.segment_from, *cfg.segment_to, cfg.segment_levels, act,
                               cfg.params, cfg.quad, threads);
            const auto paths =
                sample_segment_paths(grid_cov, *cfg.segment_from, *cfg.segment_to,
                                     cfg.segment_levels, cfg.segment_paths, cfg.jitter,
                                     cfg.seed, threads);
            HolderRecord h;
            h.paths = static_cast<int>(paths.size());
            h.levels = cfg.segment_levels;
            double sum = 0.0, sum_sq = 0.0, sum_reg_se = 0.0;
            for (const auto& p : paths) {
                const HolderEstimate est = holder_exponent_estimate(p);
                sum += est.gamma;
                sum_sq += est.gamma * est.gamma;
                sum_reg_se += est.stderr_slope;
                if (h.scale.empty()) {
                    h.scale = est.scale;
                    h.mean_max_increment.assign(est.max_increment.size(), 0.0);
                }
                for (std::size_t i = 0; i < est.max_increment.size(); ++i)
                    h.mean_max_increment[i] += est.max_increment[i];
            }
            const double np = static_cast<double>(paths.size());
            h.mean_gamma = sum / np;
            const double var = std::max(sum_sq / np - h.mean_gamma * h.mean_gamma, 0.0);
            h.se_mean = std::sqrt(var / np);
            h.mean_regression_se = sum_reg_se / np;
            for (auto& v : h.mean_max_increment) v /= np;
            rep.holder = std::move(h);
            rep.has_holder = true;
        }

        stage = "checks";
        {
            CheckRecord psd{"kernel_psd", true, true, ""};
            for (const auto& kmat : rep.kernels) {
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(kmat.m);
                const double min_eig = es.eigenvalues().minCoeff();
                const double tol = 1e-12 * std::max(kmat.m.diagonal().maxCoeff(), 1.0);
                if (min_eig < -tol) {
                    psd.pass = false;
                    psd.detail = "layer " + std::to_string(kmat.layer) + " min eigenvalue " +
                                 std::to_string(min_eig);
                }
            }
            rep.checks.push_back(psd);

            CheckRecord ks{"layer1_ks_family", true, true, ""};
            for (const auto& w : rep.widths)
                if (!w.ks_family_pass) {
                    ks.pass = false;
                    ks.detail = "failed at n=" + std::to_string(w.n);
                }
            rep.checks.push_back(ks);

            CheckRecord mb{"moment_bounds", false, true, ""};
            mb.enabled = !rep.finite_dimensional_only && k >= 2 && !cfg.theta.empty();
            for (const auto& w : rep.widths)
                for (const auto& m : w.moment_margins)
                    if (!m.pass) {
                        mb.pass = false;
                        mb.detail = "theta=" + std::to_string(m.theta) +
                                    " at n=" + std::to_string(w.n);
                    }
            rep.checks.push_back(mb);

            CheckRecord dec{"cov_error_decreasing", rep.widths.size() >= 2, true, ""};
            for (std::size_t i = 0; i + 1 < rep.widths.size(); ++i)
                if (rep.widths[i + 1].cov_frobenius_error >= rep.widths[i].cov_frobenius_error) {
                    dec.pass = false;
                    dec.detail = "no decrease from n=" + std::to_string(rep.widths[i].n);
                }
            rep.checks.push_back(dec);

            CheckRecord slope{"rate_slope_window", rep.has_rate, true, ""};
            if (rep.has_rate) {
                slope.pass =
                    rep.rate.slope >= cfg.rate_window_lo && rep.rate.slope <= cfg.rate_window_hi;
                slope.detail = "slope " + std::to_string(rep.rate.slope);
            }
            rep.checks.push_back(slope);

            CheckRecord ecf{"ecf_final_width", !rep.widths.empty(), true, ""};
            if (!rep.widths.empty()) {
                ecf.pass = rep.widths.back().ecf_distance < cfg.ecf_threshold;
                ecf.detail = "ecf " + std::to_string(rep.widths.back().ecf_distance);
            }
            rep.checks.push_back(ecf);

            CheckRecord cu{"cross_unit_independence", cfg.units >= 2 && !rep.widths.empty(), true,
                           ""};
            if (cu.enabled) {
                cu.pass = rep.widths.back().cross_unit_corr < cfg.cross_unit_threshold;
                cu.detail = "max corr " + std::to_string(rep.widths.back().cross_unit_corr);
            }
            rep.checks.push_back(cu);

            CheckRecord hw{"holder_window", rep.has_holder, true, ""};
            if (rep.has_holder) {
                hw.pass = rep.holder.mean_gamma > cfg.holder_window_lo &&
                          rep.holder.mean_gamma < cfg.holder_window_hi &&
                          rep.holder.se_mean < cfg.holder_se_max;
                hw.detail = "mean gamma " + std::to_string(rep.holder.mean_gamma) + ", se " +
                            std::to_string(rep.holder.se_mean);
            }
            rep.checks.push_back(hw);
        }
    } catch (const std::exception& e) {
        rep.partial = true;
        rep.error_stage = stage;
        rep.error_message = e.what();
    }
    return rep;
}

// Plot-data files derived from a report: rate.csv, marginals.csv, holder.csv
// (only when a path-regularity run happened). Returns the emitted file names.
inline std::vector<std::string> emit_plotdata(const ConvergenceReport& rep,
                                              const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<std::string> files;
    {
        const std::string path = dir + "/rate.csv";
        std::ofstream out(path);
        if (!out) throw IoError("cannot write " + path);
        out.precision(17);
        out << "n,cov_frobenius_error,cov_frobenius_error_centered,ecf_distance\n";
        for (const auto& w : rep.widths)
            out << w.n << ',' << w.cov_frobenius_error << ',' << w.cov_frobenius_error_centered
                << ',' << w.ecf_distance << '\n';
        files.push_back("rate.csv");
    }
    {
        const std::string path = dir + "/marginals.csv";
        std::ofstream out(path);
        if (!out) throw IoError("cannot write " + path);
        out.precision(17);
        out << "n,layer,input,unit,d,p\n";
        for (const auto& w : rep.widths) {
            for (const auto& m : w.ks_layer1)
                out << w.n << ',' << m.layer << ',' << m.input << ',' << m.unit << ',' << m.d
                    << ',' << m.p << '\n';
            for (const auto& m : w.ks_final)
                out << w.n << ',' << m.layer << ',' << m.input << ',' << m.unit << ',' << m.d
                    << ',' << m.p << '\n';
        }
        files.push_back("marginals.csv");
    }
    if (rep.has_holder) {
        const std::string path = dir + "/holder.csv";
        std::ofstream out(path);
        if (!out) throw IoError("cannot write " + path);
        out.precision(17);
        out << "level,scale,mean_max_increment\n";
        for (std::size_t i = 0; i < rep.holder.scale.size(); ++i)
            out << (i + 1) << ',' << rep.holder.scale[i] << ',' << rep.holder.mean_max_increment[i]
                << '\n';
        files.push_back("holder.csv");
    }
    return files;
}

// Writes every artifact of a run and the manifest listing them with content
// hashes. Returns the report path.
inline std::string write_artifacts(const ConvergenceReport& rep, const std::string& dir,
                                   bool include_timestamp,
                                   const detail::WidthArtifacts* artifacts = nullptr) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<std::string> files;

    const std::string report_path = dir + "/report.json";
    {
        std::ofstream out(report_path);
        if (!out) throw IoError("cannot write " + report_path);
        out << report_to_json(rep, include_timestamp).dump(2) << '\n';
        files.push_back("report.json");
    }
    for (const auto& kmat : rep.kernels) {
        const std::string name = "kernel_layer" + std::to_string(kmat.layer) + ".csv";
        write_cov_csv(kmat, dir + "/" + name);
        files.push_back(name);
    }
    if (artifacts) {
        for (std::size_t i = 0; i < artifacts->empirical.size() && i < rep.widths.size(); ++i) {
            const std::string name =
                "empirical_cov_n" + std::to_string(rep.widths[i].n) + ".csv";
            write_cov_csv(artifacts->empirical[i], dir + "/" + name);
            files.push_back(name);
        }
    }
    for (const auto& f : emit_plotdata(rep, dir)) files.push_back(f);

    ordered_json manifest;
    manifest["artifacts"] = ordered_json::array();
    for (const auto& f : files) {
        const std::string bytes = read_file_bytes(dir + "/" + f);
        char hex[24];
        std::snprintf(hex, sizeof(hex), "%016llx",
                      static_cast<unsigned long long>(fnv1a64(bytes)));
        manifest["artifacts"].push_back(
            {{"file", f}, {"bytes", bytes.size()}, {"fnv1a64", hex}});
    }
    manifest["notes"] = ordered_json::array();
    if (!rep.has_holder)
        manifest["notes"].push_back("holder.csv not emitted: no segment configured");
    {
        std::ofstream out(dir + "/manifest.json");
        if (!out) throw IoError("cannot write manifest in " + dir);
        out << manifest.dump(2) << '\n';
    }
    return report_path;
}

} // namespace nngp
