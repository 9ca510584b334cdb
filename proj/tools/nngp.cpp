// Command-line harness: each subcommand runs one slice of the pipeline from a
// config file. Every run is fully determined by (config, seed); there is no
// wall-clock seeding anywhere.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "nngp/config.hpp"
#include "nngp/gplimit.hpp"
#include "nngp/netsim.hpp"
#include "nngp/report.hpp"
#include "nngp/runner.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    int threads = 0;
    std::string out;
    bool no_timestamp = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment config file")->required();
    cmd->add_option("--threads", args.threads,
                    "worker budget (default: NNGP_THREADS or logical cores)");
    cmd->add_option("--out", args.out, "output directory (overrides config `out`)");
    cmd->add_flag("--no-timestamp", args.no_timestamp, "omit the timestamp field from reports");
}

nngp::ExperimentConfig load(const CommonArgs& args) {
    nngp::ExperimentConfig cfg = nngp::parse_config_file(args.config_path);
    if (!args.out.empty()) cfg.out = args.out;
    return cfg;
}

std::int64_t single_width(const nngp::ExperimentConfig& cfg) {
    return cfg.width.value_or(cfg.widths.front());
}

int run_check(const CommonArgs& args) {
    try {
        nngp::ExperimentConfig cfg = nngp::parse_config_file(args.config_path);
        (void)cfg.make_activation();
        std::puts("config ok");
        return 0;
    } catch (const nngp::ConfigError& e) {
        for (const auto& msg : e.errors()) std::fprintf(stderr, "error: %s\n", msg.c_str());
        return 1;
    }
}

int run_kernel(const CommonArgs& args) {
    const auto cfg = load(args);
    const auto act = cfg.make_activation();
    const auto inputs = nngp::InputSet::from_matrix(cfg.inputs);
    const auto kernels =
        nngp::kernel_at_depth(inputs, act, cfg.params, cfg.quad, nngp::resolve_threads(args.threads));
    std::filesystem::create_directories(cfg.out);
    for (const auto& k : kernels) {
        std::printf("k,layer\n%lld,%d\n", static_cast<long long>(k.size()), k.layer);
        for (Eigen::Index r = 0; r < k.size(); ++r) {
            for (Eigen::Index c = 0; c < k.size(); ++c)
                std::printf("%s%.17g", c ? "," : "", k.m(r, c));
            std::printf("\n");
        }
        nngp::write_cov_csv(k, cfg.out + "/kernel_layer" + std::to_string(k.layer) + ".csv");
    }
    return 0;
}

int run_sample_net(const CommonArgs& args) {
    const auto cfg = load(args);
    const auto act = cfg.make_activation();
    const auto inputs = nngp::InputSet::from_matrix(cfg.inputs);
    nngp::NetSimRequest req;
    req.inputs = &inputs;
    req.params = cfg.params;
    req.act = &act;
    req.width = single_width(cfg);
    req.units = cfg.units;
    req.samples = cfg.samples;
    req.seed = cfg.seed;
    req.threads = nngp::resolve_threads(args.threads);
    req.element_budget = cfg.element_budget;
    const auto batches = nngp::sample_network(req);
    std::filesystem::create_directories(cfg.out);
    for (const auto& b : batches) {
        const std::string base =
            cfg.out + "/net_layer" + std::to_string(b.layer) + "_n" + std::to_string(b.width);
        b.save(base + ".bin");
        if (b.samples * b.units * b.k <= 10000) b.to_csv(base + ".csv");
        std::printf("wrote %s.bin (S=%lld U=%lld k=%lld)\n", base.c_str(),
                    static_cast<long long>(b.samples), static_cast<long long>(b.units),
                    static_cast<long long>(b.k));
    }
    return 0;
}

int run_sample_gp(const CommonArgs& args) {
    const auto cfg = load(args);
    const auto act = cfg.make_activation();
    const auto inputs = nngp::InputSet::from_matrix(cfg.inputs);
    const int threads = nngp::resolve_threads(args.threads);
    const auto kernels = nngp::kernel_at_depth(inputs, act, cfg.params, cfg.quad, threads);
    nngp::GpSampleRequest req;
    req.cov = &kernels.back();
    req.units = cfg.units;
    req.samples = cfg.samples;
    req.jitter = cfg.jitter;
    req.seed = cfg.seed;
    req.threads = threads;
    const auto batch = nngp::sample_gp(req);
    std::filesystem::create_directories(cfg.out);
    const std::string base = cfg.out + "/gp_layer" + std::to_string(batch.layer);
    batch.save(base + ".bin");
    if (batch.samples * batch.units * batch.k <= 10000) batch.to_csv(base + ".csv");
    std::printf("wrote %s.bin (S=%lld U=%lld k=%lld)\n", base.c_str(),
                static_cast<long long>(batch.samples), static_cast<long long>(batch.units),
                static_cast<long long>(batch.k));
    return 0;
}

int run_converge(const CommonArgs& args) {
    const auto cfg = load(args);
    nngp::RunOptions opt;
    opt.threads = args.threads;
    opt.no_timestamp = args.no_timestamp;
    nngp::detail::WidthArtifacts artifacts;
    const auto report = nngp::run_experiment(cfg, opt, &artifacts);
    const std::string path =
        nngp::write_artifacts(report, cfg.out, !args.no_timestamp, &artifacts);
    for (const auto& c : report.checks)
        if (c.enabled)
            std::printf("%-24s %s%s%s\n", c.name.c_str(), c.pass ? "pass" : "FAIL",
                        c.detail.empty() ? "" : "  ", c.detail.c_str());
    if (report.partial)
        std::fprintf(stderr, "run aborted at stage '%s': %s\n", report.error_stage.c_str(),
                     report.error_message.c_str());
    std::printf("report: %s\n", path.c_str());
    return report.pass() ? 0 : 1;
}

int run_holder(const CommonArgs& args) {
    auto cfg = load(args);
    if (!cfg.has_segment()) {
        std::fprintf(stderr, "error: holder requires segment_from/segment_to in the config\n");
        return 1;
    }
    const auto act = cfg.make_activation();
    if (!act.lipschitz_constant()) {
        std::fprintf(stderr,
                     "error: activation has no Lipschitz constant; path-regularity runs are "
                     "limited to Lipschitz activations\n");
        return 1;
    }
    const int threads = nngp::resolve_threads(args.threads);
    nngp::ConvergenceReport rep;
    rep.seed = cfg.seed;
    rep.config_echo = nngp::emit_config(cfg);
    if (!args.no_timestamp) rep.timestamp = nngp::detail::rfc3339_now();
    try {
        const auto grid_cov =
            nngp::segment_kernel(*cfg.segment_from, *cfg.segment_to, cfg.segment_levels, act,
                                 cfg.params, cfg.quad, threads);
        const auto paths = nngp::sample_segment_paths(grid_cov, *cfg.segment_from,
                                                      *cfg.segment_to, cfg.segment_levels,
                                                      cfg.segment_paths, cfg.jitter, cfg.seed,
                                                      threads);
        nngp::HolderRecord h;
        h.paths = static_cast<int>(paths.size());
        h.levels = cfg.segment_levels;
        double sum = 0.0, sum_sq = 0.0, reg = 0.0;
        for (const auto& p : paths) {
            const auto est = nngp::holder_exponent_estimate(p);
            sum += est.gamma;
            sum_sq += est.gamma * est.gamma;
            reg += est.stderr_slope;
            if (h.scale.empty()) {
                h.scale = est.scale;
                h.mean_max_increment.assign(est.max_increment.size(), 0.0);
            }
            for (std::size_t i = 0; i < est.max_increment.size(); ++i)
                h.mean_max_increment[i] += est.max_increment[i];
        }
        const double np = static_cast<double>(paths.size());
        h.mean_gamma = sum / np;
        h.se_mean = std::sqrt(std::max(sum_sq / np - h.mean_gamma * h.mean_gamma, 0.0) / np);
        h.mean_regression_se = reg / np;
        for (auto& v : h.mean_max_increment) v /= np;
        rep.holder = h;
        rep.has_holder = true;
        nngp::CheckRecord hw{"holder_window", true, true, ""};
        hw.pass = h.mean_gamma > cfg.holder_window_lo && h.mean_gamma < cfg.holder_window_hi &&
                  h.se_mean < cfg.holder_se_max;
        hw.detail = "mean gamma " + std::to_string(h.mean_gamma);
        rep.checks.push_back(hw);
        std::printf("mean gamma %.4f (se %.4f) over %d paths, %d levels\n", h.mean_gamma,
                    h.se_mean, h.paths, h.levels);
    } catch (const std::exception& e) {
        rep.partial = true;
        rep.error_stage = "holder";
        rep.error_message = e.what();
        std::fprintf(stderr, "holder run failed: %s\n", e.what());
    }
    nngp::write_artifacts(rep, cfg.out, !args.no_timestamp);
    return rep.pass() ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"finite-width deep Gaussian networks, their wide limit, and convergence "
                 "diagnostics"};
    app.require_subcommand(1);

    CommonArgs args;
    auto* check = app.add_subcommand("check", "validate a config and exit");
    auto* kernel = app.add_subcommand("kernel", "print the layerwise covariance matrices");
    auto* net = app.add_subcommand("sample-net", "sample the finite-width network at one width");
    auto* gp = app.add_subcommand("sample-gp", "sample the limiting Gaussian process");
    auto* conv = app.add_subcommand("converge", "full width-ladder convergence run");
    auto* holder = app.add_subcommand("holder", "path-regularity run on the configured segment");
    for (auto* cmd : {check, kernel, net, gp, conv, holder}) add_common(cmd, args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (check->parsed()) return run_check(args);
        if (kernel->parsed()) return run_kernel(args);
        if (net->parsed()) return run_sample_net(args);
        if (gp->parsed()) return run_sample_gp(args);
        if (conv->parsed()) return run_converge(args);
        if (holder->parsed()) return run_holder(args);
    } catch (const nngp::ConfigError& e) {
        for (const auto& msg : e.errors()) std::fprintf(stderr, "error: %s\n", msg.c_str());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
