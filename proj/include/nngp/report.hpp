#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nngp/diagnostics.hpp"
#include "nngp/errors.hpp"
#include "nngp/gplimit.hpp"
#include "nngp/kernel.hpp"

namespace nngp {

using ordered_json = nlohmann::ordered_json;

struct MarginalKs {
    int layer = 0;
    int input = 0;
    int unit = 0;
    double d = 0.0;
    double p = 1.0;
};

struct WidthRecord {
    std::int64_t n = 0;
    double cov_frobenius_error = 0.0;
    double cov_frobenius_error_centered = 0.0;
    double ecf_distance = 0.0;
    std::vector<MarginalKs> ks_layer1;
    std::vector<MarginalKs> ks_final;
    bool ks_family_pass = true;
    std::vector<MomentMargin> moment_margins;
    bool cross_unit_available = false;
    double cross_unit_corr = 0.0;
    int cross_unit_skipped = 0;
};

struct HolderRecord {
    double mean_gamma = 0.0;
    double se_mean = 0.0;      // spread of per-path slopes / sqrt(paths)
    double mean_regression_se = 0.0;
    int paths = 0;
    int levels = 0;
    std::vector<double> scale;
    std::vector<double> mean_max_increment;
};

struct CheckRecord {
    std::string name;
    bool enabled = true;
    bool pass = true;
    std::string detail;
};

struct ConvergenceReport {
    std::string schema = "nngp-report/1";
    std::string timestamp; // RFC3339; omitted from JSON when empty
    std::uint64_t seed = 0;
    std::string config_echo;
    bool finite_dimensional_only = false; // activation without a Lipschitz constant
    std::vector<CovMatrix> kernels;
    double quad_refinement_delta = -1.0; // max |entry change| doubling nodes; -1 = not computed
    std::vector<WidthRecord> widths;
    bool has_rate = false;
    RateFit rate;
    bool has_holder = false;
    HolderRecord holder;
    std::vector<CheckRecord> checks;
    bool partial = false;
    std::string error_stage;
    std::string error_message;

    bool pass() const {
        if (partial) return false;
        for (const auto& c : checks)
            if (c.enabled && !c.pass) return false;
        return true;
    }
};

namespace detail {

inline ordered_json matrix_json(const Eigen::MatrixXd& m) {
    ordered_json rows = ordered_json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        ordered_json row = ordered_json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string rfc3339_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

} // namespace detail

inline ordered_json report_to_json(const ConvergenceReport& rep, bool include_timestamp = true) {
    ordered_json j;
    j["schema"] = rep.schema;
    if (include_timestamp && !rep.timestamp.empty()) j["timestamp"] = rep.timestamp;
    j["seed"] = rep.seed;
    j["config"] = rep.config_echo;
    j["finite_dimensional_only"] = rep.finite_dimensional_only;
    ordered_json kernels = ordered_json::array();
    for (const auto& k : rep.kernels) {
        ordered_json kk;
        kk["layer"] = k.layer;
        kk["k"] = k.size();
        kk["matrix"] = detail::matrix_json(k.m);
        kernels.push_back(std::move(kk));
    }
    j["kernels"] = std::move(kernels);
    if (rep.quad_refinement_delta >= 0.0)
        j["quad_refinement_delta"] = rep.quad_refinement_delta;
    ordered_json widths = ordered_json::array();
    for (const auto& w : rep.widths) {
        ordered_json wj;
        wj["n"] = w.n;
        wj["cov_frobenius_error"] = w.cov_frobenius_error;
        wj["cov_frobenius_error_centered"] = w.cov_frobenius_error_centered;
        wj["ecf_distance"] = w.ecf_distance;
        auto ks_json = [](const std::vector<MarginalKs>& list) {
            ordered_json arr = ordered_json::array();
            for (const auto& m : list) {
                ordered_json e;
                e["layer"] = m.layer;
                e["input"] = m.input;
                e["unit"] = m.unit;
                e["d"] = m.d;
                e["p"] = m.p;
                arr.push_back(std::move(e));
            }
            return arr;
        };
        wj["ks_layer1"] = ks_json(w.ks_layer1);
        wj["ks_final"] = ks_json(w.ks_final);
        wj["ks_family_pass"] = w.ks_family_pass;
        ordered_json margins = ordered_json::array();
        for (const auto& m : w.moment_margins) {
            ordered_json e;
            e["theta"] = m.theta;
            e["empirical"] = m.empirical;
            e["se"] = m.se;
            e["bound"] = m.bound;
            e["pass"] = m.pass;
            margins.push_back(std::move(e));
        }
        wj["moment_margins"] = std::move(margins);
        if (w.cross_unit_available) {
            wj["cross_unit_corr"] = w.cross_unit_corr;
            wj["cross_unit_skipped"] = w.cross_unit_skipped;
        }
        widths.push_back(std::move(wj));
    }
    j["widths"] = std::move(widths);
    if (rep.has_rate) {
        j["rate"] = {{"slope", rep.rate.slope}, {"stderr", rep.rate.stderr_slope}};
    }
    if (rep.has_holder) {
        ordered_json h;
        h["mean_gamma"] = rep.holder.mean_gamma;
        h["se_mean"] = rep.holder.se_mean;
        h["mean_regression_se"] = rep.holder.mean_regression_se;
        h["paths"] = rep.holder.paths;
        h["levels"] = rep.holder.levels;
        h["scale"] = rep.holder.scale;
        h["mean_max_increment"] = rep.holder.mean_max_increment;
        j["holder"] = std::move(h);
    }
    ordered_json checks = ordered_json::array();
    for (const auto& c : rep.checks) {
        ordered_json e;
        e["name"] = c.name;
        e["enabled"] = c.enabled;
        e["pass"] = c.pass;
        if (!c.detail.empty()) e["detail"] = c.detail;
        checks.push_back(std::move(e));
    }
    j["checks"] = std::move(checks);
    if (rep.partial) {
        j["partial"] = true;
        j["error"] = {{"stage", rep.error_stage}, {"message", rep.error_message}};
    }
    j["pass"] = rep.pass();
    return j;
}

// Covariance CSV: `k,layer` header line, the two values, then the rows.
inline void write_cov_csv(const CovMatrix& cov, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write kernel csv: " + path);
    out.precision(17);
    out << "k,layer\n" << cov.size() << ',' << cov.layer << '\n';
    for (Eigen::Index r = 0; r < cov.size(); ++r) {
        for (Eigen::Index c = 0; c < cov.size(); ++c) {
            if (c > 0) out << ',';
            out << cov.m(r, c);
        }
        out << '\n';
    }
}

inline CovMatrix read_cov_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open kernel csv: " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("k,layer", 0) != 0)
        throw IoError("bad kernel csv header: " + path);
    if (!std::getline(in, line)) throw IoError("truncated kernel csv: " + path);
    Eigen::Index k = 0;
    int layer = 0;
    {
        std::istringstream hdr(line);
        char comma;
        hdr >> k >> comma >> layer;
        if (!hdr || k < 1) throw IoError("bad kernel csv size line: " + path);
    }
    CovMatrix cov;
    cov.layer = layer;
    cov.m.resize(k, k);
    for (Eigen::Index r = 0; r < k; ++r) {
        if (!std::getline(in, line)) throw IoError("truncated kernel csv: " + path);
        std::istringstream row(line);
        std::string cell;
        for (Eigen::Index c = 0; c < k; ++c) {
            if (!std::getline(row, cell, ',')) throw IoError("short row in kernel csv: " + path);
            cov.m(r, c) = std::stod(cell);
        }
    }
    return cov;
}

inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read back artifact: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

} // namespace nngp
