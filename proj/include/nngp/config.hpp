#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nngp/activation.hpp"
#include "nngp/kernel.hpp"
#include "nngp/quadrature.hpp"

namespace nngp {

// Carries every validation problem found in a config, not just the first.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> errors)
        : std::runtime_error(join(errors)), errors_(std::move(errors)) {}
    const std::vector<std::string>& errors() const { return errors_; }

private:
    static std::string join(const std::vector<std::string>& es) {
        std::string all = "invalid config:";
        for (const auto& e : es) all += "\n  - " + e;
        return all;
    }
    std::vector<std::string> errors_;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    NetworkParams params;
    std::string activation = "relu"; // identity|relu|tanh|erf|table:PATH
    std::optional<double> lipschitz; // required for table activations unless envelope-only
    std::optional<Envelope> envelope_override;
    Eigen::MatrixXd inputs;          // I x k, columns are inputs
    std::string inputs_csv;          // non-empty when inputs came from a file
    std::vector<std::int64_t> widths = {8, 64, 512, 4096};
    std::int64_t samples = 10000;
    std::int64_t units = 1;
    std::vector<int> theta = {1, 2};
    QuadratureSpec quad;
    double jitter = 1e-10;
    std::optional<Eigen::VectorXd> segment_from;
    std::optional<Eigen::VectorXd> segment_to;
    int segment_levels = 10;
    std::int64_t segment_paths = 100;
    std::string out = "out";
    double ecf_threshold = 0.05;
    double cross_unit_threshold = 0.05;
    double rate_window_lo = -0.7, rate_window_hi = -0.3;
    double holder_window_lo = 0.7, holder_window_hi = 1.05;
    double holder_se_max = 0.05;
    double ks_family_level = 0.01;
    std::uint64_t element_budget = (1ull << 46);
    std::optional<std::int64_t> width; // single-width subcommands; defaults to widths.front()

    bool has_segment() const { return segment_from.has_value() && segment_to.has_value(); }

    Activation make_activation() const {
        auto with_env = [&](Activation a) {
            return envelope_override ? a.with_envelope(*envelope_override) : a;
        };
        if (activation == "identity") return with_env(Activation::identity());
        if (activation == "relu") return with_env(Activation::relu());
        if (activation == "tanh") return with_env(Activation::tanh());
        if (activation == "erf") return with_env(Activation::erf());
        if (activation.rfind("table:", 0) == 0)
            return Activation::table_from_csv(activation.substr(6), lipschitz,
                                              envelope_override.value_or(Envelope{}));
        throw std::domain_error("unknown activation: " + activation);
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) out.push_back(trim(item));
    if (!s.empty() && s.back() == sep) out.push_back("");
    return out;
}

inline int edit_distance(const std::string& a, const std::string& b) {
    std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = static_cast<int>(i);
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys = {
        "seed",           "depth",          "sigma_w_sq",    "sigma_b_sq",
        "activation",     "lipschitz",      "envelope",      "inputs",
        "inputs_csv",     "widths",         "samples",       "units",
        "theta",          "quad_nodes",     "variance_floor", "jitter",
        "segment_from",   "segment_to",     "segment_levels", "segment_paths",
        "out",            "ecf_threshold",  "cross_unit_threshold",
        "rate_window",    "holder_window",  "holder_se_max", "ks_family_level",
        "element_budget", "width"};
    return keys;
}

inline std::string nearest_key(const std::string& key) {
    int best = 1 << 30;
    std::string who;
    for (const auto& k : known_keys()) {
        const int d = edit_distance(key, k);
        if (d < best) {
            best = d;
            who = k;
        }
    }
    return who;
}

template <typename T>
bool parse_number(const std::string& text, T& out) {
    std::istringstream in(text);
    in >> out;
    return static_cast<bool>(in) && in.eof();
}

inline bool parse_vector(const std::string& text, Eigen::VectorXd& out) {
    const auto parts = split(text, ',');
    out.resize(static_cast<Eigen::Index>(parts.size()));
    for (std::size_t i = 0; i < parts.size(); ++i)
        if (!parse_number(parts[i], out[static_cast<Eigen::Index>(i)])) return false;
    return out.size() > 0;
}

// Inputs CSV: header row, then one input vector per row.
inline Eigen::MatrixXd load_inputs_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open inputs csv: " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty inputs csv: " + path);
    std::vector<Eigen::VectorXd> rows;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty()) continue;
        Eigen::VectorXd v;
        if (!parse_vector(line, v)) throw IoError("bad row in inputs csv: " + path);
        if (!rows.empty() && v.size() != rows.front().size())
            throw IoError("ragged rows in inputs csv: " + path);
        rows.push_back(std::move(v));
    }
    if (rows.empty()) throw IoError("inputs csv has no data rows: " + path);
    Eigen::MatrixXd x(rows.front().size(), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) x.col(static_cast<Eigen::Index>(r)) = rows[r];
    return x;
}

} // namespace detail

// Key-value config parser. Lines are `key = value`; `#` starts a comment.
// Collects every error before giving up.
inline ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::vector<std::string> errors;
    bool seen_seed = false, seen_inputs = false;

    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            errors.push_back("line " + std::to_string(lineno) + ": expected `key = value`");
            continue;
        }
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        auto bad = [&](const std::string& why) {
            errors.push_back("key '" + key + "': " + why);
        };

        if (key == "seed") {
            if (!detail::parse_number(value, cfg.seed)) bad("expected an unsigned integer");
            else seen_seed = true;
        } else if (key == "depth") {
            if (!detail::parse_number(value, cfg.params.depth)) bad("expected an integer");
        } else if (key == "sigma_w_sq") {
            if (!detail::parse_number(value, cfg.params.sigma_w_sq)) bad("expected a real");
        } else if (key == "sigma_b_sq") {
            if (!detail::parse_number(value, cfg.params.sigma_b_sq)) bad("expected a real");
        } else if (key == "activation") {
            cfg.activation = value;
        } else if (key == "lipschitz") {
            double v;
            if (!detail::parse_number(value, v)) bad("expected a real");
            else cfg.lipschitz = v;
        } else if (key == "envelope") {
            Eigen::VectorXd v;
            if (!detail::parse_vector(value, v) || v.size() != 3) bad("expected `a,b,m`");
            else cfg.envelope_override = Envelope{v[0], v[1], v[2]};
        } else if (key == "inputs") {
            const auto cols = detail::split(value, ';');
            std::vector<Eigen::VectorXd> vs;
            bool ok = !cols.empty();
            for (const auto& c : cols) {
                Eigen::VectorXd v;
                if (!detail::parse_vector(c, v) ||
                    (!vs.empty() && v.size() != vs.front().size())) {
                    ok = false;
                    break;
                }
                vs.push_back(std::move(v));
            }
            if (!ok) {
                bad("expected `x1,..,xI ; y1,..,yI ; ...` with equal lengths");
            } else {
                cfg.inputs.resize(vs.front().size(), static_cast<Eigen::Index>(vs.size()));
                for (std::size_t c = 0; c < vs.size(); ++c)
                    cfg.inputs.col(static_cast<Eigen::Index>(c)) = vs[c];
                seen_inputs = true;
            }
        } else if (key == "inputs_csv") {
            if (!std::filesystem::exists(value)) {
                bad("inputs csv does not exist: " + value);
            } else {
                try {
                    cfg.inputs = detail::load_inputs_csv(value);
                    cfg.inputs_csv = value;
                    seen_inputs = true;
                } catch (const std::exception& e) {
                    bad(e.what());
                }
            }
        } else if (key == "widths") {
            cfg.widths.clear();
            for (const auto& p : detail::split(value, ',')) {
                std::int64_t v;
                if (!detail::parse_number(p, v)) {
                    bad("expected a comma list of integers");
                    cfg.widths.clear();
                    break;
                }
                cfg.widths.push_back(v);
            }
        } else if (key == "samples") {
            if (!detail::parse_number(value, cfg.samples)) bad("expected an integer");
        } else if (key == "units") {
            if (!detail::parse_number(value, cfg.units)) bad("expected an integer");
        } else if (key == "theta") {
            cfg.theta.clear();
            for (const auto& p : detail::split(value, ',')) {
                int v;
                if (!detail::parse_number(p, v)) {
                    bad("expected a comma list of integers");
                    cfg.theta.clear();
                    break;
                }
                cfg.theta.push_back(v);
            }
        } else if (key == "quad_nodes") {
            if (!detail::parse_number(value, cfg.quad.nodes_per_axis)) bad("expected an integer");
        } else if (key == "variance_floor") {
            if (!detail::parse_number(value, cfg.quad.degenerate_variance_floor))
                bad("expected a real");
        } else if (key == "jitter") {
            if (!detail::parse_number(value, cfg.jitter)) bad("expected a real");
        } else if (key == "segment_from") {
            Eigen::VectorXd v;
            if (!detail::parse_vector(value, v)) bad("expected a comma list of reals");
            else cfg.segment_from = std::move(v);
        } else if (key == "segment_to") {
            Eigen::VectorXd v;
            if (!detail::parse_vector(value, v)) bad("expected a comma list of reals");
            else cfg.segment_to = std::move(v);
        } else if (key == "segment_levels") {
            if (!detail::parse_number(value, cfg.segment_levels)) bad("expected an integer");
        } else if (key == "segment_paths") {
            if (!detail::parse_number(value, cfg.segment_paths)) bad("expected an integer");
        } else if (key == "out") {
            cfg.out = value;
        } else if (key == "ecf_threshold") {
            if (!detail::parse_number(value, cfg.ecf_threshold)) bad("expected a real");
        } else if (key == "cross_unit_threshold") {
            if (!detail::parse_number(value, cfg.cross_unit_threshold)) bad("expected a real");
        } else if (key == "rate_window") {
            Eigen::VectorXd v;
            if (!detail::parse_vector(value, v) || v.size() != 2) bad("expected `lo,hi`");
            else {
                cfg.rate_window_lo = v[0];
                cfg.rate_window_hi = v[1];
            }
        } else if (key == "holder_window") {
            Eigen::VectorXd v;
            if (!detail::parse_vector(value, v) || v.size() != 2) bad("expected `lo,hi`");
            else {
                cfg.holder_window_lo = v[0];
                cfg.holder_window_hi = v[1];
            }
        } else if (key == "holder_se_max") {
            if (!detail::parse_number(value, cfg.holder_se_max)) bad("expected a real");
        } else if (key == "ks_family_level") {
            if (!detail::parse_number(value, cfg.ks_family_level)) bad("expected a real");
        } else if (key == "element_budget") {
            if (!detail::parse_number(value, cfg.element_budget)) bad("expected an unsigned integer");
        } else if (key == "width") {
            std::int64_t v;
            if (!detail::parse_number(value, v)) bad("expected an integer");
            else cfg.width = v;
        } else {
            errors.push_back("unknown key '" + key + "' (did you mean '" +
                             detail::nearest_key(key) + "'?)");
        }
    }

    if (!seen_seed) errors.push_back("missing required key: seed (no wall-clock default)");
    if (!seen_inputs) errors.push_back("missing required key: inputs or inputs_csv");

    if (cfg.params.depth < 1) errors.push_back("depth must be >= 1");
    if (!(cfg.params.sigma_w_sq > 0.0)) errors.push_back("sigma_w_sq must be > 0");
    if (!(cfg.params.sigma_b_sq >= 0.0)) errors.push_back("sigma_b_sq must be >= 0");
    if (cfg.widths.empty()) errors.push_back("widths must not be empty");
    for (std::size_t i = 0; i + 1 < cfg.widths.size(); ++i)
        if (cfg.widths[i] >= cfg.widths[i + 1]) {
            errors.push_back("widths must be strictly increasing");
            break;
        }
    for (std::int64_t w : cfg.widths)
        if (w < 1) {
            errors.push_back("widths must be >= 1");
            break;
        }
    if (cfg.samples < 2) errors.push_back("samples must be >= 2");
    if (cfg.units < 1) errors.push_back("units must be >= 1");
    for (int t : cfg.theta)
        if (t < 1 || t > 4) {
            errors.push_back("theta values must be in 1..4");
            break;
        }
    if (cfg.quad.nodes_per_axis < 2) errors.push_back("quad_nodes must be >= 2");
    if (cfg.quad.degenerate_variance_floor < 0.0) errors.push_back("variance_floor must be >= 0");
    if (cfg.jitter < 0.0) errors.push_back("jitter must be >= 0");
    if (cfg.segment_from.has_value() != cfg.segment_to.has_value())
        errors.push_back("segment_from and segment_to must be given together");
    if (cfg.has_segment()) {
        if (cfg.segment_from->size() != cfg.segment_to->size())
            errors.push_back("segment endpoints have different dimensions");
        else if (*cfg.segment_from == *cfg.segment_to)
            errors.push_back("segment endpoints must differ");
        if (seen_inputs && cfg.segment_from->size() != cfg.inputs.rows())
            errors.push_back("segment endpoint dimension does not match inputs");
        if (cfg.segment_levels < 4) errors.push_back("segment_levels must be >= 4");
        if (cfg.segment_paths < 1) errors.push_back("segment_paths must be >= 1");
    }
    if (seen_inputs) {
        if (!cfg.inputs.allFinite()) errors.push_back("inputs must be finite");
        for (Eigen::Index a = 0; a < cfg.inputs.cols(); ++a)
            for (Eigen::Index b = a + 1; b < cfg.inputs.cols(); ++b)
                if (cfg.inputs.col(a) == cfg.inputs.col(b)) {
                    errors.push_back("inputs must be pairwise distinct");
                    a = cfg.inputs.cols();
                    break;
                }
    }
    if (cfg.activation.rfind("table:", 0) == 0) {
        const std::string path = cfg.activation.substr(6);
        if (!std::filesystem::exists(path))
            errors.push_back("activation table does not exist: " + path);
    } else if (cfg.activation != "identity" && cfg.activation != "relu" &&
               cfg.activation != "tanh" && cfg.activation != "erf") {
        errors.push_back("unknown activation '" + cfg.activation +
                         "' (identity|relu|tanh|erf|table:PATH)");
    }
    if (cfg.width && *cfg.width < 1) errors.push_back("width must be >= 1");

    if (!errors.empty()) throw ConfigError(std::move(errors));
    return cfg;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

namespace detail {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace detail

// Canonical text form; parse(emit(cfg)) reproduces cfg.
inline std::string emit_config(const ExperimentConfig& cfg) {
    std::ostringstream out;
    out << "seed = " << cfg.seed << '\n';
    out << "depth = " << cfg.params.depth << '\n';
    out << "sigma_w_sq = " << detail::fmt(cfg.params.sigma_w_sq) << '\n';
    out << "sigma_b_sq = " << detail::fmt(cfg.params.sigma_b_sq) << '\n';
    out << "activation = " << cfg.activation << '\n';
    if (cfg.lipschitz) out << "lipschitz = " << detail::fmt(*cfg.lipschitz) << '\n';
    if (cfg.envelope_override)
        out << "envelope = " << detail::fmt(cfg.envelope_override->a) << ','
            << detail::fmt(cfg.envelope_override->b) << ','
            << detail::fmt(cfg.envelope_override->m) << '\n';
    if (!cfg.inputs_csv.empty()) {
        out << "inputs_csv = " << cfg.inputs_csv << '\n';
    } else {
        out << "inputs = ";
        for (Eigen::Index c = 0; c < cfg.inputs.cols(); ++c) {
            if (c > 0) out << " ; ";
            for (Eigen::Index r = 0; r < cfg.inputs.rows(); ++r) {
                if (r > 0) out << ',';
                out << detail::fmt(cfg.inputs(r, c));
            }
        }
        out << '\n';
    }
    out << "widths = ";
    for (std::size_t i = 0; i < cfg.widths.size(); ++i)
        out << (i ? "," : "") << cfg.widths[i];
    out << '\n';
    out << "samples = " << cfg.samples << '\n';
    out << "units = " << cfg.units << '\n';
    out << "theta = ";
    for (std::size_t i = 0; i < cfg.theta.size(); ++i) out << (i ? "," : "") << cfg.theta[i];
    out << '\n';
    out << "quad_nodes = " << cfg.quad.nodes_per_axis << '\n';
    out << "variance_floor = " << detail::fmt(cfg.quad.degenerate_variance_floor) << '\n';
    out << "jitter = " << detail::fmt(cfg.jitter) << '\n';
    if (cfg.has_segment()) {
        out << "segment_from = ";
        for (Eigen::Index i = 0; i < cfg.segment_from->size(); ++i)
            out << (i ? "," : "") << detail::fmt((*cfg.segment_from)[i]);
        out << '\n';
        out << "segment_to = ";
        for (Eigen::Index i = 0; i < cfg.segment_to->size(); ++i)
            out << (i ? "," : "") << detail::fmt((*cfg.segment_to)[i]);
        out << '\n';
        out << "segment_levels = " << cfg.segment_levels << '\n';
        out << "segment_paths = " << cfg.segment_paths << '\n';
    }
    out << "out = " << cfg.out << '\n';
    out << "ecf_threshold = " << detail::fmt(cfg.ecf_threshold) << '\n';
    out << "cross_unit_threshold = " << detail::fmt(cfg.cross_unit_threshold) << '\n';
    out << "rate_window = " << detail::fmt(cfg.rate_window_lo) << ','
        << detail::fmt(cfg.rate_window_hi) << '\n';
    out << "holder_window = " << detail::fmt(cfg.holder_window_lo) << ','
        << detail::fmt(cfg.holder_window_hi) << '\n';
    out << "holder_se_max = " << detail::fmt(cfg.holder_se_max) << '\n';
    out << "ks_family_level = " << detail::fmt(cfg.ks_family_level) << '\n';
    out << "element_budget = " << cfg.element_budget << '\n';
    if (cfg.width) out << "width = " << *cfg.width << '\n';
    return out.str();
}

} // namespace nngp
