#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "nngp/errors.hpp"

namespace nngp {

// Growth envelope |phi(s)| <= a + b*|s|^m with a,b > 0 and m >= 1.
struct Envelope {
    double a = 1e-6;
    double b = 1.0;
    double m = 1.0;
};

struct EnvelopeCheckResult {
    bool ok = true;
    double worst_ratio = 0.0;   // max |phi(s)| / (a + b|s|^m) over the grid
    double worst_point = 0.0;
};

// Scalar nonlinearity with its declared Lipschitz constant and growth
// envelope. Built-ins carry exact constants; custom tables are piecewise
// linear in their grid with end-slope extrapolation outside, and the user
// declares the Lipschitz constant (absent means envelope-only mode, which
// excludes the activation from path-regularity machinery).
class Activation {
public:
    enum class Kind { identity, relu, tanh, erf, custom_table };

    static Activation identity() {
        return Activation(Kind::identity, 1.0, {1e-6, 1.0, 1.0});
    }
    static Activation relu() {
        Activation a(Kind::relu, 1.0, {1e-6, 1.0, 1.0});
        a.breakpoints_ = {0.0};
        return a;
    }
    static Activation tanh() {
        return Activation(Kind::tanh, 1.0, {1.0, 1e-6, 1.0});
    }
    static Activation erf() {
        return Activation(Kind::erf, 2.0 / std::sqrt(std::numbers::pi), {1.0, 1e-6, 1.0});
    }

    static Activation table(std::vector<double> s, std::vector<double> phi,
                            std::optional<double> lipschitz,
                            Envelope env = {1e-6, 1.0, 1.0}) {
        if (s.size() != phi.size() || s.size() < 2)
            throw std::domain_error("activation table needs >= 2 rows of equal length");
        for (std::size_t i = 0; i + 1 < s.size(); ++i)
            if (!(s[i] < s[i + 1]))
                throw std::domain_error("activation table grid must be strictly increasing");
        for (double v : s)
            if (!std::isfinite(v)) throw std::domain_error("activation table grid not finite");
        for (double v : phi)
            if (!std::isfinite(v)) throw std::domain_error("activation table values not finite");
        Activation a(Kind::custom_table, lipschitz, env);
        a.breakpoints_ = s;   // knots are the only non-smooth points
        a.table_s_ = std::move(s);
        a.table_phi_ = std::move(phi);
        return a;
    }

    // Two-column CSV `s,phi_s` with a required header row.
    static Activation table_from_csv(const std::string& path,
                                     std::optional<double> lipschitz,
                                     Envelope env = {1e-6, 1.0, 1.0}) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open activation table: " + path);
        std::string line;
        if (!std::getline(in, line))
            throw IoError("empty activation table: " + path);
        std::vector<double> s, phi;
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            std::istringstream row(line);
            std::string a, b;
            if (!std::getline(row, a, ',') || !std::getline(row, b))
                throw IoError(path + ":" + std::to_string(lineno) + ": expected `s,phi_s`");
            s.push_back(std::stod(a));
            phi.push_back(std::stod(b));
        }
        return table(std::move(s), std::move(phi), lipschitz, env);
    }

    // Same activation with a replacement growth envelope.
    Activation with_envelope(Envelope env) const {
        Activation a = *this;
        if (!(env.a > 0.0) || !(env.b > 0.0) || !(env.m >= 1.0))
            throw std::domain_error("envelope requires a > 0, b > 0, m >= 1");
        a.envelope_ = env;
        return a;
    }

    Kind kind() const { return kind_; }

    const char* name() const {
        switch (kind_) {
            case Kind::identity: return "identity";
            case Kind::relu: return "relu";
            case Kind::tanh: return "tanh";
            case Kind::erf: return "erf";
            case Kind::custom_table: return "custom-table";
        }
        return "?";
    }

    // Declared Lipschitz constant; empty in envelope-only mode.
    std::optional<double> lipschitz_constant() const { return lipschitz_; }

    double require_lipschitz() const {
        if (!lipschitz_)
            throw std::domain_error(
                "activation has no declared Lipschitz constant (envelope-only mode)");
        return *lipschitz_;
    }

    const Envelope& envelope() const { return envelope_; }

    // Points where the function is not smooth; the quadrature splits its
    // panels here. Empty for analytic activations.
    const std::vector<double>& breakpoints() const { return breakpoints_; }

    double operator()(double s) const {
        if (!std::isfinite(s)) throw std::domain_error("activation input not finite");
        switch (kind_) {
            case Kind::identity: return s;
            case Kind::relu: return s > 0.0 ? s : 0.0;
            case Kind::tanh: return std::tanh(s);
            case Kind::erf: return std::erf(s);
            case Kind::custom_table: return eval_table(s);
        }
        return 0.0;
    }

    EnvelopeCheckResult envelope_check(const std::vector<double>& grid) const {
        if (grid.empty()) throw std::domain_error("envelope_check: empty grid");
        EnvelopeCheckResult r;
        for (double s : grid) {
            const double bound = envelope_.a + envelope_.b * std::pow(std::abs(s), envelope_.m);
            const double ratio = std::abs((*this)(s)) / bound;
            if (ratio > r.worst_ratio) {
                r.worst_ratio = ratio;
                r.worst_point = s;
            }
        }
        r.ok = r.worst_ratio <= 1.0;
        return r;
    }

    // Max difference quotient over adjacent grid points.
    double lipschitz_probe(const std::vector<double>& grid) const {
        if (grid.size() < 2) throw std::domain_error("lipschitz_probe: need >= 2 grid points");
        double worst = 0.0;
        for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
            const double ds = grid[i + 1] - grid[i];
            if (ds == 0.0) throw std::domain_error("lipschitz_probe: duplicate grid points");
            worst = std::max(worst, std::abs((*this)(grid[i + 1]) - (*this)(grid[i])) / std::abs(ds));
        }
        return worst;
    }

private:
    Activation(Kind k, std::optional<double> lip, Envelope env)
        : kind_(k), lipschitz_(lip), envelope_(env) {
        if (!(env.a > 0.0) || !(env.b > 0.0) || !(env.m >= 1.0))
            throw std::domain_error("envelope requires a > 0, b > 0, m >= 1");
        if (lipschitz_ && !(*lipschitz_ >= 0.0))
            throw std::domain_error("Lipschitz constant must be nonnegative");
    }

    double eval_table(double s) const {
        const auto& xs = table_s_;
        const auto& ys = table_phi_;
        const std::size_t n = xs.size();
        if (s <= xs.front()) {
            const double slope = (ys[1] - ys[0]) / (xs[1] - xs[0]);
            return ys.front() + slope * (s - xs.front());
        }
        if (s >= xs.back()) {
            const double slope = (ys[n - 1] - ys[n - 2]) / (xs[n - 1] - xs[n - 2]);
            return ys.back() + slope * (s - xs.back());
        }
        const auto it = std::upper_bound(xs.begin(), xs.end(), s);
        const std::size_t hi = static_cast<std::size_t>(it - xs.begin());
        const std::size_t lo = hi - 1;
        const double t = (s - xs[lo]) / (xs[hi] - xs[lo]);
        return ys[lo] + t * (ys[hi] - ys[lo]);
    }

    Kind kind_;
    std::optional<double> lipschitz_;
    Envelope envelope_;
    std::vector<double> breakpoints_;
    std::vector<double> table_s_;
    std::vector<double> table_phi_;
};

} // namespace nngp
