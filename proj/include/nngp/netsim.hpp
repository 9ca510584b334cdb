#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nngp/activation.hpp"
#include "nngp/errors.hpp"
#include "nngp/kernel.hpp"
#include "nngp/linalg.hpp"
#include "nngp/rng.hpp"
#include "nngp/threads.hpp"

namespace nngp {

inline constexpr std::uint64_t kBatchMagic = 0x4354414250474E4Eull; // "NNGPBATC"
inline constexpr std::uint64_t kBatchVersion = 1;

// S x U x k tensor of sampled process values at one layer, with seed
// provenance. Values are stored row-major in (sample, unit, input) order.
struct SampleBatch {
    std::int64_t samples = 0;
    std::int64_t units = 0;
    std::int64_t k = 0;
    int layer = 0;
    std::int64_t width = 0;
    std::uint64_t seed = 0;
    std::string activation_name;
    NetworkParams params;
    std::vector<double> values;

    double& at(std::int64_t s, std::int64_t u, std::int64_t r) {
        return values[static_cast<std::size_t>((s * units + u) * k + r)];
    }
    double at(std::int64_t s, std::int64_t u, std::int64_t r) const {
        return values[static_cast<std::size_t>((s * units + u) * k + r)];
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write batch file: " + path);
        const std::uint64_t header[8] = {kBatchMagic,
                                         kBatchVersion,
                                         static_cast<std::uint64_t>(samples),
                                         static_cast<std::uint64_t>(units),
                                         static_cast<std::uint64_t>(k),
                                         static_cast<std::uint64_t>(layer),
                                         static_cast<std::uint64_t>(width),
                                         seed};
        out.write(reinterpret_cast<const char*>(header), sizeof(header));
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size() * sizeof(double)));
        if (!out) throw IoError("short write on batch file: " + path);
    }

    static SampleBatch load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open batch file: " + path);
        std::uint64_t header[8];
        in.read(reinterpret_cast<char*>(header), sizeof(header));
        if (!in || header[0] != kBatchMagic)
            throw IoError("not a sample batch file: " + path);
        if (header[1] != kBatchVersion)
            throw IoError("unsupported batch version in " + path);
        SampleBatch b;
        b.samples = static_cast<std::int64_t>(header[2]);
        b.units = static_cast<std::int64_t>(header[3]);
        b.k = static_cast<std::int64_t>(header[4]);
        b.layer = static_cast<int>(header[5]);
        b.width = static_cast<std::int64_t>(header[6]);
        b.seed = header[7];
        b.values.resize(static_cast<std::size_t>(b.samples * b.units * b.k));
        in.read(reinterpret_cast<char*>(b.values.data()),
                static_cast<std::streamsize>(b.values.size() * sizeof(double)));
        if (!in) throw IoError("truncated batch file: " + path);
        return b;
    }

    void to_csv(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot write batch csv: " + path);
        out << "sample,unit,input,value\n";
        out.precision(17);
        for (std::int64_t s = 0; s < samples; ++s)
            for (std::int64_t u = 0; u < units; ++u)
                for (std::int64_t r = 0; r < k; ++r)
                    out << s << ',' << u << ',' << r << ',' << at(s, u, r) << '\n';
    }
};

struct NetSimRequest {
    const InputSet* inputs = nullptr;
    NetworkParams params;
    const Activation* act = nullptr;
    std::int64_t width = 1;   // hidden width n, shared by all hidden layers
    std::int64_t units = 1;   // tracked units U per layer
    std::int64_t samples = 1; // independent weight realizations S
    std::uint64_t seed = 0;
    int threads = 1;
    // guard on n*U*S*k*L; the proxy the request is checked against
    std::uint64_t element_budget = (1ull << 46);

    void validate() const {
        if (!inputs || !act) throw std::domain_error("netsim request missing inputs/activation");
        params.validate();
        if (width < 1) throw std::domain_error("width must be >= 1");
        if (units < 1) throw std::domain_error("units must be >= 1");
        if (samples < 1) throw std::domain_error("samples must be >= 1");
        const long double load = static_cast<long double>(width) * units * samples *
                                 inputs->count() * params.depth;
        if (load > static_cast<long double>(element_budget))
            throw ResourceError("requested n*U*S*k*L = " + std::to_string(static_cast<double>(load)) +
                                " exceeds element budget " + std::to_string(element_budget));
    }
};

namespace detail {

// Draw the first layer for one realization: unit i gets I weights and a bias
// from its stream; all inputs share the draw.
inline void draw_first_layer(const NetSimRequest& req, StreamTag tag, std::int64_t sample,
                             Eigen::MatrixXd& out, std::vector<double>& wbuf) {
    const Eigen::MatrixXd& x = req.inputs->matrix();
    const Eigen::Index dim = x.rows();
    const double sw = std::sqrt(req.params.sigma_w_sq);
    const double sb = std::sqrt(req.params.sigma_b_sq);
    wbuf.resize(static_cast<std::size_t>(dim) + 1);
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        RandomStream stream(req.seed, tag, static_cast<std::uint64_t>(sample), 1,
                            static_cast<std::uint64_t>(i));
        stream.fill_normals(wbuf);
        double bias = sb * wbuf[static_cast<std::size_t>(dim)];
        for (Eigen::Index r = 0; r < x.cols(); ++r) {
            double acc = 0.0;
            for (Eigen::Index j = 0; j < dim; ++j) acc += sw * wbuf[j] * x(j, r);
            out(i, r) = acc + bias;
        }
    }
}

inline void record_units(SampleBatch& batch, std::int64_t sample, const Eigen::MatrixXd& layer) {
    for (std::int64_t u = 0; u < batch.units; ++u)
        for (std::int64_t r = 0; r < batch.k; ++r)
            batch.at(sample, u, r) = layer(u, r);
}

} // namespace detail

// Samples S realizations of the finite-width network at the k inputs and
// returns one batch per layer (the first `units` rows of each layer).
//
// Layer 1 draws its weights explicitly. Deeper layers use the exact
// conditional law of the construction: given the previous layer's
// activations A (n x k), the units of the next layer are independent
// N_k(0, sigma_b^2 * 11^T + (sigma_w^2 / n) * A^T A), realized through a
// k x k factorization plus one bias draw per unit. This is an equality in
// law with the explicit weighted sums (see sample_network_with_witness for
// the literal route) at O(n k) instead of O(n^2) draws per layer.
//
// Every draw comes from a counter stream keyed by (seed, sample, layer,
// unit), so batches are bit-identical for a given seed regardless of the
// thread budget.
inline std::vector<SampleBatch> sample_network(const NetSimRequest& req) {
    req.validate();
    const Eigen::Index k = req.inputs->count();
    const int depth = req.params.depth;
    const std::int64_t n = req.width;
    const std::int64_t tracked = req.units;

    std::vector<SampleBatch> batches(depth);
    for (int l = 0; l < depth; ++l) {
        SampleBatch& b = batches[l];
        b.samples = req.samples;
        b.units = tracked;
        b.k = k;
        b.layer = l + 1;
        b.width = n;
        b.seed = req.seed;
        b.activation_name = req.act->name();
        b.params = req.params;
        b.values.resize(static_cast<std::size_t>(req.samples * tracked * k));
    }

    const double sb = std::sqrt(req.params.sigma_b_sq);
    parallel_for(req.samples, req.threads, [&](std::int64_t begin, std::int64_t end) {
        Eigen::MatrixXd layer, next;
        Eigen::VectorXd z(k);
        std::vector<double> draw(static_cast<std::size_t>(k) + 1);
        std::vector<double> wbuf;
        for (std::int64_t s = begin; s < end; ++s) {
            const std::int64_t first_rows = depth == 1 ? tracked : std::max(n, tracked);
            layer.resize(first_rows, k);
            detail::draw_first_layer(req, StreamTag::net_conditional, s, layer, wbuf);
            detail::record_units(batches[0], s, layer);
            for (int l = 2; l <= depth; ++l) {
                apply_activation(*req.act, layer); // now holds phi(previous)
                const auto active = layer.topRows(n);
                Eigen::MatrixXd cond =
                    (req.params.sigma_w_sq / static_cast<double>(n)) *
                    (active.transpose() * active);
                Eigen::MatrixXd factor = psd_factor(cond);
                const std::int64_t rows = l == depth ? tracked : std::max(n, tracked);
                next.resize(rows, k);
                for (std::int64_t i = 0; i < rows; ++i) {
                    RandomStream stream(req.seed, StreamTag::net_conditional,
                                        static_cast<std::uint64_t>(s),
                                        static_cast<std::uint64_t>(l),
                                        static_cast<std::uint64_t>(i));
                    stream.fill_normals(draw);
                    for (Eigen::Index j = 0; j < k; ++j) z[j] = draw[static_cast<std::size_t>(j)];
                    const double bias = sb * draw[static_cast<std::size_t>(k)];
                    for (Eigen::Index r = 0; r < k; ++r) {
                        double acc = 0.0;
                        for (Eigen::Index j = 0; j < k; ++j) acc += factor(r, j) * z[j];
                        next(i, r) = acc + bias;
                    }
                }
                layer.swap(next);
                detail::record_units(batches[l - 1], s, layer);
            }
        }
    });
    return batches;
}

// Per-realization Lipschitz bound recursion on explicit weight matrices:
//   H_i(1) = sum_j |w1(i,j)|,   H_i(l) = (L_phi / sqrt(n)) sum_j |wl(i,j)| H_j(l-1).
// weights[l-1] holds layer l's matrix (units x fan-in). Returns one vector of
// per-unit constants per layer.
inline std::vector<Eigen::VectorXd> lipschitz_witness(
    const std::vector<Eigen::MatrixXd>& weights, const Activation& act) {
    const double l_phi = act.require_lipschitz();
    if (weights.empty()) throw std::domain_error("lipschitz_witness: no weight matrices");
    std::vector<Eigen::VectorXd> h(weights.size());
    h[0] = weights[0].cwiseAbs().rowwise().sum();
    for (std::size_t l = 1; l < weights.size(); ++l) {
        if (weights[l].cols() > h[l - 1].size())
            throw std::domain_error("lipschitz_witness: layer fan-in exceeds previous layer units");
        const double n = static_cast<double>(weights[l].cols());
        h[l] = (l_phi / std::sqrt(n)) * (weights[l].cwiseAbs() * h[l - 1].head(weights[l].cols()));
    }
    return h;
}

struct WitnessSample {
    // witness[l][u]: layer l+1 constant for tracked unit u
    std::vector<Eigen::VectorXd> witness;
};

struct WitnessResult {
    std::vector<SampleBatch> batches;          // per layer, as sample_network
    std::vector<WitnessSample> per_realization; // size S
};

// Literal route: materializes iid weight rows, computes the weighted sums of
// the construction directly, and tracks the per-realization Lipschitz bound
// alongside. O(n^2) draws per sample per hidden layer; intended for witness
// checks and as a small-width cross-check of sample_network.
inline WitnessResult sample_network_with_witness(const NetSimRequest& req) {
    req.validate();
    req.act->require_lipschitz();
    const Eigen::Index k = req.inputs->count();
    const int depth = req.params.depth;
    const std::int64_t n = req.width;
    const std::int64_t tracked = req.units;
    const double l_phi = *req.act->lipschitz_constant();

    WitnessResult out;
    out.batches.resize(depth);
    for (int l = 0; l < depth; ++l) {
        SampleBatch& b = out.batches[l];
        b.samples = req.samples;
        b.units = tracked;
        b.k = k;
        b.layer = l + 1;
        b.width = n;
        b.seed = req.seed;
        b.activation_name = req.act->name();
        b.params = req.params;
        b.values.resize(static_cast<std::size_t>(req.samples * tracked * k));
    }
    out.per_realization.resize(static_cast<std::size_t>(req.samples));

    const double sw = std::sqrt(req.params.sigma_w_sq);
    const double sb = std::sqrt(req.params.sigma_b_sq);
    parallel_for(req.samples, req.threads, [&](std::int64_t begin, std::int64_t end) {
        Eigen::MatrixXd layer, next;
        Eigen::VectorXd h_prev, h_next;
        std::vector<double> wbuf;
        for (std::int64_t s = begin; s < end; ++s) {
            WitnessSample& ws = out.per_realization[static_cast<std::size_t>(s)];
            ws.witness.resize(depth);
            const std::int64_t first_rows = depth == 1 ? tracked : std::max(n, tracked);
            layer.resize(first_rows, k);

            const Eigen::MatrixXd& x = req.inputs->matrix();
            const Eigen::Index dim = x.rows();
            wbuf.resize(static_cast<std::size_t>(dim) + 1);
            h_prev.resize(first_rows);
            for (Eigen::Index i = 0; i < first_rows; ++i) {
                RandomStream stream(req.seed, StreamTag::net_explicit,
                                    static_cast<std::uint64_t>(s), 1,
                                    static_cast<std::uint64_t>(i));
                stream.fill_normals(wbuf);
                const double bias = sb * wbuf[static_cast<std::size_t>(dim)];
                double habs = 0.0;
                for (Eigen::Index r = 0; r < k; ++r) {
                    double acc = 0.0;
                    for (Eigen::Index j = 0; j < dim; ++j) acc += sw * wbuf[j] * x(j, r);
                    layer(i, r) = acc + bias;
                }
                for (Eigen::Index j = 0; j < dim; ++j) habs += std::abs(sw * wbuf[j]);
                h_prev[i] = habs;
            }
            detail::record_units(out.batches[0], s, layer);
            ws.witness[0] = h_prev.head(tracked);

            for (int l = 2; l <= depth; ++l) {
                apply_activation(*req.act, layer);
                const std::int64_t rows = l == depth ? tracked : std::max(n, tracked);
                next.resize(rows, k);
                h_next.resize(rows);
                wbuf.resize(static_cast<std::size_t>(n) + 1);
                const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));
                for (std::int64_t i = 0; i < rows; ++i) {
                    RandomStream stream(req.seed, StreamTag::net_explicit,
                                        static_cast<std::uint64_t>(s),
                                        static_cast<std::uint64_t>(l),
                                        static_cast<std::uint64_t>(i));
                    stream.fill_normals(wbuf);
                    const double bias = sb * wbuf[static_cast<std::size_t>(n)];
                    for (Eigen::Index r = 0; r < k; ++r) {
                        double acc = 0.0;
                        for (std::int64_t j = 0; j < n; ++j)
                            acc += sw * wbuf[static_cast<std::size_t>(j)] * layer(j, r);
                        next(i, r) = inv_sqrt_n * acc + bias;
                    }
                    double hacc = 0.0;
                    for (std::int64_t j = 0; j < n; ++j)
                        hacc += std::abs(sw * wbuf[static_cast<std::size_t>(j)]) * h_prev[j];
                    h_next[i] = l_phi * inv_sqrt_n * hacc;
                }
                layer.swap(next);
                h_prev.swap(h_next);
                detail::record_units(out.batches[l - 1], s, layer);
                ws.witness[static_cast<std::size_t>(l - 1)] = h_prev.head(tracked);
            }
        }
    });
    return out;
}

// k x k sample covariance of one tracked unit across realizations. The raw
// second moment is the default (the limiting law is centered); the centered
// variant is available for reports.
inline CovMatrix empirical_cov(const SampleBatch& batch, std::int64_t unit,
                               bool centered = false) {
    if (batch.samples < 2) throw std::domain_error("empirical_cov: need S >= 2");
    if (unit < 0 || unit >= batch.units) throw std::domain_error("empirical_cov: bad unit");
    const Eigen::Index k = batch.k;
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(k, k);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd v(k);
    for (std::int64_t s = 0; s < batch.samples; ++s) {
        for (Eigen::Index r = 0; r < k; ++r) v[r] = batch.at(s, unit, r);
        acc.noalias() += v * v.transpose();
        mean += v;
    }
    const double inv_s = 1.0 / static_cast<double>(batch.samples);
    CovMatrix cov;
    cov.layer = batch.layer;
    cov.m = acc * inv_s;
    if (centered) {
        mean *= inv_s;
        cov.m -= mean * mean.transpose();
    }
    cov.m = 0.5 * (cov.m + cov.m.transpose());
    return cov;
}

struct CrossUnitCorr {
    double max_abs = 0.0;
    int skipped_pairs = 0; // pairs with a zero-variance member, flagged
};

// Largest absolute empirical correlation between distinct units at the same
// input, over all unit pairs and inputs.
inline CrossUnitCorr cross_unit_corr(const SampleBatch& batch) {
    if (batch.units < 2) throw std::domain_error("cross_unit_corr: need U >= 2");
    const std::int64_t s_count = batch.samples;
    CrossUnitCorr out;
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(batch.units, batch.k);
    Eigen::MatrixXd sq = Eigen::MatrixXd::Zero(batch.units, batch.k);
    for (std::int64_t s = 0; s < s_count; ++s)
        for (std::int64_t u = 0; u < batch.units; ++u)
            for (std::int64_t r = 0; r < batch.k; ++r) {
                const double v = batch.at(s, u, r);
                mean(u, r) += v;
                sq(u, r) += v * v;
            }
    mean /= static_cast<double>(s_count);
    Eigen::MatrixXd var = sq / static_cast<double>(s_count) - mean.cwiseProduct(mean);
    for (std::int64_t r = 0; r < batch.k; ++r) {
        for (std::int64_t i = 0; i < batch.units; ++i) {
            for (std::int64_t j = i + 1; j < batch.units; ++j) {
                if (var(i, r) <= 0.0 || var(j, r) <= 0.0) {
                    ++out.skipped_pairs;
                    continue;
                }
                double cross = 0.0;
                for (std::int64_t s = 0; s < s_count; ++s)
                    cross += batch.at(s, i, r) * batch.at(s, j, r);
                cross = cross / static_cast<double>(s_count) - mean(i, r) * mean(j, r);
                const double corr = cross / std::sqrt(var(i, r) * var(j, r));
                out.max_abs = std::max(out.max_abs, std::abs(corr));
            }
        }
    }
    return out;
}

} // namespace nngp
