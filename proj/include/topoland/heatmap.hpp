#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "topoland/io.hpp"
#include "topoland/ops.hpp"
#include "topoland/tensor.hpp"

namespace topoland {

// M ordered landmark positions in voxel units, with the physical voxel
// spacing needed to report errors in mm.
struct LandmarkSet {
    std::vector<std::vector<double>> coords;  // M x d, voxel units
    std::vector<double> spacing;              // d entries, mm per voxel
    std::vector<std::uint8_t> present;        // per-landmark annotation flag

    std::size_t count() const { return coords.size(); }
    std::size_t dims() const { return spacing.size(); }

    void validate() const {
        if (coords.empty()) throw DataError("landmark set must contain at least one landmark");
        for (double s : spacing)
            if (!(s > 0.0)) throw DataError("landmark spacing must be positive on every axis");
        if (present.size() != coords.size())
            throw DataError("landmark present flags do not match landmark count");
        for (const auto& c : coords)
            if (c.size() != spacing.size())
                throw DataError("landmark coordinate rank does not match spacing rank");
    }
};

enum class SigmaRole { Regression, Topology };

// Gaussian widths stored as log(sigma) so positivity needs no constraint
// handling. One width per landmark.
struct SigmaParams {
    Tensor log_sigma;  // [M]
    SigmaRole role = SigmaRole::Regression;

    static SigmaParams init(std::size_t count, double sigma_voxels, SigmaRole role) {
        SigmaParams p;
        p.log_sigma = Tensor({count}, std::log(sigma_voxels));
        p.role = role;
        return p;
    }

    std::size_t count() const { return log_sigma.numel(); }
    double sigma(std::size_t i) const { return std::exp(log_sigma.data()[i]); }
    std::vector<double> sigmas() const {
        std::vector<double> s(count());
        for (std::size_t i = 0; i < s.size(); ++i) s[i] = sigma(i);
        return s;
    }
};

enum class StackKind { Predicted, Target };

struct HeatmapStack {
    Tensor maps;  // [M, spatial...]
    StackKind kind = StackKind::Predicted;

    std::size_t channels() const { return maps.dim(0); }
};

struct GaussianSpec {
    double amplitude = 1e6;
    std::size_t d = 2;

    void validate() const {
        if (!(amplitude > 0.0)) throw DataError("gaussian amplitude must be positive");
        if (d != 2 && d != 3) throw DataError("gaussian dimensionality must be 2 or 3");
    }
};

// g_i(x) = A / ((2*pi)^(d/2) * sigma_i^d) * exp(-|x - L_i|^2 / (2*sigma_i^2))
// evaluated at integer voxel centers, distances in voxels. Differentiable in
// log_sigma; channels of absent landmarks render as zeros.
inline HeatmapStack render_gaussian(const LandmarkSet& landmarks, const SigmaParams& sigma,
                                    const GaussianSpec& spec,
                                    const std::vector<std::size_t>& spatial_dims) {
    landmarks.validate();
    spec.validate();
    if (spatial_dims.size() != spec.d)
        throw ShapeError("render_gaussian: spatial rank " + std::to_string(spatial_dims.size()) +
                         " does not match spec dimensionality " + std::to_string(spec.d));
    const std::size_t M = landmarks.count();
    if (sigma.count() != M)
        throw ShapeError("render_gaussian: sigma count " + std::to_string(sigma.count()) +
                         " does not match landmark count " + std::to_string(M));

    const std::size_t d = spec.d;
    std::size_t N = 1;
    for (std::size_t s : spatial_dims) N *= s;
    for (std::size_t i = 0; i < M; ++i) {
        if (!landmarks.present[i]) continue;
        for (std::size_t a = 0; a < d; ++a)
            if (landmarks.coords[i][a] < 0.0 ||
                landmarks.coords[i][a] > static_cast<double>(spatial_dims[a] - 1))
                throw DataError("render_gaussian: landmark " + std::to_string(i + 1) +
                                " outside volume bounds on axis " + std::to_string(a));
    }

    std::vector<std::size_t> shape{M};
    for (std::size_t s : spatial_dims) shape.push_back(s);
    Tensor out(shape);

    const double half_log_2pi_d =
        std::pow(2.0 * std::numbers::pi, static_cast<double>(d) / 2.0);
    const Tensor& ls = sigma.log_sigma;

    auto fill_channel = [&](std::size_t i, double* dst) {
        const double sig = std::exp(ls.data()[i]);
        const double norm = spec.amplitude / (half_log_2pi_d * std::pow(sig, static_cast<double>(d)));
        const double inv2s2 = 1.0 / (2.0 * sig * sig);
        const auto& L = landmarks.coords[i];
        if (d == 2) {
            std::size_t idx = 0;
            for (std::size_t y = 0; y < spatial_dims[0]; ++y) {
                const double dy = static_cast<double>(y) - L[0];
                for (std::size_t x = 0; x < spatial_dims[1]; ++x, ++idx) {
                    const double dx = static_cast<double>(x) - L[1];
                    dst[idx] = norm * std::exp(-(dy * dy + dx * dx) * inv2s2);
                }
            }
        } else {
            std::size_t idx = 0;
            for (std::size_t z = 0; z < spatial_dims[0]; ++z) {
                const double dz = static_cast<double>(z) - L[0];
                for (std::size_t y = 0; y < spatial_dims[1]; ++y) {
                    const double dy = static_cast<double>(y) - L[1];
                    for (std::size_t x = 0; x < spatial_dims[2]; ++x, ++idx) {
                        const double dx = static_cast<double>(x) - L[2];
                        dst[idx] = norm * std::exp(-(dz * dz + dy * dy + dx * dx) * inv2s2);
                    }
                }
            }
        }
    };

    for (std::size_t i = 0; i < M; ++i) {
        if (landmarks.present[i]) fill_channel(i, out.raw() + i * N);
    }

    Tape* tape = Tape::active();
    if (tape && ls.requires_grad()) {
        out.set_requires_grad(true);
        auto si = ls.impl();
        auto yi = out.impl();
        const int sn = tape->ensure_node(ls);
        const int yn = tape->ensure_node(out);
        auto coords = landmarks.coords;
        auto present = landmarks.present;
        auto dims = spatial_dims;
        const double dd = static_cast<double>(d);
        tape->record("render_gaussian", {ls}, out, [=](Tape& t) {
            const auto& gy = *t.node_grad(yn);
            auto& dsig = t.node_grad_buffer(sn, M);
            // dg/d(log sigma) = g * (r^2 / sigma^2 - d)
            for (std::size_t i = 0; i < M; ++i) {
                if (!present[i]) continue;
                const double sig = std::exp(si->data[i]);
                const double inv_s2 = 1.0 / (sig * sig);
                const double* g = yi->data.data() + i * N;
                const double* go = gy.data() + i * N;
                const auto& L = coords[i];
                double acc = 0.0;
                if (d == 2) {
                    std::size_t idx = 0;
                    for (std::size_t y = 0; y < dims[0]; ++y) {
                        const double dy = static_cast<double>(y) - L[0];
                        for (std::size_t x = 0; x < dims[1]; ++x, ++idx) {
                            const double dx = static_cast<double>(x) - L[1];
                            acc += go[idx] * g[idx] * ((dy * dy + dx * dx) * inv_s2 - dd);
                        }
                    }
                } else {
                    std::size_t idx = 0;
                    for (std::size_t z = 0; z < dims[0]; ++z) {
                        const double dz = static_cast<double>(z) - L[0];
                        for (std::size_t y = 0; y < dims[1]; ++y) {
                            const double dy = static_cast<double>(y) - L[1];
                            for (std::size_t x = 0; x < dims[2]; ++x, ++idx) {
                                const double dx = static_cast<double>(x) - L[2];
                                acc += go[idx] * g[idx] * ((dz * dz + dy * dy + dx * dx) * inv_s2 - dd);
                            }
                        }
                    }
                }
                dsig[i] += acc;
            }
        });
    }
    return HeatmapStack{out, StackKind::Target};
}

// (1 / (M'*N)) * sum over included channels of the per-voxel squared
// difference; M' is the number of included channels. Returns 0 when no
// channel is included.
inline Tensor heatmap_mse(const Tensor& pred, const Tensor& target,
                          const std::vector<std::uint8_t>* include = nullptr) {
    if (pred.shape() != target.shape())
        throw ShapeError("heatmap_mse: channel-count/shape mismatch " + pred.shape_string() + " vs " +
                         target.shape_string());
    if (pred.rank() < 2) throw ShapeError("heatmap_mse: expected [M, spatial...] stacks");
    const std::size_t M = pred.dim(0);
    if (include && include->size() != M)
        throw ShapeError("heatmap_mse: include mask size " + std::to_string(include->size()) +
                         " does not match channel count " + std::to_string(M));
    const std::size_t N = pred.numel() / M;

    std::vector<std::uint8_t> inc(M, 1);
    if (include) inc = *include;
    std::size_t m_included = 0;
    for (std::uint8_t v : inc) m_included += v ? 1 : 0;
    if (m_included == 0) return Tensor::scalar(0.0);

    double acc = 0.0;
    for (std::size_t c = 0; c < M; ++c) {
        if (!inc[c]) continue;
        const double* h = pred.raw() + c * N;
        const double* g = target.raw() + c * N;
        for (std::size_t i = 0; i < N; ++i) {
            const double dv = h[i] - g[i];
            acc += dv * dv;
        }
    }
    const double denom = static_cast<double>(m_included) * static_cast<double>(N);
    Tensor out = Tensor::scalar(acc / denom);

    Tape* tape = Tape::active();
    if (tape && (pred.requires_grad() || target.requires_grad())) {
        out.set_requires_grad(true);
        auto pi = pred.impl();
        auto ti = target.impl();
        const int pn = tape->ensure_node(pred);
        const int tn = tape->ensure_node(target);
        const int yn = tape->ensure_node(out);
        tape->record("heatmap_mse", {pred, target}, out, [=](Tape& t) {
            const double go = (*t.node_grad(yn))[0];
            const double scale = 2.0 * go / denom;
            for (std::size_t c = 0; c < M; ++c) {
                if (!inc[c]) continue;
                const double* h = pi->data.data() + c * N;
                const double* g = ti->data.data() + c * N;
                if (pi->requires_grad) {
                    auto& dh = t.node_grad_buffer(pn, pi->data.size());
                    double* row = dh.data() + c * N;
                    for (std::size_t i = 0; i < N; ++i) row[i] += scale * (h[i] - g[i]);
                }
                if (ti->requires_grad) {
                    auto& dg = t.node_grad_buffer(tn, ti->data.size());
                    double* row = dg.data() + c * N;
                    for (std::size_t i = 0; i < N; ++i) row[i] -= scale * (h[i] - g[i]);
                }
            }
        });
    }
    return out;
}

// sum_i sigma_i^2, with gradient flowing to log_sigma.
inline Tensor sigma_regularizer(const SigmaParams& sigma) {
    const Tensor& ls = sigma.log_sigma;
    const std::size_t M = ls.numel();
    double acc = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
        const double s = std::exp(ls.data()[i]);
        acc += s * s;
    }
    Tensor out = Tensor::scalar(acc);
    Tape* tape = Tape::active();
    if (tape && ls.requires_grad()) {
        out.set_requires_grad(true);
        auto si = ls.impl();
        const int sn = tape->ensure_node(ls);
        const int yn = tape->ensure_node(out);
        tape->record("sigma_regularizer", {ls}, out, [=](Tape& t) {
            const double go = (*t.node_grad(yn))[0];
            auto& ds = t.node_grad_buffer(sn, M);
            // d(sigma^2)/d(log sigma) = 2*sigma^2
            for (std::size_t i = 0; i < M; ++i) {
                const double s = std::exp(si->data[i]);
                ds[i] += go * 2.0 * s * s;
            }
        });
    }
    return out;
}

struct PeakExtraction {
    LandmarkSet landmarks;
    std::vector<std::uint8_t> flat;  // per-channel flat-heatmap warning flag
};

// Per-channel voxel coordinate of the maximum; ties break toward the lowest
// linearized (row-major) index.
inline PeakExtraction extract_peaks(const HeatmapStack& stack, const std::vector<double>& spacing) {
    const Tensor& maps = stack.maps;
    if (maps.rank() < 2) throw ShapeError("extract_peaks: expected [M, spatial...] stack");
    const std::size_t M = maps.dim(0);
    const std::size_t d = maps.rank() - 1;
    if (spacing.size() != d)
        throw ShapeError("extract_peaks: spacing rank " + std::to_string(spacing.size()) +
                         " does not match spatial rank " + std::to_string(d));
    const std::size_t N = maps.numel() / M;

    PeakExtraction result;
    result.landmarks.spacing = spacing;
    result.flat.assign(M, 0);
    for (std::size_t c = 0; c < M; ++c) {
        const double* v = maps.raw() + c * N;
        std::size_t best = 0;
        bool all_equal = true;
        for (std::size_t i = 1; i < N; ++i) {
            if (v[i] > v[best]) best = i;
            if (v[i] != v[0]) all_equal = false;
        }
        if (all_equal) result.flat[c] = 1;
        std::vector<double> coord(d);
        std::size_t rem = best;
        for (std::size_t a = d; a-- > 0;) {
            coord[a] = static_cast<double>(rem % maps.dim(1 + a));
            rem /= maps.dim(1 + a);
        }
        result.landmarks.coords.push_back(std::move(coord));
        result.landmarks.present.push_back(1);
    }
    return result;
}

// Landmark CSV: header `id,x,y[,z]`, voxel coordinates, rows ordered by id.
inline void write_landmarks_csv(const LandmarkSet& landmarks, const std::filesystem::path& path) {
    const std::size_t d = landmarks.dims();
    std::string out = d == 3 ? "id,x,y,z\n" : "id,x,y\n";
    for (std::size_t i = 0; i < landmarks.count(); ++i) {
        out += std::to_string(i + 1);
        for (std::size_t a = 0; a < d; ++a) out += "," + format_double(landmarks.coords[i][a]);
        out += "\n";
    }
    write_file_bytes(path, out);
}

inline LandmarkSet read_landmarks_csv(const std::filesystem::path& path,
                                      const std::vector<double>& spacing) {
    const auto rows = read_csv(path);
    if (rows.empty()) throw DataError(path.string() + ": empty landmark file");
    const auto& header = rows[0];
    if (header.size() < 3 || header[0] != "id" || header[1] != "x" || header[2] != "y" ||
        (header.size() == 4 && header[3] != "z") || header.size() > 4)
        throw DataError(path.string() + ": expected header id,x,y[,z]");
    const std::size_t d = header.size() - 1;
    if (spacing.size() != d)
        throw DataError(path.string() + ": spacing rank does not match landmark rank");
    LandmarkSet set;
    set.spacing = spacing;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() != d + 1) throw DataError(path.string() + ": malformed row " + std::to_string(r));
        if (std::stoul(row[0]) != r)
            throw DataError(path.string() + ": rows must be ordered by id starting at 1");
        std::vector<double> coord(d);
        for (std::size_t a = 0; a < d; ++a) coord[a] = std::stod(row[1 + a]);
        set.coords.push_back(std::move(coord));
        set.present.push_back(1);
    }
    set.validate();
    return set;
}

}  // namespace topoland
