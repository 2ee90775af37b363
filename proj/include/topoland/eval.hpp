#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <string>
#include <vector>

#include "topoland/heatmap.hpp"
#include "topoland/io.hpp"

namespace topoland {

// Euclidean error in mm per landmark: |(pred - truth) * spacing|_2.
inline std::vector<double> localization_error(const LandmarkSet& pred, const LandmarkSet& truth) {
    if (pred.count() != truth.count())
        throw DataError("localization_error: landmark count mismatch " +
                        std::to_string(pred.count()) + " vs " + std::to_string(truth.count()));
    if (pred.spacing != truth.spacing)
        throw DataError("localization_error: spacing mismatch between sets");
    std::vector<double> errors(pred.count());
    for (std::size_t i = 0; i < pred.count(); ++i) {
        double acc = 0.0;
        for (std::size_t a = 0; a < pred.dims(); ++a) {
            const double dv = (pred.coords[i][a] - truth.coords[i][a]) * pred.spacing[a];
            acc += dv * dv;
        }
        errors[i] = std::sqrt(acc);
    }
    return errors;
}

struct ErrorSummary {
    double median_mm = 0.0;
    double mean_mm = 0.0;
    double std_mm = 0.0;  // population standard deviation
    std::size_t count = 0;
    std::vector<std::pair<double, double>> cdf;  // (error_mm, fraction <= error)
};

inline ErrorSummary error_summary(std::vector<double> errors) {
    if (errors.empty()) throw DataError("error_summary: empty error list");
    ErrorSummary s;
    s.count = errors.size();
    double sum = 0.0;
    for (double e : errors) sum += e;
    s.mean_mm = sum / static_cast<double>(errors.size());
    double var = 0.0;
    for (double e : errors) var += (e - s.mean_mm) * (e - s.mean_mm);
    s.std_mm = std::sqrt(var / static_cast<double>(errors.size()));

    std::sort(errors.begin(), errors.end());
    const std::size_t n = errors.size();
    s.median_mm = n % 2 ? errors[n / 2] : 0.5 * (errors[n / 2 - 1] + errors[n / 2]);
    for (std::size_t i = 0; i < n; ++i) {
        if (i + 1 < n && errors[i + 1] == errors[i]) continue;  // keep last of a run
        s.cdf.emplace_back(errors[i], static_cast<double>(i + 1) / static_cast<double>(n));
    }
    return s;
}

namespace detail {

// Stand-in for "no background on this line"; large but finite so parabola
// intersections stay well defined.
inline constexpr double kEdtFar = 1e15;

// 1D squared distance transform (lower envelope of parabolas).
inline void edt_1d(const std::vector<double>& f, std::vector<double>& out) {
    const std::size_t n = f.size();
    static thread_local std::vector<int> v;
    static thread_local std::vector<double> z;
    v.assign(n, 0);
    z.assign(n + 1, 0.0);
    int k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    auto intersect = [&](std::size_t q, int p) {
        return ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) /
               (2.0 * static_cast<double>(q) - 2.0 * p);
    };
    for (std::size_t q = 1; q < n; ++q) {
        double s = intersect(q, v[k]);
        while (s <= z[k]) {
            --k;
            s = intersect(q, v[k]);
        }
        ++k;
        v[k] = static_cast<int>(q);
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (std::size_t q = 0; q < n; ++q) {
        while (z[k + 1] < static_cast<double>(q)) ++k;
        const double dq = static_cast<double>(q) - v[k];
        out[q] = dq * dq + f[v[k]];
    }
}

}  // namespace detail

// Exact Euclidean distance (in voxels) from each foreground voxel to the
// nearest background voxel; background voxels map to 0.
inline Tensor distance_transform(const Tensor& mask) {
    const std::size_t d = mask.rank();
    if (d != 2 && d != 3) throw ShapeError("distance_transform: mask rank must be 2 or 3");
    const std::size_t N = mask.numel();
    bool any_fg = false;
    Tensor sq(mask.shape());
    for (std::size_t i = 0; i < N; ++i) {
        const bool fg = mask.raw()[i] != 0.0;
        any_fg = any_fg || fg;
        sq.raw()[i] = fg ? detail::kEdtFar : 0.0;
    }
    if (!any_fg) throw DataError("distance_transform: empty foreground");

    std::vector<std::size_t> dims(mask.shape());
    // transform along each axis in turn
    for (std::size_t axis = 0; axis < d; ++axis) {
        std::size_t stride = 1;
        for (std::size_t a = axis + 1; a < d; ++a) stride *= dims[a];
        const std::size_t len = dims[axis];
        const std::size_t lines = N / len;
        std::vector<double> line(len), out(len);
        for (std::size_t l = 0; l < lines; ++l) {
            // base index of this line
            std::size_t rem = l, base = 0;
            for (std::size_t a = d; a-- > 0;) {
                if (a == axis) continue;
                const std::size_t size_a = dims[a];
                const std::size_t coord = rem % size_a;
                rem /= size_a;
                std::size_t mult = 1;
                for (std::size_t b = a + 1; b < d; ++b) mult *= dims[b];
                base += coord * mult;
            }
            for (std::size_t i = 0; i < len; ++i) line[i] = sq.raw()[base + i * stride];
            detail::edt_1d(line, out);
            for (std::size_t i = 0; i < len; ++i) sq.raw()[base + i * stride] = out[i];
        }
    }
    for (std::size_t i = 0; i < N; ++i) sq.raw()[i] = std::sqrt(sq.raw()[i]);
    return sq;
}

struct Centerline {
    std::vector<std::vector<std::size_t>> points;  // ordered voxel path, seed A to seed B
    std::vector<double> boundary_distance;         // DT value per path point
    double arc_length_mm = 0.0;

    std::size_t size() const { return points.size(); }
};

namespace detail {

inline std::size_t flatten(const std::vector<std::size_t>& idx, const std::vector<std::size_t>& dims) {
    std::size_t v = 0;
    for (std::size_t a = 0; a < dims.size(); ++a) v = v * dims[a] + idx[a];
    return v;
}

inline std::vector<std::size_t> unflatten(std::size_t v, const std::vector<std::size_t>& dims) {
    std::vector<std::size_t> idx(dims.size());
    for (std::size_t a = dims.size(); a-- > 0;) {
        idx[a] = v % dims[a];
        v /= dims[a];
    }
    return idx;
}

// Snap a continuous seed to the nearest foreground voxel within the given
// radius; ties break toward the lowest linear index.
inline std::size_t snap_seed(const Tensor& mask, const std::vector<double>& seed, double radius,
                             const char* name) {
    const auto& dims = mask.shape();
    if (seed.size() != dims.size())
        throw DataError(std::string("centerline: seed rank mismatch for ") + name);
    double best = radius * radius + 1e-9;
    std::size_t best_idx = std::numeric_limits<std::size_t>::max();
    for (std::size_t v = 0; v < mask.numel(); ++v) {
        if (mask.raw()[v] == 0.0) continue;
        const auto idx = unflatten(v, dims);
        double d2 = 0.0;
        for (std::size_t a = 0; a < dims.size(); ++a) {
            const double dv = static_cast<double>(idx[a]) - seed[a];
            d2 += dv * dv;
        }
        if (d2 < best) {
            best = d2;
            best_idx = v;
        }
    }
    if (best_idx == std::numeric_limits<std::size_t>::max())
        throw DataError(std::string("centerline: seed ") + name +
                        " has no foreground voxel within 3 voxels");
    return best_idx;
}

struct NeighborOffsets {
    std::vector<long> flat;
    std::vector<double> length;
    std::vector<std::vector<long>> delta;
};

inline NeighborOffsets neighbor_offsets(const std::vector<std::size_t>& dims) {
    NeighborOffsets n;
    const std::size_t d = dims.size();
    std::vector<long> delta(d, -1);
    while (true) {
        bool all_zero = true;
        for (long v : delta) all_zero = all_zero && v == 0;
        if (!all_zero) {
            long flat = 0;
            double len = 0.0;
            for (std::size_t a = 0; a < d; ++a) {
                long mult = 1;
                for (std::size_t b = a + 1; b < d; ++b) mult *= static_cast<long>(dims[b]);
                flat += delta[a] * mult;
                len += static_cast<double>(delta[a] * delta[a]);
            }
            n.flat.push_back(flat);
            n.length.push_back(std::sqrt(len));
            n.delta.push_back(delta);
        }
        std::size_t a = d;
        while (a-- > 0) {
            if (delta[a] < 1) {
                ++delta[a];
                break;
            }
            delta[a] = -1;
            if (a == 0) return n;
        }
    }
}

}  // namespace detail

inline constexpr double kCenterlineCostEps = 0.1;

// Minimal-cost path between two seed landmarks under the edge cost
// (step length) / (DT(target) + eps): cheap steps run deep inside the mask,
// so paths hug the medial axis. Deterministic tie-breaking by voxel index.
inline Centerline extract_centerline(const Tensor& mask, const std::vector<double>& seed_a,
                                     const std::vector<double>& seed_b,
                                     const std::vector<double>& spacing) {
    const auto& dims = mask.shape();
    const std::size_t d = dims.size();
    if (d != 2 && d != 3) throw ShapeError("centerline: mask rank must be 2 or 3");
    if (spacing.size() != d) throw DataError("centerline: spacing rank mismatch");

    const Tensor dt = distance_transform(mask);
    const std::size_t start = detail::snap_seed(mask, seed_a, 3.0, "A");
    const std::size_t goal = detail::snap_seed(mask, seed_b, 3.0, "B");
    const auto offsets = detail::neighbor_offsets(dims);

    const std::size_t N = mask.numel();
    std::vector<double> cost(N, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> prev(N, std::numeric_limits<std::size_t>::max());
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    cost[start] = 0.0;
    queue.emplace(0.0, start);

    while (!queue.empty()) {
        const auto [c, node] = queue.top();
        queue.pop();
        if (c > cost[node]) continue;
        if (node == goal) break;
        const auto idx = detail::unflatten(node, dims);
        for (std::size_t k = 0; k < offsets.flat.size(); ++k) {
            bool inside = true;
            for (std::size_t a = 0; a < d; ++a) {
                const long coord = static_cast<long>(idx[a]) + offsets.delta[k][a];
                if (coord < 0 || coord >= static_cast<long>(dims[a])) {
                    inside = false;
                    break;
                }
            }
            if (!inside) continue;
            const std::size_t next = static_cast<std::size_t>(static_cast<long>(node) + offsets.flat[k]);
            if (mask.raw()[next] == 0.0) continue;
            const double step = offsets.length[k] / (dt.raw()[next] + kCenterlineCostEps);
            const double nc = c + step;
            if (nc < cost[next]) {
                cost[next] = nc;
                prev[next] = node;
                queue.emplace(nc, next);
            }
        }
    }
    if (!std::isfinite(cost[goal]))
        throw DataError("centerline: no path between the seeds (disconnected mask components)");

    Centerline line;
    std::vector<std::size_t> flat_path;
    for (std::size_t v = goal;; v = prev[v]) {
        flat_path.push_back(v);
        if (v == start) break;
    }
    std::reverse(flat_path.begin(), flat_path.end());
    for (std::size_t v : flat_path) {
        line.points.push_back(detail::unflatten(v, dims));
        line.boundary_distance.push_back(dt.raw()[v]);
    }
    for (std::size_t i = 1; i < line.points.size(); ++i) {
        double step = 0.0;
        for (std::size_t a = 0; a < d; ++a) {
            const double dv = (static_cast<double>(line.points[i][a]) -
                               static_cast<double>(line.points[i - 1][a])) *
                              spacing[a];
            step += dv * dv;
        }
        line.arc_length_mm += std::sqrt(step);
    }
    return line;
}

inline double centerline_min_cost(const Centerline& line) {
    double total = 0.0;
    for (std::size_t i = 1; i < line.points.size(); ++i) {
        double len = 0.0;
        for (std::size_t a = 0; a < line.points[i].size(); ++a) {
            const double dv =
                static_cast<double>(line.points[i][a]) - static_cast<double>(line.points[i - 1][a]);
            len += dv * dv;
        }
        total += std::sqrt(len) / (line.boundary_distance[i] + kCenterlineCostEps);
    }
    return total;
}

enum class Subregion : int { Background = 0, Ascending = 1, Arch = 2, Descending = 3 };

struct SubregionLabels {
    Tensor labels;  // integer-coded per-voxel labels, same shape as the mask
    std::size_t boundary_index_a = 0;  // centerline index nearest the first boundary landmark
    std::size_t boundary_index_b = 0;
    bool arch_empty = false;  // warning: both boundaries project to one point

    std::size_t count(Subregion r) const {
        std::size_t n = 0;
        for (double v : labels.data())
            if (static_cast<int>(v) == static_cast<int>(r)) ++n;
        return n;
    }
};

namespace detail {

inline std::size_t nearest_centerline_index(const Centerline& line, const std::vector<double>& point) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < line.points.size(); ++i) {
        double d2 = 0.0;
        for (std::size_t a = 0; a < point.size(); ++a) {
            const double dv = static_cast<double>(line.points[i][a]) - point[a];
            d2 += dv * dv;
        }
        if (d2 < best) {
            best = d2;
            best_i = i;
        }
    }
    return best_i;
}

}  // namespace detail

// Partition the mask into ascending / arch / descending regions. Boundaries
// are the centerline points nearest the two boundary landmarks; every
// foreground voxel takes the segment of its nearest centerline point. The
// labeling is invariant to centerline orientation because sides are assigned
// from the boundary landmark order, not from the index direction.
inline SubregionLabels subdivide(const Tensor& mask, const Centerline& line,
                                 const std::vector<double>& boundary_a,
                                 const std::vector<double>& boundary_b) {
    if (line.size() == 0) throw DataError("subdivide: empty centerline");
    const auto& dims = mask.shape();
    const std::size_t d = dims.size();

    auto check_near = [&](const std::vector<double>& p, const char* name) {
        const std::size_t i = detail::nearest_centerline_index(line, p);
        double d2 = 0.0;
        for (std::size_t a = 0; a < d; ++a) {
            const double dv = static_cast<double>(line.points[i][a]) - p[a];
            d2 += dv * dv;
        }
        if (std::sqrt(d2) > 10.0)
            throw DataError(std::string("subdivide: boundary landmark ") + name + " is " +
                            format_double(std::sqrt(d2)) + " voxels from the centerline (limit 10)");
        return i;
    };
    const std::size_t ia = check_near(boundary_a, "A");
    const std::size_t ib = check_near(boundary_b, "B");

    SubregionLabels result;
    result.boundary_index_a = ia;
    result.boundary_index_b = ib;
    result.arch_empty = ia == ib;

    auto segment_of = [&](std::size_t i) {
        if (ia == ib) return i <= ia ? Subregion::Ascending : Subregion::Descending;
        if (ia < ib) {
            if (i <= ia) return Subregion::Ascending;
            if (i < ib) return Subregion::Arch;
            return Subregion::Descending;
        }
        if (i >= ia) return Subregion::Ascending;
        if (i > ib) return Subregion::Arch;
        return Subregion::Descending;
    };

    result.labels = Tensor(mask.shape(), 0.0);
    for (std::size_t v = 0; v < mask.numel(); ++v) {
        if (mask.raw()[v] == 0.0) continue;
        const auto idx = detail::unflatten(v, dims);
        std::vector<double> p(d);
        for (std::size_t a = 0; a < d; ++a) p[a] = static_cast<double>(idx[a]);
        const std::size_t i = detail::nearest_centerline_index(line, p);
        result.labels.raw()[v] = static_cast<double>(static_cast<int>(segment_of(i)));
    }
    return result;
}

// CSV export of the cumulative error distribution: `error_mm,fraction`.
inline void cdf_export(const ErrorSummary& summary, const std::filesystem::path& path) {
    std::string out = "error_mm,fraction\n";
    for (const auto& [err, frac] : summary.cdf)
        out += format_double(err) + "," + format_double(frac) + "\n";
    write_file_bytes(path, out);
}

struct MetricsRow {
    std::string method;
    std::string landmark;  // "L1".."L4" or "all"
    ErrorSummary summary;
};

// Metrics CSV: `method,landmark,median_mm,mean_mm,std_mm,n`.
inline void write_metrics_csv(const std::vector<MetricsRow>& rows,
                              const std::filesystem::path& path) {
    std::string out = "method,landmark,median_mm,mean_mm,std_mm,n\n";
    for (const auto& r : rows) {
        out += r.method + "," + r.landmark + "," + format_double(r.summary.median_mm) + "," +
               format_double(r.summary.mean_mm) + "," + format_double(r.summary.std_mm) + "," +
               std::to_string(r.summary.count) + "\n";
    }
    write_file_bytes(path, out);
}

}  // namespace topoland
