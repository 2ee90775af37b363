#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "topoland/heatmap.hpp"
#include "topoland/io.hpp"
#include "topoland/tensor.hpp"

namespace topoland {

struct GenParams {
    std::vector<std::size_t> dims = {96, 96};
    double radius_min = 4.0;
    double radius_max = 7.0;
    double jitter = 3.5;     // control-point jitter, voxels
    double contrast = 0.55;  // tube intensity above background
    double noise = 0.10;     // background noise level (white + structured)
    std::vector<double> spacing = {1.8, 1.8};

    std::size_t d() const { return dims.size(); }

    void validate() const {
        if (dims.size() != 2 && dims.size() != 3)
            throw ConfigError("generator: dims must have rank 2 or 3");
        for (std::size_t s : dims)
            if (s < 16) throw ConfigError("generator: every dim must be >= 16");
        if (radius_min < 2.0) throw ConfigError("generator: tube radius must be >= 2 voxels");
        if (radius_max < radius_min) throw ConfigError("generator: radius range is inverted");
        if (jitter < 0.0 || contrast <= 0.0 || noise < 0.0)
            throw ConfigError("generator: jitter/contrast/noise out of range");
        if (spacing.size() != dims.size())
            throw ConfigError("generator: spacing rank must match dims rank");
        for (double s : spacing)
            if (!(s > 0.0)) throw ConfigError("generator: spacing must be positive");
    }
};

struct SyntheticSample {
    Tensor image;  // [1, spatial...], values in [0, 1]
    LandmarkSet landmarks;
    Tensor mask;  // [spatial...], binary tube mask
    std::uint64_t gen_seed = 0;
    std::vector<double> deformation;  // control-point and fraction jitters, in draw order
    bool landmarks_clamped = false;   // set when augmentation pushed a landmark to the border
};

namespace detail {

inline std::array<double, 3> catmull_rom(const std::vector<std::array<double, 3>>& pts, double t) {
    const std::size_t segments = pts.size() - 1;
    double scaled = t * static_cast<double>(segments);
    std::size_t seg = std::min(static_cast<std::size_t>(scaled), segments - 1);
    const double u = scaled - static_cast<double>(seg);
    const auto& p1 = pts[seg];
    const auto& p2 = pts[seg + 1];
    const auto& p0 = seg == 0 ? pts[0] : pts[seg - 1];
    const auto& p3 = seg + 2 < pts.size() ? pts[seg + 2] : pts.back();
    std::array<double, 3> out{};
    for (int a = 0; a < 3; ++a) {
        const double u2 = u * u, u3 = u2 * u;
        out[a] = 0.5 * ((2.0 * p1[a]) + (-p0[a] + p2[a]) * u +
                        (2.0 * p0[a] - 5.0 * p1[a] + 4.0 * p2[a] - p3[a]) * u2 +
                        (-p0[a] + 3.0 * p1[a] - 3.0 * p2[a] + p3[a]) * u3);
    }
    return out;
}

// Canonical candy-cane control points as fractions of the volume: ascending
// limb, arch, descending limb. 2D uses (y, x); 3D uses (z, y, x) with the
// curve living near the mid-x plane.
inline std::vector<std::array<double, 3>> canonical_controls(std::size_t d) {
    const std::vector<std::array<double, 2>> plane{{0.80, 0.32}, {0.60, 0.29}, {0.38, 0.31},
                                                   {0.21, 0.40}, {0.17, 0.52}, {0.22, 0.64},
                                                   {0.42, 0.70}, {0.63, 0.71}, {0.82, 0.69}};
    std::vector<std::array<double, 3>> pts;
    for (std::size_t i = 0; i < plane.size(); ++i) {
        if (d == 2) {
            pts.push_back({plane[i][0], plane[i][1], 0.0});
        } else {
            // gentle out-of-plane bow so 3D curves are not planar
            const double bow = 0.5 + 0.08 * std::sin(std::numbers::pi * static_cast<double>(i) /
                                                     static_cast<double>(plane.size() - 1));
            pts.push_back({plane[i][0], plane[i][1], bow});
        }
    }
    return pts;
}

struct CurveSamples {
    std::vector<std::array<double, 3>> points;
    std::vector<double> arc;  // cumulative arc length, arc[0]=0
    double length() const { return arc.back(); }

    std::array<double, 3> at_fraction(double f) const {
        const double target = f * length();
        std::size_t lo = 0, hi = arc.size() - 1;
        while (lo + 1 < hi) {
            const std::size_t mid = (lo + hi) / 2;
            if (arc[mid] <= target)
                lo = mid;
            else
                hi = mid;
        }
        const double span = arc[hi] - arc[lo];
        const double w = span > 0.0 ? (target - arc[lo]) / span : 0.0;
        std::array<double, 3> p{};
        for (int a = 0; a < 3; ++a) p[a] = points[lo][a] * (1.0 - w) + points[hi][a] * w;
        return p;
    }
};

inline CurveSamples sample_curve(const std::vector<std::array<double, 3>>& controls,
                                 std::size_t count) {
    CurveSamples c;
    c.points.reserve(count);
    c.arc.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(count - 1);
        c.points.push_back(catmull_rom(controls, t));
        if (i == 0) {
            c.arc.push_back(0.0);
        } else {
            double d2 = 0.0;
            for (int a = 0; a < 3; ++a) {
                const double dv = c.points[i][a] - c.points[i - 1][a];
                d2 += dv * dv;
            }
            c.arc.push_back(c.arc.back() + std::sqrt(d2));
        }
    }
    return c;
}

}  // namespace detail

inline constexpr std::array<double, 4> kLandmarkFractions{0.02, 0.35, 0.55, 0.98};

// Deterministic aorta-like sample: a smooth candy-cane tube of varying radius
// over a structured noisy background, with four landmarks at (jittered)
// arc-length fractions of the curve. Fully determined by (seed, params).
inline SyntheticSample generate_sample(std::uint64_t seed, const GenParams& params) {
    params.validate();
    Rng rng(seed);
    const std::size_t d = params.d();
    const auto& dims = params.dims;

    SyntheticSample sample;
    sample.gen_seed = seed;

    const double margin_extra = 2.0;
    detail::CurveSamples curve;
    std::vector<std::array<double, 3>> controls;
    constexpr int kMaxJitterRetries = 8;
    for (int attempt = 0;; ++attempt) {
        controls = detail::canonical_controls(d);
        std::vector<double> drawn;
        for (auto& p : controls)
            for (std::size_t a = 0; a < d; ++a) {
                const double j = rng.normal(0.0, params.jitter);
                drawn.push_back(j);
                p[a] = p[a] * static_cast<double>(dims[a] - 1) + j;
            }
        std::size_t max_dim = 0;
        for (std::size_t s : dims) max_dim = std::max(max_dim, s);
        curve = detail::sample_curve(controls, 8 * max_dim);

        bool inside = true;
        for (const auto& p : curve.points) {
            for (std::size_t a = 0; a < d && inside; ++a) {
                const double lim = params.radius_max + margin_extra;
                if (p[a] < lim || p[a] > static_cast<double>(dims[a] - 1) - lim) inside = false;
            }
            if (!inside) break;
        }
        if (inside) {
            sample.deformation = std::move(drawn);
            break;
        }
        if (attempt == kMaxJitterRetries)
            throw DataError("generator: curve exits the volume after jitter (seed " +
                            std::to_string(seed) + ")");
    }

    // landmark arc fractions with small jitter; ordering is preserved by the
    // wide spacing of the canonical fractions
    std::array<double, 4> fractions{};
    const double frac_sd = 0.003 * params.jitter;
    for (std::size_t i = 0; i < 4; ++i) {
        const double j = rng.normal(0.0, frac_sd);
        sample.deformation.push_back(j);
        fractions[i] = std::clamp(kLandmarkFractions[i] + j, 0.0, 1.0);
    }

    sample.landmarks.spacing = params.spacing;
    for (std::size_t i = 0; i < 4; ++i) {
        const auto p = curve.at_fraction(fractions[i]);
        std::vector<double> coord(d);
        for (std::size_t a = 0; a < d; ++a)
            coord[a] = std::clamp(p[a], 0.0, static_cast<double>(dims[a] - 1));
        sample.landmarks.coords.push_back(std::move(coord));
        sample.landmarks.present.push_back(1);
    }

    // radius taper (ascending wider than descending) with a gentle wobble
    const double wobble_amp = 0.15 * (params.radius_max - params.radius_min);
    const double wobble_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    auto radius_at = [&](double t) {
        return params.radius_max - (params.radius_max - params.radius_min) * t +
               wobble_amp * std::sin(4.0 * std::numbers::pi * t + wobble_phase);
    };

    // background: base level, a few smooth blobs, then white noise
    std::size_t N = 1;
    for (std::size_t s : dims) N *= s;
    std::vector<std::size_t> image_shape{1};
    for (std::size_t s : dims) image_shape.push_back(s);
    sample.image = Tensor(image_shape, 0.15);
    sample.mask = Tensor(std::vector<std::size_t>(dims.begin(), dims.end()), 0.0);

    struct Blob {
        std::array<double, 3> center;
        double sigma, amp;
    };
    std::vector<Blob> blobs(3);
    for (auto& blob : blobs) {
        for (std::size_t a = 0; a < d; ++a)
            blob.center[a] = rng.uniform(0.0, static_cast<double>(dims[a] - 1));
        blob.sigma = rng.uniform(5.0, 14.0);
        blob.amp = rng.uniform(-3.0, 3.0) * params.noise;
    }

    // short vessel-like distractor arcs: locally they imitate the tube, so
    // only the global landmark configuration disambiguates
    struct Arc {
        std::array<double, 3> center;
        double dir, curve, half_len, radius, amp;
    };
    std::vector<Arc> arcs(2);
    for (auto& arc : arcs) {
        for (std::size_t a = 0; a < d; ++a) {
            const double lim = 0.15 * static_cast<double>(dims[a] - 1);
            arc.center[a] = rng.uniform(lim, static_cast<double>(dims[a] - 1) - lim);
        }
        arc.dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
        arc.curve = rng.uniform(-0.04, 0.04);
        arc.half_len = rng.uniform(7.0, 12.0);
        arc.radius = rng.uniform(0.55, 0.8) * params.radius_min;
        arc.amp = rng.uniform(3.0, 5.0) * params.noise;
    }
    std::vector<std::array<double, 3>> arc_points;
    std::vector<double> arc_radius, arc_amp;
    for (const auto& arc : arcs) {
        for (double t = -arc.half_len; t <= arc.half_len; t += 0.5) {
            const double angle = arc.dir + arc.curve * t;
            std::array<double, 3> p = arc.center;
            p[d - 2] += t * std::cos(angle);
            p[d - 1] += t * std::sin(angle);
            bool inside = true;
            for (std::size_t a = 0; a < d; ++a)
                if (p[a] < 1.0 || p[a] > static_cast<double>(dims[a] - 2)) inside = false;
            if (!inside) continue;
            arc_points.push_back(p);
            arc_radius.push_back(arc.radius);
            arc_amp.push_back(arc.amp);
        }
    }

    const double edge_width = 1.2;
    double* img = sample.image.raw();
    double* msk = sample.mask.raw();
    std::vector<std::size_t> idx(d, 0);
    for (std::size_t v = 0; v < N; ++v) {
        std::size_t rem = v;
        for (std::size_t a = d; a-- > 0;) {
            idx[a] = rem % dims[a];
            rem /= dims[a];
        }
        // nearest curve sample (brute force; desk-scale volumes)
        double best = 1e30;
        std::size_t best_i = 0;
        for (std::size_t i = 0; i < curve.points.size(); ++i) {
            double d2 = 0.0;
            for (std::size_t a = 0; a < d; ++a) {
                const double dv = static_cast<double>(idx[a]) - curve.points[i][a];
                d2 += dv * dv;
            }
            if (d2 < best) {
                best = d2;
                best_i = i;
            }
        }
        const double dist = std::sqrt(best);
        const double t = curve.arc[best_i] / curve.length();
        const double radius = radius_at(t);
        const double soft = std::clamp(0.5 + (radius - dist) / edge_width, 0.0, 1.0);
        img[v] += params.contrast * soft;
        msk[v] = dist <= radius ? 1.0 : 0.0;

        for (const auto& blob : blobs) {
            double d2 = 0.0;
            for (std::size_t a = 0; a < d; ++a) {
                const double dv = static_cast<double>(idx[a]) - blob.center[a];
                d2 += dv * dv;
            }
            img[v] += blob.amp * std::exp(-d2 / (2.0 * blob.sigma * blob.sigma));
        }

        double arc_val = 0.0;
        for (std::size_t i = 0; i < arc_points.size(); ++i) {
            double d2 = 0.0;
            for (std::size_t a = 0; a < d; ++a) {
                const double dv = static_cast<double>(idx[a]) - arc_points[i][a];
                d2 += dv * dv;
            }
            const double adist = std::sqrt(d2);
            const double soft = std::clamp(0.5 + (arc_radius[i] - adist) / edge_width, 0.0, 1.0);
            arc_val = std::max(arc_val, arc_amp[i] * soft);
        }
        img[v] += arc_val;
    }
    for (std::size_t v = 0; v < N; ++v) {
        img[v] += rng.normal(0.0, params.noise);
        img[v] = std::clamp(img[v], 0.0, 1.0);
    }
    return sample;
}

// Clamp raw intensities to [clip_lo, clip_hi] and map affinely to [0, 1].
inline Tensor preprocess_intensity(const Tensor& raw, double clip_lo, double clip_hi) {
    if (!(clip_lo < clip_hi)) throw ConfigError("preprocess: clip_lo must be below clip_hi");
    Tensor out(raw.shape());
    const double span = clip_hi - clip_lo;
    for (std::size_t i = 0; i < raw.numel(); ++i) {
        const double v = std::clamp(raw.raw()[i], clip_lo, clip_hi);
        out.raw()[i] = (v - clip_lo) / span;
    }
    return out;
}

struct CropPadResult {
    Tensor image;                // [1, target...]
    std::vector<double> offset;  // add to landmark coordinates per axis
};

// Center-crop or zero-pad each spatial axis to the target size.
inline CropPadResult center_crop_pad(const Tensor& image, const std::vector<std::size_t>& target) {
    if (image.rank() != target.size() + 1 || image.dim(0) != 1)
        throw ShapeError("center_crop_pad: expected [1, spatial...] matching target rank");
    const std::size_t d = target.size();
    std::vector<std::size_t> out_shape{1};
    for (std::size_t s : target) out_shape.push_back(s);
    CropPadResult result;
    result.image = Tensor(out_shape, 0.0);
    result.offset.assign(d, 0.0);

    std::vector<long> src_start(d), dst_start(d), copy(d);
    for (std::size_t a = 0; a < d; ++a) {
        const long s = static_cast<long>(image.dim(1 + a));
        const long t = static_cast<long>(target[a]);
        if (t >= s) {
            dst_start[a] = (t - s) / 2;
            src_start[a] = 0;
            copy[a] = s;
        } else {
            dst_start[a] = 0;
            src_start[a] = (s - t) / 2;
            copy[a] = t;
        }
        result.offset[a] = static_cast<double>(dst_start[a] - src_start[a]);
    }

    std::vector<std::size_t> in_sp(d), out_sp(d);
    for (std::size_t a = 0; a < d; ++a) {
        in_sp[a] = image.dim(1 + a);
        out_sp[a] = target[a];
    }
    std::size_t copy_n = 1;
    for (std::size_t a = 0; a < d; ++a) copy_n *= static_cast<std::size_t>(copy[a]);
    std::vector<std::size_t> cidx(d, 0);
    for (std::size_t v = 0; v < copy_n; ++v) {
        std::size_t rem = v;
        for (std::size_t a = d; a-- > 0;) {
            cidx[a] = rem % static_cast<std::size_t>(copy[a]);
            rem /= static_cast<std::size_t>(copy[a]);
        }
        std::size_t src = 0, dst = 0;
        for (std::size_t a = 0; a < d; ++a) {
            src = src * in_sp[a] + cidx[a] + static_cast<std::size_t>(src_start[a]);
            dst = dst * out_sp[a] + cidx[a] + static_cast<std::size_t>(dst_start[a]);
        }
        result.image.raw()[dst] = image.raw()[src];
    }
    return result;
}

namespace detail {

// In-plane rotation: 2D rotates the (y, x) axes; 3D rotates (y, x) per slice.
// Output voxels sample the input at the back-rotated position (bilinear,
// zeros outside).
inline Tensor rotate_field(const Tensor& field, double angle_rad, std::size_t channel_axes) {
    const std::size_t rank = field.rank();
    const std::size_t d = rank - channel_axes;
    const std::size_t ay = rank - 2, ax = rank - 1;  // rotated axes
    const double cy = (static_cast<double>(field.dim(ay)) - 1.0) / 2.0;
    const double cx = (static_cast<double>(field.dim(ax)) - 1.0) / 2.0;
    const double c = std::cos(angle_rad), s = std::sin(angle_rad);

    Tensor out(field.shape());
    std::size_t outer = 1;
    for (std::size_t a = 0; a + 2 < rank; ++a) outer *= field.dim(a);
    const std::size_t H = field.dim(ay), W = field.dim(ax);
    for (std::size_t o = 0; o < outer; ++o) {
        const double* src = field.raw() + o * H * W;
        double* dst = out.raw() + o * H * W;
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                // inverse rotation of the output coordinate
                const double ry = static_cast<double>(y) - cy;
                const double rx = static_cast<double>(x) - cx;
                const double sy = c * ry + s * rx + cy;
                const double sx = -s * ry + c * rx + cx;
                const long y0 = static_cast<long>(std::floor(sy));
                const long x0 = static_cast<long>(std::floor(sx));
                const double fy = sy - static_cast<double>(y0);
                const double fx = sx - static_cast<double>(x0);
                double acc = 0.0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const long yy = y0 + dy, xx = x0 + dx;
                        if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W))
                            continue;
                        const double w = (dy ? fy : 1.0 - fy) * (dx ? fx : 1.0 - fx);
                        acc += w * src[static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)];
                    }
                dst[y * W + x] = acc;
            }
    }
    (void)d;
    return out;
}

}  // namespace detail

// Training-time augmentation: uniform in-plane rotation about the volume
// center (landmarks transformed by the same rotation, clamped to bounds with
// a flag) followed by additive Gaussian noise re-clamped to [0, 1].
inline SyntheticSample augment(const SyntheticSample& sample, Rng& rng, double noise_std,
                               double max_angle_deg) {
    const std::size_t d = sample.landmarks.dims();
    SyntheticSample out = sample;
    const double angle = rng.uniform(-max_angle_deg, max_angle_deg) * std::numbers::pi / 180.0;

    out.image = detail::rotate_field(sample.image, angle, 1);
    Tensor mask_rot = detail::rotate_field(sample.mask, angle, 0);
    out.mask = Tensor(sample.mask.shape());
    for (std::size_t i = 0; i < mask_rot.numel(); ++i)
        out.mask.raw()[i] = mask_rot.raw()[i] >= 0.5 ? 1.0 : 0.0;

    const std::size_t ay = d - 2, ax = d - 1;
    const double cy = (static_cast<double>(sample.image.dim(1 + ay)) - 1.0) / 2.0;
    const double cx = (static_cast<double>(sample.image.dim(1 + ax)) - 1.0) / 2.0;
    const double c = std::cos(angle), s = std::sin(angle);
    out.landmarks_clamped = false;
    for (std::size_t i = 0; i < out.landmarks.count(); ++i) {
        auto& coord = out.landmarks.coords[i];
        const double ry = coord[ay] - cy;
        const double rx = coord[ax] - cx;
        coord[ay] = c * ry - s * rx + cy;
        coord[ax] = s * ry + c * rx + cx;
        for (std::size_t a = 0; a < d; ++a) {
            const double hi = static_cast<double>(sample.image.dim(1 + a) - 1);
            if (coord[a] < 0.0 || coord[a] > hi) {
                coord[a] = std::clamp(coord[a], 0.0, hi);
                out.landmarks_clamped = true;
            }
        }
    }

    for (std::size_t i = 0; i < out.image.numel(); ++i) {
        out.image.raw()[i] =
            std::clamp(out.image.raw()[i] + rng.normal(0.0, noise_std), 0.0, 1.0);
    }
    return out;
}

struct Dataset {
    GenParams params;
    std::vector<SyntheticSample> samples;

    std::size_t size() const { return samples.size(); }
};

inline Dataset generate_dataset(std::size_t count, std::uint64_t master_seed,
                                const GenParams& params) {
    if (count == 0) throw ConfigError("dataset: sample count must be positive");
    Dataset ds;
    ds.params = params;
    ds.samples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Rng seeder = Rng::derive(master_seed, Stream::Generator, i);
        ds.samples.push_back(generate_sample(seeder.next_u64(), params));
    }
    return ds;
}

inline nlohmann::json gen_params_to_json(const GenParams& p) {
    return nlohmann::json{{"dims", p.dims},         {"radius_min", p.radius_min},
                          {"radius_max", p.radius_max}, {"jitter", p.jitter},
                          {"contrast", p.contrast},     {"noise", p.noise},
                          {"spacing", p.spacing}};
}

inline void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& known,
                                const std::string& context) {
    std::string offending;
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const auto& k : known)
            if (it.key() == k) ok = true;
        if (!ok) offending += (offending.empty() ? "" : ", ") + it.key();
    }
    if (!offending.empty())
        throw ConfigError(context + ": unknown keys: " + offending);
}

inline GenParams gen_params_from_json(const nlohmann::json& j) {
    reject_unknown_keys(
        j, {"dims", "radius_min", "radius_max", "jitter", "contrast", "noise", "spacing"},
        "generator params");
    GenParams p;
    if (j.contains("dims")) p.dims = j.at("dims").get<std::vector<std::size_t>>();
    if (j.contains("radius_min")) p.radius_min = j.at("radius_min").get<double>();
    if (j.contains("radius_max")) p.radius_max = j.at("radius_max").get<double>();
    if (j.contains("jitter")) p.jitter = j.at("jitter").get<double>();
    if (j.contains("contrast")) p.contrast = j.at("contrast").get<double>();
    if (j.contains("noise")) p.noise = j.at("noise").get<double>();
    if (j.contains("spacing")) p.spacing = j.at("spacing").get<std::vector<double>>();
    if (p.spacing.size() != p.dims.size() && p.dims.size() == 3 && p.spacing.size() == 2)
        p.spacing = {p.spacing[0], p.spacing[0], p.spacing[0]};
    p.validate();
    return p;
}

inline std::string sample_id(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "sample_%04zu", index);
    return buf;
}

// Dataset directory: manifest.json plus per-sample TNSR images/masks and a
// landmark CSV. The manifest records gen_seed and content digests so a
// rebuild can verify integrity.
inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["version"] = 1;
    manifest["params"] = gen_params_to_json(ds.params);
    manifest["samples"] = nlohmann::json::array();
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& s = ds.samples[i];
        const std::string id = sample_id(i);
        const auto sub = dir / id;
        std::filesystem::create_directories(sub);
        save_tensor(s.image, sub / "image.tnsr");
        save_tensor(s.mask, sub / "mask.tnsr");
        write_landmarks_csv(s.landmarks, sub / "landmarks.csv");
        nlohmann::json entry;
        entry["sample_id"] = id;
        entry["gen_seed"] = s.gen_seed;
        entry["image"] = id + "/image.tnsr";
        entry["landmarks"] = id + "/landmarks.csv";
        entry["mask"] = id + "/mask.tnsr";
        entry["image_digest"] = digest_file(sub / "image.tnsr");
        entry["mask_digest"] = digest_file(sub / "mask.tnsr");
        entry["landmarks_digest"] = digest_file(sub / "landmarks.csv");
        manifest["samples"].push_back(entry);
    }
    write_file_bytes(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline Dataset load_dataset(const std::filesystem::path& dir, bool verify_digests = true) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path))
        throw DataError("dataset: missing manifest " + manifest_path.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_file_bytes(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("dataset: cannot parse manifest: " + std::string(e.what()));
    }
    Dataset ds;
    ds.params = gen_params_from_json(manifest.at("params"));
    for (const auto& entry : manifest.at("samples")) {
        SyntheticSample s;
        s.gen_seed = entry.at("gen_seed").get<std::uint64_t>();
        const auto image_path = dir / entry.at("image").get<std::string>();
        const auto mask_path = dir / entry.at("mask").get<std::string>();
        const auto lm_path = dir / entry.at("landmarks").get<std::string>();
        if (verify_digests) {
            if (digest_file(image_path) != entry.at("image_digest").get<std::string>())
                throw DataError("dataset: digest mismatch for " + image_path.string());
            if (digest_file(mask_path) != entry.at("mask_digest").get<std::string>())
                throw DataError("dataset: digest mismatch for " + mask_path.string());
            if (digest_file(lm_path) != entry.at("landmarks_digest").get<std::string>())
                throw DataError("dataset: digest mismatch for " + lm_path.string());
        }
        s.image = load_tensor(image_path);
        s.mask = load_tensor(mask_path);
        s.landmarks = read_landmarks_csv(lm_path, ds.params.spacing);
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty()) throw DataError("dataset: manifest lists no samples");
    return ds;
}

}  // namespace topoland
