#pragma once

#include <algorithm>
#include <cstring>
#include <string>
#include <vector>

#include "topoland/tensor.hpp"

namespace topoland {

namespace detail {

// C[m,n] = A[m,k] * B[k,n]. Panel over columns keeps the B panel L2-resident;
// the inner loop is an independent-element update, so -O3 vectorizes it
// without reassociation.
inline void matmul(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
                   std::size_t n) {
    std::fill(C, C + m * n, 0.0);
    constexpr std::size_t kPanel = 512;
    for (std::size_t j0 = 0; j0 < n; j0 += kPanel) {
        const std::size_t j1 = std::min(n, j0 + kPanel);
        const std::size_t w = j1 - j0;
        for (std::size_t i = 0; i < m; ++i) {
            const double* a = A + i * k;
            double* cj = C + i * n + j0;
            std::size_t kk = 0;
            // 4-way unroll keeps the C row in registers across taps
            for (; kk + 4 <= k; kk += 4) {
                const double a0 = a[kk], a1 = a[kk + 1], a2 = a[kk + 2], a3 = a[kk + 3];
                const double* b0 = B + (kk + 0) * n + j0;
                const double* b1 = B + (kk + 1) * n + j0;
                const double* b2 = B + (kk + 2) * n + j0;
                const double* b3 = B + (kk + 3) * n + j0;
                for (std::size_t j = 0; j < w; ++j)
                    cj[j] += (a0 * b0[j] + a1 * b1[j]) + (a2 * b2[j] + a3 * b3[j]);
            }
            for (; kk < k; ++kk) {
                const double av = a[kk];
                const double* b = B + kk * n + j0;
                for (std::size_t j = 0; j < w; ++j) cj[j] += av * b[j];
            }
        }
    }
}

// C[m,n] = A^T * B with A stored [k,m].
inline void matmul_at(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
                      std::size_t n) {
    std::fill(C, C + m * n, 0.0);
    constexpr std::size_t kPanel = 512;
    for (std::size_t j0 = 0; j0 < n; j0 += kPanel) {
        const std::size_t j1 = std::min(n, j0 + kPanel);
        const std::size_t w = j1 - j0;
        for (std::size_t i = 0; i < m; ++i) {
            double* cj = C + i * n + j0;
            std::size_t kk = 0;
            for (; kk + 4 <= k; kk += 4) {
                const double a0 = A[(kk + 0) * m + i], a1 = A[(kk + 1) * m + i];
                const double a2 = A[(kk + 2) * m + i], a3 = A[(kk + 3) * m + i];
                const double* b0 = B + (kk + 0) * n + j0;
                const double* b1 = B + (kk + 1) * n + j0;
                const double* b2 = B + (kk + 2) * n + j0;
                const double* b3 = B + (kk + 3) * n + j0;
                for (std::size_t j = 0; j < w; ++j)
                    cj[j] += (a0 * b0[j] + a1 * b1[j]) + (a2 * b2[j] + a3 * b3[j]);
            }
            for (; kk < k; ++kk) {
                const double av = A[kk * m + i];
                const double* b = B + kk * n + j0;
                for (std::size_t j = 0; j < w; ++j) cj[j] += av * b[j];
            }
        }
    }
}

// C[m,n] = A * B^T with B stored [n,k]; eight accumulators keep the dot
// product chains independent.
inline void matmul_bt(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
                      std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) {
        const double* b = B + j * k;
        for (std::size_t i = 0; i < m; ++i) {
            const double* a = A + i * k;
            double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
            std::size_t kk = 0;
            for (; kk + 8 <= k; kk += 8)
                for (std::size_t u = 0; u < 8; ++u) acc[u] += a[kk + u] * b[kk + u];
            double s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
            for (; kk < k; ++kk) s += a[kk] * b[kk];
            C[i * n + j] = s;
        }
    }
}

struct ConvGeometry {
    std::size_t d = 0;           // spatial rank
    std::size_t c_in = 0, c_out = 0;
    std::size_t in[3] = {1, 1, 1};
    std::size_t kernel[3] = {1, 1, 1};
    std::size_t out[3] = {1, 1, 1};
    std::size_t pad_in[3] = {1, 1, 1};
    int stride = 1, padding = 0;
    std::size_t in_spatial() const { return in[0] * in[1] * in[2]; }
    std::size_t out_spatial() const { return out[0] * out[1] * out[2]; }
    std::size_t pad_spatial() const { return pad_in[0] * pad_in[1] * pad_in[2]; }
    std::size_t kernel_size() const { return kernel[0] * kernel[1] * kernel[2]; }
};

inline ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight, const Tensor& bias,
                                  int stride, int padding) {
    ConvGeometry g;
    if (input.rank() < 3 || input.rank() > 4)
        throw ShapeError("conv_nd: unsupported spatial rank " +
                         std::to_string(input.rank() >= 1 ? input.rank() - 1 : 0) +
                         "; expected 2 or 3 (input " + input.shape_string() + ")");
    g.d = input.rank() - 1;
    if (weight.rank() != g.d + 2)
        throw ShapeError("conv_nd: weight rank " + std::to_string(weight.rank()) +
                         " does not match input rank; expected " + std::to_string(g.d + 2));
    if (stride < 1) throw ShapeError("conv_nd: stride must be >= 1");
    if (padding < 0) throw ShapeError("conv_nd: padding must be >= 0");
    g.stride = stride;
    g.padding = padding;
    g.c_out = weight.dim(0);
    g.c_in = weight.dim(1);
    if (input.dim(0) != g.c_in)
        throw ShapeError("conv_nd: channel axis mismatch: input has " + std::to_string(input.dim(0)) +
                         " channels, weight expects " + std::to_string(g.c_in));
    if (bias.numel() != g.c_out)
        throw ShapeError("conv_nd: bias axis mismatch: got " + std::to_string(bias.numel()) +
                         ", expected " + std::to_string(g.c_out));
    for (std::size_t a = 0; a < g.d; ++a) {
        g.in[a] = input.dim(1 + a);
        g.kernel[a] = weight.dim(2 + a);
        const std::size_t padded = g.in[a] + 2 * static_cast<std::size_t>(padding);
        if (g.kernel[a] > padded)
            throw ShapeError("conv_nd: kernel does not fit padded input on spatial axis " +
                             std::to_string(a) + " (" + std::to_string(g.kernel[a]) + " > " +
                             std::to_string(padded) + ")");
        g.pad_in[a] = padded;
        g.out[a] = (padded - g.kernel[a]) / static_cast<std::size_t>(stride) + 1;
    }
    return g;
}

inline std::vector<double> pad_input(const double* x, const ConvGeometry& g) {
    std::vector<double> xp(g.c_in * g.pad_spatial(), 0.0);
    const std::size_t p = static_cast<std::size_t>(g.padding);
    if (g.d == 2) {
        for (std::size_t c = 0; c < g.c_in; ++c)
            for (std::size_t y = 0; y < g.in[0]; ++y)
                std::memcpy(&xp[(c * g.pad_in[0] + y + p) * g.pad_in[1] + p],
                            &x[(c * g.in[0] + y) * g.in[1]], g.in[1] * sizeof(double));
    } else {
        for (std::size_t c = 0; c < g.c_in; ++c)
            for (std::size_t z = 0; z < g.in[0]; ++z)
                for (std::size_t y = 0; y < g.in[1]; ++y)
                    std::memcpy(&xp[((c * g.pad_in[0] + z + p) * g.pad_in[1] + y + p) * g.pad_in[2] + p],
                                &x[((c * g.in[0] + z) * g.in[1] + y) * g.in[2]], g.in[2] * sizeof(double));
    }
    return xp;
}

// Valid output range on one spatial axis for a given kernel offset: the set
// of o with 0 <= o*s + k - p < size.
struct AxisRange {
    std::size_t begin = 0, end = 0;  // [begin, end)
    long offset = 0;                 // input coordinate at o = 0
};

inline AxisRange axis_range(std::size_t out, std::size_t size, std::size_t s, std::size_t k,
                            std::size_t p) {
    AxisRange r;
    const long off = static_cast<long>(k) - static_cast<long>(p);
    r.offset = off;
    long lo = 0;
    if (off < 0) lo = (-off + static_cast<long>(s) - 1) / static_cast<long>(s);
    long hi = static_cast<long>(out);  // exclusive
    const long max_in = static_cast<long>(size) - 1 - off;
    if (max_in < 0)
        hi = lo;
    else
        hi = std::min<long>(hi, max_in / static_cast<long>(s) + 1);
    r.begin = static_cast<std::size_t>(std::max<long>(lo, 0));
    r.end = static_cast<std::size_t>(std::max<long>(hi, static_cast<long>(r.begin)));
    return r;
}

// cols[c_in*K, P] gathered straight from the unpadded input; out-of-bounds
// taps are zero.
inline void im2col(const double* x, std::vector<double>& cols, const ConvGeometry& g) {
    const std::size_t P = g.out_spatial();
    const std::size_t s = static_cast<std::size_t>(g.stride);
    const std::size_t p = static_cast<std::size_t>(g.padding);
    cols.assign(g.c_in * g.kernel_size() * P, 0.0);
    if (g.d == 2) {
        const std::size_t H = g.in[0], W = g.in[1];
        std::size_t r = 0;
        for (std::size_t c = 0; c < g.c_in; ++c)
            for (std::size_t ky = 0; ky < g.kernel[0]; ++ky) {
                const AxisRange ry = axis_range(g.out[0], H, s, ky, p);
                for (std::size_t kx = 0; kx < g.kernel[1]; ++kx, ++r) {
                    const AxisRange rx = axis_range(g.out[1], W, s, kx, p);
                    double* base = &cols[r * P];
                    const std::size_t span = rx.end - rx.begin;
                    if (span == 0) continue;
                    for (std::size_t oy = ry.begin; oy < ry.end; ++oy) {
                        const std::size_t iy = oy * s + static_cast<std::size_t>(
                                                             static_cast<long>(ky) - static_cast<long>(p));
                        const double* src =
                            &x[(c * H + iy) * W +
                               static_cast<std::size_t>(static_cast<long>(rx.begin * s) + rx.offset)];
                        double* dst = base + oy * g.out[1] + rx.begin;
                        if (s == 1) {
                            std::memcpy(dst, src, span * sizeof(double));
                        } else {
                            for (std::size_t i = 0; i < span; ++i) dst[i] = src[i * s];
                        }
                    }
                }
            }
    } else {
        const std::size_t D = g.in[0], H = g.in[1], W = g.in[2];
        std::size_t r = 0;
        for (std::size_t c = 0; c < g.c_in; ++c)
            for (std::size_t kz = 0; kz < g.kernel[0]; ++kz) {
                const AxisRange rz = axis_range(g.out[0], D, s, kz, p);
                for (std::size_t ky = 0; ky < g.kernel[1]; ++ky) {
                    const AxisRange ry = axis_range(g.out[1], H, s, ky, p);
                    for (std::size_t kx = 0; kx < g.kernel[2]; ++kx, ++r) {
                        const AxisRange rx = axis_range(g.out[2], W, s, kx, p);
                        double* base = &cols[r * P];
                        const std::size_t span = rx.end - rx.begin;
                        if (span == 0) continue;
                        for (std::size_t oz = rz.begin; oz < rz.end; ++oz) {
                            const std::size_t iz =
                                oz * s + static_cast<std::size_t>(static_cast<long>(kz) -
                                                                  static_cast<long>(p));
                            for (std::size_t oy = ry.begin; oy < ry.end; ++oy) {
                                const std::size_t iy =
                                    oy * s + static_cast<std::size_t>(static_cast<long>(ky) -
                                                                      static_cast<long>(p));
                                const double* src =
                                    &x[((c * D + iz) * H + iy) * W +
                                       static_cast<std::size_t>(static_cast<long>(rx.begin * s) +
                                                                rx.offset)];
                                double* dst = base + (oz * g.out[1] + oy) * g.out[2] + rx.begin;
                                if (s == 1) {
                                    std::memcpy(dst, src, span * sizeof(double));
                                } else {
                                    for (std::size_t i = 0; i < span; ++i) dst[i] = src[i * s];
                                }
                            }
                        }
                    }
                }
            }
    }
}

// Scatter-add of column gradients back onto the (unpadded) input gradient.
inline void col2im_accumulate(const std::vector<double>& dcols, double* dx, const ConvGeometry& g) {
    const std::size_t P = g.out_spatial();
    const std::size_t s = static_cast<std::size_t>(g.stride);
    const std::size_t p = static_cast<std::size_t>(g.padding);
    if (g.d == 2) {
        const std::size_t H = g.in[0], W = g.in[1];
        std::size_t r = 0;
        for (std::size_t c = 0; c < g.c_in; ++c)
            for (std::size_t ky = 0; ky < g.kernel[0]; ++ky) {
                const AxisRange ry = axis_range(g.out[0], H, s, ky, p);
                for (std::size_t kx = 0; kx < g.kernel[1]; ++kx, ++r) {
                    const AxisRange rx = axis_range(g.out[1], W, s, kx, p);
                    const double* base = &dcols[r * P];
                    const std::size_t span = rx.end - rx.begin;
                    if (span == 0) continue;
                    for (std::size_t oy = ry.begin; oy < ry.end; ++oy) {
                        const std::size_t iy = oy * s + static_cast<std::size_t>(
                                                             static_cast<long>(ky) - static_cast<long>(p));
                        double* dst =
                            &dx[(c * H + iy) * W +
                                static_cast<std::size_t>(static_cast<long>(rx.begin * s) + rx.offset)];
                        const double* src = base + oy * g.out[1] + rx.begin;
                        if (s == 1) {
                            for (std::size_t i = 0; i < span; ++i) dst[i] += src[i];
                        } else {
                            for (std::size_t i = 0; i < span; ++i) dst[i * s] += src[i];
                        }
                    }
                }
            }
    } else {
        const std::size_t D = g.in[0], H = g.in[1], W = g.in[2];
        std::size_t r = 0;
        for (std::size_t c = 0; c < g.c_in; ++c)
            for (std::size_t kz = 0; kz < g.kernel[0]; ++kz) {
                const AxisRange rz = axis_range(g.out[0], D, s, kz, p);
                for (std::size_t ky = 0; ky < g.kernel[1]; ++ky) {
                    const AxisRange ry = axis_range(g.out[1], H, s, ky, p);
                    for (std::size_t kx = 0; kx < g.kernel[2]; ++kx, ++r) {
                        const AxisRange rx = axis_range(g.out[2], W, s, kx, p);
                        const double* base = &dcols[r * P];
                        const std::size_t span = rx.end - rx.begin;
                        if (span == 0) continue;
                        for (std::size_t oz = rz.begin; oz < rz.end; ++oz) {
                            const std::size_t iz =
                                oz * s + static_cast<std::size_t>(static_cast<long>(kz) -
                                                                  static_cast<long>(p));
                            for (std::size_t oy = ry.begin; oy < ry.end; ++oy) {
                                const std::size_t iy =
                                    oy * s + static_cast<std::size_t>(static_cast<long>(ky) -
                                                                      static_cast<long>(p));
                                double* dst =
                                    &dx[((c * D + iz) * H + iy) * W +
                                        static_cast<std::size_t>(static_cast<long>(rx.begin * s) +
                                                                 rx.offset)];
                                const double* src = base + (oz * g.out[1] + oy) * g.out[2] + rx.begin;
                                if (s == 1) {
                                    for (std::size_t i = 0; i < span; ++i) dst[i] += src[i];
                                } else {
                                    for (std::size_t i = 0; i < span; ++i) dst[i * s] += src[i];
                                }
                            }
                        }
                    }
                }
            }
    }
}

inline std::vector<std::size_t> conv_output_shape(const ConvGeometry& g) {
    std::vector<std::size_t> shape{g.c_out};
    for (std::size_t a = 0; a < g.d; ++a) shape.push_back(g.out[a]);
    return shape;
}

}  // namespace detail

enum class ConvImpl { Im2col, Direct };

// Cross-correlation over 2 or 3 spatial axes; output size per axis is
// floor((S + 2*padding - k)/stride) + 1. The direct path is the reference the
// im2col path is tested against.
inline Tensor conv_nd(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride = 1,
                      int padding = 0, ConvImpl impl = ConvImpl::Im2col) {
    const auto g = detail::conv_geometry(input, weight, bias, stride, padding);
    Tensor out(detail::conv_output_shape(g));
    const std::size_t P = g.out_spatial();

    if (impl == ConvImpl::Direct) {
        const auto xp = detail::pad_input(input.raw(), g);
        const std::size_t s = static_cast<std::size_t>(g.stride);
        for (std::size_t co = 0; co < g.c_out; ++co) {
            for (std::size_t p = 0; p < P; ++p) {
                std::size_t o[3] = {0, 0, 0};
                std::size_t rem = p;
                for (std::size_t a = g.d; a-- > 0;) {
                    o[a] = rem % g.out[a];
                    rem /= g.out[a];
                }
                double acc = bias.raw()[co];
                for (std::size_t ci = 0; ci < g.c_in; ++ci)
                    for (std::size_t kk = 0; kk < g.kernel_size(); ++kk) {
                        std::size_t kidx[3] = {0, 0, 0};
                        std::size_t krem = kk;
                        for (std::size_t a = g.d; a-- > 0;) {
                            kidx[a] = krem % g.kernel[a];
                            krem /= g.kernel[a];
                        }
                        std::size_t off = ci;
                        for (std::size_t a = 0; a < g.d; ++a)
                            off = off * g.pad_in[a] + o[a] * s + kidx[a];
                        const double wv = weight.raw()[(co * g.c_in + ci) * g.kernel_size() + kk];
                        acc += wv * xp[off];
                    }
                out.raw()[co * P + p] = acc;
            }
        }
    } else if (g.kernel_size() == 1 && g.stride == 1 && g.padding == 0) {
        // 1x1 kernel: already a plain matrix product over the input rows
        detail::matmul(weight.raw(), input.raw(), out.raw(), g.c_out, g.c_in, P);
        for (std::size_t co = 0; co < g.c_out; ++co) {
            const double bv = bias.raw()[co];
            double* row = out.raw() + co * P;
            for (std::size_t p = 0; p < P; ++p) row[p] += bv;
        }
    } else {
        std::vector<double> cols;
        detail::im2col(input.raw(), cols, g);
        detail::matmul(weight.raw(), cols.data(), out.raw(), g.c_out, g.c_in * g.kernel_size(), P);
        for (std::size_t co = 0; co < g.c_out; ++co) {
            const double bv = bias.raw()[co];
            double* row = out.raw() + co * P;
            for (std::size_t p = 0; p < P; ++p) row[p] += bv;
        }
    }

    Tape* tape = Tape::active();
    if (tape && (input.requires_grad() || weight.requires_grad() || bias.requires_grad())) {
        out.set_requires_grad(true);
        auto xi = input.impl();
        auto wi = weight.impl();
        auto bi = bias.impl();
        const int xn = tape->ensure_node(input);
        const int wn = tape->ensure_node(weight);
        const int bn = tape->ensure_node(bias);
        const int yn = tape->ensure_node(out);
        const bool pointwise = g.kernel_size() == 1 && g.stride == 1 && g.padding == 0;
        tape->record("conv_nd", {input, weight, bias}, out, [=](Tape& t) {
            const auto& gy = *t.node_grad(yn);
            const std::size_t CK = g.c_in * g.kernel_size();
            if (bi->requires_grad) {
                auto& db = t.node_grad_buffer(bn, g.c_out);
                for (std::size_t co = 0; co < g.c_out; ++co) {
                    double s = 0.0;
                    const double* row = gy.data() + co * P;
                    for (std::size_t p = 0; p < P; ++p) s += row[p];
                    db[co] += s;
                }
            }
            if (pointwise) {
                if (wi->requires_grad) {
                    std::vector<double> dw(g.c_out * CK);
                    detail::matmul_bt(gy.data(), xi->data.data(), dw.data(), g.c_out, P, CK);
                    auto& acc = t.node_grad_buffer(wn, wi->data.size());
                    for (std::size_t i = 0; i < dw.size(); ++i) acc[i] += dw[i];
                }
                if (xi->requires_grad) {
                    std::vector<double> dxm(CK * P);
                    detail::matmul_at(wi->data.data(), gy.data(), dxm.data(), CK, g.c_out, P);
                    auto& dx = t.node_grad_buffer(xn, xi->data.size());
                    for (std::size_t i = 0; i < dxm.size(); ++i) dx[i] += dxm[i];
                }
                return;
            }
            std::vector<double> cols;
            if (xi->requires_grad || wi->requires_grad) detail::im2col(xi->data.data(), cols, g);
            if (wi->requires_grad) {
                std::vector<double> dw(g.c_out * CK);
                detail::matmul_bt(gy.data(), cols.data(), dw.data(), g.c_out, P, CK);
                auto& acc = t.node_grad_buffer(wn, wi->data.size());
                for (std::size_t i = 0; i < dw.size(); ++i) acc[i] += dw[i];
            }
            if (xi->requires_grad) {
                std::vector<double> dcols(CK * P);
                detail::matmul_at(wi->data.data(), gy.data(), dcols.data(), CK, g.c_out, P);
                auto& dx = t.node_grad_buffer(xn, xi->data.size());
                detail::col2im_accumulate(dcols, dx.data(), g);
            }
        });
    }
    return out;
}

// Each spatial axis scaled by an integer factor via replication.
inline Tensor upsample_nearest(const Tensor& input, int factor) {
    if (factor < 1) throw ShapeError("upsample_nearest: factor must be >= 1");
    if (input.rank() < 2)
        throw ShapeError("upsample_nearest: expected [C, spatial...] input, got " + input.shape_string());
    const std::size_t f = static_cast<std::size_t>(factor);
    const std::size_t C = input.dim(0);
    const std::size_t d = input.rank() - 1;
    std::vector<std::size_t> in_sp(d), out_sp(d);
    std::vector<std::size_t> out_shape{C};
    for (std::size_t a = 0; a < d; ++a) {
        in_sp[a] = input.dim(1 + a);
        out_sp[a] = in_sp[a] * f;
        out_shape.push_back(out_sp[a]);
    }
    Tensor out(out_shape);
    const std::size_t out_n = detail::shape_numel(out_shape) / C;
    const std::size_t in_n = input.numel() / C;

    // rows = input rows per channel, row length = last axis
    const std::size_t in_w = in_sp[d - 1];
    const std::size_t out_w = out_sp[d - 1];
    const std::size_t rows = in_n / in_w;
    for (std::size_t c = 0; c < C; ++c) {
        const double* src_ch = input.raw() + c * in_n;
        double* dst_ch = out.raw() + c * out_n;
        for (std::size_t r = 0; r < rows; ++r) {
            // expand one input row into an output row buffer
            const double* src = src_ch + r * in_w;
            // destination row index: expand each leading axis coordinate by f
            std::size_t rem = r, dst_row = 0;
            for (std::size_t a = d - 1; a-- > 0;) {
                const std::size_t coord = rem % in_sp[a];
                rem /= in_sp[a];
                std::size_t mult = 1;
                for (std::size_t b = a + 1; b + 1 < d; ++b) mult *= out_sp[b];
                dst_row += coord * f * mult;
            }
            double* first = dst_ch + dst_row * out_w;
            if (f == 1) {
                std::memcpy(first, src, in_w * sizeof(double));
            } else {
                for (std::size_t x = 0; x < in_w; ++x) {
                    const double v = src[x];
                    for (std::size_t k = 0; k < f; ++k) first[x * f + k] = v;
                }
                // replicate the expanded row across the f rows of the
                // innermost expanded axis
                for (std::size_t k = 1; k < f; ++k)
                    std::memcpy(first + k * out_w, first, out_w * sizeof(double));
            }
        }
        // replicate blocks along any remaining expanded axes (3D: depth)
        if (d == 3 && f > 1) {
            const std::size_t plane = out_sp[1] * out_sp[2];
            for (std::size_t z = 0; z < in_sp[0]; ++z) {
                double* zfirst = dst_ch + z * f * plane;
                for (std::size_t k = 1; k < f; ++k)
                    std::memcpy(zfirst + k * plane, zfirst, plane * sizeof(double));
            }
        }
    }

    Tape* tape = Tape::active();
    if (tape && input.requires_grad()) {
        out.set_requires_grad(true);
        auto xi = input.impl();
        const int xn = tape->ensure_node(input);
        const int yn = tape->ensure_node(out);
        tape->record("upsample_nearest", {input}, out, [=](Tape& t) {
            const auto& gy = *t.node_grad(yn);
            auto& dx = t.node_grad_buffer(xn, xi->data.size());
            for (std::size_t c = 0; c < C; ++c) {
                const double* gch = gy.data() + c * out_n;
                double* dch = dx.data() + c * in_n;
                const std::size_t out_rows = out_n / out_w;
                for (std::size_t orow = 0; orow < out_rows; ++orow) {
                    // map the output row back to its source row
                    std::size_t rem = orow, src_row = 0;
                    for (std::size_t a = d - 1; a-- > 0;) {
                        const std::size_t coord = rem % out_sp[a];
                        rem /= out_sp[a];
                        std::size_t mult = 1;
                        for (std::size_t b = a + 1; b + 1 < d; ++b) mult *= in_sp[b];
                        src_row += (coord / f) * mult;
                    }
                    const double* g = gch + orow * out_w;
                    double* dst = dch + src_row * in_w;
                    for (std::size_t x = 0; x < in_w; ++x) {
                        double acc = 0.0;
                        for (std::size_t k = 0; k < f; ++k) acc += g[x * f + k];
                        dst[x] += acc;
                    }
                }
            }
        });
    }
    return out;
}

inline Tensor relu(const Tensor& input) {
    Tensor out(input.shape());
    for (std::size_t i = 0; i < input.numel(); ++i)
        out.raw()[i] = input.raw()[i] > 0.0 ? input.raw()[i] : 0.0;
    Tape* tape = Tape::active();
    if (tape && input.requires_grad()) {
        out.set_requires_grad(true);
        auto xi = input.impl();
        const int xn = tape->ensure_node(input);
        const int yn = tape->ensure_node(out);
        tape->record("relu", {input}, out, [=](Tape& t) {
            const auto& gy = *t.node_grad(yn);
            auto& dx = t.node_grad_buffer(xn, xi->data.size());
            for (std::size_t i = 0; i < gy.size(); ++i)
                if (xi->data[i] > 0.0) dx[i] += gy[i];
        });
    }
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shape mismatch " + a.shape_string() + " vs " + b.shape_string());
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.raw()[i] = a.raw()[i] + b.raw()[i];
    Tape* tape = Tape::active();
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        auto ai = a.impl();
        auto bi = b.impl();
        const int an = tape->ensure_node(a);
        const int bn = tape->ensure_node(b);
        const int yn = tape->ensure_node(out);
        tape->record("add", {a, b}, out, [=](Tape& t) {
            const auto& gy = *t.node_grad(yn);
            if (ai->requires_grad) {
                auto& da = t.node_grad_buffer(an, ai->data.size());
                for (std::size_t i = 0; i < gy.size(); ++i) da[i] += gy[i];
            }
            if (bi->requires_grad) {
                auto& db = t.node_grad_buffer(bn, bi->data.size());
                for (std::size_t i = 0; i < gy.size(); ++i) db[i] += gy[i];
            }
        });
    }
    return out;
}

inline Tensor mul_scalar(const Tensor& input, double c) {
    Tensor out(input.shape());
    for (std::size_t i = 0; i < input.numel(); ++i) out.raw()[i] = input.raw()[i] * c;
    Tape* tape = Tape::active();
    if (tape && input.requires_grad()) {
        out.set_requires_grad(true);
        auto xi = input.impl();
        const int xn = tape->ensure_node(input);
        const int yn = tape->ensure_node(out);
        tape->record("mul_scalar", {input}, out, [=](Tape& t) {
            const auto& gy = *t.node_grad(yn);
            auto& dx = t.node_grad_buffer(xn, xi->data.size());
            for (std::size_t i = 0; i < gy.size(); ++i) dx[i] += c * gy[i];
        });
    }
    return out;
}

// Concatenate along the channel axis (axis 0); spatial shapes must match.
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.rank() != b.rank() || a.rank() < 2)
        throw ShapeError("concat_channels: rank mismatch " + a.shape_string() + " vs " + b.shape_string());
    for (std::size_t i = 1; i < a.rank(); ++i)
        if (a.dim(i) != b.dim(i))
            throw ShapeError("concat_channels: spatial axis " + std::to_string(i - 1) + " mismatch " +
                             a.shape_string() + " vs " + b.shape_string());
    std::vector<std::size_t> shape = a.shape();
    shape[0] = a.dim(0) + b.dim(0);
    Tensor out(shape);
    std::memcpy(out.raw(), a.raw(), a.numel() * sizeof(double));
    std::memcpy(out.raw() + a.numel(), b.raw(), b.numel() * sizeof(double));
    Tape* tape = Tape::active();
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        auto ai = a.impl();
        auto bi = b.impl();
        const int an = tape->ensure_node(a);
        const int bn = tape->ensure_node(b);
        const int yn = tape->ensure_node(out);
        const std::size_t na = a.numel();
        tape->record("concat_channels", {a, b}, out, [=](Tape& t) {
            const auto& gy = *t.node_grad(yn);
            if (ai->requires_grad) {
                auto& da = t.node_grad_buffer(an, ai->data.size());
                for (std::size_t i = 0; i < na; ++i) da[i] += gy[i];
            }
            if (bi->requires_grad) {
                auto& db = t.node_grad_buffer(bn, bi->data.size());
                for (std::size_t i = 0; i < db.size(); ++i) db[i] += gy[na + i];
            }
        });
    }
    return out;
}

// Zero or keep whole channels; the mask is a constant, so erased channels
// block gradient flow entirely.
inline Tensor channel_mask(const Tensor& input, const std::vector<std::uint8_t>& keep) {
    if (input.rank() < 2 || input.dim(0) != keep.size())
        throw ShapeError("channel_mask: mask size " + std::to_string(keep.size()) +
                         " does not match channel count of " + input.shape_string());
    const std::size_t C = input.dim(0);
    const std::size_t n = input.numel() / C;
    Tensor out(input.shape());
    for (std::size_t c = 0; c < C; ++c) {
        if (keep[c])
            std::memcpy(out.raw() + c * n, input.raw() + c * n, n * sizeof(double));
    }
    Tape* tape = Tape::active();
    if (tape && input.requires_grad()) {
        out.set_requires_grad(true);
        auto xi = input.impl();
        const int xn = tape->ensure_node(input);
        const int yn = tape->ensure_node(out);
        tape->record("channel_mask", {input}, out, [=](Tape& t) {
            const auto& gy = *t.node_grad(yn);
            auto& dx = t.node_grad_buffer(xn, xi->data.size());
            for (std::size_t c = 0; c < C; ++c) {
                if (!keep[c]) continue;
                for (std::size_t i = 0; i < n; ++i) dx[c * n + i] += gy[c * n + i];
            }
        });
    }
    return out;
}

// Per-channel normalization over spatial axes to zero mean / unit variance,
// then learnable per-channel scale and shift. Zero-variance channels map to
// the shift (variance clamped by eps).
inline Tensor instance_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                            double eps = 1e-5) {
    if (input.rank() < 2)
        throw ShapeError("instance_norm: expected [C, spatial...] input, got " + input.shape_string());
    const std::size_t C = input.dim(0);
    if (gamma.numel() != C || beta.numel() != C)
        throw ShapeError("instance_norm: scale/shift size mismatch with " + std::to_string(C) +
                         " channels");
    const std::size_t n = input.numel() / C;
    Tensor out(input.shape());
    std::vector<double> mean(C), inv_std(C);
    for (std::size_t c = 0; c < C; ++c) {
        const double* x = input.raw() + c * n;
        double mu = 0.0;
        for (std::size_t i = 0; i < n; ++i) mu += x[i];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double dv = x[i] - mu;
            var += dv * dv;
        }
        var /= static_cast<double>(n);
        mean[c] = mu;
        inv_std[c] = 1.0 / std::sqrt(var + eps);
        const double g = gamma.raw()[c], b = beta.raw()[c];
        double* y = out.raw() + c * n;
        for (std::size_t i = 0; i < n; ++i) y[i] = g * (x[i] - mu) * inv_std[c] + b;
    }

    Tape* tape = Tape::active();
    if (tape && (input.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
        out.set_requires_grad(true);
        auto xi = input.impl();
        auto gi = gamma.impl();
        auto bi = beta.impl();
        const int xn = tape->ensure_node(input);
        const int gn = tape->ensure_node(gamma);
        const int bn = tape->ensure_node(beta);
        const int yn = tape->ensure_node(out);
        tape->record("instance_norm", {input, gamma, beta}, out, [=](Tape& t) {
            const auto& gy = *t.node_grad(yn);
            const double N = static_cast<double>(n);
            for (std::size_t c = 0; c < C; ++c) {
                const double* x = xi->data.data() + c * n;
                const double* go = gy.data() + c * n;
                const double mu = mean[c], is = inv_std[c];
                const double gsc = gi->data[c];
                if (gi->requires_grad) {
                    double dg = 0.0;
                    for (std::size_t i = 0; i < n; ++i) dg += go[i] * (x[i] - mu) * is;
                    t.node_grad_buffer(gn, C)[c] += dg;
                }
                if (bi->requires_grad) {
                    double db = 0.0;
                    for (std::size_t i = 0; i < n; ++i) db += go[i];
                    t.node_grad_buffer(bn, C)[c] += db;
                }
                if (xi->requires_grad) {
                    double sum_dxhat = 0.0, sum_dxhat_xc = 0.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        const double dxh = go[i] * gsc;
                        sum_dxhat += dxh;
                        sum_dxhat_xc += dxh * (x[i] - mu);
                    }
                    const double dvar = sum_dxhat_xc * (-0.5) * is * is * is;
                    double sum_xc = 0.0;
                    for (std::size_t i = 0; i < n; ++i) sum_xc += x[i] - mu;
                    const double dmu = -sum_dxhat * is + dvar * (-2.0 / N) * sum_xc;
                    auto& dx = t.node_grad_buffer(xn, xi->data.size());
                    double* dxr = dx.data() + c * n;
                    for (std::size_t i = 0; i < n; ++i)
                        dxr[i] += go[i] * gsc * is + dvar * 2.0 * (x[i] - mu) / N + dmu / N;
                }
            }
        });
    }
    return out;
}

inline Tensor sum_all(const Tensor& input) {
    double acc = 0.0;
    for (std::size_t i = 0; i < input.numel(); ++i) acc += input.raw()[i];
    Tensor out = Tensor::scalar(acc);
    Tape* tape = Tape::active();
    if (tape && input.requires_grad()) {
        out.set_requires_grad(true);
        auto xi = input.impl();
        const int xn = tape->ensure_node(input);
        const int yn = tape->ensure_node(out);
        tape->record("sum_all", {input}, out, [=](Tape& t) {
            const double go = (*t.node_grad(yn))[0];
            auto& dx = t.node_grad_buffer(xn, xi->data.size());
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += go;
        });
    }
    return out;
}

// Mean over all elements of the squared difference.
inline Tensor mse_mean(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mse_mean: shape mismatch " + a.shape_string() + " vs " + b.shape_string());
    const std::size_t n = a.numel();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a.raw()[i] - b.raw()[i];
        acc += d * d;
    }
    Tensor out = Tensor::scalar(acc / static_cast<double>(n));
    Tape* tape = Tape::active();
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        auto ai = a.impl();
        auto bi = b.impl();
        const int an = tape->ensure_node(a);
        const int bn = tape->ensure_node(b);
        const int yn = tape->ensure_node(out);
        tape->record("mse_mean", {a, b}, out, [=](Tape& t) {
            const double go = (*t.node_grad(yn))[0];
            const double scale = 2.0 * go / static_cast<double>(n);
            if (ai->requires_grad) {
                auto& da = t.node_grad_buffer(an, n);
                for (std::size_t i = 0; i < n; ++i) da[i] += scale * (ai->data[i] - bi->data[i]);
            }
            if (bi->requires_grad) {
                auto& db = t.node_grad_buffer(bn, n);
                for (std::size_t i = 0; i < n; ++i) db[i] -= scale * (ai->data[i] - bi->data[i]);
            }
        });
    }
    return out;
}

}  // namespace topoland
