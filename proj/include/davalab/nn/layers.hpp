#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "davalab/core/rng.hpp"
#include "davalab/core/tensor.hpp"

namespace davalab::nn {

// A named view onto one parameter block and its gradient. Optimizers and
// checkpoints operate on flat lists of these.
template <typename T>
struct Param {
    std::string name;
    T* value = nullptr;
    T* grad = nullptr;
    Eigen::Index size = 0;
    Eigen::Index rows = 0, cols = 0;  // shape recorded in checkpoint manifests
};

template <typename T>
void zero_grads(std::vector<Param<T>>& params) {
    for (auto& p : params) std::fill(p.grad, p.grad + p.size, T(0));
}

// Fan-in-scaled uniform init, U(-1/sqrt(fan_in), +1/sqrt(fan_in)), applied
// to weights and biases alike. Values are drawn in a fixed element order so
// that a given seed always produces the same network.
template <typename T>
void fanin_uniform(T* data, Eigen::Index size, Eigen::Index fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < size; ++i) data[i] = static_cast<T>(rng.uniform(-bound, bound));
}

// Geometry shared by the convolution lowering routines. "Small" is the
// coarse spatial grid (a stride-s convolution's output, or a transposed
// convolution's input); "big" is the fine grid. A small-grid position hs and
// kernel offset kh address big-grid row hb = hs*stride - pad + kh.
struct ConvGeom {
    int channels = 0;   // channels of the big-grid tensor
    int kernel = 0, stride = 0, pad = 0;
    int hb = 0, wb = 0;  // big grid
    int hs = 0, ws = 0;  // small grid

    static ConvGeom downsample(int channels, int kernel, int stride, int pad, int h_in, int w_in) {
        ConvGeom g;
        g.channels = channels;
        g.kernel = kernel;
        g.stride = stride;
        g.pad = pad;
        g.hb = h_in;
        g.wb = w_in;
        g.hs = (h_in + 2 * pad - kernel) / stride + 1;
        g.ws = (w_in + 2 * pad - kernel) / stride + 1;
        return g;
    }
};

namespace detail {

// Whether the stride-2 quadrant fast path applies: each output grid must be
// exactly half the input grid, so every (kh, kw) kernel offset maps onto one
// parity quadrant of the input shifted by at most one cell.
inline bool quadrant_fast(const ConvGeom& g) {
    return g.stride == 2 && g.hb % 2 == 0 && g.wb % 2 == 0 && g.hs == g.hb / 2 && g.ws == g.wb / 2;
}

// Pooled scratch for the lowering chunks. The hot path reuses the same few
// buffers across every convolution in the process so they stay cache
// resident; thread_local keeps the pool safe if threads ever appear.
template <typename T>
inline T* scratch_data(int slot, std::size_t count) {
    thread_local std::array<std::vector<T>, 4> pool;
    auto& v = pool[static_cast<std::size_t>(slot)];
    if (v.size() < count) v.resize(count);
    return v.data();
}

// Deinterleaves samples [n0, n0+m) of big [C x (N*hb*wb)] into chunk-local
// parity quadrant planes q [C x (m*hb*wb)], where each row c holds four
// [m x (hb/2) x (wb/2)] quadrants in (ph, pw) = (0,0), (0,1), (1,0), (1,1)
// order.
template <typename T>
void to_quadrants_range(const Mat<T>& big, int n0, int m, int hb, int wb, T* q) {
    const int hw = wb / 2;
    const std::size_t qs = static_cast<std::size_t>(hb / 2) * hw;
    const std::size_t mqs = static_cast<std::size_t>(m) * qs;
    for (Eigen::Index c = 0; c < big.rows(); ++c) {
        const T* src = big.data() + static_cast<std::size_t>(c) * big.cols() +
                       static_cast<std::size_t>(n0) * hb * wb;
        T* dst = q + static_cast<std::size_t>(c) * (4 * mqs);
        for (int i = 0; i < m; ++i) {
            for (int hbig = 0; hbig < hb; ++hbig) {
                const T* sr = src + (static_cast<std::size_t>(i) * hb + hbig) * wb;
                const std::size_t row = static_cast<std::size_t>(i) * qs + static_cast<std::size_t>(hbig / 2) * hw;
                T* de = dst + static_cast<std::size_t>((hbig & 1) * 2) * mqs + row;
                T* dodd = de + mqs;
                for (int j = 0; j < hw; ++j) {
                    de[j] = sr[2 * j];
                    dodd[j] = sr[2 * j + 1];
                }
            }
        }
    }
}

// Inverse of to_quadrants_range for the full batch: q is [C x (N*hb*wb)]
// quadrant planes, big receives the interleaved layout.
template <typename T>
void from_quadrants(const T* q, int n, int hb, int wb, Mat<T>& big) {
    const int hw = wb / 2;
    const std::size_t qs = static_cast<std::size_t>(hb / 2) * hw;
    const std::size_t nqs = static_cast<std::size_t>(n) * qs;
    for (Eigen::Index c = 0; c < big.rows(); ++c) {
        const T* src = q + static_cast<std::size_t>(c) * big.cols();
        T* dst = big.data() + static_cast<std::size_t>(c) * big.cols();
        for (int i = 0; i < n; ++i) {
            for (int hbig = 0; hbig < hb; ++hbig) {
                T* dr = dst + (static_cast<std::size_t>(i) * hb + hbig) * wb;
                const std::size_t row = static_cast<std::size_t>(i) * qs + static_cast<std::size_t>(hbig / 2) * hw;
                const T* se = src + static_cast<std::size_t>((hbig & 1) * 2) * nqs + row;
                const T* sodd = se + nqs;
                for (int j = 0; j < hw; ++j) {
                    dr[2 * j] = se[j];
                    dr[2 * j + 1] = sodd[j];
                }
            }
        }
    }
}

// Kernel offset (kh, kw) expressed against the parity quadrants: quadrant
// index, the linear shift inside a quadrant, and the out-of-range boundary
// row/column that the shift drags across sample edges.
struct QuadShift {
    int quad;               // ph*2 + pw
    std::ptrdiff_t lin;     // dh*(wb/2) + dw
    int dh, dw;
};

inline QuadShift quad_shift(int kh, int kw, int pad, int hw) {
    const int hoff = kh - pad, woff = kw - pad;
    const int ph = hoff & 1, pw = woff & 1;
    const int dh = (hoff - ph) >> 1, dw = (woff - pw) >> 1;
    return {ph * 2 + pw, static_cast<std::ptrdiff_t>(dh) * hw + dw, dh, dw};
}

// Gather: chunk-local quadrant planes (from to_quadrants_range, m samples)
// -> lowered columns [(C*k*k) x (m*hh*hw)]. Each kernel offset's row is a
// single shifted bulk copy plus boundary zeroing; the shift clamps and the
// dh/dw fixups together zero exactly the padding taps.
template <typename T>
void lower_quadrants(const T* planes, int channels, int k, int p, int hh, int hw, int m, T* cols) {
    const std::size_t qs = static_cast<std::size_t>(hh) * hw;
    const std::size_t mqs = static_cast<std::size_t>(m) * qs;
    for (int c = 0; c < channels; ++c) {
        const T* qrow = planes + static_cast<std::size_t>(c) * (4 * mqs);
        for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
                const auto qsft = quad_shift(kh, kw, p, hw);
                const T* src = qrow + static_cast<std::size_t>(qsft.quad) * mqs;
                T* dst = cols + (static_cast<std::size_t>(c) * k * k + kh * k + kw) * mqs;
                // dst[pos] = src[pos + lin] over the in-range span
                const std::size_t lo = qsft.lin < 0 ? static_cast<std::size_t>(-qsft.lin) : 0;
                const std::size_t hi = mqs - (qsft.lin > 0 ? static_cast<std::size_t>(qsft.lin) : 0);
                std::fill(dst, dst + lo, T(0));
                std::memcpy(dst + lo, src + lo + qsft.lin, (hi - lo) * sizeof(T));
                std::fill(dst + hi, dst + mqs, T(0));
                // zero the rows/columns the linear shift wrapped across
                if (qsft.dh != 0) {
                    const std::size_t brow = static_cast<std::size_t>(qsft.dh < 0 ? 0 : hh - 1) * hw;
                    for (int i = 0; i < m; ++i)
                        std::fill(dst + i * qs + brow, dst + i * qs + brow + hw, T(0));
                }
                if (qsft.dw != 0) {
                    const int bcol = qsft.dw < 0 ? 0 : hw - 1;
                    for (int i = 0; i < m; ++i) {
                        T* base = dst + i * qs + bcol;
                        for (int r = 0; r < hh; ++r) base[static_cast<std::size_t>(r) * hw] = T(0);
                    }
                }
            }
        }
    }
}

// Adjoint scatter: accumulates lowered columns for samples [n0, n0+m) into
// full-batch quadrant planes [C x (N*hb*wb)] (caller zeroes them first).
// The padding entries of cols are zeroed in place beforehand — their
// gradient is discarded anyway — so each kernel offset reduces to one bulk
// shifted add confined to the chunk's slice of each quadrant.
template <typename T>
void scatter_quadrants_add(T* cols, int channels, int k, int p, int hh, int hw,
                           int m, int n_total, int n0, T* planes) {
    const std::size_t qs = static_cast<std::size_t>(hh) * hw;
    const std::size_t mqs = static_cast<std::size_t>(m) * qs;
    const std::size_t nqs = static_cast<std::size_t>(n_total) * qs;
    for (int c = 0; c < channels; ++c) {
        T* qrow = planes + static_cast<std::size_t>(c) * (4 * nqs);
        for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
                const auto qsft = quad_shift(kh, kw, p, hw);
                T* src = cols + (static_cast<std::size_t>(c) * k * k + kh * k + kw) * mqs;
                if (qsft.dh != 0) {
                    const std::size_t brow = static_cast<std::size_t>(qsft.dh < 0 ? 0 : hh - 1) * hw;
                    for (int i = 0; i < m; ++i)
                        std::fill(src + i * qs + brow, src + i * qs + brow + hw, T(0));
                }
                if (qsft.dw != 0) {
                    const int bcol = qsft.dw < 0 ? 0 : hw - 1;
                    for (int i = 0; i < m; ++i) {
                        T* base = src + i * qs + bcol;
                        for (int r = 0; r < hh; ++r) base[static_cast<std::size_t>(r) * hw] = T(0);
                    }
                }
                T* dst = qrow + static_cast<std::size_t>(qsft.quad) * nqs + static_cast<std::size_t>(n0) * qs;
                const std::size_t lo = qsft.lin < 0 ? static_cast<std::size_t>(-qsft.lin) : 0;
                const std::size_t hi = mqs - (qsft.lin > 0 ? static_cast<std::size_t>(qsft.lin) : 0);
                Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>(dst + lo + qsft.lin, hi - lo) +=
                    Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>(src + lo, hi - lo);
            }
        }
    }
}

}  // namespace detail

// Gather: big [C x (N*hb*wb)] -> cols [(C*k*k) x (N*hs*ws)], zero padding.
// The stride-2 halving case (the only one the networks use) deinterleaves
// the input into parity quadrants once, after which each kernel offset's
// cols row is a single shifted bulk copy plus boundary zeroing; other
// geometries use the generic gather.
template <typename T>
void im2col(const Mat<T>& big, int n, const ConvGeom& g, Mat<T>& cols) {
    const int k = g.kernel, s = g.stride, p = g.pad;
    cols.resize(static_cast<Eigen::Index>(g.channels) * k * k,
                static_cast<Eigen::Index>(n) * g.hs * g.ws);
    if (detail::quadrant_fast(g)) {
        T* planes = detail::scratch_data<T>(1, static_cast<std::size_t>(big.size()));
        detail::to_quadrants_range(big, 0, n, g.hb, g.wb, planes);
        detail::lower_quadrants(planes, g.channels, k, p, g.hs, g.ws, n, cols.data());
        return;
    }
    for (int c = 0; c < g.channels; ++c) {
        const T* src_row = big.data() + static_cast<std::size_t>(c) * big.cols();
        for (int kh = 0; kh < k; ++kh) {
            const int hoff = kh - p;
            for (int kw = 0; kw < k; ++kw) {
                T* dst_row = cols.data() + (static_cast<std::size_t>(c) * k * k + kh * k + kw) * cols.cols();
                const int woff = kw - p;
                const int ws_lo = woff < 0 ? (-woff + s - 1) / s : 0;
                const int ws_hi = std::max(ws_lo, std::min(g.ws, woff > g.wb - 1 ? 0 : (g.wb - 1 - woff) / s + 1));
                for (int i = 0; i < n; ++i) {
                    const T* src_img = src_row + static_cast<std::size_t>(i) * g.hb * g.wb;
                    T* dst_img = dst_row + static_cast<std::size_t>(i) * g.hs * g.ws;
                    for (int hs = 0; hs < g.hs; ++hs) {
                        const int hbig = hs * s + hoff;
                        T* dst = dst_img + static_cast<std::size_t>(hs) * g.ws;
                        if (hbig < 0 || hbig >= g.hb) {
                            std::fill(dst, dst + g.ws, T(0));
                            continue;
                        }
                        const T* src = src_img + static_cast<std::size_t>(hbig) * g.wb + woff;
                        std::fill(dst, dst + ws_lo, T(0));
                        for (int w = ws_lo; w < ws_hi; ++w) dst[w] = src[w * s];
                        std::fill(dst + ws_hi, dst + g.ws, T(0));
                    }
                }
            }
        }
    }
}

// Scatter-add: cols [(C*k*k) x (N*hs*ws)] -> big [C x (N*hb*wb)].
// The destination is overwritten. The quadrant fast path runs the im2col
// bulk copies as bulk adjoint accumulations; it first zeroes the cols
// entries that correspond to padding (their gradient is discarded anyway),
// which is why cols is taken by mutable reference.
template <typename T>
void col2im(Mat<T>& cols, int n, const ConvGeom& g, Mat<T>& big) {
    const int k = g.kernel, s = g.stride, p = g.pad;
    big.resize(g.channels, static_cast<Eigen::Index>(n) * g.hb * g.wb);
    if (detail::quadrant_fast(g)) {
        T* planes = detail::scratch_data<T>(1, static_cast<std::size_t>(big.size()));
        std::fill(planes, planes + big.size(), T(0));
        detail::scatter_quadrants_add(cols.data(), g.channels, k, p, g.hs, g.ws, n, n, 0, planes);
        detail::from_quadrants(planes, n, g.hb, g.wb, big);
        return;
    }
    big.setZero();
    for (int c = 0; c < g.channels; ++c) {
        T* dst_row = big.data() + static_cast<std::size_t>(c) * big.cols();
        for (int kh = 0; kh < k; ++kh) {
            const int hoff = kh - p;
            for (int kw = 0; kw < k; ++kw) {
                const T* src_row = cols.data() + (static_cast<std::size_t>(c) * k * k + kh * k + kw) * cols.cols();
                const int woff = kw - p;
                const int ws_lo = woff < 0 ? (-woff + s - 1) / s : 0;
                const int ws_hi = std::max(ws_lo, std::min(g.ws, woff > g.wb - 1 ? 0 : (g.wb - 1 - woff) / s + 1));
                for (int i = 0; i < n; ++i) {
                    T* dst_img = dst_row + static_cast<std::size_t>(i) * g.hb * g.wb;
                    const T* src_img = src_row + static_cast<std::size_t>(i) * g.hs * g.ws;
                    for (int hs = 0; hs < g.hs; ++hs) {
                        const int hbig = hs * s + hoff;
                        if (hbig < 0 || hbig >= g.hb) continue;
                        const T* src = src_img + static_cast<std::size_t>(hs) * g.ws;
                        T* dst = dst_img + static_cast<std::size_t>(hbig) * g.wb + woff;
                        for (int w = ws_lo; w < ws_hi; ++w) dst[w * s] += src[w];
                    }
                }
            }
        }
    }
}

// Samples per lowering chunk such that the lowered columns stay around
// 1 MB: the chunk, the packed weights, and the output slice then remain
// cache resident between the lowering and the GEMM that consumes it.
inline int lowering_chunk(const ConvGeom& g, std::size_t elem_bytes) {
    const std::size_t per = elem_bytes * static_cast<std::size_t>(g.channels) *
                            g.kernel * g.kernel * g.hs * g.ws;
    return static_cast<int>(std::max<std::size_t>(1, (std::size_t{1} << 20) / std::max<std::size_t>(per, 1)));
}

// Strided 2-D convolution, lowered to im2col + GEMM over cache-sized sample
// chunks. Input and output are feature-major activation matrices. The input
// is borrowed by reference, not copied: it must stay alive and unchanged
// between forward() and the backward() calls that pair with it, which every
// call site satisfies because activations live in the owning network until
// its next forward pass.
template <typename T>
struct Conv2d {
    int c_in = 0, c_out = 0;
    ConvGeom geom;
    Mat<T> w, gw;  // [c_out x (c_in*k*k)]
    Vec<T> b, gb;

    const Mat<T>* x_ref = nullptr;  // borrowed last forward input
    Mat<T> x_cols;                  // generic-geometry path only
    Mat<T> y, dx, dcols;
    int n_last = 0;

    void init(int c_in_, int c_out_, int kernel, int stride, int pad, int h_in, int w_in, Rng& rng) {
        c_in = c_in_;
        c_out = c_out_;
        geom = ConvGeom::downsample(c_in, kernel, stride, pad, h_in, w_in);
        const Eigen::Index fan_in = static_cast<Eigen::Index>(c_in) * kernel * kernel;
        w.resize(c_out, fan_in);
        gw.setZero(c_out, fan_in);
        b.resize(c_out);
        gb.setZero(c_out);
        fanin_uniform(w.data(), w.size(), fan_in, rng);
        fanin_uniform(b.data(), b.size(), fan_in, rng);
    }

    int h_out() const { return geom.hs; }
    int w_out() const { return geom.ws; }

    const Mat<T>& forward(const Mat<T>& x) {
        n_last = static_cast<int>(x.cols() / (static_cast<Eigen::Index>(geom.hb) * geom.wb));
        x_ref = &x;
        const Eigen::Index cw = static_cast<Eigen::Index>(geom.hs) * geom.ws;
        y.resize(c_out, static_cast<Eigen::Index>(n_last) * cw);
        if (detail::quadrant_fast(geom)) {
            const int k = geom.kernel;
            const Eigen::Index kk = static_cast<Eigen::Index>(c_in) * k * k;
            const int step = lowering_chunk(geom, sizeof(T));
            for (int n0 = 0; n0 < n_last; n0 += step) {
                const int m = std::min(step, n_last - n0);
                T* planes = detail::scratch_data<T>(1, static_cast<std::size_t>(c_in) * m * geom.hb * geom.wb);
                detail::to_quadrants_range(x, n0, m, geom.hb, geom.wb, planes);
                T* colsbuf = detail::scratch_data<T>(0, static_cast<std::size_t>(kk) * m * cw);
                detail::lower_quadrants(planes, c_in, k, geom.pad, geom.hs, geom.ws, m, colsbuf);
                Eigen::Map<const Mat<T>> cview(colsbuf, kk, static_cast<Eigen::Index>(m) * cw);
                auto yc = y.middleCols(static_cast<Eigen::Index>(n0) * cw, static_cast<Eigen::Index>(m) * cw);
                yc.noalias() = w * cview;
                yc.colwise() += b;
            }
        } else {
            im2col(x, n_last, geom, x_cols);
            y.noalias() = w * x_cols;
            y.colwise() += b;
        }
        return y;
    }

    const Mat<T>& backward(const Mat<T>& dy, bool want_dx = true, bool want_wgrad = true) {
        const Eigen::Index cw = static_cast<Eigen::Index>(geom.hs) * geom.ws;
        if (want_dx) dx.resize(c_in, static_cast<Eigen::Index>(n_last) * geom.hb * geom.wb);
        if (detail::quadrant_fast(geom)) {
            const int k = geom.kernel;
            const Eigen::Index kk = static_cast<Eigen::Index>(c_in) * k * k;
            T* acc = nullptr;
            if (want_dx) {
                acc = detail::scratch_data<T>(2, static_cast<std::size_t>(dx.size()));
                std::fill(acc, acc + dx.size(), T(0));
            }
            const int step = lowering_chunk(geom, sizeof(T));
            for (int n0 = 0; n0 < n_last; n0 += step) {
                const int m = std::min(step, n_last - n0);
                const Eigen::Index mcw = static_cast<Eigen::Index>(m) * cw;
                auto dyc = dy.middleCols(static_cast<Eigen::Index>(n0) * cw, mcw);
                if (want_wgrad) {
                    // re-lower the borrowed input chunk while it is hot
                    T* planes = detail::scratch_data<T>(1, static_cast<std::size_t>(c_in) * m * geom.hb * geom.wb);
                    detail::to_quadrants_range(*x_ref, n0, m, geom.hb, geom.wb, planes);
                    T* colsbuf = detail::scratch_data<T>(0, static_cast<std::size_t>(kk) * mcw);
                    detail::lower_quadrants(planes, c_in, k, geom.pad, geom.hs, geom.ws, m, colsbuf);
                    Eigen::Map<const Mat<T>> cview(colsbuf, kk, mcw);
                    gw.noalias() += dyc * cview.transpose();
                }
                if (want_dx) {
                    T* dbuf = detail::scratch_data<T>(3, static_cast<std::size_t>(kk) * mcw);
                    Eigen::Map<Mat<T>> dview(dbuf, kk, mcw);
                    dview.noalias() = w.transpose() * dyc;
                    detail::scatter_quadrants_add(dbuf, c_in, k, geom.pad, geom.hs, geom.ws,
                                                  m, n_last, n0, acc);
                }
            }
            if (want_wgrad) gb.noalias() += dy.rowwise().sum();
            if (want_dx) detail::from_quadrants(acc, n_last, geom.hb, geom.wb, dx);
        } else {
            if (want_wgrad) {
                gw.noalias() += dy * x_cols.transpose();
                gb.noalias() += dy.rowwise().sum();
            }
            if (want_dx) {
                dcols.resize(w.cols(), dy.cols());
                dcols.noalias() = w.transpose() * dy;
                col2im(dcols, n_last, geom, dx);
            }
        }
        return dx;
    }

    void collect(const std::string& prefix, std::vector<Param<T>>& out) {
        out.push_back({prefix + ".w", w.data(), gw.data(), w.size(), w.rows(), w.cols()});
        out.push_back({prefix + ".b", b.data(), gb.data(), b.size(), b.size(), 1});
    }
};

// Strided transposed convolution (upsampling); exact adjoint of Conv2d with
// the same kernel/stride/pad, implemented with the shared lowering. Weight
// layout is [c_in x (c_out*k*k)].
template <typename T>
struct ConvTranspose2d {
    int c_in = 0, c_out = 0;
    ConvGeom geom;  // big = output grid, small = input grid
    Mat<T> w, gw;
    Vec<T> b, gb;

    const Mat<T>* x_ref = nullptr;  // borrowed last forward input
    Mat<T> y, dx, cols, gcols;      // cols/gcols: generic-geometry path only
    int n_last = 0;

    void init(int c_in_, int c_out_, int kernel, int stride, int pad, int h_in, int w_in, Rng& rng) {
        c_in = c_in_;
        c_out = c_out_;
        const int h_out = (h_in - 1) * stride - 2 * pad + kernel;
        const int w_out = (w_in - 1) * stride - 2 * pad + kernel;
        geom = ConvGeom::downsample(c_out, kernel, stride, pad, h_out, w_out);
        const Eigen::Index fan_in = static_cast<Eigen::Index>(c_out) * kernel * kernel;
        w.resize(c_in, fan_in);
        gw.setZero(c_in, fan_in);
        b.resize(c_out);
        gb.setZero(c_out);
        fanin_uniform(w.data(), w.size(), fan_in, rng);
        fanin_uniform(b.data(), b.size(), fan_in, rng);
    }

    int h_out() const { return geom.hb; }
    int w_out() const { return geom.wb; }

    const Mat<T>& forward(const Mat<T>& x) {
        n_last = static_cast<int>(x.cols() / (static_cast<Eigen::Index>(geom.hs) * geom.ws));
        x_ref = &x;
        y.resize(c_out, static_cast<Eigen::Index>(n_last) * geom.hb * geom.wb);
        if (detail::quadrant_fast(geom)) {
            const int k = geom.kernel;
            const Eigen::Index kk = static_cast<Eigen::Index>(c_out) * k * k;
            const Eigen::Index cw = static_cast<Eigen::Index>(geom.hs) * geom.ws;
            T* acc = detail::scratch_data<T>(2, static_cast<std::size_t>(y.size()));
            std::fill(acc, acc + y.size(), T(0));
            const int step = lowering_chunk(geom, sizeof(T));
            for (int n0 = 0; n0 < n_last; n0 += step) {
                const int m = std::min(step, n_last - n0);
                const Eigen::Index mcw = static_cast<Eigen::Index>(m) * cw;
                T* colsbuf = detail::scratch_data<T>(0, static_cast<std::size_t>(kk) * mcw);
                Eigen::Map<Mat<T>> cview(colsbuf, kk, mcw);
                cview.noalias() = w.transpose() * x.middleCols(static_cast<Eigen::Index>(n0) * cw, mcw);
                detail::scatter_quadrants_add(colsbuf, c_out, k, geom.pad, geom.hs, geom.ws,
                                              m, n_last, n0, acc);
            }
            detail::from_quadrants(acc, n_last, geom.hb, geom.wb, y);
        } else {
            cols.resize(w.cols(), x.cols());
            cols.noalias() = w.transpose() * x;
            col2im(cols, n_last, geom, y);
        }
        for (int c = 0; c < c_out; ++c)
            y.row(c).array() += b(c);
        return y;
    }

    const Mat<T>& backward(const Mat<T>& dy, bool want_dx = true, bool want_wgrad = true) {
        if (want_dx) dx.resize(c_in, x_ref->cols());
        if (detail::quadrant_fast(geom)) {
            const int k = geom.kernel;
            const Eigen::Index kk = static_cast<Eigen::Index>(c_out) * k * k;
            const Eigen::Index cw = static_cast<Eigen::Index>(geom.hs) * geom.ws;
            const int step = lowering_chunk(geom, sizeof(T));
            for (int n0 = 0; n0 < n_last; n0 += step) {
                const int m = std::min(step, n_last - n0);
                const Eigen::Index mcw = static_cast<Eigen::Index>(m) * cw;
                T* planes = detail::scratch_data<T>(1, static_cast<std::size_t>(c_out) * m * geom.hb * geom.wb);
                detail::to_quadrants_range(dy, n0, m, geom.hb, geom.wb, planes);
                T* colsbuf = detail::scratch_data<T>(0, static_cast<std::size_t>(kk) * mcw);
                detail::lower_quadrants(planes, c_out, k, geom.pad, geom.hs, geom.ws, m, colsbuf);
                Eigen::Map<const Mat<T>> gview(colsbuf, kk, mcw);
                if (want_dx)
                    dx.middleCols(static_cast<Eigen::Index>(n0) * cw, mcw).noalias() = w * gview;
                if (want_wgrad)
                    gw.noalias() += x_ref->middleCols(static_cast<Eigen::Index>(n0) * cw, mcw) * gview.transpose();
            }
        } else {
            im2col(dy, n_last, geom, gcols);
            if (want_wgrad) gw.noalias() += *x_ref * gcols.transpose();
            if (want_dx) dx.noalias() = w * gcols;
        }
        if (want_wgrad) gb.noalias() += dy.rowwise().sum();
        return dx;
    }

    void collect(const std::string& prefix, std::vector<Param<T>>& out) {
        out.push_back({prefix + ".w", w.data(), gw.data(), w.size(), w.rows(), w.cols()});
        out.push_back({prefix + ".b", b.data(), gb.data(), b.size(), b.size(), 1});
    }
};

// Fully connected layer on sample-major columns: x is [in x N].
template <typename T>
struct Dense {
    Mat<T> w, gw;  // [out x in]
    Vec<T> b, gb;
    Mat<T> x_last, y, dx;

    void init(int in, int out, Rng& rng) {
        w.resize(out, in);
        gw.setZero(out, in);
        b.resize(out);
        gb.setZero(out);
        fanin_uniform(w.data(), w.size(), in, rng);
        fanin_uniform(b.data(), b.size(), in, rng);
    }

    const Mat<T>& forward(const Mat<T>& x) {
        x_last = x;
        y.resize(w.rows(), x.cols());
        y.noalias() = w * x;
        y.colwise() += b;
        return y;
    }

    const Mat<T>& backward(const Mat<T>& dy, bool want_dx = true, bool want_wgrad = true) {
        if (want_wgrad) {
            gw.noalias() += dy * x_last.transpose();
            gb.noalias() += dy.rowwise().sum();
        }
        if (want_dx) {
            dx.resize(w.cols(), dy.cols());
            dx.noalias() = w.transpose() * dy;
        }
        return dx;
    }

    void collect(const std::string& prefix, std::vector<Param<T>>& out) {
        out.push_back({prefix + ".w", w.data(), gw.data(), w.size(), w.rows(), w.cols()});
        out.push_back({prefix + ".b", b.data(), gb.data(), b.size(), b.size(), 1});
    }
};

template <typename T>
struct ReLU {
    Mat<T> y, dx;

    const Mat<T>& forward(const Mat<T>& x) {
        y = x.cwiseMax(T(0));
        return y;
    }
    const Mat<T>& backward(const Mat<T>& dy) {
        dx = (y.array() > T(0)).template cast<T>() * dy.array();
        return dx;
    }
};

template <typename T>
struct Sigmoid {
    Mat<T> y, dx;

    const Mat<T>& forward(const Mat<T>& x) {
        y = (T(1) / (T(1) + (-x.array()).exp())).matrix();
        return y;
    }
    const Mat<T>& backward(const Mat<T>& dy) {
        dx = dy.array() * y.array() * (T(1) - y.array());
        return dx;
    }
};

// Per-sample, per-channel normalization over the spatial extent, without a
// learned affine part. Uses the biased variance and eps inside the sqrt.
template <typename T>
struct InstanceNorm2d {
    int channels = 0, spatial = 0;
    double eps = 1e-5;
    Mat<T> y, dx;
    Mat<T> inv_std;  // [channels x n]

    void init(int channels_, int spatial_, double eps_ = 1e-5) {
        channels = channels_;
        spatial = spatial_;
        eps = eps_;
    }

    const Mat<T>& forward(const Mat<T>& x) {
        // A single spatial element offers nothing to normalize against;
        // centering would collapse it to zero, so pass it through instead.
        if (spatial == 1) {
            y = x;
            return y;
        }
        const int n = static_cast<int>(x.cols() / spatial);
        y.resize(x.rows(), x.cols());
        inv_std.resize(channels, n);
        for (int c = 0; c < channels; ++c) {
            for (int i = 0; i < n; ++i) {
                auto src = x.row(c).segment(static_cast<Eigen::Index>(i) * spatial, spatial).array();
                auto dst = y.row(c).segment(static_cast<Eigen::Index>(i) * spatial, spatial).array();
                const T mean = src.mean();
                const T var = (src - mean).square().sum() / T(spatial);
                const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
                inv_std(c, i) = inv;
                dst = (src - mean) * inv;
            }
        }
        return y;
    }

    const Mat<T>& backward(const Mat<T>& dy) {
        if (spatial == 1) {
            dx = dy;
            return dx;
        }
        const int n = static_cast<int>(dy.cols() / spatial);
        dx.resize(dy.rows(), dy.cols());
        for (int c = 0; c < channels; ++c) {
            for (int i = 0; i < n; ++i) {
                auto g = dy.row(c).segment(static_cast<Eigen::Index>(i) * spatial, spatial).array();
                auto yy = y.row(c).segment(static_cast<Eigen::Index>(i) * spatial, spatial).array();
                auto out = dx.row(c).segment(static_cast<Eigen::Index>(i) * spatial, spatial).array();
                const T gmean = g.mean();
                const T gymean = (g * yy).mean();
                const T inv = inv_std(c, i);
                out = inv * (g - gmean - yy * gymean);
            }
        }
        return dx;
    }
};

// Feature-major [C x (N*S)] -> sample-major columns [(C*S) x N], so that a
// Dense layer can consume convolutional features. Unflatten is the inverse.
template <typename T>
struct Flatten {
    int channels = 0, spatial = 0;
    Mat<T> y, dx;

    void init(int channels_, int spatial_) {
        channels = channels_;
        spatial = spatial_;
    }

    const Mat<T>& forward(const Mat<T>& x) {
        const int n = static_cast<int>(x.cols() / spatial);
        y.resize(static_cast<Eigen::Index>(channels) * spatial, n);
        for (int c = 0; c < channels; ++c)
            for (int i = 0; i < n; ++i)
                for (int s = 0; s < spatial; ++s)
                    y(static_cast<Eigen::Index>(c) * spatial + s, i) = x(c, static_cast<Eigen::Index>(i) * spatial + s);
        return y;
    }

    const Mat<T>& backward(const Mat<T>& dy) {
        const int n = static_cast<int>(dy.cols());
        dx.resize(channels, static_cast<Eigen::Index>(n) * spatial);
        for (int c = 0; c < channels; ++c)
            for (int i = 0; i < n; ++i)
                for (int s = 0; s < spatial; ++s)
                    dx(c, static_cast<Eigen::Index>(i) * spatial + s) = dy(static_cast<Eigen::Index>(c) * spatial + s, i);
        return dx;
    }
};

template <typename T>
struct Unflatten {
    int channels = 0, spatial = 0;
    Mat<T> y, dx;

    void init(int channels_, int spatial_) {
        channels = channels_;
        spatial = spatial_;
    }

    const Mat<T>& forward(const Mat<T>& x) {
        const int n = static_cast<int>(x.cols());
        y.resize(channels, static_cast<Eigen::Index>(n) * spatial);
        for (int c = 0; c < channels; ++c)
            for (int i = 0; i < n; ++i)
                for (int s = 0; s < spatial; ++s)
                    y(c, static_cast<Eigen::Index>(i) * spatial + s) = x(static_cast<Eigen::Index>(c) * spatial + s, i);
        return y;
    }

    const Mat<T>& backward(const Mat<T>& dy) {
        const int n = static_cast<int>(dy.cols() / spatial);
        dx.resize(static_cast<Eigen::Index>(channels) * spatial, n);
        for (int c = 0; c < channels; ++c)
            for (int i = 0; i < n; ++i)
                for (int s = 0; s < spatial; ++s)
                    dx(static_cast<Eigen::Index>(c) * spatial + s, i) = dy(c, static_cast<Eigen::Index>(i) * spatial + s);
        return dx;
    }
};

}  // namespace davalab::nn
