#pragma once

#include <cmath>
#include <cstddef>
#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace l3 {

// ---------------------------------------------------------------------------
// Shapes
// ---------------------------------------------------------------------------

struct ConvShape {
    int in_c, in_h, in_w;
    int out_c;
    int k, stride, pad;

    int out_h() const { return (in_h + 2 * pad - k) / stride + 1; }
    int out_w() const { return (in_w + 2 * pad - k) / stride + 1; }
    std::size_t in_count() const { return std::size_t(in_c) * in_h * in_w; }
    std::size_t out_count() const { return std::size_t(out_c) * out_h() * out_w(); }
    std::size_t weight_count() const { return std::size_t(out_c) * in_c * k * k; }
};

// Transposed convolution. Weight layout [in_c][out_c][k][k].
struct DeconvShape {
    int in_c, in_h, in_w;
    int out_c;
    int k, stride, pad;

    int out_h() const { return (in_h - 1) * stride - 2 * pad + k; }
    int out_w() const { return (in_w - 1) * stride - 2 * pad + k; }
    std::size_t in_count() const { return std::size_t(in_c) * in_h * in_w; }
    std::size_t out_count() const { return std::size_t(out_c) * out_h() * out_w(); }
    std::size_t weight_count() const { return std::size_t(in_c) * out_c * k * k; }
};

namespace detail {

inline bool use_parallel(std::size_t work) {
#ifdef _OPENMP
    return work >= 16384 && !omp_in_parallel();
#else
    (void)work;
    return false;
#endif
}

// Valid index range [lo, hi] such that idx*stride - pad + tap lands in [0, n_in).
inline void tap_range(int n_in, int n_out, int stride, int pad, int tap, int& lo, int& hi) {
    lo = pad - tap > 0 ? (pad - tap + stride - 1) / stride : 0;
    hi = std::min(n_out - 1, (n_in - 1 + pad - tap) / stride);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution. Weight layout [out_c][in_c][k][k], input/output CHW. The loop
// nests hoist boundary handling out of the inner loops; every output element
// accumulates its taps in (in_c, ky, kx) order starting from the bias, which
// the serial reference mirrors exactly, so the two agree bit for bit.
// ---------------------------------------------------------------------------

// Fused path for 3x3/stride-1/pad-1: one pass per output row with all nine
// taps accumulated in (ky, kx) order per input channel, exactly the tap order
// of the generic path and the serial reference.
template <class T>
void conv2d_fwd_3x3(const T* x, const T* w, const T* b, T* y, const ConvShape& s) {
    const int h = s.in_h, wd = s.in_w;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (detail::use_parallel(s.out_count() * s.in_c * 9))
#endif
    for (int oc = 0; oc < s.out_c; ++oc) {
        T* yc = y + std::size_t(oc) * h * wd;
        const T bias = b ? b[oc] : T(0);
        for (int i = 0; i < h * wd; ++i) yc[i] = bias;
        for (int ic = 0; ic < s.in_c; ++ic) {
            const T* xc = x + std::size_t(ic) * h * wd;
            const T* wc = w + (std::size_t(oc) * s.in_c + ic) * 9;
            const T w00 = wc[0], w01 = wc[1], w02 = wc[2];
            const T w10 = wc[3], w11 = wc[4], w12 = wc[5];
            const T w20 = wc[6], w21 = wc[7], w22 = wc[8];
            for (int oy = 0; oy < h; ++oy) {
                const T* r0 = oy > 0 ? xc + std::size_t(oy - 1) * wd : nullptr;
                const T* r1 = xc + std::size_t(oy) * wd;
                const T* r2 = oy < h - 1 ? xc + std::size_t(oy + 1) * wd : nullptr;
                T* yr = yc + std::size_t(oy) * wd;
                if (r0 && r2) {
                    for (int ox = 1; ox < wd - 1; ++ox) {
                        T acc = yr[ox];
                        acc += w00 * r0[ox - 1];
                        acc += w01 * r0[ox];
                        acc += w02 * r0[ox + 1];
                        acc += w10 * r1[ox - 1];
                        acc += w11 * r1[ox];
                        acc += w12 * r1[ox + 1];
                        acc += w20 * r2[ox - 1];
                        acc += w21 * r2[ox];
                        acc += w22 * r2[ox + 1];
                        yr[ox] = acc;
                    }
                } else {
                    const T* rows[3] = {r0, r1, r2};
                    for (int ox = 1; ox < wd - 1; ++ox) {
                        T acc = yr[ox];
                        for (int ky = 0; ky < 3; ++ky) {
                            if (!rows[ky]) continue;
                            acc += wc[3 * ky + 0] * rows[ky][ox - 1];
                            acc += wc[3 * ky + 1] * rows[ky][ox];
                            acc += wc[3 * ky + 2] * rows[ky][ox + 1];
                        }
                        yr[ox] = acc;
                    }
                }
                // boundary columns: taps clipped in (ky, kx) order
                const T* rows[3] = {r0, r1, r2};
                for (int ox : {0, wd - 1}) {
                    T acc = yr[ox];
                    for (int ky = 0; ky < 3; ++ky) {
                        if (!rows[ky]) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ix = ox - 1 + kx;
                            if (ix < 0 || ix >= wd) continue;
                            acc += wc[3 * ky + kx] * rows[ky][ix];
                        }
                    }
                    yr[ox] = acc;
                }
            }
        }
    }
}

template <class T>
void conv2d_fwd(const T* x, const T* w, const T* b, T* y, const ConvShape& s) {
    if (s.k == 3 && s.stride == 1 && s.pad == 1 && s.in_w >= 2) {
        conv2d_fwd_3x3(x, w, b, y, s);
        return;
    }
    const int oh = s.out_h(), ow = s.out_w();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (detail::use_parallel(s.out_count() * s.in_c * s.k * s.k))
#endif
    for (int oc = 0; oc < s.out_c; ++oc) {
        T* yc = y + std::size_t(oc) * oh * ow;
        const T bias = b ? b[oc] : T(0);
        for (int i = 0; i < oh * ow; ++i) yc[i] = bias;
        for (int ic = 0; ic < s.in_c; ++ic) {
            const T* xc = x + std::size_t(ic) * s.in_h * s.in_w;
            const T* wc = w + (std::size_t(oc) * s.in_c + ic) * s.k * s.k;
            for (int ky = 0; ky < s.k; ++ky) {
                int oy0, oy1;
                detail::tap_range(s.in_h, oh, s.stride, s.pad, ky, oy0, oy1);
                for (int kx = 0; kx < s.k; ++kx) {
                    const T wv = wc[std::size_t(ky) * s.k + kx];
                    int ox0, ox1;
                    detail::tap_range(s.in_w, ow, s.stride, s.pad, kx, ox0, ox1);
                    for (int oy = oy0; oy <= oy1; ++oy) {
                        const T* xr =
                            xc + std::size_t(oy * s.stride - s.pad + ky) * s.in_w - s.pad + kx;
                        T* yr = yc + std::size_t(oy) * ow;
                        for (int ox = ox0; ox <= ox1; ++ox)
                            yr[ox] += wv * xr[std::size_t(ox) * s.stride];
                    }
                }
            }
        }
    }
}

// Fused 3x3 input gradient: dx = correlation of dy with the flipped kernel,
// one pass per input row.
template <class T>
void conv2d_bwd_input_3x3(const T* dy, const T* w, T* dx, const ConvShape& s) {
    const int h = s.in_h, wd = s.in_w;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (detail::use_parallel(s.in_count() * s.out_c * 9 / std::max(1, s.in_c)))
#endif
    for (int ic = 0; ic < s.in_c; ++ic) {
        T* dxc = dx + std::size_t(ic) * h * wd;
        for (int i = 0; i < h * wd; ++i) dxc[i] = T(0);
        for (int oc = 0; oc < s.out_c; ++oc) {
            const T* dyc = dy + std::size_t(oc) * h * wd;
            const T* wc = w + (std::size_t(oc) * s.in_c + ic) * 9;
            for (int iy = 0; iy < h; ++iy) {
                // tap (ky, kx) reads dy[iy + 1 - ky][ix + 1 - kx]
                const T* rows[3] = {iy < h - 1 ? dyc + std::size_t(iy + 1) * wd : nullptr,
                                    dyc + std::size_t(iy) * wd,
                                    iy > 0 ? dyc + std::size_t(iy - 1) * wd : nullptr};
                T* dxr = dxc + std::size_t(iy) * wd;
                if (rows[0] && rows[2]) {
                    const T* d0 = rows[0];
                    const T* d1 = rows[1];
                    const T* d2 = rows[2];
                    for (int ix = 1; ix < wd - 1; ++ix) {
                        T acc = dxr[ix];
                        acc += wc[0] * d0[ix + 1];
                        acc += wc[1] * d0[ix];
                        acc += wc[2] * d0[ix - 1];
                        acc += wc[3] * d1[ix + 1];
                        acc += wc[4] * d1[ix];
                        acc += wc[5] * d1[ix - 1];
                        acc += wc[6] * d2[ix + 1];
                        acc += wc[7] * d2[ix];
                        acc += wc[8] * d2[ix - 1];
                        dxr[ix] = acc;
                    }
                } else {
                    for (int ix = 1; ix < wd - 1; ++ix) {
                        T acc = dxr[ix];
                        for (int ky = 0; ky < 3; ++ky) {
                            if (!rows[ky]) continue;
                            acc += wc[3 * ky + 0] * rows[ky][ix + 1];
                            acc += wc[3 * ky + 1] * rows[ky][ix];
                            acc += wc[3 * ky + 2] * rows[ky][ix - 1];
                        }
                        dxr[ix] = acc;
                    }
                }
                for (int ix : {0, wd - 1}) {
                    T acc = dxr[ix];
                    for (int ky = 0; ky < 3; ++ky) {
                        if (!rows[ky]) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ox = ix + 1 - kx;
                            if (ox < 0 || ox >= wd) continue;
                            acc += wc[3 * ky + kx] * rows[ky][ox];
                        }
                    }
                    dxr[ix] = acc;
                }
            }
        }
    }
}

// Fused 3x3 weight gradient: nine tap accumulators filled in one sweep per
// row pair.
template <class T>
void conv2d_bwd_params_3x3(const T* x, const T* dy, T* dw, T* db, const ConvShape& s) {
    const int h = s.in_h, wd = s.in_w;
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (detail::use_parallel(s.weight_count() * h * wd / 8))
#endif
    for (int oc = 0; oc < s.out_c; ++oc) {
        for (int ic = 0; ic < s.in_c; ++ic) {
            const T* dyc = dy + std::size_t(oc) * h * wd;
            const T* xc = x + std::size_t(ic) * h * wd;
            T acc[9] = {T(0)};
            for (int oy = 0; oy < h; ++oy) {
                const T* dyr = dyc + std::size_t(oy) * wd;
                for (int ky = 0; ky < 3; ++ky) {
                    const int iy = oy - 1 + ky;
                    if (iy < 0 || iy >= h) continue;
                    const T* xr = xc + std::size_t(iy) * wd;
                    // kx = 0: ix = ox - 1 -> ox in [1, wd-1]
                    T a0 = T(0), a1 = T(0), a2 = T(0);
                    for (int ox = 1; ox < wd; ++ox) a0 += dyr[ox] * xr[ox - 1];
                    for (int ox = 0; ox < wd; ++ox) a1 += dyr[ox] * xr[ox];
                    for (int ox = 0; ox < wd - 1; ++ox) a2 += dyr[ox] * xr[ox + 1];
                    acc[3 * ky + 0] += a0;
                    acc[3 * ky + 1] += a1;
                    acc[3 * ky + 2] += a2;
                }
            }
            T* wc = dw + (std::size_t(oc) * s.in_c + ic) * 9;
            for (int t = 0; t < 9; ++t) wc[t] += acc[t];
        }
    }
    if (db) {
        const int oh = s.out_h(), ow = s.out_w();
        for (int oc = 0; oc < s.out_c; ++oc) {
            const T* dyc = dy + std::size_t(oc) * oh * ow;
            T acc = T(0);
            for (int i = 0; i < oh * ow; ++i) acc += dyc[i];
            db[oc] += acc;
        }
    }
}

// dL/dx: scatter over output positions; each dx element receives its
// contributions in (out_c, ky, kx) order.
template <class T>
void conv2d_bwd_input(const T* dy, const T* w, T* dx, const ConvShape& s) {
    if (s.k == 3 && s.stride == 1 && s.pad == 1 && s.in_w >= 2) {
        conv2d_bwd_input_3x3(dy, w, dx, s);
        return;
    }
    const int oh = s.out_h(), ow = s.out_w();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (detail::use_parallel(s.in_count() * s.out_c * s.k * s.k / std::max(1, s.in_c)))
#endif
    for (int ic = 0; ic < s.in_c; ++ic) {
        T* dxc = dx + std::size_t(ic) * s.in_h * s.in_w;
        for (int i = 0; i < s.in_h * s.in_w; ++i) dxc[i] = T(0);
        for (int oc = 0; oc < s.out_c; ++oc) {
            const T* dyc = dy + std::size_t(oc) * oh * ow;
            const T* wc = w + (std::size_t(oc) * s.in_c + ic) * s.k * s.k;
            for (int ky = 0; ky < s.k; ++ky) {
                int oy0, oy1;
                detail::tap_range(s.in_h, oh, s.stride, s.pad, ky, oy0, oy1);
                for (int kx = 0; kx < s.k; ++kx) {
                    const T wv = wc[std::size_t(ky) * s.k + kx];
                    int ox0, ox1;
                    detail::tap_range(s.in_w, ow, s.stride, s.pad, kx, ox0, ox1);
                    for (int oy = oy0; oy <= oy1; ++oy) {
                        T* dxr = dxc + std::size_t(oy * s.stride - s.pad + ky) * s.in_w - s.pad + kx;
                        const T* dyr = dyc + std::size_t(oy) * ow;
                        for (int ox = ox0; ox <= ox1; ++ox)
                            dxr[std::size_t(ox) * s.stride] += wv * dyr[ox];
                    }
                }
            }
        }
    }
}

// Accumulates into dw/db; each dw element sums its (oy, ox) contributions in
// row-major output order.
template <class T>
void conv2d_bwd_params(const T* x, const T* dy, T* dw, T* db, const ConvShape& s) {
    if (s.k == 3 && s.stride == 1 && s.pad == 1) {
        conv2d_bwd_params_3x3(x, dy, dw, db, s);
        return;
    }
    const int oh = s.out_h(), ow = s.out_w();
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (detail::use_parallel(s.weight_count() * oh * ow / 8))
#endif
    for (int oc = 0; oc < s.out_c; ++oc) {
        for (int ic = 0; ic < s.in_c; ++ic) {
            const T* dyc = dy + std::size_t(oc) * oh * ow;
            const T* xc = x + std::size_t(ic) * s.in_h * s.in_w;
            T* wc = dw + (std::size_t(oc) * s.in_c + ic) * s.k * s.k;
            for (int ky = 0; ky < s.k; ++ky) {
                int oy0, oy1;
                detail::tap_range(s.in_h, oh, s.stride, s.pad, ky, oy0, oy1);
                for (int kx = 0; kx < s.k; ++kx) {
                    int ox0, ox1;
                    detail::tap_range(s.in_w, ow, s.stride, s.pad, kx, ox0, ox1);
                    T acc = T(0);
                    for (int oy = oy0; oy <= oy1; ++oy) {
                        const T* xr =
                            xc + std::size_t(oy * s.stride - s.pad + ky) * s.in_w - s.pad + kx;
                        const T* dyr = dyc + std::size_t(oy) * ow;
                        for (int ox = ox0; ox <= ox1; ++ox)
                            acc += dyr[ox] * xr[std::size_t(ox) * s.stride];
                    }
                    wc[std::size_t(ky) * s.k + kx] += acc;
                }
            }
        }
    }
    if (db) {
        for (int oc = 0; oc < s.out_c; ++oc) {
            const T* dyc = dy + std::size_t(oc) * oh * ow;
            T acc = T(0);
            for (int i = 0; i < oh * ow; ++i) acc += dyc[i];
            db[oc] += acc;
        }
    }
}

// ---------------------------------------------------------------------------
// Transposed convolution: scatter from input positions; each output element
// accumulates in (in_c, ky, kx) order starting from the bias, matching the
// serial reference gather.
// ---------------------------------------------------------------------------

template <class T>
void deconv2d_fwd(const T* x, const T* w, const T* b, T* y, const DeconvShape& s) {
    const int oh = s.out_h(), ow = s.out_w();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (detail::use_parallel(s.in_count() * s.out_c * s.k * s.k / std::max(1, s.in_c)))
#endif
    for (int oc = 0; oc < s.out_c; ++oc) {
        T* yc = y + std::size_t(oc) * oh * ow;
        const T bias = b ? b[oc] : T(0);
        for (int i = 0; i < oh * ow; ++i) yc[i] = bias;
        for (int ic = 0; ic < s.in_c; ++ic) {
            const T* xc = x + std::size_t(ic) * s.in_h * s.in_w;
            const T* wc = w + (std::size_t(ic) * s.out_c + oc) * s.k * s.k;
            for (int ky = 0; ky < s.k; ++ky) {
                int iy0, iy1;
                detail::tap_range(oh, s.in_h, s.stride, s.pad, ky, iy0, iy1);
                for (int kx = 0; kx < s.k; ++kx) {
                    const T wv = wc[std::size_t(ky) * s.k + kx];
                    int ix0, ix1;
                    detail::tap_range(ow, s.in_w, s.stride, s.pad, kx, ix0, ix1);
                    for (int iy = iy0; iy <= iy1; ++iy) {
                        const T* xr = xc + std::size_t(iy) * s.in_w;
                        T* yr = yc + std::size_t(iy * s.stride - s.pad + ky) * ow - s.pad + kx;
                        for (int ix = ix0; ix <= ix1; ++ix)
                            yr[std::size_t(ix) * s.stride] += wv * xr[ix];
                    }
                }
            }
        }
    }
}

template <class T>
void deconv2d_bwd_input(const T* dy, const T* w, T* dx, const DeconvShape& s) {
    const int oh = s.out_h(), ow = s.out_w();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (detail::use_parallel(s.in_count() * s.out_c * s.k * s.k / std::max(1, s.in_c)))
#endif
    for (int ic = 0; ic < s.in_c; ++ic) {
        T* dxc = dx + std::size_t(ic) * s.in_h * s.in_w;
        for (int i = 0; i < s.in_h * s.in_w; ++i) dxc[i] = T(0);
        for (int oc = 0; oc < s.out_c; ++oc) {
            const T* dyc = dy + std::size_t(oc) * oh * ow;
            const T* wc = w + (std::size_t(ic) * s.out_c + oc) * s.k * s.k;
            for (int ky = 0; ky < s.k; ++ky) {
                int iy0, iy1;
                detail::tap_range(oh, s.in_h, s.stride, s.pad, ky, iy0, iy1);
                for (int kx = 0; kx < s.k; ++kx) {
                    const T wv = wc[std::size_t(ky) * s.k + kx];
                    int ix0, ix1;
                    detail::tap_range(ow, s.in_w, s.stride, s.pad, kx, ix0, ix1);
                    for (int iy = iy0; iy <= iy1; ++iy) {
                        T* dxr = dxc + std::size_t(iy) * s.in_w;
                        const T* dyr = dyc + std::size_t(iy * s.stride - s.pad + ky) * ow - s.pad + kx;
                        for (int ix = ix0; ix <= ix1; ++ix)
                            dxr[ix] += wv * dyr[std::size_t(ix) * s.stride];
                    }
                }
            }
        }
    }
}

template <class T>
void deconv2d_bwd_params(const T* x, const T* dy, T* dw, T* db, const DeconvShape& s) {
    const int oh = s.out_h(), ow = s.out_w();
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (detail::use_parallel(s.weight_count() * s.in_h * s.in_w / 8))
#endif
    for (int ic = 0; ic < s.in_c; ++ic) {
        for (int oc = 0; oc < s.out_c; ++oc) {
            const T* xc = x + std::size_t(ic) * s.in_h * s.in_w;
            const T* dyc = dy + std::size_t(oc) * oh * ow;
            T* wc = dw + (std::size_t(ic) * s.out_c + oc) * s.k * s.k;
            for (int ky = 0; ky < s.k; ++ky) {
                int iy0, iy1;
                detail::tap_range(oh, s.in_h, s.stride, s.pad, ky, iy0, iy1);
                for (int kx = 0; kx < s.k; ++kx) {
                    int ix0, ix1;
                    detail::tap_range(ow, s.in_w, s.stride, s.pad, kx, ix0, ix1);
                    T acc = T(0);
                    for (int iy = iy0; iy <= iy1; ++iy) {
                        const T* xr = xc + std::size_t(iy) * s.in_w;
                        const T* dyr = dyc + std::size_t(iy * s.stride - s.pad + ky) * ow - s.pad + kx;
                        for (int ix = ix0; ix <= ix1; ++ix)
                            acc += xr[ix] * dyr[std::size_t(ix) * s.stride];
                    }
                    wc[std::size_t(ky) * s.k + kx] += acc;
                }
            }
        }
    }
    if (db) {
        for (int oc = 0; oc < s.out_c; ++oc) {
            const T* dyc = dy + std::size_t(oc) * oh * ow;
            T acc = T(0);
            for (int i = 0; i < oh * ow; ++i) acc += dyc[i];
            db[oc] += acc;
        }
    }
}

// ---------------------------------------------------------------------------
// Dense layer. Weight layout [out][in].
// ---------------------------------------------------------------------------

template <class T>
void linear_fwd(const T* x, const T* w, const T* b, T* y, int in_n, int out_n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (detail::use_parallel(std::size_t(in_n) * out_n))
#endif
    for (int o = 0; o < out_n; ++o) {
        const T* wr = w + std::size_t(o) * in_n;
        T acc = b ? b[o] : T(0);
        for (int i = 0; i < in_n; ++i) acc += wr[i] * x[i];
        y[o] = acc;
    }
}

template <class T>
void linear_bwd_input(const T* dy, const T* w, T* dx, int in_n, int out_n) {
    for (int i = 0; i < in_n; ++i) dx[i] = T(0);
    for (int o = 0; o < out_n; ++o) {
        const T* wr = w + std::size_t(o) * in_n;
        const T g = dy[o];
        for (int i = 0; i < in_n; ++i) dx[i] += g * wr[i];
    }
}

template <class T>
void linear_bwd_params(const T* x, const T* dy, T* dw, T* db, int in_n, int out_n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (detail::use_parallel(std::size_t(in_n) * out_n))
#endif
    for (int o = 0; o < out_n; ++o) {
        T* wr = dw + std::size_t(o) * in_n;
        const T g = dy[o];
        for (int i = 0; i < in_n; ++i) wr[i] += g * x[i];
        if (db) db[o] += g;
    }
}

// ---------------------------------------------------------------------------
// Pointwise ops
// ---------------------------------------------------------------------------

template <class T>
void tanh_fwd(const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

// dx = dy * (1 - y^2); y is the stored forward output.
template <class T>
void tanh_bwd(const T* y, const T* dy, T* dx, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dx[i] = dy[i] * (T(1) - y[i] * y[i]);
}

template <class T>
void sigmoid_fwd(const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = T(1) / (T(1) + std::exp(-x[i]));
}

template <class T>
void sigmoid_bwd(const T* y, const T* dy, T* dx, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dx[i] = dy[i] * y[i] * (T(1) - y[i]);
}

// 2x average pooling, H and W even.
template <class T>
void avgpool2_fwd(const T* x, T* y, int c, int h, int w) {
    const int oh = h / 2, ow = w / 2;
    for (int ch = 0; ch < c; ++ch) {
        const T* xc = x + std::size_t(ch) * h * w;
        T* yc = y + std::size_t(ch) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const T* p = xc + std::size_t(2 * oy) * w + 2 * ox;
                yc[std::size_t(oy) * ow + ox] = (p[0] + p[1] + p[w] + p[w + 1]) * T(0.25);
            }
        }
    }
}

template <class T>
void avgpool2_bwd(const T* dy, T* dx, int c, int h, int w) {
    const int oh = h / 2, ow = w / 2;
    for (int ch = 0; ch < c; ++ch) {
        const T* gc = dy + std::size_t(ch) * oh * ow;
        T* xc = dx + std::size_t(ch) * h * w;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const T g = gc[std::size_t(oy) * ow + ox] * T(0.25);
                T* p = xc + std::size_t(2 * oy) * w + 2 * ox;
                p[0] = g;
                p[1] = g;
                p[w] = g;
                p[w + 1] = g;
            }
        }
    }
}

// 2x nearest-neighbour upsampling.
template <class T>
void upsample2_fwd(const T* x, T* y, int c, int h, int w) {
    const int ow = w * 2;
    for (int ch = 0; ch < c; ++ch) {
        const T* xc = x + std::size_t(ch) * h * w;
        T* yc = y + std::size_t(ch) * (h * 2) * ow;
        for (int iy = 0; iy < h; ++iy) {
            for (int ix = 0; ix < w; ++ix) {
                const T v = xc[std::size_t(iy) * w + ix];
                T* p = yc + std::size_t(2 * iy) * ow + 2 * ix;
                p[0] = v;
                p[1] = v;
                p[ow] = v;
                p[ow + 1] = v;
            }
        }
    }
}

template <class T>
void upsample2_bwd(const T* dy, T* dx, int c, int h, int w) {
    const int ow = w * 2;
    for (int ch = 0; ch < c; ++ch) {
        const T* gc = dy + std::size_t(ch) * (h * 2) * ow;
        T* xc = dx + std::size_t(ch) * h * w;
        for (int iy = 0; iy < h; ++iy) {
            for (int ix = 0; ix < w; ++ix) {
                const T* p = gc + std::size_t(2 * iy) * ow + 2 * ix;
                xc[std::size_t(iy) * w + ix] = p[0] + p[1] + p[ow] + p[ow + 1];
            }
        }
    }
}

// Row-wise softmax over an n x m matrix, numerically shifted by the row max.
template <class T>
void softmax_rows(const T* x, T* y, int n, int m) {
    for (int r = 0; r < n; ++r) {
        const T* xr = x + std::size_t(r) * m;
        T* yr = y + std::size_t(r) * m;
        T mx = xr[0];
        for (int j = 1; j < m; ++j) mx = std::max(mx, xr[j]);
        T sum = T(0);
        for (int j = 0; j < m; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        const T inv = T(1) / sum;
        for (int j = 0; j < m; ++j) yr[j] *= inv;
    }
}

// dx_j = y_j * (dy_j - sum_k dy_k y_k), per row.
template <class T>
void softmax_rows_bwd(const T* y, const T* dy, T* dx, int n, int m) {
    for (int r = 0; r < n; ++r) {
        const T* yr = y + std::size_t(r) * m;
        const T* gr = dy + std::size_t(r) * m;
        T* xr = dx + std::size_t(r) * m;
        T dot = T(0);
        for (int j = 0; j < m; ++j) dot += gr[j] * yr[j];
        for (int j = 0; j < m; ++j) xr[j] = yr[j] * (gr[j] - dot);
    }
}

// Mean squared error over n elements, compensated summation (keeps the
// finite-difference gradient oracle usable on coordinates with tiny
// gradients).
template <class T>
T mse(const T* pred, const T* target, std::size_t n) {
    T acc = T(0), comp = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T d = pred[i] - target[i];
        const T term = d * d - comp;
        const T next = acc + term;
        comp = (next - acc) - term;
        acc = next;
    }
    return acc / static_cast<T>(n);
}

// Accumulates d(mse)/d(pred) into dpred: scale * 2 * (pred - target) / n.
template <class T>
void mse_bwd(const T* pred, const T* target, T* dpred, std::size_t n, T scale = T(1)) {
    const T c = scale * T(2) / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) dpred[i] += c * (pred[i] - target[i]);
}

}  // namespace l3
