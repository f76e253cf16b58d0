#pragma once

#include "l3/kernels.hpp"

// Plain serial implementations of the parallel kernels. Kept as the
// correctness reference for tests and as the baseline in the benchmark.
// Loop nests are written in the most direct form; accumulation order per
// output element matches the parallel kernels, so results agree exactly.

namespace l3::ref {

template <class T>
void conv2d_fwd(const T* x, const T* w, const T* b, T* y, const ConvShape& s) {
    const int oh = s.out_h(), ow = s.out_w();
    for (int oc = 0; oc < s.out_c; ++oc)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                T acc = b ? b[oc] : T(0);
                for (int ic = 0; ic < s.in_c; ++ic)
                    for (int ky = 0; ky < s.k; ++ky)
                        for (int kx = 0; kx < s.k; ++kx) {
                            const int iy = oy * s.stride - s.pad + ky;
                            const int ix = ox * s.stride - s.pad + kx;
                            if (iy < 0 || iy >= s.in_h || ix < 0 || ix >= s.in_w) continue;
                            acc += x[(std::size_t(ic) * s.in_h + iy) * s.in_w + ix] *
                                   w[((std::size_t(oc) * s.in_c + ic) * s.k + ky) * s.k + kx];
                        }
                y[(std::size_t(oc) * oh + oy) * ow + ox] = acc;
            }
}

template <class T>
void deconv2d_fwd(const T* x, const T* w, const T* b, T* y, const DeconvShape& s) {
    const int oh = s.out_h(), ow = s.out_w();
    for (int oc = 0; oc < s.out_c; ++oc)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                T acc = b ? b[oc] : T(0);
                for (int ic = 0; ic < s.in_c; ++ic)
                    for (int ky = 0; ky < s.k; ++ky)
                        for (int kx = 0; kx < s.k; ++kx) {
                            const int num_y = oy + s.pad - ky;
                            const int num_x = ox + s.pad - kx;
                            if (num_y < 0 || num_x < 0 || num_y % s.stride || num_x % s.stride) continue;
                            const int iy = num_y / s.stride;
                            const int ix = num_x / s.stride;
                            if (iy >= s.in_h || ix >= s.in_w) continue;
                            acc += x[(std::size_t(ic) * s.in_h + iy) * s.in_w + ix] *
                                   w[((std::size_t(ic) * s.out_c + oc) * s.k + ky) * s.k + kx];
                        }
                y[(std::size_t(oc) * oh + oy) * ow + ox] = acc;
            }
}

template <class T>
void linear_fwd(const T* x, const T* w, const T* b, T* y, int in_n, int out_n) {
    for (int o = 0; o < out_n; ++o) {
        T acc = b ? b[o] : T(0);
        for (int i = 0; i < in_n; ++i) acc += w[std::size_t(o) * in_n + i] * x[i];
        y[o] = acc;
    }
}

template <class T>
void tanh_fwd(const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

template <class T>
void sigmoid_fwd(const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = T(1) / (T(1) + std::exp(-x[i]));
}

}  // namespace l3::ref
