#pragma once

// Raw compute kernels for the network layers. Shapes follow the
// (batch, channel, height, width) convention; weights are
// (out_ch, in_ch, kh, kw). Convolution uses zero padding.
//
// Convolutions are lowered to im2col + dgemm; everything runs
// single-threaded so results are bit-reproducible for a given seed.

#include <cblas.h>

#include <cstddef>
#include <cstdint>
#include <vector>

#include "udaseg/errors.hpp"
#include "udaseg/tensor.hpp"

namespace udaseg {

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    if (in + 2 * pad < k) throw InvalidInputError("conv2d: kernel larger than padded input");
    return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

// col is (Ci*kh*kw) x (Ho*Wo), row-major.
inline void im2col(double* col, const double* x, std::size_t Ci, std::size_t H, std::size_t W,
                   std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad,
                   std::size_t Ho, std::size_t Wo) {
    const std::ptrdiff_t sH = static_cast<std::ptrdiff_t>(H);
    const std::ptrdiff_t sW = static_cast<std::ptrdiff_t>(W);
    double* out = col;
    for (std::size_t ci = 0; ci < Ci; ++ci) {
        const double* xp = x + ci * H * W;
        for (std::size_t u = 0; u < kh; ++u) {
            for (std::size_t v = 0; v < kw; ++v) {
                const std::ptrdiff_t offi = static_cast<std::ptrdiff_t>(u) - static_cast<std::ptrdiff_t>(pad);
                const std::ptrdiff_t offj = static_cast<std::ptrdiff_t>(v) - static_cast<std::ptrdiff_t>(pad);
                for (std::size_t oi = 0; oi < Ho; ++oi) {
                    const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oi * stride) + offi;
                    if (ih < 0 || ih >= sH) {
                        for (std::size_t oj = 0; oj < Wo; ++oj) *out++ = 0.0;
                        continue;
                    }
                    const double* xrow = xp + static_cast<std::size_t>(ih) * W;
                    if (stride == 1) {
                        std::ptrdiff_t iw = offj;
                        for (std::size_t oj = 0; oj < Wo; ++oj, ++iw)
                            *out++ = (iw >= 0 && iw < sW) ? xrow[iw] : 0.0;
                    } else {
                        for (std::size_t oj = 0; oj < Wo; ++oj) {
                            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(oj * stride) + offj;
                            *out++ = (iw >= 0 && iw < sW) ? xrow[iw] : 0.0;
                        }
                    }
                }
            }
        }
    }
}

// Scatter-add of a col matrix back onto the input plane.
inline void col2im_add(double* dx, const double* col, std::size_t Ci, std::size_t H, std::size_t W,
                       std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad,
                       std::size_t Ho, std::size_t Wo) {
    const std::ptrdiff_t sH = static_cast<std::ptrdiff_t>(H);
    const std::ptrdiff_t sW = static_cast<std::ptrdiff_t>(W);
    const double* in = col;
    for (std::size_t ci = 0; ci < Ci; ++ci) {
        double* dxp = dx + ci * H * W;
        for (std::size_t u = 0; u < kh; ++u) {
            for (std::size_t v = 0; v < kw; ++v) {
                const std::ptrdiff_t offi = static_cast<std::ptrdiff_t>(u) - static_cast<std::ptrdiff_t>(pad);
                const std::ptrdiff_t offj = static_cast<std::ptrdiff_t>(v) - static_cast<std::ptrdiff_t>(pad);
                for (std::size_t oi = 0; oi < Ho; ++oi) {
                    const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oi * stride) + offi;
                    if (ih < 0 || ih >= sH) {
                        in += Wo;
                        continue;
                    }
                    double* dxrow = dxp + static_cast<std::size_t>(ih) * W;
                    if (stride == 1) {
                        std::ptrdiff_t iw = offj;
                        for (std::size_t oj = 0; oj < Wo; ++oj, ++iw, ++in)
                            if (iw >= 0 && iw < sW) dxrow[iw] += *in;
                    } else {
                        for (std::size_t oj = 0; oj < Wo; ++oj, ++in) {
                            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(oj * stride) + offj;
                            if (iw >= 0 && iw < sW) dxrow[iw] += *in;
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

// y[b,co,oi,oj] = bias[co] + sum_{ci,u,v} w[co,ci,u,v] * x[b,ci,oi*s+u-p,oj*s+v-p]
inline void conv2d_forward(Tensor& y, const Tensor& x, const Tensor& w, const Tensor& bias,
                           std::size_t stride, std::size_t pad) {
    const std::size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != Ci) throw InvalidInputError("conv2d: channel mismatch");
    const std::size_t Ho = conv_out_dim(H, kh, stride, pad);
    const std::size_t Wo = conv_out_dim(W, kw, stride, pad);
    y = Tensor({B, Co, Ho, Wo});

    const std::size_t K = Ci * kh * kw;
    const std::size_t N = Ho * Wo;
    std::vector<double> col(K * N);
    const bool has_bias = bias.numel() == Co;
    for (std::size_t b = 0; b < B; ++b) {
        detail::im2col(col.data(), x.data() + b * Ci * H * W, Ci, H, W, kh, kw, stride, pad, Ho, Wo);
        double* yp = y.data() + b * Co * N;
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(Co), static_cast<int>(N),
                    static_cast<int>(K), 1.0, w.data(), static_cast<int>(K), col.data(), static_cast<int>(N),
                    0.0, yp, static_cast<int>(N));
        if (has_bias)
            for (std::size_t co = 0; co < Co; ++co) {
                const double bv = bias[co];
                double* row = yp + co * N;
                for (std::size_t i = 0; i < N; ++i) row[i] += bv;
            }
    }
}

// Accumulates into dx/dw/db (caller zero-initializes them).
inline void conv2d_backward(Tensor& dx, Tensor& dw, Tensor& db, const Tensor& dy, const Tensor& x,
                            const Tensor& w, std::size_t stride, std::size_t pad, bool want_dx) {
    const std::size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const std::size_t Ho = dy.dim(2), Wo = dy.dim(3);
    const std::size_t K = Ci * kh * kw;
    const std::size_t N = Ho * Wo;

    std::vector<double> col(K * N);
    std::vector<double> dcol(want_dx ? K * N : 0);
    for (std::size_t b = 0; b < B; ++b) {
        const double* dyp = dy.data() + b * Co * N;
        detail::im2col(col.data(), x.data() + b * Ci * H * W, Ci, H, W, kh, kw, stride, pad, Ho, Wo);
        // dW += dy_b . col^T
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(Co), static_cast<int>(K),
                    static_cast<int>(N), 1.0, dyp, static_cast<int>(N), col.data(), static_cast<int>(N),
                    1.0, dw.data(), static_cast<int>(K));
        if (db.numel() == Co) {
            for (std::size_t co = 0; co < Co; ++co) {
                const double* row = dyp + co * N;
                double acc = 0.0;
                for (std::size_t i = 0; i < N; ++i) acc += row[i];
                db[co] += acc;
            }
        }
        if (want_dx) {
            // dcol = W^T . dy_b, then scatter back
            cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(K), static_cast<int>(N),
                        static_cast<int>(Co), 1.0, w.data(), static_cast<int>(K), dyp, static_cast<int>(N),
                        0.0, dcol.data(), static_cast<int>(N));
            detail::col2im_add(dx.data() + b * Ci * H * W, dcol.data(), Ci, H, W, kh, kw, stride, pad, Ho, Wo);
        }
    }
}

// 2x2 max pooling, stride 2. Records flat input index of each max for backward.
inline void maxpool2_forward(Tensor& y, std::vector<std::uint32_t>& argmax, const Tensor& x) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 != 0 || W % 2 != 0) throw InvalidInputError("maxpool2: odd spatial size");
    const std::size_t Ho = H / 2, Wo = W / 2;
    y = Tensor({B, C, Ho, Wo});
    argmax.assign(y.numel(), 0);
    std::size_t o = 0;
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const double* xp = x.data() + bc * H * W;
        for (std::size_t oi = 0; oi < Ho; ++oi) {
            for (std::size_t oj = 0; oj < Wo; ++oj, ++o) {
                const std::size_t base = (2 * oi) * W + 2 * oj;
                std::size_t best = base;
                double bv = xp[base];
                if (xp[base + 1] > bv) { bv = xp[base + 1]; best = base + 1; }
                if (xp[base + W] > bv) { bv = xp[base + W]; best = base + W; }
                if (xp[base + W + 1] > bv) { bv = xp[base + W + 1]; best = base + W + 1; }
                y[o] = bv;
                argmax[o] = static_cast<std::uint32_t>(bc * H * W + best);
            }
        }
    }
}

inline void maxpool2_backward(Tensor& dx, const Tensor& dy, const std::vector<std::uint32_t>& argmax) {
    for (std::size_t o = 0; o < dy.numel(); ++o) dx[argmax[o]] += dy[o];
}

// Nearest-neighbour 2x upsampling.
inline void upsample2_forward(Tensor& y, const Tensor& x) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    y = Tensor({B, C, 2 * H, 2 * W});
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const double* xp = x.data() + bc * H * W;
        double* yp = y.data() + bc * 4 * H * W;
        for (std::size_t i = 0; i < H; ++i) {
            for (std::size_t j = 0; j < W; ++j) {
                const double v = xp[i * W + j];
                double* r0 = yp + (2 * i) * (2 * W) + 2 * j;
                r0[0] = v;
                r0[1] = v;
                r0[2 * W] = v;
                r0[2 * W + 1] = v;
            }
        }
    }
}

inline void upsample2_backward(Tensor& dx, const Tensor& dy) {
    const std::size_t B = dx.dim(0), C = dx.dim(1), H = dx.dim(2), W = dx.dim(3);
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        double* dxp = dx.data() + bc * H * W;
        const double* dyp = dy.data() + bc * 4 * H * W;
        for (std::size_t i = 0; i < H; ++i) {
            for (std::size_t j = 0; j < W; ++j) {
                const double* r0 = dyp + (2 * i) * (2 * W) + 2 * j;
                dxp[i * W + j] += r0[0] + r0[1] + r0[2 * W] + r0[2 * W + 1];
            }
        }
    }
}

}  // namespace udaseg
