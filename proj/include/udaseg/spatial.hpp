#pragma once

// Spatial pattern encoding fed to the discriminator: semantic masks,
// Sobel edge maps and their inverse maps, stacked channel-wise.
//
// A probability map is a rank-2 tensor with values in [0, 1] and both
// sides >= 3 (the Sobel kernel must fit). Edge responses are normalised
// by 4 (the largest response a [0,1] map can produce), so every channel
// stays in [0, 1] and the inverse channels are well defined.

#include <array>
#include <vector>

#include "udaseg/autodiff.hpp"
#include "udaseg/errors.hpp"
#include "udaseg/kernels.hpp"
#include "udaseg/tensor.hpp"

namespace udaseg {

using ProbabilityMap = Tensor;   // H x W, values in [0, 1]
using SpatialEncoding = Tensor;  // 6 x H x W, [P, J-P, f1, f2, J-f1, J-f2]

// Discriminator input width per encoding variant:
//   mask_only  -> [imgA, imgB, P]                                   (3)
//   mask_edge  -> [imgA, imgB, P, f1, f2]                           (5)
//   full       -> [imgA, imgB, P, J-P, f1, f2, J-f1, J-f2]          (8)
//   seven      -> full minus the last inverse edge map              (7)
enum class EncodingMode { mask_only, mask_edge, full, seven };

inline std::size_t encoding_channels(EncodingMode mode) {
    switch (mode) {
        case EncodingMode::mask_only: return 3;
        case EncodingMode::mask_edge: return 5;
        case EncodingMode::full: return 8;
        case EncodingMode::seven: return 7;
    }
    throw ConfigError("unknown encoding mode");
}

inline void validate_probability_map(const Tensor& p) {
    if (p.rank() != 2) throw InvalidInputError("probability map must be H x W");
    if (p.dim(0) < 3 || p.dim(1) < 3)
        throw InvalidInputError("probability map must be at least 3x3, got " + p.shape_str());
    for (double v : p.vec())
        if (!(v >= 0.0 && v <= 1.0)) throw InvalidInputError("probability map value outside [0,1]");
}

namespace detail {

// Sobel kernels pre-divided by 4 so |conv| lands in [0, 1].
inline const Tensor& sobel_kernel_x() {
    static const Tensor k = [] {
        Tensor t({1, 1, 3, 3});
        const double v[9] = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
        for (int i = 0; i < 9; ++i) t[i] = v[i] / 4.0;
        return t;
    }();
    return k;
}

inline const Tensor& sobel_kernel_y() {
    static const Tensor k = [] {
        Tensor t({1, 1, 3, 3});
        const double v[9] = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
        for (int i = 0; i < 9; ++i) t[i] = v[i] / 4.0;
        return t;
    }();
    return k;
}

inline Tensor sobel_response(const Tensor& p, const Tensor& kernel) {
    validate_probability_map(p);
    const std::size_t H = p.dim(0), W = p.dim(1);
    Tensor x({1, 1, H, W});
    x.vec() = p.vec();
    Tensor y;
    conv2d_forward(y, x, kernel, Tensor{}, 1, 1);
    Tensor out({H, W});
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::min(1.0, std::abs(y[i]));
    return out;
}

}  // namespace detail

// |conv(P, Kx)| / 4 with zero padding, Kx = [[-1,0,1],[-2,0,2],[-1,0,1]]
inline ProbabilityMap sobel_x(const ProbabilityMap& p) {
    return detail::sobel_response(p, detail::sobel_kernel_x());
}

// transposed kernel Ky = Kx^T
inline ProbabilityMap sobel_y(const ProbabilityMap& p) {
    return detail::sobel_response(p, detail::sobel_kernel_y());
}

// J - M elementwise
inline ProbabilityMap invert(const ProbabilityMap& m) {
    validate_probability_map(m);
    Tensor out = m;
    for (auto& v : out.vec()) v = 1.0 - v;
    return out;
}

// The 6-channel stack [P, J-P, f1(P), f2(P), J-f1(P), J-f2(P)].
inline SpatialEncoding encode_spatial(const ProbabilityMap& p) {
    validate_probability_map(p);
    const std::size_t H = p.dim(0), W = p.dim(1);
    const Tensor f1 = sobel_x(p);
    const Tensor f2 = sobel_y(p);
    Tensor out({6, H, W});
    const std::size_t n = H * W;
    for (std::size_t i = 0; i < n; ++i) {
        out[0 * n + i] = p[i];
        out[1 * n + i] = 1.0 - p[i];
        out[2 * n + i] = f1[i];
        out[3 * n + i] = f2[i];
        out[4 * n + i] = 1.0 - f1[i];
        out[5 * n + i] = 1.0 - f2[i];
    }
    return out;
}

// Stack the two image modalities with the spatial encoding of P.
// Channel order (full mode): [imgA, imgB, P, J-P, f1, f2, J-f1, J-f2].
inline Tensor build_discriminator_input(const Tensor& images, const ProbabilityMap& p,
                                        EncodingMode mode = EncodingMode::full) {
    if (images.rank() != 3 || images.dim(0) != 2)
        throw InvalidInputError("images must be 2 x H x W, got " + images.shape_str());
    validate_probability_map(p);
    if (images.dim(1) != p.dim(0) || images.dim(2) != p.dim(1))
        throw InvalidInputError("images " + images.shape_str() + " and probability map " + p.shape_str() +
                                " disagree on spatial size");
    const std::size_t H = p.dim(0), W = p.dim(1), n = H * W;
    const SpatialEncoding enc = encode_spatial(p);

    static const std::vector<std::size_t> kChannelPick[] = {
        {0},                 // mask_only
        {0, 2, 3},           // mask_edge
        {0, 1, 2, 3, 4, 5},  // full
        {0, 1, 2, 3, 4},     // seven
    };
    const auto& pick = kChannelPick[static_cast<int>(mode)];

    Tensor out({2 + pick.size(), H, W});
    std::copy(images.data(), images.data() + 2 * n, out.data());
    for (std::size_t c = 0; c < pick.size(); ++c)
        std::copy(enc.data() + pick[c] * n, enc.data() + (pick[c] + 1) * n, out.data() + (2 + c) * n);
    return out;
}

// Differentiable batch variant used in training: images (B,2,H,W) and
// prob (B,1,H,W) on the tape; the Sobel convolutions are constant-kernel
// conv nodes so gradients flow back into the generator output.
inline ad::Val discriminator_input_tape(ad::Val images, ad::Val prob,
                                        EncodingMode mode = EncodingMode::full) {
    using namespace ad;
    if (images->val.rank() != 4 || images->val.dim(1) != 2)
        throw InvalidInputError("discriminator_input_tape: images must be (B,2,H,W)");
    if (prob->val.rank() != 4 || prob->val.dim(1) != 1)
        throw InvalidInputError("discriminator_input_tape: prob must be (B,1,H,W)");

    switch (mode) {
        case EncodingMode::mask_only:
            return concat_channels({images, prob});
        case EncodingMode::mask_edge: {
            Val f1 = abs(conv2d(prob, constant(udaseg::detail::sobel_kernel_x()), nullptr, 1, 1));
            Val f2 = abs(conv2d(prob, constant(udaseg::detail::sobel_kernel_y()), nullptr, 1, 1));
            return concat_channels({images, prob, f1, f2});
        }
        case EncodingMode::full:
        case EncodingMode::seven: {
            Val f1 = abs(conv2d(prob, constant(udaseg::detail::sobel_kernel_x()), nullptr, 1, 1));
            Val f2 = abs(conv2d(prob, constant(udaseg::detail::sobel_kernel_y()), nullptr, 1, 1));
            Val inv_p = rsub_scalar(1.0, prob);
            Val inv_f1 = rsub_scalar(1.0, f1);
            if (mode == EncodingMode::seven)
                return concat_channels({images, prob, inv_p, f1, f2, inv_f1});
            Val inv_f2 = rsub_scalar(1.0, f2);
            return concat_channels({images, prob, inv_p, f1, f2, inv_f1, inv_f2});
        }
    }
    throw ConfigError("unknown encoding mode");
}

}  // namespace udaseg
