#pragma once

#include "satfuse/common.hpp"
#include "satfuse/tensor.hpp"

namespace satfuse {

// Fixed latent codec: single-level orthonormal 2D Haar transform per channel.
// encode maps (H, W, C) -> (H/2, W/2, 4C); output channel 4c+k holds subband
// k of input channel c, k in {LL, LH, HL, HH}. decode is the exact inverse
// and, like encode, an L2 isometry.
//
// For a 2x2 block (a b / c d):
//   LL = (a+b+c+d)/2   LH = (a-b+c-d)/2
//   HL = (a+b-c-d)/2   HH = (a-b-c+d)/2

template <typename S>
TensorT<S> encode(const TensorT<S>& image) {
    if (image.shape.size() != 3)
        throw ShapeError("encode expects a rank-3 (H,W,C) tensor");
    const std::uint32_t h = image.height(), w = image.width(), c = image.channels();
    if (h % 2 != 0 || w % 2 != 0)
        throw ShapeError("encode needs even spatial dims, got " + std::to_string(h) + "x" +
                         std::to_string(w));
    TensorT<S> out({h / 2, w / 2, 4 * c});
    for (std::uint32_t y = 0; y < h / 2; ++y) {
        for (std::uint32_t x = 0; x < w / 2; ++x) {
            for (std::uint32_t ch = 0; ch < c; ++ch) {
                const S a = image.at(2 * y, 2 * x, ch);
                const S b = image.at(2 * y, 2 * x + 1, ch);
                const S cc = image.at(2 * y + 1, 2 * x, ch);
                const S d = image.at(2 * y + 1, 2 * x + 1, ch);
                const S half = S(0.5);
                out.at(y, x, 4 * ch + 0) = (a + b + cc + d) * half;
                out.at(y, x, 4 * ch + 1) = (a - b + cc - d) * half;
                out.at(y, x, 4 * ch + 2) = (a + b - cc - d) * half;
                out.at(y, x, 4 * ch + 3) = (a - b - cc + d) * half;
            }
        }
    }
    return out;
}

template <typename S>
TensorT<S> decode(const TensorT<S>& latent) {
    if (latent.shape.size() != 3)
        throw ShapeError("decode expects a rank-3 (H,W,C) tensor");
    const std::uint32_t hl = latent.height(), wl = latent.width(), cl = latent.channels();
    if (cl % 4 != 0)
        throw ShapeError("decode needs a channel count divisible by 4, got " + std::to_string(cl));
    TensorT<S> out({2 * hl, 2 * wl, cl / 4});
    for (std::uint32_t y = 0; y < hl; ++y) {
        for (std::uint32_t x = 0; x < wl; ++x) {
            for (std::uint32_t ch = 0; ch < cl / 4; ++ch) {
                const S ll = latent.at(y, x, 4 * ch + 0);
                const S lh = latent.at(y, x, 4 * ch + 1);
                const S hl_ = latent.at(y, x, 4 * ch + 2);
                const S hh = latent.at(y, x, 4 * ch + 3);
                const S half = S(0.5);
                out.at(2 * y, 2 * x, ch) = (ll + lh + hl_ + hh) * half;
                out.at(2 * y, 2 * x + 1, ch) = (ll - lh + hl_ - hh) * half;
                out.at(2 * y + 1, 2 * x, ch) = (ll + lh - hl_ - hh) * half;
                out.at(2 * y + 1, 2 * x + 1, ch) = (ll - lh - hl_ + hh) * half;
            }
        }
    }
    return out;
}

} // namespace satfuse
