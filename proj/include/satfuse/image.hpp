#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "satfuse/common.hpp"
#include "satfuse/tensor.hpp"

namespace satfuse {

// Separable Gaussian blur, kernel radius ceil(3*sigma), replicate border.
template <typename S>
TensorT<S> gaussian_blur(const TensorT<S>& img, double sigma) {
    if (img.shape.size() != 3) throw ShapeError("gaussian_blur expects (H,W,C)");
    if (sigma <= 0.0) return img;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double norm = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        norm += kernel[static_cast<std::size_t>(i + radius)];
    }
    for (auto& k : kernel) k /= norm;

    const int h = static_cast<int>(img.height()), w = static_cast<int>(img.width());
    const int c = static_cast<int>(img.channels());
    TensorT<S> tmp = img, out = img;
    // horizontal
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    const int xx = std::clamp(x + k, 0, w - 1);
                    acc += kernel[static_cast<std::size_t>(k + radius)] *
                           static_cast<double>(img.at(static_cast<std::uint32_t>(y),
                                                      static_cast<std::uint32_t>(xx),
                                                      static_cast<std::uint32_t>(ch)));
                }
                tmp.at(static_cast<std::uint32_t>(y), static_cast<std::uint32_t>(x),
                       static_cast<std::uint32_t>(ch)) = static_cast<S>(acc);
            }
    // vertical
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    const int yy = std::clamp(y + k, 0, h - 1);
                    acc += kernel[static_cast<std::size_t>(k + radius)] *
                           static_cast<double>(tmp.at(static_cast<std::uint32_t>(yy),
                                                      static_cast<std::uint32_t>(x),
                                                      static_cast<std::uint32_t>(ch)));
                }
                out.at(static_cast<std::uint32_t>(y), static_cast<std::uint32_t>(x),
                       static_cast<std::uint32_t>(ch)) = static_cast<S>(acc);
            }
    return out;
}

// Non-overlapping mean pooling by integer factor.
template <typename S>
TensorT<S> avgpool(const TensorT<S>& img, std::uint32_t f) {
    if (img.shape.size() != 3) throw ShapeError("avgpool expects (H,W,C)");
    if (f == 0 || img.height() % f != 0 || img.width() % f != 0)
        throw ShapeError("avgpool factor must divide spatial dims");
    const std::uint32_t h = img.height() / f, w = img.width() / f, c = img.channels();
    TensorT<S> out({h, w, c});
    const double inv = 1.0 / (static_cast<double>(f) * f);
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x)
            for (std::uint32_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (std::uint32_t dy = 0; dy < f; ++dy)
                    for (std::uint32_t dx = 0; dx < f; ++dx)
                        acc += static_cast<double>(img.at(y * f + dy, x * f + dx, ch));
                out.at(y, x, ch) = static_cast<S>(acc * inv);
            }
    return out;
}

// Bilinear upsample by integer factor, half-pixel centers, clamped edges.
template <typename S>
TensorT<S> upsample_bilinear(const TensorT<S>& img, std::uint32_t f) {
    if (img.shape.size() != 3) throw ShapeError("upsample_bilinear expects (H,W,C)");
    if (f == 0) throw ShapeError("upsample factor must be >= 1");
    const int h = static_cast<int>(img.height()), w = static_cast<int>(img.width());
    const std::uint32_t c = img.channels();
    TensorT<S> out({img.height() * f, img.width() * f, c});
    for (std::uint32_t y = 0; y < out.height(); ++y) {
        const double sy = std::clamp((y + 0.5) / f - 0.5, 0.0, static_cast<double>(h - 1));
        const int y0 = std::min(static_cast<int>(sy), h - 1);
        const int y1 = std::min(y0 + 1, h - 1);
        const double wy = sy - y0;
        for (std::uint32_t x = 0; x < out.width(); ++x) {
            const double sx = std::clamp((x + 0.5) / f - 0.5, 0.0, static_cast<double>(w - 1));
            const int x0 = std::min(static_cast<int>(sx), w - 1);
            const int x1 = std::min(x0 + 1, w - 1);
            const double wx = sx - x0;
            for (std::uint32_t ch = 0; ch < c; ++ch) {
                const double v00 = img.at(static_cast<std::uint32_t>(y0), static_cast<std::uint32_t>(x0), ch);
                const double v01 = img.at(static_cast<std::uint32_t>(y0), static_cast<std::uint32_t>(x1), ch);
                const double v10 = img.at(static_cast<std::uint32_t>(y1), static_cast<std::uint32_t>(x0), ch);
                const double v11 = img.at(static_cast<std::uint32_t>(y1), static_cast<std::uint32_t>(x1), ch);
                const double top = v00 * (1.0 - wx) + v01 * wx;
                const double bot = v10 * (1.0 - wx) + v11 * wx;
                out.at(y, x, ch) = static_cast<S>(top * (1.0 - wy) + bot * wy);
            }
        }
    }
    return out;
}

// Nearest-neighbor upsample by integer factor.
template <typename S>
TensorT<S> upsample_nearest(const TensorT<S>& img, std::uint32_t f) {
    if (img.shape.size() != 3) throw ShapeError("upsample_nearest expects (H,W,C)");
    if (f == 0) throw ShapeError("upsample factor must be >= 1");
    const std::uint32_t c = img.channels();
    TensorT<S> out({img.height() * f, img.width() * f, c});
    for (std::uint32_t y = 0; y < out.height(); ++y)
        for (std::uint32_t x = 0; x < out.width(); ++x)
            for (std::uint32_t ch = 0; ch < c; ++ch) out.at(y, x, ch) = img.at(y / f, x / f, ch);
    return out;
}

template <typename S>
void clamp01(TensorT<S>& img) {
    for (auto& v : img.data) v = std::clamp(v, S(0), S(1));
}

} // namespace satfuse
