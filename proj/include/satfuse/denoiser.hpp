#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "satfuse/common.hpp"
#include "satfuse/tensor.hpp"

namespace satfuse {

// Width-wise concatenation [z_lr | z_hr]; the right half is the HR slot.
template <typename S>
TensorT<S> concat_latents(const TensorT<S>& z_lr, const TensorT<S>& z_hr) {
    if (!z_lr.same_shape(z_hr)) throw ShapeError("concat_latents: shape mismatch");
    if (z_lr.shape.size() != 3) throw ShapeError("concat_latents expects (H,W,C)");
    const std::uint32_t h = z_lr.height(), w = z_lr.width(), c = z_lr.channels();
    TensorT<S> out({h, 2 * w, c});
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x)
            for (std::uint32_t ch = 0; ch < c; ++ch) {
                out.at(y, x, ch) = z_lr.at(y, x, ch);
                out.at(y, x + w, ch) = z_hr.at(y, x, ch);
            }
    return out;
}

// Masking operator F: select the HR (right) half.
template <typename S>
TensorT<S> mask_hr(const TensorT<S>& full) {
    if (full.shape.size() != 3) throw ShapeError("mask_hr expects (H,W,C)");
    if (full.width() % 2 != 0) throw ShapeError("mask_hr: width must be even");
    const std::uint32_t h = full.height(), w = full.width() / 2, c = full.channels();
    TensorT<S> out({h, w, c});
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x)
            for (std::uint32_t ch = 0; ch < c; ++ch) out.at(y, x, ch) = full.at(y, x + w, ch);
    return out;
}

template <typename S>
TensorT<S> left_half(const TensorT<S>& full) {
    if (full.shape.size() != 3) throw ShapeError("left_half expects (H,W,C)");
    if (full.width() % 2 != 0) throw ShapeError("left_half: width must be even");
    const std::uint32_t h = full.height(), w = full.width() / 2, c = full.channels();
    TensorT<S> out({h, w, c});
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x)
            for (std::uint32_t ch = 0; ch < c; ++ch) out.at(y, x, ch) = full.at(y, x, ch);
    return out;
}

template <typename S>
void set_hr_half(TensorT<S>& full, const TensorT<S>& hr) {
    if (full.shape.size() != 3 || full.width() % 2 != 0) throw ShapeError("set_hr_half: bad full shape");
    const std::uint32_t w = full.width() / 2;
    if (hr.height() != full.height() || hr.width() != w || hr.channels() != full.channels())
        throw ShapeError("set_hr_half: half shape mismatch");
    for (std::uint32_t y = 0; y < full.height(); ++y)
        for (std::uint32_t x = 0; x < w; ++x)
            for (std::uint32_t ch = 0; ch < full.channels(); ++ch)
                full.at(y, x + w, ch) = hr.at(y, x, ch);
}

struct UNetConfig {
    std::uint32_t in_channels = 12;   // latent channels (4x image channels)
    std::uint32_t base_channels = 32; // block widths: base, 2*base, 4*base
    std::uint32_t emb_dim = 128;
    std::uint32_t sin_dim = 64;       // sinusoidal encoding size (even)

    void validate() const;
};

template <typename S>
struct ParamT {
    std::string name;
    std::vector<std::uint32_t> shape;
    std::vector<S> value;

    std::size_t numel() const { return value.size(); }
};

// Per-parameter gradient buffers, index-aligned with UNetT::params().
template <typename S>
using GradsT = std::vector<std::vector<S>>;

// Intermediates saved by forward_cached for the backward pass.
template <typename S>
struct UNetCacheT {
    TensorT<S> x, x0;
    TensorT<S> d1_pre_a, d1_act_a, d1_pre_b, d1_act_b, p1;
    TensorT<S> d2_pre_a, d2_act_a, d2_pre_b, d2_act_b, p2;
    TensorT<S> mid_pre_a, mid_act_a, mid_pre_b, mid_act_b;
    TensorT<S> cat2, u2_pre_a, u2_act_a, u2_pre_b, u2_act_b;
    TensorT<S> cat1, u1_pre_a, u1_act_a, u1_pre_b, u1_act_b;
    std::vector<S> enc_t, t1_pre, t1_act, enc_dt, dt1_pre, dt1_act, emb;
};

// Compact conditional U-Net over concat latents.
//
//   conv_in (C->b) ->
//   down1 [conv b->2b (+emb bias) SiLU, conv 2b->2b SiLU] -> pool2 ->
//   down2 [conv 2b->4b (+emb) SiLU, conv 4b->4b SiLU]     -> pool2 ->
//   mid   [conv 4b->4b (+emb) SiLU, conv 4b->4b SiLU]     ->
//   up2   nearest2x, cat skip2 [conv 8b->2b (+emb) SiLU, conv 2b->2b SiLU] ->
//   up1   nearest2x, cat skip1 [conv 4b->b (+emb) SiLU, conv b->b SiLU] ->
//   conv_out (b->C, zero-initialized)
//
// The timestep and dt embeddings are two independent sinusoidal-input MLPs
// whose outputs are summed, then projected per block by bias-free linear
// maps into per-channel biases added after each block's first conv.
template <typename S>
class UNetT {
public:
    explicit UNetT(const UNetConfig& cfg);

    const UNetConfig& config() const { return cfg_; }
    std::vector<ParamT<S>>& params() { return params_; }
    const std::vector<ParamT<S>>& params() const { return params_; }
    std::size_t param_count() const;

    // He-style init for conv/dense weights, zeroed biases, zero conv_out.
    // Draw order = parameter registry order; zero tensors consume no draws.
    void init_weights(std::uint64_t seed);

    // Per-block bias vectors (down1, down2, mid, up2, up1) for (t, dt).
    std::array<std::vector<S>, 5> embed(int t, double dt_norm) const;

    TensorT<S> forward(const TensorT<S>& x, int t, double dt_norm) const;
    TensorT<S> forward_cached(const TensorT<S>& x, int t, double dt_norm,
                              UNetCacheT<S>& cache) const;

    // Accumulates d loss / d params into `grads` given d loss / d output.
    void backward(const UNetCacheT<S>& cache, const TensorT<S>& grad_out,
                  GradsT<S>& grads) const;

    GradsT<S> make_grads() const;
    static void zero_grads(GradsT<S>& grads);

    // Zeroes the dt-embedding MLP weights (module ablation: no-dt model).
    void zero_dt_branch();

private:
    UNetConfig cfg_;
    std::vector<ParamT<S>> params_;
};

using UNet = UNetT<float>;
using Param = ParamT<float>;
using Grads = GradsT<float>;
using UNetCache = UNetCacheT<float>;

// Geometric-frequency sinusoidal encoding, dim even: [sin(v/f_i)] ++ [cos(v/f_i)],
// f_i = 10000^(i/(dim/2-1)).
template <typename S>
std::vector<S> sinusoidal_encoding(double v, std::uint32_t dim);

} // namespace satfuse
