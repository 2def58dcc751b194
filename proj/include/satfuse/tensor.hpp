#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "satfuse/common.hpp"

namespace satfuse {

// Dense row-major tensor. Images and latents are rank-3 (H, W, C),
// channel-last.
template <typename S>
struct TensorT {
    std::vector<std::uint32_t> shape;
    std::vector<S> data;

    TensorT() = default;
    explicit TensorT(std::vector<std::uint32_t> shp) : shape(std::move(shp)) {
        data.assign(numel_of(shape), S(0));
    }

    static TensorT hwc(std::uint32_t h, std::uint32_t w, std::uint32_t c) {
        return TensorT({h, w, c});
    }

    static std::size_t numel_of(const std::vector<std::uint32_t>& shp) {
        std::size_t n = 1;
        for (auto d : shp) n *= d;
        return n;
    }

    std::size_t numel() const { return data.size(); }
    std::uint32_t dim(std::size_t i) const { return shape.at(i); }
    std::uint32_t height() const { return dim(0); }
    std::uint32_t width() const { return dim(1); }
    std::uint32_t channels() const { return dim(2); }

    S& at(std::uint32_t y, std::uint32_t x, std::uint32_t c) {
        return data[(static_cast<std::size_t>(y) * dim(1) + x) * dim(2) + c];
    }
    S at(std::uint32_t y, std::uint32_t x, std::uint32_t c) const {
        return data[(static_cast<std::size_t>(y) * dim(1) + x) * dim(2) + c];
    }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    template <typename T>
    TensorT<T> cast() const {
        TensorT<T> out;
        out.shape = shape;
        out.data.assign(data.begin(), data.end());
        return out;
    }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// ".f32" tensor file: magic "SFTN", then little-endian u32 fields
// version=1, rank, dtype (0 = float32), rank dims, then the row-major
// float32 payload. Round-trips bit-exactly.
void write_tensor(const std::string& path, const Tensor& t);
Tensor read_tensor(const std::string& path);

// In-memory codecs of the same byte layout (used by the checkpoint format).
std::vector<std::uint8_t> tensor_to_bytes(const Tensor& t);
Tensor tensor_from_bytes(const std::uint8_t* bytes, std::size_t size, std::size_t& consumed);

bool all_finite(const float* p, std::size_t n);

} // namespace satfuse
