#include "satfuse/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace satfuse {

namespace {

constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeF32 = 0;
const char kMagic[4] = {'S', 'F', 'T', 'N'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

} // namespace

std::vector<std::uint8_t> tensor_to_bytes(const Tensor& t) {
    std::vector<std::uint8_t> out;
    out.reserve(16 + 4 * t.shape.size() + 4 * t.data.size());
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    put_u32(out, kDtypeF32);
    for (auto d : t.shape) put_u32(out, d);
    for (float f : t.data) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(out, bits);
    }
    return out;
}

Tensor tensor_from_bytes(const std::uint8_t* bytes, std::size_t size, std::size_t& consumed) {
    if (size < 16) throw FormatError("tensor blob truncated (header)");
    if (std::memcmp(bytes, kMagic, 4) != 0) throw FormatError("bad tensor magic, expected SFTN");
    std::uint32_t version = get_u32(bytes + 4);
    if (version != kVersion)
        throw FormatError("unsupported tensor format version " + std::to_string(version));
    std::uint32_t rank = get_u32(bytes + 8);
    std::uint32_t dtype = get_u32(bytes + 12);
    if (dtype != kDtypeF32) throw FormatError("unsupported dtype code " + std::to_string(dtype));
    if (rank > 8) throw FormatError("tensor rank " + std::to_string(rank) + " out of range");
    std::size_t off = 16;
    if (size < off + 4 * static_cast<std::size_t>(rank))
        throw FormatError("tensor blob truncated (dims)");
    Tensor t;
    t.shape.resize(rank);
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        t.shape[i] = get_u32(bytes + off);
        off += 4;
        n *= t.shape[i];
    }
    if (size < off + 4 * n) throw FormatError("tensor blob truncated (payload)");
    t.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t bits = get_u32(bytes + off);
        off += 4;
        float f;
        std::memcpy(&f, &bits, 4);
        t.data[i] = f;
    }
    consumed = off;
    return t;
}

void write_tensor(const std::string& path, const Tensor& t) {
    std::vector<std::uint8_t> bytes = tensor_to_bytes(t);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

Tensor read_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    std::size_t consumed = 0;
    Tensor t = tensor_from_bytes(bytes.data(), bytes.size(), consumed);
    if (consumed != bytes.size())
        throw FormatError("trailing bytes after tensor payload: " + path);
    return t;
}

bool all_finite(const float* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(p[i])) return false;
    return true;
}

} // namespace satfuse
