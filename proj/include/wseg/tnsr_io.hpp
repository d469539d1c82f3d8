#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "wseg/tensor.hpp"

namespace wseg {

/// TNSR: minimal binary tensor container.
///   magic "TNSR" | version u8 (=1) | dtype u8 (1 = float32 LE)
///   | rank u32 LE | dims u32 LE each | payload row-major float32 LE
/// Files are byte-identical across platforms for identical contents.

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::string tnsr_encode(const Tensor& t) {
    std::string out;
    out.reserve(10 + 4 * t.rank() + 4 * t.size());
    out += "TNSR";
    out.push_back(1);  // version
    out.push_back(1);  // dtype float32
    detail::put_u32_le(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.dims()) detail::put_u32_le(out, static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < t.size(); ++i) {
        const float f = static_cast<float>(t[i]);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::put_u32_le(out, bits);
    }
    return out;
}

inline void tnsr_save(const Tensor& t, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("tnsr_save: cannot open '" + path + "' for writing");
    const std::string bytes = tnsr_encode(t);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("tnsr_save: write failed for '" + path + "'");
}

inline Tensor tnsr_decode(const std::vector<unsigned char>& bytes, const std::string& origin) {
    auto fail = [&](const std::string& why) -> Tensor {
        throw std::runtime_error("TNSR '" + origin + "': " + why);
    };
    if (bytes.size() < 10) return fail("truncated header");
    if (std::memcmp(bytes.data(), "TNSR", 4) != 0) return fail("bad magic");
    if (bytes[4] != 1) return fail("unsupported version " + std::to_string(bytes[4]));
    if (bytes[5] != 1) return fail("unsupported dtype " + std::to_string(bytes[5]));
    const std::uint32_t rank = detail::get_u32_le(bytes.data() + 6);
    if (rank == 0 || rank > 8) return fail("implausible rank " + std::to_string(rank));
    if (bytes.size() < 10 + 4 * static_cast<std::size_t>(rank)) return fail("truncated dims");

    std::vector<std::size_t> dims(rank);
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        dims[i] = detail::get_u32_le(bytes.data() + 10 + 4 * i);
        if (dims[i] == 0) return fail("zero dimension");
        count *= dims[i];
    }
    const std::size_t payload_at = 10 + 4 * static_cast<std::size_t>(rank);
    if (bytes.size() != payload_at + 4 * count)
        return fail("payload length " + std::to_string(bytes.size() - payload_at) +
                    " does not match dims (expected " + std::to_string(4 * count) + " bytes)");

    std::vector<double> data(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t bits = detail::get_u32_le(bytes.data() + payload_at + 4 * i);
        float f;
        std::memcpy(&f, &bits, 4);
        data[i] = static_cast<double>(f);
    }
    try {
        return Tensor::from_data(std::move(dims), std::move(data));
    } catch (const std::invalid_argument& e) {
        return fail(e.what());
    }
}

inline Tensor tnsr_load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("tnsr_load: cannot open '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    return tnsr_decode(bytes, path);
}

}  // namespace wseg
