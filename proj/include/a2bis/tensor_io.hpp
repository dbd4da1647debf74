#ifndef A2BIS_TENSOR_IO_HPP_
#define A2BIS_TENSOR_IO_HPP_

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "a2bis/tensor.hpp"

// A2BT container: magic "A2BT", version u16le = 1, dtype u8 = 0 (f32),
// ndim u8 = 3, then H, W, C as u32le, then H*W*C f32le values row-major.

namespace a2bis {

class TensorIoError : public std::runtime_error {
  public:
    enum class Kind { BadMagic, BadVersion, BadDtype, BadNdim, Truncated, NonFinite, Io };
    TensorIoError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
    Kind kind;
};

namespace detail {

inline void put_u16le(std::string& s, uint16_t x) {
    s.push_back(static_cast<char>(x & 0xff));
    s.push_back(static_cast<char>((x >> 8) & 0xff));
}
inline void put_u32le(std::string& s, uint32_t x) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}
inline uint16_t get_u16le(const unsigned char* p) {
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
}
inline uint32_t get_u32le(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

// Atomic write: temp file in the same directory, then rename.
inline void write_file_atomic(const std::string& path, const std::string& bytes) {
    std::filesystem::path p(path);
    std::filesystem::path tmp = p;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw TensorIoError(TensorIoError::Kind::Io, "cannot open for write: " + path);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw TensorIoError(TensorIoError::Kind::Io, "write failed: " + path);
    }
    std::filesystem::rename(tmp, p);
}

}  // namespace detail

inline void write_tensor(const DenseMap& map, const std::string& path) {
    if (!map.all_finite())
        throw TensorIoError(TensorIoError::Kind::NonFinite,
                            "refusing to write non-finite values: " + path);
    std::string out;
    out.reserve(20 + map.size() * 4);
    out += "A2BT";
    detail::put_u16le(out, 1);
    out.push_back(0);  // dtype f32
    out.push_back(3);  // ndim
    detail::put_u32le(out, static_cast<uint32_t>(map.h));
    detail::put_u32le(out, static_cast<uint32_t>(map.w));
    detail::put_u32le(out, static_cast<uint32_t>(map.c));
    static_assert(sizeof(float) == 4);
    for (float x : map.v) {
        uint32_t bits;
        std::memcpy(&bits, &x, 4);
        detail::put_u32le(out, bits);
    }
    detail::write_file_atomic(path, out);
}

inline DenseMap read_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw TensorIoError(TensorIoError::Kind::Io, "cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 4 || std::memcmp(p, "A2BT", 4) != 0)
        throw TensorIoError(TensorIoError::Kind::BadMagic, "bad magic: " + path);
    if (bytes.size() < 20)
        throw TensorIoError(TensorIoError::Kind::Truncated, "truncated header: " + path);
    uint16_t version = detail::get_u16le(p + 4);
    if (version != 1)
        throw TensorIoError(TensorIoError::Kind::BadVersion,
                            "unsupported version " + std::to_string(version) + ": " + path);
    if (p[6] != 0)
        throw TensorIoError(TensorIoError::Kind::BadDtype, "unsupported dtype: " + path);
    if (p[7] != 3)
        throw TensorIoError(TensorIoError::Kind::BadNdim, "unsupported ndim: " + path);
    uint32_t h = detail::get_u32le(p + 8);
    uint32_t w = detail::get_u32le(p + 12);
    uint32_t c = detail::get_u32le(p + 16);
    size_t n = static_cast<size_t>(h) * w * c;
    if (h < 1 || w < 1 || c < 1)
        throw TensorIoError(TensorIoError::Kind::Truncated, "bad dimensions: " + path);
    if (bytes.size() != 20 + n * 4)
        throw TensorIoError(TensorIoError::Kind::Truncated, "truncated payload: " + path);
    DenseMap map(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
    for (size_t i = 0; i < n; ++i) {
        uint32_t bits = detail::get_u32le(p + 20 + i * 4);
        std::memcpy(&map.v[i], &bits, 4);
    }
    return map;
}

}  // namespace a2bis

#endif  // A2BIS_TENSOR_IO_HPP_
