#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

// Byte-explicit little-endian binary I/O shared by the parameter and volume
// file formats, independent of host endianness.
namespace mtp::binio {

inline void wr_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = (unsigned char)((v >> (8 * i)) & 0xff);
    os.write((const char*)b, 4);
}

inline void wr_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = (unsigned char)((v >> (8 * i)) & 0xff);
    os.write((const char*)b, 8);
}

inline void wr_f64(std::ostream& os, double d) {
    uint64_t v;
    std::memcpy(&v, &d, 8);
    wr_u64(os, v);
}

inline uint32_t rd_u32(std::istream& is, const char* what = "binary stream") {
    unsigned char b[4];
    if (!is.read((char*)b, 4)) throw std::runtime_error(std::string(what) + " truncated");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= (uint32_t)b[i] << (8 * i);
    return v;
}

inline uint64_t rd_u64(std::istream& is, const char* what = "binary stream") {
    unsigned char b[8];
    if (!is.read((char*)b, 8)) throw std::runtime_error(std::string(what) + " truncated");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= (uint64_t)b[i] << (8 * i);
    return v;
}

inline double rd_f64(std::istream& is, const char* what = "binary stream") {
    const uint64_t v = rd_u64(is, what);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

inline void write_doubles(std::ostream& os, std::span<const double> values) {
    for (double v : values) wr_f64(os, v);
}

inline std::vector<double> read_doubles(std::istream& is, size_t count,
                                        const char* what = "binary stream") {
    std::vector<double> out(count);
    for (auto& v : out) v = rd_f64(is, what);
    return out;
}

// FNV-1a 64-bit content checksum for manifest integrity checks (not
// cryptographic)
inline uint64_t fnv1a64(const void* data, size_t len) {
    const auto* p = (const unsigned char*)data;
    uint64_t h = 14695981039346656037ull;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace mtp::binio
