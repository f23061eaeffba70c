#include "cloudkd/common.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace cloudkd {

namespace io {

void write_bytes(std::ostream& os, const void* data, size_t n) {
    os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!os) throw DataError("write failed");
}

void read_bytes(std::istream& is, void* data, size_t n, const char* what) {
    is.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n)
        throw FormatError(FormatIssue::Truncated,
                          std::string("truncated payload while reading ") + what);
}

void write_u8(std::ostream& os, uint8_t v) { write_bytes(os, &v, 1); }

void write_u16(std::ostream& os, uint16_t v) {
    uint8_t b[2] = {static_cast<uint8_t>(v & 0xff), static_cast<uint8_t>(v >> 8)};
    write_bytes(os, b, 2);
}

void write_u32(std::ostream& os, uint32_t v) {
    uint8_t b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<uint8_t>((v >> (8 * i)) & 0xff);
    write_bytes(os, b, 4);
}

void write_f32(std::ostream& os, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
}

void write_f32_array(std::ostream& os, std::span<const float> v) {
    // Host is little-endian in practice; keep bulk writes fast and guard the
    // assumption once.
    static_assert(sizeof(float) == 4);
    if constexpr (std::endian::native == std::endian::little) {
        write_bytes(os, v.data(), v.size() * 4);
    } else {
        for (float x : v) write_f32(os, x);
    }
}

uint8_t read_u8(std::istream& is, const char* what) {
    uint8_t v;
    read_bytes(is, &v, 1, what);
    return v;
}

uint16_t read_u16(std::istream& is, const char* what) {
    uint8_t b[2];
    read_bytes(is, b, 2, what);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t read_u32(std::istream& is, const char* what) {
    uint8_t b[4];
    read_bytes(is, b, 4, what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

float read_f32(std::istream& is, const char* what) {
    uint32_t bits = read_u32(is, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void read_f32_array(std::istream& is, std::span<float> v, const char* what) {
    if constexpr (std::endian::native == std::endian::little) {
        read_bytes(is, v.data(), v.size() * 4, what);
    } else {
        for (float& x : v) x = read_f32(is, what);
    }
}

} // namespace io

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

} // namespace

uint64_t derive_seed(uint64_t base, std::string_view name) {
    uint64_t h = 0xcbf29ce484222325ull; // FNV-1a
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return splitmix64(base ^ splitmix64(h));
}

uint64_t Rng::below(uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1, u2;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
}

std::string format_double(double v) {
    char buf[40];
    // 17 significant digits round-trip any double; trim to the shortest form
    // that still parses back exactly.
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

} // namespace cloudkd
