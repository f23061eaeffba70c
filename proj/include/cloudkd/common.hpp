#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cloudkd {

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps these to exit codes (config 2, data 3,
// divergence 4); per-call contract violations use std::invalid_argument.
// ---------------------------------------------------------------------------

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class FormatIssue {
    BadMagic,
    BadVersion,
    Truncated,
    DimensionMismatch,
    BadField,
    HashMismatch,
};

class FormatError : public DataError {
public:
    FormatError(FormatIssue issue, const std::string& msg)
        : DataError(msg), issue_(issue) {}
    FormatIssue issue() const { return issue_; }

private:
    FormatIssue issue_;
};

class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Little-endian binary IO.
// ---------------------------------------------------------------------------

namespace io {

void write_bytes(std::ostream& os, const void* data, size_t n);
void read_bytes(std::istream& is, void* data, size_t n, const char* what);

void write_u8(std::ostream& os, uint8_t v);
void write_u16(std::ostream& os, uint16_t v);
void write_u32(std::ostream& os, uint32_t v);
void write_f32(std::ostream& os, float v);
void write_f32_array(std::ostream& os, std::span<const float> v);

uint8_t read_u8(std::istream& is, const char* what);
uint16_t read_u16(std::istream& is, const char* what);
uint32_t read_u32(std::istream& is, const char* what);
float read_f32(std::istream& is, const char* what);
void read_f32_array(std::istream& is, std::span<float> v, const char* what);

} // namespace io

// ---------------------------------------------------------------------------
// Seeding and deterministic sampling. All randomness in a run flows from one
// config seed through named sub-seeds; the distribution helpers avoid
// std::*_distribution so streams are stable across standard libraries.
// ---------------------------------------------------------------------------

uint64_t derive_seed(uint64_t base, std::string_view name);

class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), rejection-sampled for exactness.
    uint64_t below(uint64_t n);

    // Standard normal via Box-Muller.
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Shortest decimal form that round-trips a double; used wherever floats are
// persisted as text so reruns are byte-identical.
std::string format_double(double v);

} // namespace cloudkd
