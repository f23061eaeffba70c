#include "cloudkd/raster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace cloudkd {

namespace {

constexpr char kStackMagic[4] = {'C', 'B', 'S', 'K'};
constexpr char kMaskMagic[4] = {'C', 'M', 'S', 'K'};
constexpr uint16_t kContainerVersion = 1;

void check_magic(std::istream& is, const char expect[4], const char* what) {
    char m[4];
    io::read_bytes(is, m, 4, what);
    if (std::memcmp(m, expect, 4) != 0)
        throw FormatError(FormatIssue::BadMagic,
                          std::string("bad magic bytes in ") + what);
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    return is;
}

std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    return os;
}

} // namespace

int class_count(MaskScheme scheme) {
    return scheme == MaskScheme::BinaryCloud ? 2 : 6;
}

std::vector<uint8_t> evaluated_classes(MaskScheme scheme) {
    if (scheme == MaskScheme::BinaryCloud) return {1};
    return {kz::kClear, kz::kCloud, kz::kSemiTransparent, kz::kShadow};
}

std::vector<uint8_t> ignore_classes(MaskScheme scheme) {
    if (scheme == MaskScheme::BinaryCloud) return {};
    return {kz::kUndefined, kz::kMissing};
}

void BandStack::validate() const {
    if (bands.empty()) throw DataError("band stack has no bands");
    if (data.size() != bands.size())
        throw DataError("band stack plane/band count mismatch");
    std::set<std::string> seen;
    for (const auto& b : bands) {
        if (b.empty() || b.size() > 8)
            throw DataError("band id must be 1..8 ASCII chars: '" + b + "'");
        if (!seen.insert(b).second) throw DataError("duplicate band id " + b);
    }
    for (size_t b = 0; b < data.size(); ++b) {
        if (data[b].size() != plane_size())
            throw DataError("band " + bands[b] + " plane size mismatch");
        for (float v : data[b])
            if (!std::isfinite(v))
                throw DataError("non-finite value in band " + bands[b]);
    }
}

void MaskRaster::validate() const {
    if (data.size() != size()) throw DataError("mask data size mismatch");
    if (classes == 0) throw DataError("mask class count must be positive");
    for (uint8_t v : data)
        if (v >= classes)
            throw DataError("mask pixel value " + std::to_string(v) +
                            " out of range for " + std::to_string(classes) +
                            " classes");
}

// ---------------------------------------------------------------------------
// CBSK
// ---------------------------------------------------------------------------

void save_band_stack(const BandStack& stack, const std::filesystem::path& path,
                     DType dtype) {
    stack.validate();
    auto os = open_output(path);
    io::write_bytes(os, kStackMagic, 4);
    io::write_u16(os, kContainerVersion);
    io::write_u32(os, stack.height);
    io::write_u32(os, stack.width);
    io::write_u16(os, static_cast<uint16_t>(stack.bands.size()));
    io::write_u8(os, static_cast<uint8_t>(dtype));
    for (const auto& b : stack.bands) {
        char id[8] = {};
        std::memcpy(id, b.data(), b.size());
        io::write_bytes(os, id, 8);
    }
    for (const auto& plane : stack.data) {
        switch (dtype) {
        case DType::F32:
            io::write_f32_array(os, plane);
            break;
        case DType::U16:
            for (float v : plane) {
                if (v < 0.f || v > 65535.f || v != std::floor(v))
                    throw DataError("value " + std::to_string(v) +
                                    " not representable as u16");
                io::write_u16(os, static_cast<uint16_t>(v));
            }
            break;
        case DType::U8:
            for (float v : plane) {
                if (v < 0.f || v > 255.f || v != std::floor(v))
                    throw DataError("value " + std::to_string(v) +
                                    " not representable as u8");
                io::write_u8(os, static_cast<uint8_t>(v));
            }
            break;
        }
    }
    os.flush();
    if (!os) throw DataError("write failed for " + path.string());
}

DType peek_band_stack_dtype(const std::filesystem::path& path) {
    auto is = open_input(path);
    check_magic(is, kStackMagic, "band stack header");
    io::read_u16(is, "version");
    io::read_u32(is, "height");
    io::read_u32(is, "width");
    io::read_u16(is, "band count");
    uint8_t code = io::read_u8(is, "dtype");
    if (code > 2) throw FormatError(FormatIssue::BadField, "unknown dtype code");
    return static_cast<DType>(code);
}

BandStack load_band_stack(const std::filesystem::path& path) {
    auto is = open_input(path);
    check_magic(is, kStackMagic, "band stack header");
    uint16_t version = io::read_u16(is, "version");
    if (version != kContainerVersion)
        throw FormatError(FormatIssue::BadVersion,
                          "unsupported band stack version " + std::to_string(version));
    BandStack stack;
    stack.height = io::read_u32(is, "height");
    stack.width = io::read_u32(is, "width");
    uint16_t nbands = io::read_u16(is, "band count");
    uint8_t dtype_code = io::read_u8(is, "dtype");
    if (dtype_code > 2)
        throw FormatError(FormatIssue::BadField, "unknown dtype code");
    if (nbands == 0)
        throw FormatError(FormatIssue::BadField, "band stack with zero bands");
    DType dtype = static_cast<DType>(dtype_code);
    for (uint16_t b = 0; b < nbands; ++b) {
        char id[9] = {};
        io::read_bytes(is, id, 8, "band id");
        stack.bands.emplace_back(id);
    }
    size_t plane = stack.plane_size();
    stack.data.assign(nbands, std::vector<float>(plane));
    for (auto& p : stack.data) {
        switch (dtype) {
        case DType::F32:
            io::read_f32_array(is, p, "band plane");
            break;
        case DType::U16:
            for (float& v : p) v = static_cast<float>(io::read_u16(is, "band plane"));
            break;
        case DType::U8:
            for (float& v : p) v = static_cast<float>(io::read_u8(is, "band plane"));
            break;
        }
    }
    // Dimension mismatch between header and payload shows up as truncation on
    // read; a longer payload than the header implies is also malformed.
    if (is.peek() != EOF)
        throw FormatError(FormatIssue::DimensionMismatch,
                          "band stack payload longer than header implies");
    stack.validate();
    return stack;
}

// ---------------------------------------------------------------------------
// CMSK
// ---------------------------------------------------------------------------

void save_mask(const MaskRaster& mask, const std::filesystem::path& path) {
    mask.validate();
    auto os = open_output(path);
    io::write_bytes(os, kMaskMagic, 4);
    io::write_u16(os, kContainerVersion);
    io::write_u32(os, mask.height);
    io::write_u32(os, mask.width);
    io::write_u16(os, 1); // plane count
    io::write_u8(os, static_cast<uint8_t>(DType::U8));
    io::write_u8(os, mask.classes);
    io::write_u8(os, static_cast<uint8_t>(mask.scheme));
    io::write_bytes(os, mask.data.data(), mask.data.size());
    os.flush();
    if (!os) throw DataError("write failed for " + path.string());
}

MaskRaster load_mask(const std::filesystem::path& path) {
    auto is = open_input(path);
    check_magic(is, kMaskMagic, "mask header");
    uint16_t version = io::read_u16(is, "version");
    if (version != kContainerVersion)
        throw FormatError(FormatIssue::BadVersion,
                          "unsupported mask version " + std::to_string(version));
    MaskRaster mask;
    mask.height = io::read_u32(is, "height");
    mask.width = io::read_u32(is, "width");
    uint16_t planes = io::read_u16(is, "plane count");
    uint8_t dtype = io::read_u8(is, "dtype");
    if (planes != 1 || dtype != static_cast<uint8_t>(DType::U8))
        throw FormatError(FormatIssue::BadField, "mask must be a single u8 plane");
    mask.classes = io::read_u8(is, "class count");
    uint8_t scheme = io::read_u8(is, "scheme");
    if (scheme > 1) throw FormatError(FormatIssue::BadField, "unknown mask scheme");
    mask.scheme = static_cast<MaskScheme>(scheme);
    mask.data.resize(mask.size());
    io::read_bytes(is, mask.data.data(), mask.data.size(), "mask plane");
    if (is.peek() != EOF)
        throw FormatError(FormatIssue::DimensionMismatch,
                          "mask payload longer than header implies");
    mask.validate();
    return mask;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

NormStats compute_norm_stats(const std::vector<const BandStack*>& stacks) {
    if (stacks.empty()) throw DataError("compute_norm_stats: no stacks");
    const auto& bands = stacks.front()->bands;
    for (const auto* s : stacks)
        if (s->bands != bands)
            throw DataError("compute_norm_stats: band list mismatch");

    NormStats stats;
    stats.bands = bands;
    stats.mean.resize(bands.size());
    stats.stddev.resize(bands.size());
    // Two passes for numerical stability.
    for (size_t b = 0; b < bands.size(); ++b) {
        double sum = 0.0;
        size_t count = 0;
        for (const auto* s : stacks) {
            for (float v : s->data[b]) sum += v;
            count += s->plane_size();
        }
        double mean = sum / static_cast<double>(count);
        double sq = 0.0;
        for (const auto* s : stacks)
            for (float v : s->data[b]) {
                double d = v - mean;
                sq += d * d;
            }
        stats.mean[b] = mean;
        stats.stddev[b] = std::sqrt(sq / static_cast<double>(count));
    }
    return stats;
}

NormStats compute_norm_stats(const std::vector<BandStack>& stacks) {
    std::vector<const BandStack*> ptrs;
    ptrs.reserve(stacks.size());
    for (const auto& s : stacks) ptrs.push_back(&s);
    return compute_norm_stats(ptrs);
}

BandStack normalize(const BandStack& stack, const NormStats& stats) {
    if (stack.normalized) throw DataError("normalize: stack already normalized");
    if (stack.bands != stats.bands)
        throw DataError("normalize: band list mismatch");
    BandStack out = stack;
    for (size_t b = 0; b < out.bands.size(); ++b) {
        float mean = static_cast<float>(stats.mean[b]);
        float inv = static_cast<float>(1.0 / (stats.stddev[b] + stats.epsilon));
        for (float& v : out.data[b]) v = (v - mean) * inv;
    }
    out.normalized = true;
    return out;
}

BandStack denormalize(const BandStack& stack, const NormStats& stats) {
    if (!stack.normalized) throw DataError("denormalize: stack is not normalized");
    if (stack.bands != stats.bands)
        throw DataError("denormalize: band list mismatch");
    BandStack out = stack;
    for (size_t b = 0; b < out.bands.size(); ++b) {
        float mean = static_cast<float>(stats.mean[b]);
        float scale = static_cast<float>(stats.stddev[b] + stats.epsilon);
        for (float& v : out.data[b]) v = v * scale + mean;
    }
    out.normalized = false;
    return out;
}

void save_norm_stats(const NormStats& stats, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    for (size_t b = 0; b < stats.bands.size(); ++b)
        os << stats.bands[b] << ' ' << format_double(stats.mean[b]) << ' '
           << format_double(stats.stddev[b]) << '\n';
    os.flush();
    if (!os) throw DataError("write failed for " + path.string());
}

NormStats load_norm_stats(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open " + path.string());
    NormStats stats;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string band;
        double mean, stddev;
        if (!(ls >> band >> mean >> stddev))
            throw FormatError(FormatIssue::BadField,
                              "malformed norm stats line: " + line);
        stats.bands.push_back(band);
        stats.mean.push_back(mean);
        stats.stddev.push_back(stddev);
    }
    if (stats.bands.empty())
        throw FormatError(FormatIssue::BadField, "empty norm stats file");
    return stats;
}

// ---------------------------------------------------------------------------
// Tiling
// ---------------------------------------------------------------------------

uint32_t reflect_index(int64_t i, uint32_t n) {
    if (n == 1) return 0;
    int64_t period = 2 * (static_cast<int64_t>(n) - 1);
    int64_t m = i % period;
    if (m < 0) m += period;
    if (m >= static_cast<int64_t>(n)) m = period - m;
    return static_cast<uint32_t>(m);
}

namespace {

std::vector<uint32_t> axis_offsets(uint32_t extent, uint32_t patch, uint32_t stride) {
    std::vector<uint32_t> offs;
    uint32_t last = extent - patch;
    for (uint32_t o = 0;; o += stride) {
        if (o >= last) {
            offs.push_back(last);
            break;
        }
        offs.push_back(o);
    }
    return offs;
}

} // namespace

TileLayout plan_tiles(uint32_t height, uint32_t width, uint32_t patch_size,
                      uint32_t stride) {
    if (stride == 0) throw std::invalid_argument("tile: stride must be positive");
    if (patch_size < 16 || patch_size % 16 != 0)
        throw std::invalid_argument("tile: patch size must be >= 16 and divisible by 16");
    if (stride > patch_size)
        throw std::invalid_argument("tile: stride must not exceed patch size");
    if (height == 0 || width == 0)
        throw std::invalid_argument("tile: raster must be non-empty");

    TileLayout layout;
    layout.patch_size = patch_size;
    layout.orig_height = height;
    layout.orig_width = width;
    layout.padded_height = std::max(height, patch_size);
    layout.padded_width = std::max(width, patch_size);

    auto rows = axis_offsets(layout.padded_height, patch_size, stride);
    auto cols = axis_offsets(layout.padded_width, patch_size, stride);
    for (uint32_t r : rows)
        for (uint32_t c : cols) layout.placements.push_back({r, c});
    return layout;
}

namespace {

// Reads source pixel (y, x) of a padded raster, reflecting past the border.
template <typename T>
T padded_at(const std::vector<T>& plane, uint32_t h, uint32_t w, uint32_t y,
            uint32_t x) {
    uint32_t sy = y < h ? y : reflect_index(y, h);
    uint32_t sx = x < w ? x : reflect_index(x, w);
    return plane[static_cast<size_t>(sy) * w + sx];
}

} // namespace

std::vector<BandStack> extract_tiles(const BandStack& stack, const TileLayout& layout) {
    if (layout.orig_height != stack.height || layout.orig_width != stack.width)
        throw std::invalid_argument("extract_tiles: layout does not match raster");
    std::vector<BandStack> tiles;
    tiles.reserve(layout.placements.size());
    uint32_t p = layout.patch_size;
    for (const auto& pl : layout.placements) {
        BandStack tile;
        tile.height = p;
        tile.width = p;
        tile.bands = stack.bands;
        tile.normalized = stack.normalized;
        tile.data.assign(stack.bands.size(), std::vector<float>(static_cast<size_t>(p) * p));
        for (size_t b = 0; b < stack.bands.size(); ++b)
            for (uint32_t y = 0; y < p; ++y)
                for (uint32_t x = 0; x < p; ++x)
                    tile.data[b][static_cast<size_t>(y) * p + x] = padded_at(
                        stack.data[b], stack.height, stack.width, pl.row + y, pl.col + x);
        tiles.push_back(std::move(tile));
    }
    return tiles;
}

std::vector<MaskRaster> extract_tiles(const MaskRaster& mask, const TileLayout& layout) {
    if (layout.orig_height != mask.height || layout.orig_width != mask.width)
        throw std::invalid_argument("extract_tiles: layout does not match raster");
    std::vector<MaskRaster> tiles;
    tiles.reserve(layout.placements.size());
    uint32_t p = layout.patch_size;
    for (const auto& pl : layout.placements) {
        MaskRaster tile;
        tile.height = p;
        tile.width = p;
        tile.classes = mask.classes;
        tile.scheme = mask.scheme;
        tile.data.resize(static_cast<size_t>(p) * p);
        for (uint32_t y = 0; y < p; ++y)
            for (uint32_t x = 0; x < p; ++x)
                tile.data[static_cast<size_t>(y) * p + x] = padded_at(
                    mask.data, mask.height, mask.width, pl.row + y, pl.col + x);
        tiles.push_back(std::move(tile));
    }
    return tiles;
}

PlaneMap stitch(const std::vector<PlaneMap>& tiles, const TileLayout& layout,
                uint32_t out_height, uint32_t out_width) {
    if (tiles.size() != layout.placements.size())
        throw std::invalid_argument("stitch: placement/tile count mismatch");
    if (out_height != layout.orig_height || out_width != layout.orig_width)
        throw std::invalid_argument("stitch: output shape does not match layout");
    if (tiles.empty()) throw std::invalid_argument("stitch: no tiles");
    uint32_t channels = tiles.front().channels;
    uint32_t p = layout.patch_size;
    for (const auto& t : tiles)
        if (t.channels != channels || t.height != p || t.width != p)
            throw std::invalid_argument("stitch: tile shape mismatch");

    size_t padded = static_cast<size_t>(layout.padded_height) * layout.padded_width;
    std::vector<double> acc(padded * channels, 0.0);
    std::vector<uint32_t> count(padded, 0);

    for (size_t t = 0; t < tiles.size(); ++t) {
        const auto& pl = layout.placements[t];
        for (uint32_t y = 0; y < p; ++y) {
            size_t row = static_cast<size_t>(pl.row + y) * layout.padded_width + pl.col;
            for (uint32_t x = 0; x < p; ++x) ++count[row + x];
            for (uint32_t c = 0; c < channels; ++c) {
                double* dst = acc.data() + c * padded + row;
                for (uint32_t x = 0; x < p; ++x) dst[x] += tiles[t].at(c, y, x);
            }
        }
    }

    PlaneMap out;
    out.channels = channels;
    out.height = out_height;
    out.width = out_width;
    out.data.resize(static_cast<size_t>(channels) * out_height * out_width);
    for (uint32_t c = 0; c < channels; ++c)
        for (uint32_t y = 0; y < out_height; ++y)
            for (uint32_t x = 0; x < out_width; ++x) {
                size_t src = static_cast<size_t>(y) * layout.padded_width + x;
                out.at(c, y, x) =
                    static_cast<float>(acc[c * padded + src] / count[src]);
            }
    return out;
}

} // namespace cloudkd
