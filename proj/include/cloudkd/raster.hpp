#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cloudkd/common.hpp"

namespace cloudkd {

// ---------------------------------------------------------------------------
// Band stacks and masks, plus the CBSK/CMSK binary containers.
// ---------------------------------------------------------------------------

enum class DType : uint8_t { F32 = 0, U16 = 1, U8 = 2 };

enum class MaskScheme : uint8_t { BinaryCloud = 0, KzSix = 1 };

// KZ six-class IDs.
namespace kz {
inline constexpr uint8_t kClear = 0;
inline constexpr uint8_t kCloud = 1;
inline constexpr uint8_t kSemiTransparent = 2;
inline constexpr uint8_t kShadow = 3;
inline constexpr uint8_t kUndefined = 4;
inline constexpr uint8_t kMissing = 5;
} // namespace kz

int class_count(MaskScheme scheme);
std::vector<uint8_t> evaluated_classes(MaskScheme scheme);
std::vector<uint8_t> ignore_classes(MaskScheme scheme);

// H×W×C multispectral raster, one contiguous H*W plane per band.
struct BandStack {
    uint32_t height = 0;
    uint32_t width = 0;
    std::vector<std::string> bands;       // e.g. {"B02","B03","B04","B08"}
    std::vector<std::vector<float>> data; // data[b][y*width + x]
    bool normalized = false;

    size_t plane_size() const { return static_cast<size_t>(height) * width; }
    void validate() const; // shared dims, unique non-empty bands, finite values
};

// H×W class-ID raster.
struct MaskRaster {
    uint32_t height = 0;
    uint32_t width = 0;
    uint8_t classes = 2;
    MaskScheme scheme = MaskScheme::BinaryCloud;
    std::vector<uint8_t> data;

    size_t size() const { return static_cast<size_t>(height) * width; }
    void validate() const; // every pixel < classes
};

// CBSK container. save always writes the requested dtype; integer dtypes
// require every value to be integral and in range.
void save_band_stack(const BandStack& stack, const std::filesystem::path& path,
                     DType dtype = DType::F32);
BandStack load_band_stack(const std::filesystem::path& path);
DType peek_band_stack_dtype(const std::filesystem::path& path);

// CMSK container.
void save_mask(const MaskRaster& mask, const std::filesystem::path& path);
MaskRaster load_mask(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Per-band z-score normalization.
// ---------------------------------------------------------------------------

inline constexpr double kNormEpsilon = 1e-6;

struct NormStats {
    std::vector<std::string> bands;
    std::vector<double> mean;
    std::vector<double> stddev; // population std
    double epsilon = kNormEpsilon;
};

NormStats compute_norm_stats(const std::vector<const BandStack*>& stacks);
NormStats compute_norm_stats(const std::vector<BandStack>& stacks);

BandStack normalize(const BandStack& stack, const NormStats& stats);
BandStack denormalize(const BandStack& stack, const NormStats& stats);

// UTF-8 text, one `bandId mean std` line per band.
void save_norm_stats(const NormStats& stats, const std::filesystem::path& path);
NormStats load_norm_stats(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Tiling and stitching.
// ---------------------------------------------------------------------------

struct TilePlacement {
    uint32_t row = 0;
    uint32_t col = 0;
};

struct TileLayout {
    uint32_t patch_size = 0;
    uint32_t orig_height = 0;
    uint32_t orig_width = 0;
    uint32_t padded_height = 0; // >= patch_size, reflect-padded bottom/right
    uint32_t padded_width = 0;
    std::vector<TilePlacement> placements;

    uint32_t pad_bottom() const { return padded_height - orig_height; }
    uint32_t pad_right() const { return padded_width - orig_width; }
};

// Placements cover the (padded) raster; edge placements are clamped to end at
// the border. patch_size must be >= 16 and divisible by 16.
TileLayout plan_tiles(uint32_t height, uint32_t width, uint32_t patch_size,
                      uint32_t stride);

std::vector<BandStack> extract_tiles(const BandStack& stack, const TileLayout& layout);
std::vector<MaskRaster> extract_tiles(const MaskRaster& mask, const TileLayout& layout);

// Per-tile multi-channel maps (e.g. logits), one C-plane stack per placement.
// Overlaps receive the arithmetic mean; padding is cropped away.
struct PlaneMap {
    uint32_t channels = 0;
    uint32_t height = 0;
    uint32_t width = 0;
    std::vector<float> data; // [c][y][x]

    float& at(uint32_t c, uint32_t y, uint32_t x) {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
    float at(uint32_t c, uint32_t y, uint32_t x) const {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
};

PlaneMap stitch(const std::vector<PlaneMap>& tiles, const TileLayout& layout,
                uint32_t out_height, uint32_t out_width);

// Mirror-extension index used by the reflect padding (exposed for tests).
uint32_t reflect_index(int64_t i, uint32_t n);

} // namespace cloudkd
