#pragma once

#include <string>
#include <vector>

#include "cloudkd/raster.hpp"
#include "cloudkd/unet.hpp"

namespace cloudkd {

// One training/inference patch: normalized input plus per-pixel class IDs.
struct SegSample {
    std::string id;
    Tensor input;                // 1 x C x H x W
    std::vector<uint8_t> labels; // H*W, empty for unlabeled inference
};

struct SegDataset {
    MaskScheme scheme = MaskScheme::BinaryCloud;
    int in_channels = 0;
    int num_classes = 0;
    int patch = 0; // every sample is patch x patch
    std::vector<SegSample> samples;

    bool empty() const { return samples.empty(); }
};

} // namespace cloudkd
