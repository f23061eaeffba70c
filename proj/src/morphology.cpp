#include "cloudkd/morphology.hpp"

#include <stdexcept>

namespace cloudkd {

StructuringElement::StructuringElement(int side, std::vector<bool> pattern)
    : side_(side) {
    if (side < 1 || side % 2 == 0)
        throw std::invalid_argument("structuring element side must be odd and positive");
    if (pattern.size() != static_cast<size_t>(side) * side)
        throw std::invalid_argument("structuring element pattern size mismatch");
    int r = side / 2;
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            if (pattern[y * side + x] != pattern[(side - 1 - y) * side + (side - 1 - x)])
                throw std::invalid_argument(
                    "structuring element must be symmetric about its center");
            if (pattern[y * side + x]) offsets_.emplace_back(y - r, x - r);
        }
    if (offsets_.empty())
        throw std::invalid_argument("structuring element must have at least one set cell");
}

StructuringElement StructuringElement::box(int side) {
    return StructuringElement(side, std::vector<bool>(static_cast<size_t>(side) * side, true));
}

namespace {

void require_binary(const MaskRaster& mask) {
    for (uint8_t v : mask.data)
        if (v > 1) throw std::invalid_argument("morphology requires a binary mask");
}

MaskRaster erode_or_dilate(const MaskRaster& mask, bool erode,
                           const StructuringElement& se) {
    const int h = static_cast<int>(mask.height);
    const int w = static_cast<int>(mask.width);
    // erosion: AND over neighborhood, out-of-bounds reads 1
    // dilation: OR over neighborhood, out-of-bounds reads 0
    const uint8_t pad = erode ? 1 : 0;
    MaskRaster out = mask;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            uint8_t acc = erode ? 1 : 0;
            for (const auto& [dy, dx] : se.offsets()) {
                int yy = y + dy, xx = x + dx;
                uint8_t v = (yy < 0 || yy >= h || xx < 0 || xx >= w)
                                ? pad
                                : mask.data[static_cast<size_t>(yy) * w + xx];
                if (erode) {
                    if (v == 0) {
                        acc = 0;
                        break;
                    }
                } else {
                    if (v == 1) {
                        acc = 1;
                        break;
                    }
                }
            }
            out.data[static_cast<size_t>(y) * w + x] = acc;
        }
    }
    return out;
}

} // namespace

MaskRaster morph(const MaskRaster& mask, MorphOp op, const StructuringElement& se) {
    require_binary(mask);
    switch (op) {
    case MorphOp::Erode:
        return erode_or_dilate(mask, true, se);
    case MorphOp::Dilate:
        return erode_or_dilate(mask, false, se);
    case MorphOp::Open:
        return erode_or_dilate(erode_or_dilate(mask, true, se), false, se);
    case MorphOp::Close:
        return erode_or_dilate(erode_or_dilate(mask, false, se), true, se);
    }
    throw std::invalid_argument("unknown morphological operation");
}

double cloud_fraction(const MaskRaster& mask) {
    if (mask.data.empty()) return 0.0;
    size_t cloud = 0;
    for (uint8_t v : mask.data) cloud += v;
    return static_cast<double>(cloud) / static_cast<double>(mask.data.size());
}

MaskRaster adaptive_postprocess(const MaskRaster& mask) {
    require_binary(mask);
    const auto se = StructuringElement::box(3);
    const MorphOp op = cloud_fraction(mask) > 0.5 ? MorphOp::Close : MorphOp::Open;
    return morph(mask, op, se);
}

} // namespace cloudkd
