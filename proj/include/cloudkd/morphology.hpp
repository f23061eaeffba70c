#pragma once

#include <vector>

#include "cloudkd/raster.hpp"

namespace cloudkd {

// Square-symmetric structuring element; the paper rule uses the 3x3 box.
class StructuringElement {
public:
    // k x k grid of set offsets, row-major; side must be odd and the pattern
    // point-symmetric about the center.
    StructuringElement(int side, std::vector<bool> pattern);

    static StructuringElement box(int side); // all ones

    int side() const { return side_; }
    int radius() const { return side_ / 2; }
    // Set offsets relative to the center, (dy, dx).
    const std::vector<std::pair<int, int>>& offsets() const { return offsets_; }

private:
    int side_;
    std::vector<std::pair<int, int>> offsets_;
};

enum class MorphOp { Erode, Dilate, Open, Close };

// Binary morphology. Border convention: erosion pads with 1, dilation pads
// with 0, which keeps close(x) == !open(!x) for symmetric elements.
// open = dilate(erode(x)), close = erode(dilate(x)).
MaskRaster morph(const MaskRaster& mask, MorphOp op, const StructuringElement& se);

// Cloud fraction strictly above 1/2 routes to closing, otherwise (including
// exactly 1/2) to opening; single application of the 3x3 box.
MaskRaster adaptive_postprocess(const MaskRaster& mask);

double cloud_fraction(const MaskRaster& mask);

} // namespace cloudkd
