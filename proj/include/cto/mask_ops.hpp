#pragma once

// Integer label-map utilities shared by the data pipeline, losses and
// metrics. These are plain raster operations, not autodiff ops.

#include <cstdint>
#include <vector>

namespace cto {

// Single-image label map, row-major.
struct LabelMask {
    int h = 0, w = 0;
    std::vector<std::uint8_t> v;

    LabelMask() = default;
    LabelMask(int h_, int w_, std::uint8_t fill = 0)
        : h(h_), w(w_), v(static_cast<size_t>(h_) * static_cast<size_t>(w_), fill) {}

    std::uint8_t at(int r, int c) const { return v[static_cast<size_t>(r) * w + c]; }
    std::uint8_t& at(int r, int c) { return v[static_cast<size_t>(r) * w + c]; }
    bool operator==(const LabelMask&) const = default;
};

// 3x3 cross morphology on a binarized mask; out-of-image counts as background.
LabelMask dilate_cross(const LabelMask& m);
LabelMask erode_cross(const LabelMask& m);

// Ground-truth boundary band: dilate(mask) XOR erode(mask) with the 3x3
// cross, i.e. a 1-2 px band around every label transition. Any nonzero label
// counts as foreground.
LabelMask boundary_gt(const LabelMask& mask);

// Block max-pool by an integer factor (h, w divisible by it). Used to bring
// the ground-truth boundary band to the boundary head's resolution without
// thinning it away.
LabelMask maxpool_mask(const LabelMask& mask, int factor);

// Inner boundary: foreground pixels with at least one 4-neighbor outside the
// mask (image border counts as outside). This is the pixel set surface
// distances are measured over.
LabelMask inner_boundary(const LabelMask& mask);

} // namespace cto
