#include "cto/mask_ops.hpp"

namespace cto {

namespace {

inline bool fg(const LabelMask& m, int r, int c) {
    if (r < 0 || r >= m.h || c < 0 || c >= m.w) return false;
    return m.at(r, c) != 0;
}

} // namespace

LabelMask dilate_cross(const LabelMask& m) {
    LabelMask out(m.h, m.w);
    for (int r = 0; r < m.h; ++r)
        for (int c = 0; c < m.w; ++c)
            out.at(r, c) = (fg(m, r, c) || fg(m, r - 1, c) || fg(m, r + 1, c) || fg(m, r, c - 1) ||
                            fg(m, r, c + 1))
                               ? 1
                               : 0;
    return out;
}

LabelMask erode_cross(const LabelMask& m) {
    LabelMask out(m.h, m.w);
    for (int r = 0; r < m.h; ++r)
        for (int c = 0; c < m.w; ++c)
            out.at(r, c) = (fg(m, r, c) && fg(m, r - 1, c) && fg(m, r + 1, c) && fg(m, r, c - 1) &&
                            fg(m, r, c + 1))
                               ? 1
                               : 0;
    return out;
}

LabelMask boundary_gt(const LabelMask& mask) {
    const LabelMask d = dilate_cross(mask);
    const LabelMask e = erode_cross(mask);
    LabelMask out(mask.h, mask.w);
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = d.v[i] != e.v[i] ? 1 : 0;
    return out;
}

LabelMask maxpool_mask(const LabelMask& mask, int factor) {
    LabelMask out(mask.h / factor, mask.w / factor);
    for (int r = 0; r < out.h; ++r)
        for (int c = 0; c < out.w; ++c) {
            std::uint8_t m = 0;
            for (int i = 0; i < factor; ++i)
                for (int j = 0; j < factor; ++j)
                    m = std::max(m, mask.at(r * factor + i, c * factor + j));
            out.at(r, c) = m;
        }
    return out;
}

LabelMask inner_boundary(const LabelMask& mask) {
    LabelMask out(mask.h, mask.w);
    for (int r = 0; r < mask.h; ++r)
        for (int c = 0; c < mask.w; ++c) {
            if (!fg(mask, r, c)) continue;
            const bool interior = fg(mask, r - 1, c) && fg(mask, r + 1, c) && fg(mask, r, c - 1) &&
                                  fg(mask, r, c + 1);
            out.at(r, c) = interior ? 0 : 1;
        }
    return out;
}

} // namespace cto
