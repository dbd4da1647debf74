#ifndef A2BIS_ANCHORS_HPP_
#define A2BIS_ANCHORS_HPP_

#include <cmath>
#include <vector>

#include "a2bis/rbox.hpp"
#include "a2bis/tensor.hpp"

namespace a2bis {

// Single 3x3 anchor centered on a pixel.
struct Anchor {
    double px = 0;  // pixel column center (j + 0.5)
    double py = 0;  // pixel row center (i + 0.5)
    static constexpr double kSize = 3.0;
};

inline Anchor anchor_at(const Pixel& p) { return {p.j + 0.5, p.i + 0.5}; }

struct BoxOffsets {
    double dx = 0, dy = 0;      // center offsets in anchor-size units
    double dw = 0, dh = 0;      // log-scale extents
    double dtheta = 0;          // radians
};

// One anchor per foreground pixel, row-major order.
inline std::vector<Anchor> place_anchors(const PixelSet& fg) {
    std::vector<Anchor> out;
    out.reserve(fg.size());
    for (const Pixel& p : fg) out.push_back(anchor_at(p));
    return out;
}

inline BoxOffsets encode_offsets(const RBox& gt, const Anchor& a) {
    BoxOffsets o;
    o.dx = (gt.x - a.px) / Anchor::kSize;
    o.dy = (gt.y - a.py) / Anchor::kSize;
    o.dw = std::log(gt.w / Anchor::kSize);
    o.dh = std::log(gt.h / Anchor::kSize);
    o.dtheta = gt.theta;
    return o;
}

// Inverse of encode_offsets, then canonicalize. Extents beyond
// 4 * max(H, W) are clamped (extent_limit <= 0 disables the clamp).
inline RBox decode_offsets(const BoxOffsets& o, const Anchor& a,
                           double extent_limit = 0) {
    RBox b;
    b.x = a.px + o.dx * Anchor::kSize;
    b.y = a.py + o.dy * Anchor::kSize;
    b.w = Anchor::kSize * std::exp(o.dw);
    b.h = Anchor::kSize * std::exp(o.dh);
    if (extent_limit > 0) {
        b.w = std::min(b.w, extent_limit);
        b.h = std::min(b.h, extent_limit);
    }
    b.theta = o.dtheta;
    return canonicalize(b);
}

}  // namespace a2bis

#endif  // A2BIS_ANCHORS_HPP_
