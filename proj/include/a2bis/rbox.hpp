#ifndef A2BIS_RBOX_HPP_
#define A2BIS_RBOX_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace a2bis {

struct Vec2 {
    double x = 0, y = 0;
};

// Rotated rectangle (x, y, w, h, theta).
// Canonical form: w >= h and theta in (-pi/2, pi/2]; square implies theta == 0.
struct RBox {
    double x = 0, y = 0;
    double w = 0, h = 0;
    double theta = 0;
};

inline double wrap_half_pi(double t) {
    // into (-pi/2, pi/2], rectangles are pi-periodic
    const double pi = std::numbers::pi;
    t = std::fmod(t, pi);
    if (t <= -pi / 2) t += pi;
    if (t > pi / 2) t -= pi;
    return t;
}

inline RBox canonicalize(RBox b) {
    if (!(b.w > 0) || !(b.h > 0))
        throw std::invalid_argument("canonicalize: extents must be positive");
    const double pi = std::numbers::pi;
    if (b.w < b.h) {
        std::swap(b.w, b.h);
        b.theta += pi / 2;
    }
    b.theta = wrap_half_pi(b.theta);
    if (b.w == b.h) b.theta = 0;
    return b;
}

// Corners in order, starting at (+w/2, +h/2) in the box frame.
inline std::array<Vec2, 4> box_corners(const RBox& b) {
    double ct = std::cos(b.theta), st = std::sin(b.theta);
    double hw = b.w / 2, hh = b.h / 2;
    std::array<Vec2, 4> out;
    const double sx[4] = {+1, -1, -1, +1};
    const double sy[4] = {+1, +1, -1, -1};
    for (int k = 0; k < 4; ++k) {
        double px = sx[k] * hw, py = sy[k] * hh;
        out[k] = {b.x + px * ct - py * st, b.y + px * st + py * ct};
    }
    return out;
}

// 2D Gaussian with mu and the symmetric square root of the covariance.
struct Gaussian2 {
    Vec2 mu;
    double s11 = 0, s12 = 0, s22 = 0;  // sqrt_sigma entries
};

inline Gaussian2 to_gaussian(const RBox& b) {
    double ct = std::cos(b.theta), st = std::sin(b.theta);
    Gaussian2 g;
    g.mu = {b.x, b.y};
    g.s11 = (b.w / 2) * ct * ct + (b.h / 2) * st * st;
    g.s22 = (b.w / 2) * st * st + (b.h / 2) * ct * ct;
    g.s12 = ((b.w - b.h) / 2) * ct * st;
    return g;
}

namespace detail {

// Covariance Sigma = R diag(w^2/4, h^2/4) R^T as (a, b, c) = (S11, S12, S22).
struct Cov2 {
    double a = 0, b = 0, c = 0;
};

inline Cov2 box_cov(const RBox& r) {
    double ct = std::cos(r.theta), st = std::sin(r.theta);
    double A = r.w * r.w / 4, B = r.h * r.h / 4;
    return {A * ct * ct + B * st * st, (A - B) * ct * st, A * st * st + B * ct * ct};
}

}  // namespace detail

// Squared 2-Wasserstein distance between the Gaussians of two boxes.
// Closed form for 2x2 SPD: Tr(M^{1/2}) = sqrt(Tr M + 2 sqrt(det M)).
inline double gauss_distance(const RBox& p, const RBox& g) {
    if (p.x == g.x && p.y == g.y && p.w == g.w && p.h == g.h && p.theta == g.theta)
        return 0.0;  // identical boxes: exactly zero, no rounding residue
    auto sp = detail::box_cov(p);
    auto sg = detail::box_cov(g);
    double dx = p.x - g.x, dy = p.y - g.y;
    double tr_p = sp.a + sp.c, tr_g = sg.a + sg.c;
    double det_p = sp.a * sp.c - sp.b * sp.b;
    double det_g = sg.a * sg.c - sg.b * sg.b;
    double tr_pg = sp.a * sg.a + 2 * sp.b * sg.b + sp.c * sg.c;
    double inner = tr_pg + 2 * std::sqrt(std::max(0.0, det_p * det_g));
    double d = dx * dx + dy * dy + tr_p + tr_g - 2 * std::sqrt(std::max(0.0, inner));
    return std::max(0.0, d);
}

namespace detail {

inline double shoelace_area(const std::vector<Vec2>& poly) {
    double a = 0;
    size_t n = poly.size();
    for (size_t i = 0; i < n; ++i) {
        const Vec2& p = poly[i];
        const Vec2& q = poly[(i + 1) % n];
        a += p.x * q.y - q.x * p.y;
    }
    return std::abs(a) / 2;
}

// Sutherland-Hodgman: clip polygon by the half-plane left of edge a->b.
inline std::vector<Vec2> clip_half_plane(const std::vector<Vec2>& poly, Vec2 a, Vec2 b) {
    std::vector<Vec2> out;
    size_t n = poly.size();
    auto side = [&](const Vec2& p) {
        return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    };
    for (size_t i = 0; i < n; ++i) {
        const Vec2& cur = poly[i];
        const Vec2& nxt = poly[(i + 1) % n];
        double sc = side(cur), sn = side(nxt);
        if (sc >= 0) out.push_back(cur);
        if ((sc > 0 && sn < 0) || (sc < 0 && sn > 0)) {
            double t = sc / (sc - sn);
            out.push_back({cur.x + t * (nxt.x - cur.x), cur.y + t * (nxt.y - cur.y)});
        }
    }
    return out;
}

}  // namespace detail

// Intersection area of two rotated rectangles via convex clipping.
inline double rbox_intersection_area(const RBox& a, const RBox& b) {
    auto ca = box_corners(a);
    auto cb = box_corners(b);
    // corners are counter-clockwise in a y-down frame for theta=0; orient so
    // the interior is on the left of each edge
    std::vector<Vec2> poly(ca.begin(), ca.end());
    if (detail::shoelace_area(poly) <= 0) return 0;
    auto signed_area = [](const std::array<Vec2, 4>& c) {
        double s = 0;
        for (int i = 0; i < 4; ++i) {
            s += c[i].x * c[(i + 1) % 4].y - c[(i + 1) % 4].x * c[i].y;
        }
        return s / 2;
    };
    std::array<Vec2, 4> clipper = cb;
    if (signed_area(cb) < 0) std::reverse(clipper.begin(), clipper.end());
    if (signed_area(ca) < 0) std::reverse(poly.begin(), poly.end());
    for (int i = 0; i < 4 && !poly.empty(); ++i)
        poly = detail::clip_half_plane(poly, clipper[i], clipper[(i + 1) % 4]);
    if (poly.size() < 3) return 0;
    return detail::shoelace_area(poly);
}

inline double rotated_iou(const RBox& a, const RBox& b) {
    double inter = rbox_intersection_area(a, b);
    double uni = a.w * a.h + b.w * b.h - inter;
    if (uni <= 0) return 0;
    return std::clamp(inter / uni, 0.0, 1.0);
}

// Greedy NMS; ties in score broken by lower original index. Returns kept
// indices in kept order.
inline std::vector<int> rotated_nms(const std::vector<std::pair<RBox, double>>& dets,
                                    double iou_threshold) {
    std::vector<int> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return dets[a].second > dets[b].second;
    });
    std::vector<int> kept;
    for (int idx : order) {
        bool ok = true;
        for (int k : kept) {
            if (rotated_iou(dets[idx].first, dets[k].first) > iou_threshold) {
                ok = false;
                break;
            }
        }
        if (ok) kept.push_back(idx);
    }
    return kept;
}

}  // namespace a2bis

#endif  // A2BIS_RBOX_HPP_
