#ifndef A2BIS_GEOMETRY_HPP_
#define A2BIS_GEOMETRY_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "a2bis/rbox.hpp"
#include "a2bis/tensor.hpp"

namespace a2bis {

// Degenerate rectangles get their extents floored here so downstream
// Gaussian covariances stay positive-definite.
inline constexpr double kMinExtent = 1e-3;

struct Polygon {
    std::vector<Vec2> vertices;  // closed implicitly

    bool valid() const {
        if (vertices.size() < 3) return false;
        for (size_t i = 0; i < vertices.size(); ++i) {
            const Vec2& a = vertices[i];
            const Vec2& b = vertices[(i + 1) % vertices.size()];
            if (a.x == b.x && a.y == b.y) return false;
        }
        return true;
    }
};

// Even-odd rule; points exactly on an edge count per ray-crossing parity.
inline bool point_in_polygon(const Polygon& poly, double px, double py) {
    bool inside = false;
    size_t n = poly.vertices.size();
    for (size_t i = 0, j = n - 1; i < n; j = i++) {
        const Vec2& a = poly.vertices[i];
        const Vec2& b = poly.vertices[j];
        if ((a.y > py) != (b.y > py)) {
            double xint = a.x + (py - a.y) / (b.y - a.y) * (b.x - a.x);
            if (px < xint) inside = !inside;
        }
    }
    return inside;
}

// Pixel (i,j) included iff its center (j+0.5, i+0.5) is inside; clipped to
// image bounds. Result sorted row-major.
inline PixelSet rasterize(const Polygon& poly, int height, int width) {
    if (!poly.valid()) throw std::invalid_argument("rasterize: invalid polygon");
    double xmin = poly.vertices[0].x, xmax = xmin;
    double ymin = poly.vertices[0].y, ymax = ymin;
    for (const Vec2& v : poly.vertices) {
        xmin = std::min(xmin, v.x);
        xmax = std::max(xmax, v.x);
        ymin = std::min(ymin, v.y);
        ymax = std::max(ymax, v.y);
    }
    int j0 = std::max(0, static_cast<int>(std::floor(xmin - 0.5)));
    int j1 = std::min(width - 1, static_cast<int>(std::ceil(xmax)));
    int i0 = std::max(0, static_cast<int>(std::floor(ymin - 0.5)));
    int i1 = std::min(height - 1, static_cast<int>(std::ceil(ymax)));
    PixelSet out;
    for (int i = i0; i <= i1; ++i)
        for (int j = j0; j <= j1; ++j)
            if (point_in_polygon(poly, j + 0.5, i + 0.5)) out.push_back({i, j});
    return out;
}

namespace detail {

inline double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Andrew monotone chain; returns hull in counter-clockwise order, collinear
// points dropped. Degenerate inputs may yield fewer than 3 points.
inline std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
    std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
        return a.x < b.x || (a.x == b.x && a.y < b.y);
    });
    pts.erase(std::unique(pts.begin(), pts.end(),
                          [](const Vec2& a, const Vec2& b) {
                              return a.x == b.x && a.y == b.y;
                          }),
              pts.end());
    size_t n = pts.size();
    if (n <= 2) return pts;
    std::vector<Vec2> hull(2 * n);
    size_t k = 0;
    for (size_t i = 0; i < n; ++i) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    size_t lower = k + 1;
    for (size_t i = n - 1; i-- > 0;) {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

}  // namespace detail

// Minimum-area rotated rectangle over the convex hull (one side of the
// optimum is collinear with a hull edge). Degenerate point sets fall back to
// the principal segment with extents floored at kMinExtent.
inline RBox min_area_rbox(const std::vector<Vec2>& points) {
    if (points.empty()) throw std::invalid_argument("min_area_rbox: empty input");
    std::vector<Vec2> hull = detail::convex_hull(points);
    if (hull.size() < 3) {
        // single point or collinear run
        Vec2 a = hull.front(), b = hull.back();
        double dx = b.x - a.x, dy = b.y - a.y;
        double len = std::hypot(dx, dy);
        RBox r;
        r.x = (a.x + b.x) / 2;
        r.y = (a.y + b.y) / 2;
        r.w = std::max(len, kMinExtent);
        r.h = kMinExtent;
        r.theta = len > 0 ? std::atan2(dy, dx) : 0.0;
        return canonicalize(r);
    }
    double best_area = std::numeric_limits<double>::infinity();
    RBox best;
    size_t n = hull.size();
    for (size_t e = 0; e < n; ++e) {
        const Vec2& a = hull[e];
        const Vec2& b = hull[(e + 1) % n];
        double t = std::atan2(b.y - a.y, b.x - a.x);
        double ct = std::cos(t), st = std::sin(t);
        double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
        for (const Vec2& p : hull) {
            double u = p.x * ct + p.y * st;
            double v = -p.x * st + p.y * ct;
            umin = std::min(umin, u);
            umax = std::max(umax, u);
            vmin = std::min(vmin, v);
            vmax = std::max(vmax, v);
        }
        double w = std::max(umax - umin, kMinExtent);
        double h = std::max(vmax - vmin, kMinExtent);
        if (w * h < best_area) {
            best_area = w * h;
            double uc = (umin + umax) / 2, vc = (vmin + vmax) / 2;
            best.x = uc * ct - vc * st;
            best.y = uc * st + vc * ct;
            best.w = w;
            best.h = h;
            best.theta = t;
        }
    }
    return canonicalize(best);
}

inline RBox min_area_rbox(const PixelSet& pixels) {
    std::vector<Vec2> pts;
    pts.reserve(pixels.size());
    for (const Pixel& p : pixels) pts.push_back({p.j + 0.5, p.i + 0.5});
    return min_area_rbox(pts);
}

}  // namespace a2bis

#endif  // A2BIS_GEOMETRY_HPP_
