#ifndef A2BIS_SKELETON_HPP_
#define A2BIS_SKELETON_HPP_

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "a2bis/anchors.hpp"
#include "a2bis/scene.hpp"
#include "a2bis/tensor.hpp"

namespace a2bis {

inline constexpr double kForegroundDelta = 0.02;

// Supervision maps for one scene.
template <typename T>
struct TargetMapsT {
    Map3<T> skl;    // H x W x 1 in [0,1], exactly 1.0 on skeleton pixels
    Map3<T> seg;    // H x W x (n_cls + 2) one-hot; 0 = background, last = overlap
    Map3<T> box;    // H x W x 5 encoded offsets where owned, zero elsewhere
    Map3<T> owner;  // H x W x 1 instance index, -1 where none
};

using TargetMaps = TargetMapsT<float>;

// Zhang-Suen thinning of a binary mask. Output is a subset of the input and
// preserves 8-connectivity of each component.
inline PixelSet thin_mask(const PixelSet& mask, int height, int width) {
    if (mask.empty()) return {};
    std::vector<uint8_t> grid(static_cast<size_t>(height) * width, 0);
    for (const Pixel& p : mask) {
        if (p.i < 0 || p.i >= height || p.j < 0 || p.j >= width)
            throw std::invalid_argument("thin_mask: pixel out of bounds");
        grid[static_cast<size_t>(p.i) * width + p.j] = 1;
    }
    auto at = [&](int i, int j) -> int {
        if (i < 0 || i >= height || j < 0 || j >= width) return 0;
        return grid[static_cast<size_t>(i) * width + j];
    };
    bool changed = true;
    std::vector<Pixel> to_clear;
    while (changed) {
        changed = false;
        for (int pass = 0; pass < 2; ++pass) {
            to_clear.clear();
            for (const Pixel& p : mask) {
                int i = p.i, j = p.j;
                if (!at(i, j)) continue;
                // neighbors P2..P9 clockwise from north
                int n[8] = {at(i - 1, j), at(i - 1, j + 1), at(i, j + 1),
                            at(i + 1, j + 1), at(i + 1, j), at(i + 1, j - 1),
                            at(i, j - 1), at(i - 1, j - 1)};
                int b = 0;
                for (int k = 0; k < 8; ++k) b += n[k];
                if (b < 2 || b > 6) continue;
                int a = 0;
                for (int k = 0; k < 8; ++k)
                    if (n[k] == 0 && n[(k + 1) % 8] == 1) ++a;
                if (a != 1) continue;
                if (pass == 0) {
                    if (n[0] * n[2] * n[4] != 0) continue;
                    if (n[2] * n[4] * n[6] != 0) continue;
                } else {
                    if (n[0] * n[2] * n[6] != 0) continue;
                    if (n[0] * n[4] * n[6] != 0) continue;
                }
                to_clear.push_back(p);
            }
            for (const Pixel& p : to_clear)
                grid[static_cast<size_t>(p.i) * width + p.j] = 0;
            if (!to_clear.empty()) changed = true;
        }
    }
    PixelSet out;
    for (const Pixel& p : mask)
        if (grid[static_cast<size_t>(p.i) * width + p.j]) out.push_back(p);
    std::sort(out.begin(), out.end());
    return out;
}

namespace detail {

// Euclidean distance from a mask pixel to the nearest non-mask pixel
// (out-of-image counts as non-mask). Ring search; masks are thin.
inline double dist_to_background(const std::vector<uint8_t>& grid, int height,
                                 int width, int i, int j) {
    double best = 1e300;
    for (int r = 1;; ++r) {
        if (static_cast<double>(r - 1) * (r - 1) > best) break;
        bool any = false;
        for (int di = -r; di <= r; ++di) {
            for (int dj = -r; dj <= r; ++dj) {
                if (std::max(std::abs(di), std::abs(dj)) != r) continue;
                int ii = i + di, jj = j + dj;
                bool bg = (ii < 0 || ii >= height || jj < 0 || jj >= width) ||
                          !grid[static_cast<size_t>(ii) * width + jj];
                if (bg) {
                    double d2 = static_cast<double>(di) * di + static_cast<double>(dj) * dj;
                    best = std::min(best, d2);
                }
                any = true;
            }
        }
        if (!any) break;
    }
    return std::sqrt(best);
}

// Per-instance Gaussian skeleton field; peak 1.0 on skeleton pixels, sigma
// tied to local half-width.
template <typename T>
inline void render_instance_field(const Instance& inst, int height, int width,
                                  Map3<T>& out) {
    std::vector<uint8_t> grid(static_cast<size_t>(height) * width, 0);
    for (const Pixel& p : inst.mask)
        grid[static_cast<size_t>(p.i) * width + p.j] = 1;
    PixelSet skl = thin_mask(inst.mask, height, width);
    for (const Pixel& s : skl) {
        double d = dist_to_background(grid, height, width, s.i, s.j);
        double sigma = std::max(1.0, d / 3.0);
        int radius = static_cast<int>(std::ceil(5.3 * sigma));
        int i0 = std::max(0, s.i - radius), i1 = std::min(height - 1, s.i + radius);
        int j0 = std::max(0, s.j - radius), j1 = std::min(width - 1, s.j + radius);
        double inv = 1.0 / (2 * sigma * sigma);
        for (int i = i0; i <= i1; ++i) {
            for (int j = j0; j <= j1; ++j) {
                double d2 = static_cast<double>(i - s.i) * (i - s.i) +
                            static_cast<double>(j - s.j) * (j - s.j);
                T val = static_cast<T>(std::exp(-d2 * inv));
                out.at(i, j, 0) = std::max(out.at(i, j, 0), val);
            }
        }
    }
}

}  // namespace detail

template <typename T = float>
inline Map3<T> render_skeleton(const std::vector<Instance>& instances, int height,
                               int width) {
    Map3<T> out(height, width, 1, T(0));
    for (const Instance& inst : instances)
        detail::render_instance_field(inst, height, width, out);
    return out;
}

template <typename T>
inline PixelSet foreground(const Map3<T>& skl, double delta = kForegroundDelta) {
    PixelSet out;
    for (int i = 0; i < skl.h; ++i)
        for (int j = 0; j < skl.w; ++j)
            if (static_cast<double>(skl.at(i, j, 0)) >= delta) out.push_back({i, j});
    return out;
}

template <typename T = float>
inline TargetMapsT<T> build_targets(const Scene& scene, int n_cls) {
    const int H = scene.height, W = scene.width;
    const int C = n_cls + 2;
    for (const Instance& inst : scene.instances)
        if (inst.class_id < 1 || inst.class_id > n_cls)
            throw std::invalid_argument("build_targets: class_id out of range");

    TargetMapsT<T> t;
    t.skl = Map3<T>(H, W, 1, T(0));
    t.seg = Map3<T>(H, W, C, T(0));
    t.box = Map3<T>(H, W, 5, T(0));
    t.owner = Map3<T>(H, W, 1, T(-1));

    std::vector<Map3<T>> fields;
    fields.reserve(scene.instances.size());
    for (const Instance& inst : scene.instances) {
        Map3<T> f(H, W, 1, T(0));
        detail::render_instance_field(inst, H, W, f);
        fields.push_back(std::move(f));
        for (size_t n = 0; n < t.skl.v.size(); ++n)
            t.skl.v[n] = std::max(t.skl.v[n], fields.back().v[n]);
    }

    // cover counts and ownership
    Map3<int> cover(H, W, 1, 0);
    std::vector<int> first_cover(static_cast<size_t>(H) * W, -1);
    for (size_t k = 0; k < scene.instances.size(); ++k) {
        for (const Pixel& p : scene.instances[k].mask) {
            if (p.i < 0 || p.i >= H || p.j < 0 || p.j >= W)
                throw std::invalid_argument("build_targets: mask pixel out of bounds");
            int& cnt = cover.at(p.i, p.j, 0);
            if (cnt == 0) first_cover[static_cast<size_t>(p.i) * W + p.j] = static_cast<int>(k);
            ++cnt;
            T best = t.owner.at(p.i, p.j, 0) < 0
                         ? T(-1)
                         : fields[static_cast<size_t>(t.owner.at(p.i, p.j, 0))].at(p.i, p.j, 0);
            if (t.owner.at(p.i, p.j, 0) < 0 || fields[k].at(p.i, p.j, 0) > best)
                t.owner.at(p.i, p.j, 0) = static_cast<T>(k);
        }
    }

    for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
            int cnt = cover.at(i, j, 0);
            if (cnt == 0) {
                t.seg.at(i, j, 0) = T(1);
            } else if (cnt == 1) {
                int k = first_cover[static_cast<size_t>(i) * W + j];
                t.seg.at(i, j, scene.instances[static_cast<size_t>(k)].class_id) = T(1);
            } else {
                t.seg.at(i, j, C - 1) = T(1);
            }
            int own = static_cast<int>(t.owner.at(i, j, 0));
            if (own >= 0) {
                BoxOffsets o = encode_offsets(scene.instances[static_cast<size_t>(own)].rbox,
                                              anchor_at({i, j}));
                t.box.at(i, j, 0) = static_cast<T>(o.dx);
                t.box.at(i, j, 1) = static_cast<T>(o.dy);
                t.box.at(i, j, 2) = static_cast<T>(o.dw);
                t.box.at(i, j, 3) = static_cast<T>(o.dh);
                t.box.at(i, j, 4) = static_cast<T>(o.dtheta);
            }
        }
    }
    return t;
}

}  // namespace a2bis

#endif  // A2BIS_SKELETON_HPP_
