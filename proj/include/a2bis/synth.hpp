#ifndef A2BIS_SYNTH_HPP_
#define A2BIS_SYNTH_HPP_

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "a2bis/scene.hpp"
#include "a2bis/skeleton.hpp"
#include "a2bis/tensor.hpp"

namespace a2bis {

// Synthetic scenes: rotated rectangle instances with class-distinct banding
// textures on a dark background, optional forced crossings, Gaussian noise.
struct SynthConfig {
    int image_size = 64;
    int n_classes = 2;
    int min_instances = 1, max_instances = 3;
    double min_len = 18, max_len = 30;   // rectangle long side, px
    double min_wid = 6, max_wid = 10;    // rectangle short side, px
    double cross_probability = 0.2;      // force one intersecting pair
    double noise_sigma = 0.02;

    void validate() const {
        if (image_size < 8) throw std::invalid_argument("SynthConfig: image_size too small");
        if (n_classes < 1) throw std::invalid_argument("SynthConfig: n_classes < 1");
        if (min_instances < 0 || max_instances < min_instances)
            throw std::invalid_argument("SynthConfig: bad instance range");
        if (min_len > max_len || min_wid > max_wid || min_wid <= 0)
            throw std::invalid_argument("SynthConfig: bad size range");
        if (cross_probability < 0 || cross_probability > 1)
            throw std::invalid_argument("SynthConfig: cross_probability outside [0,1]");
        if (noise_sigma < 0) throw std::invalid_argument("SynthConfig: negative noise");
    }
};

namespace detail {

inline Polygon rect_polygon(double cx, double cy, double len, double wid, double theta) {
    double ct = std::cos(theta), st = std::sin(theta);
    double hx = len / 2, hy = wid / 2;
    Polygon p;
    for (auto [u, v] : {std::pair{-hx, -hy}, {hx, -hy}, {hx, hy}, {-hx, hy}})
        p.vertices.push_back({cx + u * ct - v * st, cy + u * st + v * ct});
    return p;
}

// Per-class color weights (RGB) and banding period; classes stay visually
// distinct so the seg head has something to learn.
inline void class_style(int class_id, double rgb[3], double& period) {
    static const double palette[6][3] = {{1.0, 0.35, 0.35}, {0.35, 1.0, 0.35},
                                         {0.35, 0.45, 1.0}, {1.0, 1.0, 0.3},
                                         {1.0, 0.4, 1.0},   {0.4, 1.0, 1.0}};
    const double* p = palette[(class_id - 1) % 6];
    rgb[0] = p[0]; rgb[1] = p[1]; rgb[2] = p[2];
    period = 4.0 + (class_id - 1) % 3;
}

}  // namespace detail

// Deterministic given the rng state. Instances are painted in order (later
// wins in the image); the Scene carries exact masks and class ids.
inline std::pair<DenseMap, Scene> gen_scene(const SynthConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    const int S = cfg.image_size;
    std::uniform_int_distribution<int> n_inst(cfg.min_instances, cfg.max_instances);
    std::uniform_int_distribution<int> cls(1, cfg.n_classes);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> len_d(cfg.min_len, cfg.max_len);
    std::uniform_real_distribution<double> wid_d(cfg.min_wid, cfg.max_wid);
    std::uniform_real_distribution<double> ang_d(-std::numbers::pi / 2, std::numbers::pi / 2);

    const int K = n_inst(rng);
    bool force_cross = K >= 2 && unit(rng) < cfg.cross_probability;

    Scene scene;
    scene.height = S;
    scene.width = S;
    struct Placed { double cx, cy, len, wid, theta; int class_id; };
    std::vector<Placed> placed;
    double margin = cfg.max_len / 2 + 2;
    margin = std::min(margin, S / 2.0 - 1);
    std::uniform_real_distribution<double> pos(margin, S - margin);
    for (int k = 0; k < K; ++k) {
        Placed p;
        p.class_id = cls(rng);
        p.len = len_d(rng);
        p.wid = wid_d(rng);
        p.theta = ang_d(rng);
        if (force_cross && k == 1) {
            // share instance 0's center with a near-perpendicular angle so the
            // rectangles are guaranteed to intersect
            p.cx = placed[0].cx;
            p.cy = placed[0].cy;
            p.theta = wrap_half_pi(placed[0].theta + std::numbers::pi / 2);
        } else {
            p.cx = pos(rng);
            p.cy = pos(rng);
        }
        placed.push_back(p);
        scene.instances.push_back(Instance::from_polygon(
            p.class_id, detail::rect_polygon(p.cx, p.cy, p.len, p.wid, p.theta), S, S));
    }

    DenseMap img(S, S, 3, 0.12f);
    for (size_t k = 0; k < placed.size(); ++k) {
        const Placed& p = placed[k];
        double rgb[3], period;
        detail::class_style(p.class_id, rgb, period);
        double ct = std::cos(p.theta), st = std::sin(p.theta);
        for (const Pixel& px : scene.instances[k].mask) {
            double x = px.j + 0.5, y = px.i + 0.5;
            double u = (x - p.cx) * ct + (y - p.cy) * st;  // along the long axis
            double band = 0.6 + 0.3 * std::cos(2 * std::numbers::pi * u / period);
            for (int c = 0; c < 3; ++c)
                img.at(px.i, px.j, c) = static_cast<float>(band * rgb[c]);
        }
    }
    if (cfg.noise_sigma > 0) {
        std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
        for (auto& v : img.v)
            v = static_cast<float>(std::clamp(static_cast<double>(v) + noise(rng), 0.0, 1.0));
    }
    return {std::move(img), std::move(scene)};
}

// Photometric perturbation for consistency training: brightness shift
// U[-0.1, 0.1], mean-centered contrast U[0.9, 1.1], clamp to [0,1].
template <typename T>
inline Map3<T> perturb(const Map3<T>& image, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> bd(-0.1, 0.1), cd(0.9, 1.1);
    double b = bd(rng), c = cd(rng);
    double mean = 0;
    for (const T& v : image.v) mean += static_cast<double>(v);
    mean /= static_cast<double>(image.v.size());
    Map3<T> out(image.h, image.w, image.c);
    for (size_t n = 0; n < image.v.size(); ++n)
        out.v[n] = static_cast<T>(
            std::clamp((static_cast<double>(image.v[n]) - mean) * c + mean + b, 0.0, 1.0));
    return out;
}

// ---- Geometric augmentation on square maps ----
// rot90 is counter-clockwise in (x, y): (x, y) -> (y, S - x). New pixel
// (i', j') reads old pixel (j', S-1-i'); a box angle maps theta -> theta - pi/2.

template <typename T>
inline Map3<T> rot90_map(const Map3<T>& m) {
    if (m.h != m.w) throw std::invalid_argument("rot90_map: square maps only");
    const int S = m.h;
    Map3<T> out(S, S, m.c);
    for (int i = 0; i < S; ++i)
        for (int j = 0; j < S; ++j)
            for (int c = 0; c < m.c; ++c) out.at(i, j, c) = m.at(j, S - 1 - i, c);
    return out;
}

template <typename T>
inline Map3<T> hflip_map(const Map3<T>& m) {
    Map3<T> out(m.h, m.w, m.c);
    for (int i = 0; i < m.h; ++i)
        for (int j = 0; j < m.w; ++j)
            for (int c = 0; c < m.c; ++c) out.at(i, j, c) = m.at(i, m.w - 1 - j, c);
    return out;
}

// Box-offset channels transform with the grid: under rot90 CCW
// (dx, dy) -> (dy, -dx) and dtheta -> wrap(dtheta - pi/2); under hflip
// (dx, dy) -> (-dx, dy) and dtheta -> -dtheta (then wrapped).
template <typename T>
inline void rot90_box_channels(Map3<T>& box) {
    for (size_t p = 0; p < box.v.size(); p += 5) {
        T dx = box.v[p], dy = box.v[p + 1];
        box.v[p] = dy;
        box.v[p + 1] = static_cast<T>(-dx);
        box.v[p + 4] = static_cast<T>(
            wrap_half_pi(static_cast<double>(box.v[p + 4]) - std::numbers::pi / 2));
    }
}

template <typename T>
inline void hflip_box_channels(Map3<T>& box) {
    for (size_t p = 0; p < box.v.size(); p += 5) {
        box.v[p] = static_cast<T>(-box.v[p]);
        box.v[p + 4] = static_cast<T>(wrap_half_pi(-static_cast<double>(box.v[p + 4])));
    }
}

template <typename T>
inline TargetMapsT<T> rot90_targets(const TargetMapsT<T>& t) {
    TargetMapsT<T> out;
    out.skl = rot90_map(t.skl);
    out.seg = rot90_map(t.seg);
    out.box = rot90_map(t.box);
    out.owner = rot90_map(t.owner);
    rot90_box_channels(out.box);
    return out;
}

template <typename T>
inline TargetMapsT<T> hflip_targets(const TargetMapsT<T>& t) {
    TargetMapsT<T> out;
    out.skl = hflip_map(t.skl);
    out.seg = hflip_map(t.seg);
    out.box = hflip_map(t.box);
    out.owner = hflip_map(t.owner);
    hflip_box_channels(out.box);
    return out;
}

// Scene-level counterparts (rebuild masks/boxes from transformed polygons);
// used to cross-check the map-level transforms.
inline Scene rot90_scene(const Scene& s) {
    if (s.height != s.width) throw std::invalid_argument("rot90_scene: square scenes only");
    Scene out;
    out.height = s.height;
    out.width = s.width;
    for (const Instance& inst : s.instances) {
        Polygon p;
        for (const Vec2& v : inst.polygon.vertices) p.vertices.push_back({v.y, s.width - v.x});
        out.instances.push_back(
            Instance::from_polygon(inst.class_id, std::move(p), out.height, out.width));
    }
    return out;
}

inline Scene hflip_scene(const Scene& s) {
    Scene out;
    out.height = s.height;
    out.width = s.width;
    for (const Instance& inst : s.instances) {
        Polygon p;
        for (const Vec2& v : inst.polygon.vertices) p.vertices.push_back({s.width - v.x, v.y});
        out.instances.push_back(
            Instance::from_polygon(inst.class_id, std::move(p), out.height, out.width));
    }
    return out;
}

}  // namespace a2bis

#endif  // A2BIS_SYNTH_HPP_
