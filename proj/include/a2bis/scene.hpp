#ifndef A2BIS_SCENE_HPP_
#define A2BIS_SCENE_HPP_

#include <string>
#include <vector>

#include <json.hpp>

#include "a2bis/geometry.hpp"
#include "a2bis/rbox.hpp"
#include "a2bis/tensor.hpp"

namespace a2bis {

struct Instance {
    int class_id = 1;           // in [1, n_cls]
    Polygon polygon;
    PixelSet mask;              // derived from polygon
    RBox rbox;                  // derived, canonical

    static Instance from_polygon(int class_id, Polygon poly, int height, int width) {
        Instance inst;
        inst.class_id = class_id;
        inst.polygon = std::move(poly);
        inst.mask = rasterize(inst.polygon, height, width);
        inst.rbox = min_area_rbox(inst.polygon.vertices);
        return inst;
    }
};

struct Scene {
    int height = 0, width = 0;
    std::vector<Instance> instances;
};

struct Detection {
    RBox rbox;
    int class_id = 1;
    double score = 0;
    PixelSet mask;
};

// Annotation JSON:
// {"height": int, "width": int,
//  "instances": [{"class_id": int, "polygon": [[x,y],...]}, ...]}

inline nlohmann::json scene_to_json(const Scene& s) {
    nlohmann::json j;
    j["height"] = s.height;
    j["width"] = s.width;
    j["instances"] = nlohmann::json::array();
    for (const Instance& inst : s.instances) {
        nlohmann::json ji;
        ji["class_id"] = inst.class_id;
        ji["polygon"] = nlohmann::json::array();
        for (const Vec2& v : inst.polygon.vertices)
            ji["polygon"].push_back({v.x, v.y});
        j["instances"].push_back(std::move(ji));
    }
    return j;
}

inline Scene scene_from_json(const nlohmann::json& j) {
    Scene s;
    s.height = j.at("height").get<int>();
    s.width = j.at("width").get<int>();
    for (const auto& ji : j.at("instances")) {
        Polygon poly;
        for (const auto& jv : ji.at("polygon"))
            poly.vertices.push_back({jv.at(0).get<double>(), jv.at(1).get<double>()});
        s.instances.push_back(
            Instance::from_polygon(ji.at("class_id").get<int>(), std::move(poly),
                                   s.height, s.width));
    }
    return s;
}

// Row-major run-length encoding of a pixel set: [start, len, start, len, ...]
// with start = i * width + j.
inline std::vector<long> mask_to_rle(const PixelSet& mask, int width) {
    std::vector<long> lin;
    lin.reserve(mask.size());
    for (const Pixel& p : mask) lin.push_back(static_cast<long>(p.i) * width + p.j);
    std::sort(lin.begin(), lin.end());
    std::vector<long> rle;
    for (size_t i = 0; i < lin.size();) {
        size_t k = i + 1;
        while (k < lin.size() && lin[k] == lin[k - 1] + 1) ++k;
        rle.push_back(lin[i]);
        rle.push_back(static_cast<long>(k - i));
        i = k;
    }
    return rle;
}

inline PixelSet mask_from_rle(const std::vector<long>& rle, int width) {
    PixelSet out;
    for (size_t i = 0; i + 1 < rle.size(); i += 2) {
        for (long k = 0; k < rle[i + 1]; ++k) {
            long lin = rle[i] + k;
            out.push_back({static_cast<int>(lin / width), static_cast<int>(lin % width)});
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

inline nlohmann::json detections_to_json(const std::vector<Detection>& dets, int width) {
    nlohmann::json j = nlohmann::json::array();
    for (const Detection& d : dets) {
        nlohmann::json jd;
        jd["class_id"] = d.class_id;
        jd["score"] = d.score;
        jd["rbox"] = {d.rbox.x, d.rbox.y, d.rbox.w, d.rbox.h, d.rbox.theta};
        jd["mask_rle"] = mask_to_rle(d.mask, width);
        j.push_back(std::move(jd));
    }
    return j;
}

inline std::vector<Detection> detections_from_json(const nlohmann::json& j, int width) {
    std::vector<Detection> out;
    for (const auto& jd : j) {
        Detection d;
        d.class_id = jd.at("class_id").get<int>();
        d.score = jd.at("score").get<double>();
        const auto& r = jd.at("rbox");
        d.rbox = {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>(),
                  r.at(3).get<double>(), r.at(4).get<double>()};
        d.mask = mask_from_rle(jd.at("mask_rle").get<std::vector<long>>(), width);
        out.push_back(std::move(d));
    }
    return out;
}

}  // namespace a2bis

#endif  // A2BIS_SCENE_HPP_
