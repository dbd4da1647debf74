#ifndef A2BIS_PROPOSAL_HPP_
#define A2BIS_PROPOSAL_HPP_

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "a2bis/anchors.hpp"
#include "a2bis/rbox.hpp"
#include "a2bis/scene.hpp"
#include "a2bis/skeleton.hpp"
#include "a2bis/tensor.hpp"

namespace a2bis {

struct ProposalConfig {
    double delta = kForegroundDelta;  // skeleton foreground threshold
    double nms_iou = 0.3;
    double score_floor = 0.05;
    int max_detections = 300;
    bool skeleton_score = true;  // fuse skl into the box score

    void validate() const {
        if (delta <= 0 || delta >= 1 || nms_iou <= 0 || nms_iou >= 1 ||
            score_floor <= 0 || score_floor >= 1)
            throw std::invalid_argument("ProposalConfig: thresholds outside (0,1)");
        if (max_detections < 1)
            throw std::invalid_argument("ProposalConfig: max_detections < 1");
    }
};

namespace detail {

inline bool pixel_in_rbox(const RBox& b, int i, int j, double slack = 0.0) {
    double x = j + 0.5 - b.x, y = i + 0.5 - b.y;
    double ct = std::cos(b.theta), st = std::sin(b.theta);
    double u = x * ct + y * st, v = -x * st + y * ct;
    return std::abs(u) <= b.w / 2 + slack && std::abs(v) <= b.h / 2 + slack;
}

}  // namespace detail

// Box and mask proposal from the three head maps.
//   1. label map = per-pixel argmax of seg;
//   2. anchors at skeleton foreground pixels;
//   3. per anchor: box decoded from offsets, class = argmax over object
//      channels only, score = seg * skl (or seg alone when skeleton_score off);
//   4. score floor then per-class rotated NMS;
//   5. each surviving box of class c claims pixels inside its rectangle whose
//      label is c (highest-scoring claimant wins) or the overlap channel
//      (shared by every claimant);
//   6. top max_detections by score, empty masks dropped.
template <typename T>
inline std::vector<Detection> propose(const Map3<T>& skl, const Map3<T>& seg,
                                      const Map3<T>& box, const ProposalConfig& cfg = {}) {
    cfg.validate();
    const int H = skl.h, W = skl.w, C = seg.c;
    if (skl.c != 1 || box.c != 5 || seg.h != H || seg.w != W || box.h != H || box.w != W)
        throw std::invalid_argument("propose: map shape mismatch");
    if (C < 3) throw std::invalid_argument("propose: seg needs >= 3 channels");
    const int n_cls = C - 2;
    const int overlap = C - 1;
    const double limit = 4.0 * std::max(H, W);

    // (1) label map
    Map3<int> label(H, W, 1, 0);
    for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
            int best = 0;
            for (int c = 1; c < C; ++c)
                if (seg.at(i, j, c) > seg.at(i, j, best)) best = c;
            label.at(i, j, 0) = best;
        }
    }

    // (2)-(3) candidates
    struct Cand { RBox box; int class_id; double score; };
    std::vector<Cand> cands;
    for (const Pixel& p : foreground(skl, cfg.delta)) {
        Anchor a = anchor_at(p);
        BoxOffsets o{static_cast<double>(box.at(p.i, p.j, 0)),
                     static_cast<double>(box.at(p.i, p.j, 1)),
                     static_cast<double>(box.at(p.i, p.j, 2)),
                     static_cast<double>(box.at(p.i, p.j, 3)),
                     static_cast<double>(box.at(p.i, p.j, 4))};
        int c = 1;
        for (int k = 2; k <= n_cls; ++k)
            if (seg.at(p.i, p.j, k) > seg.at(p.i, p.j, c)) c = k;
        double score = static_cast<double>(seg.at(p.i, p.j, c));
        if (cfg.skeleton_score) score *= static_cast<double>(skl.at(p.i, p.j, 0));
        if (score < cfg.score_floor) continue;
        cands.push_back({decode_offsets(o, a, limit), c, score});
    }

    // (4) per-class NMS
    std::vector<Detection> dets;
    for (int c = 1; c <= n_cls; ++c) {
        std::vector<std::pair<RBox, double>> cls;
        for (const Cand& cd : cands)
            if (cd.class_id == c) cls.push_back({cd.box, cd.score});
        for (int idx : rotated_nms(cls, cfg.nms_iou)) {
            Detection d;
            d.rbox = cls[static_cast<size_t>(idx)].first;
            d.score = cls[static_cast<size_t>(idx)].second;
            d.class_id = c;
            dets.push_back(std::move(d));
        }
    }

    // (6a) rank by score before mask assignment so contention resolution and
    // the top-k cut agree; stable sort keeps class/NMS order on score ties
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        return a.score > b.score;
    });
    if (static_cast<int>(dets.size()) > cfg.max_detections)
        dets.resize(static_cast<size_t>(cfg.max_detections));

    // (5) mask reassignment
    for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
            int L = label.at(i, j, 0);
            if (L == 0) continue;
            if (L == overlap) {
                // overlap pixels go to every box containing them
                for (Detection& d : dets)
                    if (detail::pixel_in_rbox(d.rbox, i, j)) d.mask.push_back({i, j});
            } else {
                // class pixels go to the best-scoring same-class box
                for (Detection& d : dets) {  // dets already score-descending
                    if (d.class_id == L && detail::pixel_in_rbox(d.rbox, i, j)) {
                        d.mask.push_back({i, j});
                        break;
                    }
                }
            }
        }
    }
    std::erase_if(dets, [](const Detection& d) { return d.mask.empty(); });
    for (Detection& d : dets) std::sort(d.mask.begin(), d.mask.end());
    return dets;
}

}  // namespace a2bis

#endif  // A2BIS_PROPOSAL_HPP_
