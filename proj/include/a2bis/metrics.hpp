#ifndef A2BIS_METRICS_HPP_
#define A2BIS_METRICS_HPP_

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "a2bis/rbox.hpp"
#include "a2bis/scene.hpp"

namespace a2bis {

struct ClassMetrics {
    double ap = 0, pq = 0, dq = 0, sq = 0;
    long tp = 0, fp = 0, fn = 0;
};

struct EvalReport {
    double map50 = 0, mpq = 0, bpq = 0;
    std::map<int, ClassMetrics> per_class;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["map50"] = map50;
        j["mpq"] = mpq;
        j["bpq"] = bpq;
        j["per_class"] = nlohmann::json::object();
        for (const auto& [id, m] : per_class)
            j["per_class"][std::to_string(id)] = {{"ap", m.ap}, {"pq", m.pq},
                                                  {"dq", m.dq}, {"sq", m.sq},
                                                  {"tp", m.tp}, {"fp", m.fp},
                                                  {"fn", m.fn}};
        return j;
    }
};

struct ScoredBox {
    std::string image_id;
    RBox box;
    double score = 0;
};

// AP at rotated IoU 0.5, all-point interpolation. Detections are matched in
// score-descending order to the unmatched same-image GT of highest IoU.
inline double average_precision(std::vector<ScoredBox> dets,
                                const std::map<std::string, std::vector<RBox>>& gts,
                                long* tp_out = nullptr, long* fp_out = nullptr) {
    size_t n_gt = 0;
    for (const auto& [id, v] : gts) n_gt += v.size();
    std::stable_sort(dets.begin(), dets.end(),
                     [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
    std::map<std::string, std::vector<bool>> used;
    for (const auto& [id, v] : gts) used[id].assign(v.size(), false);

    std::vector<bool> is_tp(dets.size(), false);
    long tp = 0, fp = 0;
    std::vector<double> precision, recall;
    for (size_t d = 0; d < dets.size(); ++d) {
        auto it = gts.find(dets[d].image_id);
        int best = -1;
        double best_iou = 0.5;  // must reach the threshold
        if (it != gts.end()) {
            auto& flags = used[dets[d].image_id];
            for (size_t g = 0; g < it->second.size(); ++g) {
                if (flags[g]) continue;
                double iou = rotated_iou(dets[d].box, it->second[g]);
                if (iou >= best_iou && (best < 0 || iou > best_iou)) {
                    best = static_cast<int>(g);
                    best_iou = iou;
                }
            }
        }
        if (best >= 0) {
            used[dets[d].image_id][static_cast<size_t>(best)] = true;
            ++tp;
        } else {
            ++fp;
        }
        precision.push_back(tp / static_cast<double>(tp + fp));
        recall.push_back(n_gt ? tp / static_cast<double>(n_gt) : 0.0);
    }
    if (tp_out) *tp_out = tp;
    if (fp_out) *fp_out = fp;
    if (n_gt == 0) return 0.0;

    // precision envelope, area under the PR curve
    double ap = 0, prev_r = 0;
    for (size_t k = 0; k < precision.size(); ++k) {
        double pmax = 0;
        for (size_t m = k; m < precision.size(); ++m) pmax = std::max(pmax, precision[m]);
        ap += (recall[k] - prev_r) * pmax;
        prev_r = recall[k];
    }
    return ap;
}

namespace detail {

inline double mask_iou(const PixelSet& a, const PixelSet& b) {
    // both sorted
    size_t i = 0, j = 0, inter = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] < b[j]) ++i;
        else if (b[j] < a[i]) ++j;
        else { ++inter; ++i; ++j; }
    }
    size_t uni = a.size() + b.size() - inter;
    return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

}  // namespace detail

struct PqAccum {
    long tp = 0, fp = 0, fn = 0;
    double iou_sum = 0;

    void finish(double& pq, double& dq, double& sq) const {
        double denom = tp + 0.5 * fp + 0.5 * fn;
        pq = denom > 0 ? iou_sum / denom : 0.0;
        dq = denom > 0 ? tp / denom : 0.0;
        sq = tp > 0 ? iou_sum / tp : 0.0;
    }
};

// When neither masks within preds nor within gts overlap, IoU > 0.5 matches
// are provably unique, so any matching order gives the same pairing. With
// overlapping GT masks (crossing instances) a prediction can clear 0.5
// against two GTs; each prediction then takes the best unmatched GT.
inline void pq_accumulate(const std::vector<PixelSet>& preds,
                          const std::vector<PixelSet>& gts, PqAccum& acc) {
    std::vector<bool> gt_used(gts.size(), false);
    for (const PixelSet& p : preds) {
        int match = -1;
        double match_iou = 0;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (gt_used[g]) continue;
            double iou = detail::mask_iou(p, gts[g]);
            if (iou > 0.5 && iou > match_iou) {
                match = static_cast<int>(g);
                match_iou = iou;
            }
        }
        if (match >= 0) {
            gt_used[static_cast<size_t>(match)] = true;
            ++acc.tp;
            acc.iou_sum += match_iou;
        } else {
            ++acc.fp;
        }
    }
    for (bool u : gt_used)
        if (!u) ++acc.fn;
}

// ---- Multi-image dataset containers ----

struct ImageGt {
    std::string id;
    Scene scene;
};

struct ImagePred {
    std::string id;
    std::vector<Detection> dets;
};

// GT file: {"images": [{"id", "height", "width", "instances": [...]}]}
inline std::vector<ImageGt> gt_set_from_json(const nlohmann::json& j) {
    std::vector<ImageGt> out;
    for (const auto& ji : j.at("images"))
        out.push_back({ji.at("id").get<std::string>(), scene_from_json(ji)});
    return out;
}

inline nlohmann::json gt_set_to_json(const std::vector<ImageGt>& gts) {
    nlohmann::json j;
    j["images"] = nlohmann::json::array();
    for (const ImageGt& g : gts) {
        nlohmann::json ji = scene_to_json(g.scene);
        ji["id"] = g.id;
        j["images"].push_back(std::move(ji));
    }
    return j;
}

// Pred file: {"images": [{"id", "width", "detections": [...]}]}
inline std::vector<ImagePred> pred_set_from_json(const nlohmann::json& j) {
    std::vector<ImagePred> out;
    for (const auto& ji : j.at("images"))
        out.push_back({ji.at("id").get<std::string>(),
                       detections_from_json(ji.at("detections"), ji.at("width").get<int>())});
    return out;
}

inline nlohmann::json pred_set_to_json(const std::vector<ImagePred>& preds, int width) {
    nlohmann::json j;
    j["images"] = nlohmann::json::array();
    for (const ImagePred& p : preds) {
        nlohmann::json ji;
        ji["id"] = p.id;
        ji["width"] = width;
        ji["detections"] = detections_to_json(p.dets, width);
        j["images"].push_back(std::move(ji));
    }
    return j;
}

// Aggregate mAP50 (rotated-box IoU) and PQ/mPQ/bPQ (mask IoU) over a dataset.
// GT instances keep their full masks for PQ even where they overlap.
inline EvalReport evaluate(const std::vector<ImageGt>& gts,
                           const std::vector<ImagePred>& preds) {
    std::set<std::string> gt_ids, pred_ids;
    for (const auto& g : gts)
        if (!gt_ids.insert(g.id).second)
            throw std::invalid_argument("evaluate: duplicate gt image id " + g.id);
    for (const auto& p : preds)
        if (!pred_ids.insert(p.id).second)
            throw std::invalid_argument("evaluate: duplicate pred image id " + p.id);
    if (gt_ids != pred_ids) {
        std::string msg = "evaluate: image id mismatch;";
        for (const auto& id : gt_ids)
            if (!pred_ids.count(id)) msg += " missing-pred:" + id;
        for (const auto& id : pred_ids)
            if (!gt_ids.count(id)) msg += " missing-gt:" + id;
        throw std::invalid_argument(msg);
    }
    std::map<std::string, const ImagePred*> pred_by_id;
    for (const auto& p : preds) pred_by_id[p.id] = &p;

    std::set<int> classes;
    for (const auto& g : gts)
        for (const Instance& inst : g.scene.instances) classes.insert(inst.class_id);
    for (const auto& p : preds)
        for (const Detection& d : p.dets) classes.insert(d.class_id);

    EvalReport report;
    PqAccum b_acc;
    std::map<int, PqAccum> pq_acc;
    std::map<int, std::vector<ScoredBox>> dets_by_class;
    std::map<int, std::map<std::string, std::vector<RBox>>> gts_by_class;

    for (const auto& g : gts) {
        const ImagePred& p = *pred_by_id.at(g.id);
        for (const Instance& inst : g.scene.instances)
            gts_by_class[inst.class_id][g.id].push_back(inst.rbox);
        for (const Detection& d : p.dets)
            dets_by_class[d.class_id].push_back({g.id, d.rbox, d.score});

        // PQ per class and class-agnostic, this image
        std::vector<PixelSet> all_gt, all_pred;
        std::map<int, std::vector<PixelSet>> gt_masks, pred_masks;
        for (const Instance& inst : g.scene.instances) {
            gt_masks[inst.class_id].push_back(inst.mask);
            all_gt.push_back(inst.mask);
        }
        for (const Detection& d : p.dets) {
            pred_masks[d.class_id].push_back(d.mask);
            all_pred.push_back(d.mask);
        }
        for (int c : classes)
            pq_accumulate(pred_masks[c], gt_masks[c], pq_acc[c]);
        pq_accumulate(all_pred, all_gt, b_acc);
    }

    double ap_sum = 0, pq_sum = 0;
    int ap_classes = 0;
    for (int c : classes) {
        ClassMetrics m;
        m.ap = average_precision(dets_by_class[c], gts_by_class[c]);
        const PqAccum& a = pq_acc[c];
        m.tp = a.tp;
        m.fp = a.fp;
        m.fn = a.fn;
        a.finish(m.pq, m.dq, m.sq);
        report.per_class[c] = m;
        ap_sum += m.ap;
        pq_sum += m.pq;
        ++ap_classes;
    }
    report.map50 = ap_classes ? ap_sum / ap_classes : 0.0;
    report.mpq = ap_classes ? pq_sum / ap_classes : 0.0;
    double bdq, bsq;
    b_acc.finish(report.bpq, bdq, bsq);
    return report;
}

}  // namespace a2bis

#endif  // A2BIS_METRICS_HPP_
