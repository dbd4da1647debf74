#ifndef A2BIS_LOSSES_HPP_
#define A2BIS_LOSSES_HPP_

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "a2bis/anchors.hpp"
#include "a2bis/rbox.hpp"
#include "a2bis/skeleton.hpp"
#include "a2bis/tensor.hpp"

namespace a2bis {

struct LossConfig {
    double gamma = 2.0;           // QFL suppression factor
    double tau = 1.0;             // box-loss modulation
    double lambda_labeled = 4.0;  // labeled-term weight
    double delta = 0.02;          // foreground threshold
    double eps = 1e-7;            // log / denominator floor
};

struct LossBreakdown {
    double skl = 0, seg = 0, box = 0;
    bool no_anchors = false;
    double total() const { return skl + seg + box; }
};

// ---- Quality Focal Loss (pixelwise, mean) ----

template <typename T>
inline double qfl(const Map3<T>& gt, const Map3<T>& pred, const LossConfig& cfg = {}) {
    if (!gt.same_shape(pred)) throw std::invalid_argument("qfl: shape mismatch");
    double sum = 0;
    for (size_t n = 0; n < gt.v.size(); ++n) {
        double g = gt.v[n];
        double s = std::clamp<double>(pred.v[n], cfg.eps, 1 - cfg.eps);
        double mod = std::pow(std::abs(g - s), cfg.gamma);
        sum += -mod * (g * std::log(s) + (1 - g) * std::log(1 - s));
    }
    return sum / static_cast<double>(gt.v.size());
}

// d(qfl)/d(pred), same shape as pred.
template <typename T>
inline Map3<T> qfl_grad(const Map3<T>& gt, const Map3<T>& pred, const LossConfig& cfg = {}) {
    Map3<T> out(pred.h, pred.w, pred.c, T(0));
    double inv_n = 1.0 / static_cast<double>(gt.v.size());
    for (size_t n = 0; n < gt.v.size(); ++n) {
        double g = gt.v[n];
        double s = pred.v[n];
        if (s <= cfg.eps || s >= 1 - cfg.eps) continue;  // clamped: zero grad
        double diff = std::abs(g - s);
        double bce = g * std::log(s) + (1 - g) * std::log(1 - s);
        double dmod = diff > 0 ? cfg.gamma * std::pow(diff, cfg.gamma - 1) *
                                     (s > g ? 1.0 : -1.0)
                               : 0.0;
        double mod = std::pow(diff, cfg.gamma);
        double dbce = g / s - (1 - g) / (1 - s);
        out.v[n] = static_cast<T>(-(dmod * bce + mod * dbce) * inv_n);
    }
    return out;
}

// ---- Cross-entropy + Dice over one-hot targets ----

template <typename T>
inline double seg_loss(const Map3<T>& gt, const Map3<T>& pred, const LossConfig& cfg = {}) {
    if (!gt.same_shape(pred)) throw std::invalid_argument("seg_loss: shape mismatch");
    const int C = gt.c;
    const size_t npix = static_cast<size_t>(gt.h) * gt.w;
    double ce = 0;
    std::vector<double> inter(C, 0), gsum(C, 0), ssum(C, 0);
    for (size_t p = 0; p < npix; ++p) {
        for (int c = 0; c < C; ++c) {
            double g = gt.v[p * C + c];
            double s = pred.v[p * C + c];
            if (g > 0.5) ce += -std::log(std::max<double>(s, cfg.eps)) * g;
            inter[c] += g * s;
            gsum[c] += g;
            ssum[c] += s;
        }
    }
    ce /= static_cast<double>(npix);
    double dice = 0;
    for (int c = 0; c < C; ++c)
        dice += (2 * inter[c] + cfg.eps) / (gsum[c] + ssum[c] + cfg.eps);
    double dice_loss = 1 - dice / C;
    return ce + dice_loss;
}

template <typename T>
inline Map3<T> seg_loss_grad(const Map3<T>& gt, const Map3<T>& pred,
                             const LossConfig& cfg = {}) {
    const int C = gt.c;
    const size_t npix = static_cast<size_t>(gt.h) * gt.w;
    std::vector<double> inter(C, 0), gsum(C, 0), ssum(C, 0);
    for (size_t p = 0; p < npix; ++p) {
        for (int c = 0; c < C; ++c) {
            inter[c] += static_cast<double>(gt.v[p * C + c]) * pred.v[p * C + c];
            gsum[c] += gt.v[p * C + c];
            ssum[c] += pred.v[p * C + c];
        }
    }
    Map3<T> out(pred.h, pred.w, pred.c, T(0));
    for (size_t p = 0; p < npix; ++p) {
        for (int c = 0; c < C; ++c) {
            double g = gt.v[p * C + c];
            double s = pred.v[p * C + c];
            double d = 0;
            if (g > 0.5 && s > cfg.eps) d += -g / s / static_cast<double>(npix);
            double U = gsum[c] + ssum[c] + cfg.eps;
            d += -(2 * g * U - (2 * inter[c] + cfg.eps)) / (U * U) / C;
            out.v[p * C + c] = static_cast<T>(d);
        }
    }
    return out;
}

// ---- Gaussian box loss, 1 - 1/(tau + ln(D + 1)) averaged over anchors ----

inline double box_loss(const std::vector<RBox>& preds, const std::vector<RBox>& gts,
                       double tau, bool* no_anchors = nullptr) {
    if (preds.size() != gts.size())
        throw std::invalid_argument("box_loss: list length mismatch");
    if (preds.empty()) {
        if (no_anchors) *no_anchors = true;
        return 0;
    }
    if (no_anchors) *no_anchors = false;
    double sum = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
        double d = gauss_distance(preds[i], gts[i]);
        sum += 1.0 - 1.0 / (tau + std::log1p(d));
    }
    return sum / static_cast<double>(preds.size());
}

namespace detail {

// d(gauss_distance)/d(x, y, w, h, theta) of the predicted box, gt fixed.
// Smooth in the raw (non-canonical) parameterization; D itself is invariant
// under canonicalization.
inline std::array<double, 5> gauss_distance_grad(const RBox& p, const RBox& g) {
    auto sp = box_cov(p);
    auto sg = box_cov(g);
    double det_p = sp.a * sp.c - sp.b * sp.b;
    double det_g = sg.a * sg.c - sg.b * sg.b;
    double tr_pg = sp.a * sg.a + 2 * sp.b * sg.b + sp.c * sg.c;
    double dd = std::max(0.0, det_p * det_g);
    double sq_dd = std::sqrt(dd);
    double inner = std::max(1e-300, tr_pg + 2 * sq_dd);
    double sq_inner = std::sqrt(inner);

    // dD/d(a,b,c) of Sigma_p; d inner/dX = dTr_pg/dX + (det_g/sqrt(det_p det_g)) d det_p/dX
    double k = 1.0 / sq_inner;
    double f = sq_dd > 0 ? det_g / sq_dd : 0;
    double dD_da = 1 - k * (sg.a + f * sp.c);
    double dD_db = -k * (2 * sg.b - f * 2 * sp.b);
    double dD_dc = 1 - k * (sg.c + f * sp.a);

    // (a,b,c) in terms of (w,h,theta): A = w^2/4, B = h^2/4
    double ct = std::cos(p.theta), st = std::sin(p.theta);
    double c2 = ct * ct, s2 = st * st, cs = ct * st;
    double A = p.w * p.w / 4, B = p.h * p.h / 4;
    double da_dw = (p.w / 2) * c2, da_dh = (p.h / 2) * s2;
    double dc_dw = (p.w / 2) * s2, dc_dh = (p.h / 2) * c2;
    double db_dw = (p.w / 2) * cs, db_dh = -(p.h / 2) * cs;
    double da_dt = 2 * cs * (B - A);
    double dc_dt = 2 * cs * (A - B);
    double db_dt = (A - B) * (c2 - s2);

    std::array<double, 5> out;
    out[0] = 2 * (p.x - g.x);
    out[1] = 2 * (p.y - g.y);
    out[2] = dD_da * da_dw + dD_db * db_dw + dD_dc * dc_dw;
    out[3] = dD_da * da_dh + dD_db * db_dh + dD_dc * dc_dh;
    out[4] = dD_da * da_dt + dD_db * db_dt + dD_dc * dc_dt;
    return out;
}

}  // namespace detail

// ---- Labeled loss over full target maps ----

template <typename T>
struct HeadMaps {
    Map3<T> skl;  // H x W x 1, post-sigmoid
    Map3<T> seg;  // H x W x C, post-softmax
    Map3<T> box;  // H x W x 5, raw offsets
};

// Decodes the predicted box map at every owned pixel and accumulates the
// box loss term. extent_limit caps decoded w/h.
template <typename T>
inline double box_map_loss(const TargetMapsT<T>& gt, const Map3<T>& box_pred,
                           double tau) {
    double sum = 0;
    size_t count = 0;
    double limit = 4.0 * std::max(gt.skl.h, gt.skl.w);
    for (int i = 0; i < gt.skl.h; ++i) {
        for (int j = 0; j < gt.skl.w; ++j) {
            if (gt.owner.at(i, j, 0) < 0) continue;
            Anchor a = anchor_at({i, j});
            BoxOffsets po{box_pred.at(i, j, 0), box_pred.at(i, j, 1),
                          box_pred.at(i, j, 2), box_pred.at(i, j, 3),
                          box_pred.at(i, j, 4)};
            BoxOffsets go{gt.box.at(i, j, 0), gt.box.at(i, j, 1), gt.box.at(i, j, 2),
                          gt.box.at(i, j, 3), gt.box.at(i, j, 4)};
            RBox pb = decode_offsets(po, a, limit);
            RBox gb = decode_offsets(go, a);
            double d = gauss_distance(pb, gb);
            sum += 1.0 - 1.0 / (tau + std::log1p(d));
            ++count;
        }
    }
    return count ? sum / static_cast<double>(count) : 0.0;
}

template <typename T>
inline Map3<T> box_map_loss_grad(const TargetMapsT<T>& gt, const Map3<T>& box_pred,
                                 double tau) {
    Map3<T> out(box_pred.h, box_pred.w, 5, T(0));
    size_t count = 0;
    for (int i = 0; i < gt.skl.h; ++i)
        for (int j = 0; j < gt.skl.w; ++j)
            if (gt.owner.at(i, j, 0) >= 0) ++count;
    if (count == 0) return out;
    double limit = 4.0 * std::max(gt.skl.h, gt.skl.w);
    double inv_n = 1.0 / static_cast<double>(count);
    for (int i = 0; i < gt.skl.h; ++i) {
        for (int j = 0; j < gt.skl.w; ++j) {
            if (gt.owner.at(i, j, 0) < 0) continue;
            Anchor a = anchor_at({i, j});
            // smooth (non-canonical) decode: D is invariant to canonical form
            double w = Anchor::kSize * std::exp(static_cast<double>(box_pred.at(i, j, 2)));
            double h = Anchor::kSize * std::exp(static_cast<double>(box_pred.at(i, j, 3)));
            bool w_clamped = w > limit, h_clamped = h > limit;
            RBox pb{a.px + box_pred.at(i, j, 0) * Anchor::kSize,
                    a.py + box_pred.at(i, j, 1) * Anchor::kSize,
                    std::min(w, limit), std::min(h, limit),
                    static_cast<double>(box_pred.at(i, j, 4))};
            BoxOffsets go{gt.box.at(i, j, 0), gt.box.at(i, j, 1), gt.box.at(i, j, 2),
                          gt.box.at(i, j, 3), gt.box.at(i, j, 4)};
            RBox gb = decode_offsets(go, a);
            double d = gauss_distance(pb, gb);
            double denom = tau + std::log1p(d);
            double dl_dd = 1.0 / (denom * denom) / (1.0 + d);
            auto g5 = detail::gauss_distance_grad(pb, gb);
            // chain to raw offsets
            out.at(i, j, 0) = static_cast<T>(dl_dd * g5[0] * Anchor::kSize * inv_n);
            out.at(i, j, 1) = static_cast<T>(dl_dd * g5[1] * Anchor::kSize * inv_n);
            out.at(i, j, 2) =
                static_cast<T>(w_clamped ? 0.0 : dl_dd * g5[2] * pb.w * inv_n);
            out.at(i, j, 3) =
                static_cast<T>(h_clamped ? 0.0 : dl_dd * g5[3] * pb.h * inv_n);
            out.at(i, j, 4) = static_cast<T>(dl_dd * g5[4] * inv_n);
        }
    }
    return out;
}

template <typename T>
inline LossBreakdown labeled_loss(const TargetMapsT<T>& gt, const HeadMaps<T>& pred,
                                  const LossConfig& cfg = {}) {
    LossBreakdown b;
    b.skl = qfl(gt.skl, pred.skl, cfg);
    b.seg = seg_loss(gt.seg, pred.seg, cfg);
    b.box = box_map_loss(gt, pred.box, cfg.tau);
    return b;
}

template <typename T>
inline HeadMaps<T> labeled_loss_grad(const TargetMapsT<T>& gt, const HeadMaps<T>& pred,
                                     const LossConfig& cfg = {}) {
    HeadMaps<T> g;
    g.skl = qfl_grad(gt.skl, pred.skl, cfg);
    g.seg = seg_loss_grad(gt.seg, pred.seg, cfg);
    g.box = box_map_loss_grad(gt, pred.box, cfg.tau);
    return g;
}

// ---- Consistency loss (Mean-Teacher, Eq. MSE over teacher foreground) ----

template <typename T>
inline double consistency_loss(const HeadMaps<T>& teacher, const HeadMaps<T>& student,
                               double delta, bool* empty_fg = nullptr) {
    if (!teacher.skl.same_shape(student.skl) || !teacher.seg.same_shape(student.seg) ||
        !teacher.box.same_shape(student.box))
        throw std::invalid_argument("consistency_loss: shape mismatch");
    const int C = teacher.seg.c;
    const int chans = 1 + C + 5;
    double sum = 0;
    size_t fg = 0;
    for (int i = 0; i < teacher.skl.h; ++i) {
        for (int j = 0; j < teacher.skl.w; ++j) {
            if (static_cast<double>(teacher.skl.at(i, j, 0)) < delta) continue;
            ++fg;
            double d = teacher.skl.at(i, j, 0) - student.skl.at(i, j, 0);
            sum += d * d;
            for (int c = 0; c < C; ++c) {
                d = teacher.seg.at(i, j, c) - student.seg.at(i, j, c);
                sum += d * d;
            }
            for (int c = 0; c < 5; ++c) {
                d = teacher.box.at(i, j, c) - student.box.at(i, j, c);
                sum += d * d;
            }
        }
    }
    if (empty_fg) *empty_fg = (fg == 0);
    if (fg == 0) return 0;
    return sum / (static_cast<double>(fg) * chans);
}

// Gradient with respect to the student maps.
template <typename T>
inline HeadMaps<T> consistency_loss_grad(const HeadMaps<T>& teacher,
                                         const HeadMaps<T>& student, double delta) {
    const int C = teacher.seg.c;
    const int chans = 1 + C + 5;
    HeadMaps<T> g;
    g.skl = Map3<T>(student.skl.h, student.skl.w, 1, T(0));
    g.seg = Map3<T>(student.seg.h, student.seg.w, C, T(0));
    g.box = Map3<T>(student.box.h, student.box.w, 5, T(0));
    size_t fg = 0;
    for (int i = 0; i < teacher.skl.h; ++i)
        for (int j = 0; j < teacher.skl.w; ++j)
            if (static_cast<double>(teacher.skl.at(i, j, 0)) >= delta) ++fg;
    if (fg == 0) return g;
    double scale = 2.0 / (static_cast<double>(fg) * chans);
    for (int i = 0; i < teacher.skl.h; ++i) {
        for (int j = 0; j < teacher.skl.w; ++j) {
            if (static_cast<double>(teacher.skl.at(i, j, 0)) < delta) continue;
            g.skl.at(i, j, 0) =
                static_cast<T>(scale * (student.skl.at(i, j, 0) - teacher.skl.at(i, j, 0)));
            for (int c = 0; c < C; ++c)
                g.seg.at(i, j, c) = static_cast<T>(
                    scale * (student.seg.at(i, j, c) - teacher.seg.at(i, j, c)));
            for (int c = 0; c < 5; ++c)
                g.box.at(i, j, c) = static_cast<T>(
                    scale * (student.box.at(i, j, c) - teacher.box.at(i, j, c)));
        }
    }
    return g;
}

inline double total_loss(double labeled, double unlabeled, double lambda_labeled) {
    return unlabeled + lambda_labeled * labeled;
}

}  // namespace a2bis

#endif  // A2BIS_LOSSES_HPP_
