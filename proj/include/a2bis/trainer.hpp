#ifndef A2BIS_TRAINER_HPP_
#define A2BIS_TRAINER_HPP_

#include <cmath>
#include <ostream>
#include <random>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "a2bis/losses.hpp"
#include "a2bis/net.hpp"
#include "a2bis/synth.hpp"

namespace a2bis {

struct TrainConfig {
    int epochs = 10;
    int batch_labeled = 2;
    int batch_unlabeled = 1;  // 0 disables the consistency term
    double lr = 1e-4;
    double lr_decay = 0.96;   // multiplied in at each epoch end
    double ema_alpha = 0.99;
    uint64_t seed = 0;
    bool augment = true;
    LossConfig loss;

    void validate() const {
        if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs < 1");
        if (batch_labeled < 1 || batch_labeled > 2)
            throw std::invalid_argument("TrainConfig: batch_labeled must be 1 or 2");
        if (batch_unlabeled < 0 || batch_unlabeled > 1)
            throw std::invalid_argument("TrainConfig: batch_unlabeled must be 0 or 1");
        if (lr <= 0) throw std::invalid_argument("TrainConfig: lr <= 0");
        if (lr_decay <= 0 || lr_decay > 1)
            throw std::invalid_argument("TrainConfig: lr_decay outside (0,1]");
        if (ema_alpha < 0 || ema_alpha > 1)
            throw std::invalid_argument("TrainConfig: ema_alpha outside [0,1]");
    }
};

// teacher' = alpha * teacher + (1 - alpha) * student, per parameter.
template <typename T>
inline void ema_update(ParamStore<T>& teacher, const ParamStore<T>& student, double alpha) {
    if (!teacher.aligned(student))
        throw std::invalid_argument("ema_update: parameter registries differ");
    for (auto& [name, t] : teacher.tensors) {
        const auto& s = student.tensors.at(name);
        for (size_t i = 0; i < t.size(); ++i)
            t[i] = static_cast<T>(alpha * t[i] + (1 - alpha) * s[i]);
    }
}

// Adam with bias correction; moments kept in double regardless of T.
template <typename T>
struct Adam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long t = 0;
    std::map<std::string, std::vector<double>> m, v;

    void step(ParamStore<T>& params, const ParamStore<T>& grads, double lr) {
        if (!params.aligned(grads))
            throw std::invalid_argument("Adam: parameter/gradient registries differ");
        ++t;
        double bc1 = 1 - std::pow(beta1, t), bc2 = 1 - std::pow(beta2, t);
        for (auto& [name, p] : params.tensors) {
            const auto& g = grads.tensors.at(name);
            auto& mm = m[name];
            auto& vv = v[name];
            if (mm.empty()) { mm.assign(p.size(), 0.0); vv.assign(p.size(), 0.0); }
            for (size_t i = 0; i < p.size(); ++i) {
                double gi = g[i];
                mm[i] = beta1 * mm[i] + (1 - beta1) * gi;
                vv[i] = beta2 * vv[i] + (1 - beta2) * gi * gi;
                p[i] = static_cast<T>(p[i] - lr * (mm[i] / bc1) /
                                                 (std::sqrt(vv[i] / bc2) + eps));
            }
        }
    }
};

template <typename T>
struct LabeledExample {
    Map3<T> image;
    TargetMapsT<T> targets;
};

struct StepStats {
    LossBreakdown labeled;   // averaged over the labeled mini-batch
    double unlabeled = 0;    // consistency term (0 if no unlabeled input)
    double total = 0;        // unlabeled + lambda * labeled
};

// One optimizer step: supervised loss on the labeled batch, consistency loss
// between teacher and student on independently perturbed unlabeled images,
// Adam update on the student, then the EMA teacher update.
template <typename T>
inline StepStats train_step(Net<T>& net, ParamStore<T>& student, ParamStore<T>& teacher,
                            const std::vector<const LabeledExample<T>*>& labeled,
                            const std::vector<const Map3<T>*>& unlabeled,
                            const TrainConfig& cfg, Adam<T>& opt, std::mt19937_64& rng,
                            double lr) {
    if (labeled.empty()) throw std::invalid_argument("train_step: empty labeled batch");
    ParamStore<T> grads;
    grads.shapes = student.shapes;
    for (const auto& [name, t] : student.tensors)
        grads.tensors[name] = std::vector<T>(t.size(), T(0));
    auto accumulate = [&](const ParamStore<T>& g, double scale) {
        for (auto& [name, t] : grads.tensors) {
            const auto& s = g.tensors.at(name);
            for (size_t i = 0; i < t.size(); ++i)
                t[i] += static_cast<T>(scale * s[i]);
        }
    };

    StepStats stats;
    double wl = cfg.loss.lambda_labeled / static_cast<double>(labeled.size());
    for (const LabeledExample<T>* ex : labeled) {
        NetCache<T> cache;
        HeadMaps<T> out = net.forward(ex->image, student, &cache);
        LossBreakdown b = labeled_loss(ex->targets, out, cfg.loss);
        stats.labeled.skl += b.skl / labeled.size();
        stats.labeled.seg += b.seg / labeled.size();
        stats.labeled.box += b.box / labeled.size();
        HeadMaps<T> d_out = labeled_loss_grad(ex->targets, out, cfg.loss);
        accumulate(net.backward(cache, student, d_out), wl);
    }

    if (!unlabeled.empty()) {
        double wu = 1.0 / static_cast<double>(unlabeled.size());
        for (const Map3<T>* img : unlabeled) {
            Map3<T> t_in = perturb(*img, rng);
            Map3<T> s_in = perturb(*img, rng);
            HeadMaps<T> t_out = net.forward(t_in, teacher);  // no gradient
            NetCache<T> cache;
            HeadMaps<T> s_out = net.forward(s_in, student, &cache);
            stats.unlabeled += wu * consistency_loss(t_out, s_out, cfg.loss.delta);
            HeadMaps<T> d_out = consistency_loss_grad(t_out, s_out, cfg.loss.delta);
            accumulate(net.backward(cache, student, d_out), wu);
        }
    }

    stats.total = total_loss(stats.labeled.total(), stats.unlabeled, cfg.loss.lambda_labeled);
    opt.step(student, grads, lr);
    ema_update(teacher, student, cfg.ema_alpha);
    return stats;
}

struct EpochStats {
    int epoch = 0;
    double lr = 0;
    double skl = 0, seg = 0, box = 0, labeled = 0, unlabeled = 0, total = 0;
    int steps = 0;

    nlohmann::json to_json() const {
        return {{"epoch", epoch}, {"lr", lr},       {"skl", skl},
                {"seg", seg},     {"box", box},     {"labeled", labeled},
                {"unlabeled", unlabeled},           {"total", total},
                {"steps", steps}};
    }
};

struct TrainResult {
    std::vector<EpochStats> epochs;
};

// Shuffled epochs over the labeled set, unlabeled images cycled alongside;
// random hflip and 0/90/180/270-degree rotation applied consistently to the
// image and its target maps. Deterministic given cfg.seed. If `log` is
// non-null one JSON line is written per epoch.
template <typename T>
inline TrainResult train_loop(Net<T>& net, ParamStore<T>& student, ParamStore<T>& teacher,
                              const std::vector<LabeledExample<T>>& labeled,
                              const std::vector<Map3<T>>& unlabeled,
                              const TrainConfig& cfg, std::ostream* log = nullptr) {
    cfg.validate();
    if (labeled.empty()) throw std::invalid_argument("train_loop: empty labeled set");
    std::mt19937_64 rng(cfg.seed);
    Adam<T> opt;
    TrainResult result;
    double lr = cfg.lr;
    size_t u_cursor = 0;
    std::vector<size_t> order(labeled.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        EpochStats es;
        es.epoch = epoch;
        es.lr = lr;
        for (size_t pos = 0; pos < order.size(); pos += cfg.batch_labeled) {
            std::vector<LabeledExample<T>> aug;  // owns augmented copies
            std::vector<const LabeledExample<T>*> lb;
            for (size_t k = pos; k < std::min(pos + cfg.batch_labeled, order.size()); ++k)
                aug.push_back(labeled[order[k]]);
            if (cfg.augment) {
                for (auto& ex : aug) {
                    if (rng() & 1) {
                        ex.image = hflip_map(ex.image);
                        ex.targets = hflip_targets(ex.targets);
                    }
                    int rot = static_cast<int>(rng() % 4);
                    for (int r = 0; r < rot; ++r) {
                        ex.image = rot90_map(ex.image);
                        ex.targets = rot90_targets(ex.targets);
                    }
                }
            }
            for (const auto& ex : aug) lb.push_back(&ex);

            std::vector<Map3<T>> u_aug;
            std::vector<const Map3<T>*> ub;
            for (int k = 0; k < cfg.batch_unlabeled && !unlabeled.empty(); ++k) {
                Map3<T> img = unlabeled[u_cursor % unlabeled.size()];
                ++u_cursor;
                if (cfg.augment) {
                    if (rng() & 1) img = hflip_map(img);
                    int rot = static_cast<int>(rng() % 4);
                    for (int r = 0; r < rot; ++r) img = rot90_map(img);
                }
                u_aug.push_back(std::move(img));
            }
            for (const auto& img : u_aug) ub.push_back(&img);

            StepStats ss = train_step(net, student, teacher, lb, ub, cfg, opt, rng, lr);
            es.skl += ss.labeled.skl;
            es.seg += ss.labeled.seg;
            es.box += ss.labeled.box;
            es.labeled += ss.labeled.total();
            es.unlabeled += ss.unlabeled;
            es.total += ss.total;
            ++es.steps;
        }
        if (es.steps > 0) {
            es.skl /= es.steps; es.seg /= es.steps; es.box /= es.steps;
            es.labeled /= es.steps; es.unlabeled /= es.steps; es.total /= es.steps;
        }
        if (log) *log << es.to_json().dump() << "\n";
        result.epochs.push_back(es);
        lr *= cfg.lr_decay;
    }
    return result;
}

}  // namespace a2bis

#endif  // A2BIS_TRAINER_HPP_
