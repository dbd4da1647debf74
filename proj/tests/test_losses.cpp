#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "a2bis/losses.hpp"

using namespace a2bis;

namespace {

Map3<double> random_map(int h, int w, int c, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    Map3<double> m(h, w, c);
    for (auto& x : m.v) x = d(rng);
    return m;
}

Map3<double> random_softmax(int h, int w, int c, std::mt19937_64& rng) {
    Map3<double> m = random_map(h, w, c, rng, -2, 2);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double z = 0;
            for (int k = 0; k < c; ++k) z += std::exp(m.at(i, j, k));
            for (int k = 0; k < c; ++k) m.at(i, j, k) = std::exp(m.at(i, j, k)) / z;
        }
    return m;
}

Map3<double> random_onehot(int h, int w, int c, std::mt19937_64& rng) {
    Map3<double> m(h, w, c, 0.0);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) m.at(i, j, static_cast<int>(rng() % c)) = 1.0;
    return m;
}

}  // namespace

TEST_CASE("qfl fixed points and hand values") {
    std::mt19937_64 rng(1);
    Map3<double> g = random_map(4, 4, 1, rng, 0.01, 0.99);
    CHECK(qfl(g, g) == doctest::Approx(0.0).epsilon(1e-12));

    Map3<double> g1(1, 1, 1, 1.0), s1(1, 1, 1, 0.5);
    CHECK(qfl(g1, s1) == doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-9));
    Map3<double> g0(1, 1, 1, 0.0);
    CHECK(qfl(g0, s1) == doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("qfl with gamma 0 equals mean BCE") {
    std::mt19937_64 rng(2);
    Map3<double> g = random_map(6, 5, 1, rng, 0.0, 1.0);
    Map3<double> s = random_map(6, 5, 1, rng, 0.05, 0.95);
    LossConfig cfg;
    cfg.gamma = 0;
    double bce = 0;
    for (size_t n = 0; n < g.v.size(); ++n)
        bce += -(g.v[n] * std::log(s.v[n]) + (1 - g.v[n]) * std::log(1 - s.v[n]));
    bce /= static_cast<double>(g.v.size());
    CHECK(qfl(g, s, cfg) == doctest::Approx(bce).epsilon(1e-6));
}

TEST_CASE("qfl_grad matches finite differences") {
    std::mt19937_64 rng(3);
    Map3<double> g = random_map(3, 3, 1, rng, 0.0, 1.0);
    Map3<double> s = random_map(3, 3, 1, rng, 0.1, 0.9);
    Map3<double> grad = qfl_grad(g, s);
    for (size_t n = 0; n < s.v.size(); ++n) {
        double h = 1e-6;
        Map3<double> sp = s, sm = s;
        sp.v[n] += h;
        sm.v[n] -= h;
        double fd = (qfl(g, sp) - qfl(g, sm)) / (2 * h);
        CHECK(grad.v[n] == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("seg_loss fixed point and hand values") {
    std::mt19937_64 rng(4);
    Map3<double> g = random_onehot(5, 5, 3, rng);
    CHECK(seg_loss(g, g) < 1e-5);

    // single pixel, 2 channels, gt channel prob 0.5 -> CE = ln 2
    Map3<double> g2(1, 1, 2, 0.0);
    g2.at(0, 0, 0) = 1.0;
    Map3<double> s2(1, 1, 2, 0.5);
    double l = seg_loss(g2, s2);
    // dice: ch0 (2*0.5)/(1+0.5) = 2/3; ch1 (0+eps)/(0.5+eps) ~ 0 -> dice loss = 1 - (2/3+0)/2
    double expect = std::log(2.0) + 1 - (2.0 / 3) / 2;
    CHECK(l == doctest::Approx(expect).epsilon(1e-5));
}

TEST_CASE("dice coefficient hand value: |I|=2, |pred|=|gt|=4 gives 0.5") {
    // binary maps on one channel; verify 2I/(P+G) = 0.5 enters the loss
    Map3<double> g(1, 8, 2, 0.0);
    Map3<double> s(1, 8, 2, 0.0);
    for (int j = 0; j < 8; ++j) {
        g.at(0, j, 1) = (j < 4) ? 1.0 : 0.0;
        s.at(0, j, 1) = (j >= 2 && j < 6) ? 1.0 : 0.0;
        g.at(0, j, 0) = 1 - g.at(0, j, 1);
        s.at(0, j, 0) = 1 - s.at(0, j, 1);
    }
    // channel 1: I=2, sums 4+4 -> dice 0.5; channel 0 likewise I=2 sums 4+4 -> 0.5
    double ce_part = (4 * -std::log(1e-7) * 0 + 0);  // CE unaffected here; compute directly
    (void)ce_part;
    // isolate the dice part: channels average to 0.5 -> dice loss = 0.5
    // CE: 4 gt pixels per channel have pred 0 or 1; pixels where pred==gt give 0,
    // mismatched give -ln(eps). Use the loss difference structure instead:
    double l = seg_loss(g, s);
    // mismatched pixels: j=0,1 (gt ch1, pred 0) and j=4,5 (gt ch0, pred 0): 4 of 8
    double expect = 4.0 / 8 * -std::log(1e-7) + 0.5;
    CHECK(l == doctest::Approx(expect).epsilon(1e-4));
}

TEST_CASE("seg_loss_grad matches finite differences") {
    std::mt19937_64 rng(5);
    Map3<double> g = random_onehot(3, 4, 3, rng);
    Map3<double> s = random_softmax(3, 4, 3, rng);
    Map3<double> grad = seg_loss_grad(g, s);
    for (size_t n = 0; n < s.v.size(); ++n) {
        double h = 1e-7;
        Map3<double> sp = s, sm = s;
        sp.v[n] += h;
        sm.v[n] -= h;
        double fd = (seg_loss(g, sp) - seg_loss(g, sm)) / (2 * h);
        CHECK(grad.v[n] == doctest::Approx(fd).epsilon(1e-4));
    }
}

TEST_CASE("box_loss fixed points") {
    RBox b{5, 5, 6, 3, 0.3};
    CHECK(box_loss({b, b}, {b, b}, 1.0) == doctest::Approx(0.0));

    // single pair with D = e - 1 -> loss 0.5: centers offset by sqrt(e-1)
    double d = std::sqrt(std::exp(1.0) - 1);
    RBox p{5 + d, 5, 6, 3, 0.3};
    CHECK(box_loss({p}, {b}, 1.0) == doctest::Approx(0.5).epsilon(1e-12));

    // large D asymptotes to 1 from below
    RBox far{500, 500, 6, 3, 0.3};
    double l = box_loss({far}, {b}, 1.0);
    CHECK(l < 1.0);
    CHECK(l > 0.9);

    bool flag = false;
    CHECK(box_loss({}, {}, 1.0, &flag) == 0.0);
    CHECK(flag);
}

TEST_CASE("box_loss strictly increasing in D") {
    RBox g{0, 0, 4, 2, 0};
    double prev = -1;
    for (int k = 0; k <= 1000; ++k) {
        double off = k * 0.05;
        double l = box_loss({{off, 0, 4, 2, 0}}, {g}, 1.0);
        if (k > 0) CHECK(l > prev);
        prev = l;
    }
}

TEST_CASE("gauss_distance_grad matches finite differences") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> pos(-5.0, 5.0);
    std::uniform_real_distribution<double> ext(0.5, 8.0);
    std::uniform_real_distribution<double> ang(-1.5, 1.5);
    for (int t = 0; t < 100; ++t) {
        RBox p{pos(rng), pos(rng), ext(rng), ext(rng), ang(rng)};
        RBox g{pos(rng), pos(rng), ext(rng), ext(rng), ang(rng)};
        auto grad = detail::gauss_distance_grad(p, g);
        double* fields[5] = {&p.x, &p.y, &p.w, &p.h, &p.theta};
        for (int k = 0; k < 5; ++k) {
            double h = 1e-6;
            double orig = *fields[k];
            *fields[k] = orig + h;
            double fp = gauss_distance(p, g);
            *fields[k] = orig - h;
            double fm = gauss_distance(p, g);
            *fields[k] = orig;
            double fd = (fp - fm) / (2 * h);
            CHECK(grad[k] == doctest::Approx(fd).epsilon(1e-4));
        }
    }
}

TEST_CASE("consistency_loss basics") {
    std::mt19937_64 rng(7);
    HeadMaps<double> t;
    t.skl = random_map(4, 4, 1, rng, 0.0, 1.0);
    t.seg = random_softmax(4, 4, 4, rng);
    t.box = random_map(4, 4, 5, rng, -1, 1);
    CHECK(consistency_loss(t, t, 0.02) == doctest::Approx(0.0));

    // 1-pixel map, teacher skl 0.5, all student channels 0, other teacher channels 0
    HeadMaps<double> tt, ss;
    tt.skl = Map3<double>(1, 1, 1, 0.5);
    tt.seg = Map3<double>(1, 1, 1, 0.0);
    tt.box = Map3<double>(1, 1, 5, 0.0);
    ss.skl = Map3<double>(1, 1, 1, 0.0);
    ss.seg = Map3<double>(1, 1, 1, 0.0);
    ss.box = Map3<double>(1, 1, 5, 0.0);
    // 7 channels total (1 + 1 + 5); only skl differs: mean sq = 0.25 / 7
    CHECK(consistency_loss(tt, ss, 0.02) == doctest::Approx(0.25 / 7).epsilon(1e-12));

    // empty foreground
    tt.skl = Map3<double>(1, 1, 1, 0.0);
    bool empty = false;
    CHECK(consistency_loss(tt, ss, 0.02, &empty) == 0.0);
    CHECK(empty);
}

TEST_CASE("consistency_loss invariant to joint pixel permutation") {
    std::mt19937_64 rng(8);
    HeadMaps<double> t, s;
    t.skl = random_map(3, 5, 1, rng, 0.0, 1.0);
    t.seg = random_softmax(3, 5, 4, rng);
    t.box = random_map(3, 5, 5, rng, -1, 1);
    s.skl = random_map(3, 5, 1, rng, 0.0, 1.0);
    s.seg = random_softmax(3, 5, 4, rng);
    s.box = random_map(3, 5, 5, rng, -1, 1);
    double base = consistency_loss(t, s, 0.02);

    // permute pixels jointly (reverse row-major order)
    auto rev = [](Map3<double> m) {
        Map3<double> out(m.h, m.w, m.c);
        int n = m.h * m.w;
        for (int p = 0; p < n; ++p)
            for (int c = 0; c < m.c; ++c)
                out.v[static_cast<size_t>(n - 1 - p) * m.c + c] =
                    m.v[static_cast<size_t>(p) * m.c + c];
        return out;
    };
    HeadMaps<double> t2{rev(t.skl), rev(t.seg), rev(t.box)};
    HeadMaps<double> s2{rev(s.skl), rev(s.seg), rev(s.box)};
    CHECK(consistency_loss(t2, s2, 0.02) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("consistency_loss_grad matches finite differences") {
    std::mt19937_64 rng(9);
    HeadMaps<double> t, s;
    t.skl = random_map(3, 3, 1, rng, 0.0, 1.0);
    t.seg = random_softmax(3, 3, 3, rng);
    t.box = random_map(3, 3, 5, rng, -1, 1);
    s.skl = random_map(3, 3, 1, rng, 0.0, 1.0);
    s.seg = random_softmax(3, 3, 3, rng);
    s.box = random_map(3, 3, 5, rng, -1, 1);
    HeadMaps<double> g = consistency_loss_grad(t, s, 0.02);
    auto check = [&](Map3<double>& part, const Map3<double>& gpart) {
        for (size_t n = 0; n < part.v.size(); ++n) {
            double h = 1e-6, orig = part.v[n];
            part.v[n] = orig + h;
            double fp = consistency_loss(t, s, 0.02);
            part.v[n] = orig - h;
            double fm = consistency_loss(t, s, 0.02);
            part.v[n] = orig;
            CHECK(gpart.v[n] == doctest::Approx((fp - fm) / (2 * h)).epsilon(1e-5));
        }
    };
    check(s.skl, g.skl);
    check(s.seg, g.seg);
    check(s.box, g.box);
}

TEST_CASE("total_loss composition") {
    CHECK(total_loss(1, 0, 4) == doctest::Approx(4.0));
    CHECK(total_loss(0, 0.3, 4) == doctest::Approx(0.3));
    CHECK(total_loss(0.5, 0.1, 4) == doctest::Approx(2.1));
}
