#include <catch2/catch_amalgamated.hpp>

#include "udaseg/losses.hpp"

using namespace udaseg;

namespace {

// central finite differences of seg_loss w.r.t. one prediction entry
double seg_loss_fd(const Tensor& p, const Tensor& y, const LossWeights& w, std::size_t i,
                   double h = 1e-6) {
    Tensor pp = p;
    pp[i] = p[i] + h;
    const double fp = seg_loss(pp, y, w);
    pp[i] = p[i] - h;
    const double fm = seg_loss(pp, y, w);
    return (fp - fm) / (2 * h);
}

}  // namespace

TEST_CASE("seg_loss worked examples") {
    SECTION("perfect prediction over n voxels gives -lambda") {
        const std::size_t n = 24;
        Tensor p({4, 6}, 1.0), y({4, 6}, 1.0);
        LossWeights w;  // lambda 0.5, smooth 1
        REQUIRE(seg_loss(p, y, w) == Catch::Approx(-0.5).margin(1e-4));
        w.lambda = 0.8;
        REQUIRE(seg_loss(p, y, w) == Catch::Approx(-0.8).margin(1e-4));
        (void)n;
    }

    SECTION("empty masks with lambda=1 hit the smoothing case -s/s = -1") {
        Tensor p({3, 3}, 0.0), y({3, 3}, 0.0);
        LossWeights w;
        w.lambda = 1.0;
        REQUIRE(seg_loss(p, y, w) == Catch::Approx(-1.0).margin(1e-12));
    }

    SECTION("single voxel, y=1, p=0.5, lambda=0.5, s=1") {
        Tensor p({1, 1}, 0.5), y({1, 1}, 1.0);
        LossWeights w;
        // hand evaluation: -0.5*(2*0.5+1)/(1+0.25+1) - 0.5*log(0.5)
        const double expected = -0.5 * (2.0 / 2.25) - 0.5 * std::log(0.5);
        REQUIRE(expected == Catch::Approx(-0.0978708542).margin(1e-9));
        REQUIRE(seg_loss(p, y, w) == Catch::Approx(expected).margin(1e-9));
    }

    SECTION("CE reduction: sum is n times the mean on uniform maps") {
        Tensor p({2, 1}, 0.3), y({2, 1}, 1.0);
        LossWeights wm, ws;
        ws.ce_sum = true;
        wm.lambda = ws.lambda = 0.0;  // isolate the CE term
        REQUIRE(seg_loss(p, y, ws) == Catch::Approx(2.0 * seg_loss(p, y, wm)).margin(1e-12));
    }

    SECTION("shape mismatch rejected") {
        REQUIRE_THROWS_AS(seg_loss(Tensor({2, 2}, 0.5), Tensor({2, 3}, 1.0), LossWeights{}),
                          InvalidInputError);
    }
    SECTION("non-binary target rejected") {
        REQUIRE_THROWS_AS(seg_loss(Tensor({2, 2}, 0.5), Tensor({2, 2}, 0.25), LossWeights{}),
                          InvalidInputError);
    }
    SECTION("invalid weights rejected") {
        LossWeights w;
        w.lambda = 1.5;
        REQUIRE_THROWS_AS(seg_loss(Tensor({2, 2}, 0.5), Tensor({2, 2}, 1.0), w), ConfigError);
        w = LossWeights{};
        w.smooth = 0.0;
        REQUIRE_THROWS_AS(seg_loss(Tensor({2, 2}, 0.5), Tensor({2, 2}, 1.0), w), ConfigError);
        w = LossWeights{};
        w.clamp_eps = 0.7;
        REQUIRE_THROWS_AS(seg_loss(Tensor({2, 2}, 0.5), Tensor({2, 2}, 1.0), w), ConfigError);
    }
}

TEST_CASE("seg_loss is minimized at p = y (grid search on tiny instances)") {
    LossWeights w;
    const double eps = w.clamp_eps;
    Rng rng(31);

    for (int trial = 0; trial < 8; ++trial) {
        const std::size_t n = 1 + trial % 3;
        Tensor y({n, 1});
        for (auto& v : y.vec()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;

        // exhaustive grid over each prediction entry
        std::vector<double> grid;
        for (double v = 0.0; v <= 1.0 + 1e-12; v += 0.1)
            grid.push_back(std::min(1.0 - eps, std::max(eps, v)));

        Tensor best_p({n, 1});
        double best = std::numeric_limits<double>::infinity();
        std::vector<std::size_t> idx(n, 0);
        while (true) {
            Tensor p({n, 1});
            for (std::size_t i = 0; i < n; ++i) p[i] = grid[idx[i]];
            const double l = seg_loss(p, y, w);
            if (l < best) {
                best = l;
                best_p = p;
            }
            std::size_t d = 0;
            while (d < n && ++idx[d] == grid.size()) idx[d++] = 0;
            if (d == n) break;
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double target = y[i] == 1.0 ? 1.0 - eps : eps;
            REQUIRE(best_p[i] == Catch::Approx(target).margin(1e-9));
        }
    }
}

TEST_CASE("seg_loss gradients match central finite differences on 50 random instances") {
    Rng rng(32);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t h = 1 + rng.uniform_index(3), v = 1 + rng.uniform_index(4);
        Tensor y({h, v}), p({h, v});
        for (auto& e : y.vec()) e = rng.uniform() < 0.5 ? 1.0 : 0.0;
        for (auto& e : p.vec()) e = rng.uniform(0.05, 0.95);
        LossWeights w;
        w.lambda = rng.uniform(0.1, 0.9);

        ad::Val pv = ad::leaf(p, true);
        ad::Val loss = seg_loss_tape(pv, ad::leaf(y), w);
        ad::backward(loss);

        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double fd = seg_loss_fd(p, y, w, i);
            const double an = pv->grad[i];
            const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-4});
            REQUIRE(rel <= 1e-3);
        }
    }
}

TEST_CASE("disc_loss worked examples") {
    SECTION("uninformed discriminator scores 2 log 2") {
        Tensor r({3, 3}, 0.5), f({3, 3}, 0.5);
        REQUIRE(disc_loss(r, f) == Catch::Approx(2.0 * std::log(2.0)).margin(1e-12));
    }
    SECTION("perfect discriminator limit approaches zero") {
        Tensor r({3, 3}, 1.0 - 1e-9), f({3, 3}, 1e-9);
        REQUIRE(disc_loss(r, f) == Catch::Approx(0.0).margin(1e-6));
    }
    SECTION("real 0.9, fake 0.2") {
        Tensor r({2, 5}, 0.9), f({2, 5}, 0.2);
        REQUIRE(disc_loss(r, f) ==
                Catch::Approx(-std::log(0.9) - std::log(0.8)).margin(1e-12));
        REQUIRE(disc_loss(r, f) == Catch::Approx(0.3285).margin(1e-4));
    }
    SECTION("finite even for raw 0/1 scores") {
        Tensor r({2, 2}, 0.0), f({2, 2}, 1.0);
        REQUIRE(std::isfinite(disc_loss(r, f)));
    }
}

TEST_CASE("gen_adv_loss worked examples") {
    REQUIRE(gen_adv_loss(Tensor({4, 4}, 0.5)) == Catch::Approx(std::log(2.0)).margin(1e-12));
    REQUIRE(gen_adv_loss(Tensor({4, 4}, 0.25)) == Catch::Approx(-std::log(0.25)).margin(1e-12));
    REQUIRE(gen_adv_loss(Tensor({4, 4}, 0.25)) == Catch::Approx(1.3863).margin(1e-4));
    REQUIRE(gen_adv_loss(Tensor({4, 4}, 1.0 - 1e-9)) == Catch::Approx(0.0).margin(1e-6));
}

TEST_CASE("losses are strictly monotone in the scores") {
    double prev_d = std::numeric_limits<double>::infinity();
    double prev_g = std::numeric_limits<double>::infinity();
    for (double s = 0.05; s < 1.0; s += 0.05) {
        const double d = disc_loss(Tensor({2, 2}, s), Tensor({2, 2}, 0.3));
        const double g = gen_adv_loss(Tensor({2, 2}, s));
        REQUIRE(d < prev_d);
        REQUIRE(g < prev_g);
        prev_d = d;
        prev_g = g;
    }
    // disc_loss also increases as D(fake) rises
    double prev = -std::numeric_limits<double>::infinity();
    for (double s = 0.05; s < 1.0; s += 0.05) {
        const double d = disc_loss(Tensor({2, 2}, 0.8), Tensor({2, 2}, s));
        REQUIRE(d > prev);
        prev = d;
    }
}

TEST_CASE("adv_bce_tape matches disc_loss pieces and is differentiable") {
    Rng rng(33);
    Tensor scores({3, 1, 2, 2});
    for (auto& v : scores.vec()) v = rng.uniform(0.1, 0.9);

    SECTION("all-real labels reproduce the real term") {
        ad::Val s = ad::leaf(scores, true);
        ad::Val loss = adv_bce_tape(s, {AdvLabel::real, AdvLabel::real, AdvLabel::real});
        double expect = 0.0;
        for (double v : scores.vec()) expect -= std::log(v);
        expect /= static_cast<double>(scores.numel());
        REQUIRE(loss->val[0] == Catch::Approx(expect).margin(1e-12));
        ad::backward(loss);
        for (std::size_t i = 0; i < scores.numel(); ++i)
            REQUIRE(s->grad[i] == Catch::Approx(-1.0 / scores[i] / double(scores.numel())).margin(1e-9));
    }
    SECTION("all-fake labels reproduce the fake term") {
        ad::Val loss =
            adv_bce_tape(ad::leaf(scores), {AdvLabel::fake, AdvLabel::fake, AdvLabel::fake});
        double expect = 0.0;
        for (double v : scores.vec()) expect -= std::log(1.0 - v);
        expect /= static_cast<double>(scores.numel());
        REQUIRE(loss->val[0] == Catch::Approx(expect).margin(1e-12));
    }
    SECTION("label count must match the batch") {
        REQUIRE_THROWS_AS(adv_bce_tape(ad::leaf(scores), {AdvLabel::real}), InvalidInputError);
    }
}

TEST_CASE("flip_labels") {
    SECTION("zero probability is the identity") {
        Rng rng(7);
        std::vector<AdvLabel> labels(64, AdvLabel::real);
        labels[3] = labels[10] = AdvLabel::fake;
        REQUIRE(flip_labels(labels, 0.0, rng) == labels);
    }
    SECTION("probability above 0.5 rejected") {
        Rng rng(7);
        std::vector<AdvLabel> labels(4, AdvLabel::real);
        REQUIRE_THROWS_AS(flip_labels(labels, 1.0, rng), ConfigError);
        REQUIRE_THROWS_AS(flip_labels(labels, 0.51, rng), ConfigError);
        REQUIRE_THROWS_AS(flip_labels(labels, -0.1, rng), ConfigError);
    }
    SECTION("seed 7, p=0.1, 10000 labels flips a fraction in [0.08, 0.12]") {
        Rng rng(7);
        std::vector<AdvLabel> labels(10000, AdvLabel::real);
        auto flipped = flip_labels(labels, 0.1, rng);
        std::size_t n = 0;
        for (auto l : flipped) n += l == AdvLabel::fake;
        const double frac = double(n) / 10000.0;
        REQUIRE(frac >= 0.08);
        REQUIRE(frac <= 0.12);
    }
    SECTION("deterministic for a fixed seed") {
        std::vector<AdvLabel> labels(100, AdvLabel::real);
        Rng a(42), b(42);
        REQUIRE(flip_labels(labels, 0.3, a) == flip_labels(labels, 0.3, b));
    }
}
