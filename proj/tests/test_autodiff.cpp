#include <catch2/catch_amalgamated.hpp>

#include "udaseg/autodiff.hpp"
#include "udaseg/kernels.hpp"
#include "udaseg/rng.hpp"

using namespace udaseg;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.vec()) v = rng.uniform(lo, hi);
    return t;
}

// Independent brute-force convolution: plain quadruple loop, no BLAS.
Tensor conv2d_reference(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
                        std::size_t pad) {
    const std::size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
    const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;
    Tensor y({B, Co, Ho, Wo});
    for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t co = 0; co < Co; ++co)
            for (std::size_t oi = 0; oi < Ho; ++oi)
                for (std::size_t oj = 0; oj < Wo; ++oj) {
                    double acc = b.numel() == Co ? b[co] : 0.0;
                    for (std::size_t ci = 0; ci < Ci; ++ci)
                        for (std::size_t u = 0; u < kh; ++u)
                            for (std::size_t v = 0; v < kw; ++v) {
                                const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oi * stride + u) -
                                                          static_cast<std::ptrdiff_t>(pad);
                                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(oj * stride + v) -
                                                          static_cast<std::ptrdiff_t>(pad);
                                if (ih < 0 || iw < 0 || ih >= static_cast<std::ptrdiff_t>(H) ||
                                    iw >= static_cast<std::ptrdiff_t>(W))
                                    continue;
                                acc += w.at(co, ci, u, v) *
                                       x.at(bi, ci, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw));
                            }
                    y.at(bi, co, oi, oj) = acc;
                }
    return y;
}

// Central finite differences on a scalar function of one leaf tensor.
double max_fd_rel_error(const std::function<ad::Val(ad::Val)>& f, const Tensor& x0, double h = 1e-6) {
    ad::Val x = ad::leaf(x0, true);
    ad::Val loss = f(x);
    ad::backward(loss);
    Tensor analytic = x->grad;

    double worst = 0.0;
    Tensor xp = x0;
    for (std::size_t i = 0; i < x0.numel(); ++i) {
        xp[i] = x0[i] + h;
        double fp = f(ad::leaf(xp, false))->val[0];
        xp[i] = x0[i] - h;
        double fm = f(ad::leaf(xp, false))->val[0];
        xp[i] = x0[i];
        const double fd = (fp - fm) / (2 * h);
        const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-4});
        worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
    }
    return worst;
}

}  // namespace

TEST_CASE("conv2d forward matches a brute-force oracle") {
    Rng rng(11);
    struct Case {
        std::size_t B, Ci, H, W, Co, k, s, p;
    };
    for (Case c : {Case{2, 3, 8, 8, 4, 3, 1, 1}, Case{1, 2, 9, 7, 3, 3, 1, 1}, Case{2, 4, 8, 8, 5, 4, 2, 1},
                   Case{1, 1, 5, 5, 1, 3, 1, 0}, Case{3, 2, 12, 10, 2, 4, 2, 1}}) {
        Tensor x = random_tensor({c.B, c.Ci, c.H, c.W}, rng);
        Tensor w = random_tensor({c.Co, c.Ci, c.k, c.k}, rng);
        Tensor b = random_tensor({c.Co}, rng);
        Tensor y;
        conv2d_forward(y, x, w, b, c.s, c.p);
        Tensor ref = conv2d_reference(x, w, b, c.s, c.p);
        REQUIRE(y.shape() == ref.shape());
        REQUIRE(max_abs_diff(y, ref) < 1e-12);
    }
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(12);
    Tensor x0 = random_tensor({2, 2, 6, 6}, rng);
    Tensor w0 = random_tensor({3, 2, 3, 3}, rng);
    Tensor b0 = random_tensor({3}, rng);

    SECTION("w.r.t. input") {
        auto f = [&](ad::Val x) {
            return ad::sum(ad::conv2d(x, ad::leaf(w0), ad::leaf(b0), 1, 1));
        };
        REQUIRE(max_fd_rel_error(f, x0) < 1e-6);
    }
    SECTION("w.r.t. weights") {
        auto f = [&](ad::Val w) {
            return ad::sum(ad::conv2d(ad::leaf(x0), w, ad::leaf(b0), 1, 1));
        };
        REQUIRE(max_fd_rel_error(f, w0) < 1e-6);
    }
    SECTION("w.r.t. bias") {
        auto f = [&](ad::Val b) {
            return ad::sum(ad::conv2d(ad::leaf(x0), ad::leaf(w0), b, 1, 1));
        };
        REQUIRE(max_fd_rel_error(f, b0) < 1e-6);
    }
    SECTION("strided, through a nonlinearity") {
        Tensor w4 = random_tensor({3, 2, 4, 4}, rng);
        auto f = [&](ad::Val x) {
            return ad::mean(ad::sigmoid(ad::conv2d(x, ad::leaf(w4), ad::leaf(b0), 2, 1)));
        };
        REQUIRE(max_fd_rel_error(f, x0) < 1e-6);
    }
}

TEST_CASE("pooling, upsampling and activation gradients match finite differences") {
    Rng rng(13);
    Tensor x0 = random_tensor({2, 3, 6, 6}, rng);

    SECTION("maxpool2") {
        // keep entries well separated so FD never crosses an argmax tie
        auto f = [](ad::Val x) { return ad::sum(ad::maxpool2(ad::mul(x, x))); };
        REQUIRE(max_fd_rel_error(f, x0) < 1e-6);
    }
    SECTION("upsample2") {
        auto f = [](ad::Val x) { return ad::sum(ad::mul(ad::upsample2(x), ad::upsample2(x))); };
        REQUIRE(max_fd_rel_error(f, x0) < 1e-6);
    }
    SECTION("leaky_relu") {
        auto f = [](ad::Val x) { return ad::sum(ad::leaky_relu(x, 0.1)); };
        REQUIRE(max_fd_rel_error(f, x0) < 1e-5);
    }
    SECTION("sigmoid + log + clamp chain") {
        auto f = [](ad::Val x) {
            return ad::mean(ad::log(ad::clamp(ad::sigmoid(x), 1e-7, 1.0 - 1e-7)));
        };
        REQUIRE(max_fd_rel_error(f, x0) < 1e-6);
    }
    SECTION("concat") {
        Tensor y0 = random_tensor({2, 2, 6, 6}, rng);
        auto f = [&](ad::Val x) {
            auto cat = ad::concat_channels({x, ad::leaf(y0)});
            return ad::sum(ad::mul(cat, cat));
        };
        REQUIRE(max_fd_rel_error(f, x0) < 1e-6);
    }
    SECTION("elementwise arithmetic") {
        Tensor y0 = random_tensor({2, 3, 6, 6}, rng, 0.5, 2.0);
        auto f = [&](ad::Val x) {
            auto y = ad::leaf(y0);
            auto expr = ad::div(ad::add(ad::mul(x, y), ad::scale(x, 0.5)), ad::add_scalar(ad::mul(y, y), 1.0));
            return ad::mean(ad::abs(ad::sub(expr, ad::rsub_scalar(0.25, x))));
        };
        REQUIRE(max_fd_rel_error(f, x0) < 1e-5);
    }
}

TEST_CASE("backward accumulates through shared subexpressions") {
    // d/dx of (x*x + x*x) = 4x
    Tensor x0 = Tensor::scalar(3.0);
    ad::Val x = ad::leaf(x0, true);
    ad::Val sq = ad::mul(x, x);
    ad::Val loss = ad::sum(ad::add(sq, sq));
    ad::backward(loss);
    REQUIRE(x->grad[0] == Catch::Approx(12.0).margin(1e-12));
}

TEST_CASE("scaling the loss scales every gradient entry") {
    Rng rng(14);
    Tensor x0 = random_tensor({1, 2, 4, 4}, rng);
    Tensor w0 = random_tensor({2, 2, 3, 3}, rng);

    auto run = [&](double c) {
        ad::Val x = ad::leaf(x0, false);
        ad::Val w = ad::leaf(w0, true);
        ad::Val loss = ad::scale(ad::mean(ad::sigmoid(ad::conv2d(x, w, nullptr, 1, 1))), c);
        ad::backward(loss);
        return w->grad;
    };
    Tensor g1 = run(1.0);
    Tensor g2 = run(2.0);
    for (std::size_t i = 0; i < g1.numel(); ++i) REQUIRE(g2[i] == Catch::Approx(2.0 * g1[i]).margin(1e-12));
}

TEST_CASE("backward without a differentiable leaf is a usage error") {
    ad::Val x = ad::leaf(Tensor::scalar(1.0), false);
    ad::Val y = ad::sum(x);
    REQUIRE_THROWS_AS(ad::backward(y), UsageError);
}

TEST_CASE("backward requires a scalar root") {
    ad::Val x = ad::leaf(Tensor({2, 2}), true);
    REQUIRE_THROWS_AS(ad::backward(x), UsageError);
}
