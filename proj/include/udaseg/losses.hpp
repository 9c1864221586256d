#pragma once

// Training objectives: the Dice + cross-entropy segmentation loss, the
// two split adversarial objectives (discriminator / non-saturating
// generator), and label flipping for GAN stabilisation.
//
// Each loss has a tape form (differentiable, used by the trainer) and a
// plain scalar form that evaluates the same graph on constant leaves.

#include <vector>

#include "udaseg/autodiff.hpp"
#include "udaseg/errors.hpp"
#include "udaseg/rng.hpp"
#include "udaseg/tensor.hpp"

namespace udaseg {

struct LossWeights {
    double lambda = 0.5;     // Dice weight; CE gets (1 - lambda)
    double smooth = 1.0;     // smoothing term in the Dice ratio
    double clamp_eps = 1e-7; // probability clamp before logs
    bool ce_sum = false;     // CE reduced by mean (default) or sum

    void validate() const {
        if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0,1]");
        if (!(smooth > 0.0)) throw ConfigError("smooth must be positive");
        if (!(clamp_eps > 0.0 && clamp_eps < 0.5)) throw ConfigError("clamp_eps must lie in (0, 0.5)");
    }
};

// sigmoid outputs of the patch discriminator, one grid per sample
using PatchScoreGrid = Tensor;

enum class AdvLabel : int { fake = 0, real = 1 };

namespace detail {

inline void check_binary(const Tensor& y) {
    for (double v : y.vec())
        if (v != 0.0 && v != 1.0) throw InvalidInputError("target mask is not binary");
}

}  // namespace detail

// -lambda * (2 sum(y p) + s) / (sum(y^2) + sum(p^2) + s)
//   - (1 - lambda) * red[y log p + (1-y) log(1-p)]
// The Dice ratio uses raw probabilities; only the log arguments are
// clamped. The CE bracket is nonpositive, so the CE contribution to the
// loss is nonnegative.
inline ad::Val seg_loss_tape(ad::Val p, ad::Val y, const LossWeights& w) {
    w.validate();
    if (!p->val.same_shape(y->val))
        throw InvalidInputError("seg_loss: prediction " + p->val.shape_str() + " vs target " +
                                y->val.shape_str());
    detail::check_binary(y->val);
    using namespace ad;
    Val num = add_scalar(scale(sum(mul(y, p)), 2.0), w.smooth);
    Val den = add_scalar(add(sum(mul(y, y)), sum(mul(p, p))), w.smooth);
    Val dice = div(num, den);

    Val pc = clamp(p, w.clamp_eps, 1.0 - w.clamp_eps);
    Val ce_map = add(mul(y, log(pc)), mul(rsub_scalar(1.0, y), log(rsub_scalar(1.0, pc))));
    Val ce = w.ce_sum ? sum(ce_map) : mean(ce_map);

    return add(scale(dice, -w.lambda), scale(ce, -(1.0 - w.lambda)));
}

inline double seg_loss(const Tensor& p, const Tensor& y, const LossWeights& w) {
    return seg_loss_tape(ad::leaf(p), ad::leaf(y), w)->val[0];
}

// mean[-log D(real)] + mean[-log(1 - D(fake))]
inline double disc_loss(const PatchScoreGrid& real_scores, const PatchScoreGrid& fake_scores,
                        double clamp_eps = 1e-7) {
    double acc_r = 0.0;
    for (double v : real_scores.vec())
        acc_r -= std::log(std::min(1.0 - clamp_eps, std::max(clamp_eps, v)));
    double acc_f = 0.0;
    for (double v : fake_scores.vec())
        acc_f -= std::log(1.0 - std::min(1.0 - clamp_eps, std::max(clamp_eps, v)));
    return acc_r / static_cast<double>(real_scores.numel()) +
           acc_f / static_cast<double>(fake_scores.numel());
}

// mean[-log D(fake)], the non-saturating generator objective
inline double gen_adv_loss(const PatchScoreGrid& fake_scores, double clamp_eps = 1e-7) {
    double acc = 0.0;
    for (double v : fake_scores.vec())
        acc -= std::log(std::min(1.0 - clamp_eps, std::max(clamp_eps, v)));
    return acc / static_cast<double>(fake_scores.numel());
}

inline ad::Val gen_adv_loss_tape(ad::Val fake_scores, double clamp_eps = 1e-7) {
    using namespace ad;
    return scale(mean(log(clamp(fake_scores, clamp_eps, 1.0 - clamp_eps))), -1.0);
}

// BCE of a (B,1,h,w) score grid against per-sample real/fake targets;
// this is one side of the discriminator objective once labels may have
// been flipped.
inline ad::Val adv_bce_tape(ad::Val scores, const std::vector<AdvLabel>& labels,
                            double clamp_eps = 1e-7) {
    using namespace ad;
    const Tensor& s = scores->val;
    if (s.rank() != 4 || s.dim(0) != labels.size())
        throw InvalidInputError("adv_bce: scores must be (B,1,h,w) with one label per sample");
    Tensor target(s.shape());
    const std::size_t per = s.numel() / s.dim(0);
    for (std::size_t b = 0; b < labels.size(); ++b) {
        const double t = labels[b] == AdvLabel::real ? 1.0 : 0.0;
        for (std::size_t i = 0; i < per; ++i) target[b * per + i] = t;
    }
    Val t = constant(std::move(target));
    Val sc = clamp(scores, clamp_eps, 1.0 - clamp_eps);
    Val bce = add(mul(t, log(sc)), mul(rsub_scalar(1.0, t), log(rsub_scalar(1.0, sc))));
    return scale(mean(bce), -1.0);
}

// Invert each label independently with probability flip_prob.
inline std::vector<AdvLabel> flip_labels(const std::vector<AdvLabel>& labels, double flip_prob,
                                         Rng& rng) {
    if (!(flip_prob >= 0.0 && flip_prob <= 0.5))
        throw ConfigError("flip_prob must lie in [0, 0.5]");
    std::vector<AdvLabel> out = labels;
    for (auto& l : out)
        if (rng.uniform() < flip_prob) l = (l == AdvLabel::real) ? AdvLabel::fake : AdvLabel::real;
    return out;
}

}  // namespace udaseg
