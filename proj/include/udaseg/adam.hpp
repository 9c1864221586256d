#pragma once

// Adam with bias correction over a ModelParams set.

#include <cmath>
#include <cstdint>
#include <string>

#include "udaseg/errors.hpp"
#include "udaseg/models.hpp"

namespace udaseg {

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    ModelParams m;
    ModelParams v;
    std::uint64_t step = 0;

    static AdamState init(const ModelParams& params) {
        return AdamState{ModelParams::zeros_like(params), ModelParams::zeros_like(params), 0};
    }
};

inline void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr,
                      AdamHyper hyper = {}) {
    if (!(lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
    if (!params.same_layout(grads) || !params.same_layout(state.m) || !params.same_layout(state.v))
        throw InvalidInputError("adam: parameter/gradient/moment layouts disagree");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));

    for (std::size_t i = 0; i < params.count(); ++i) {
        const auto& name = params.items()[i].first;
        Tensor& p = params.items()[i].second;
        const Tensor& g = grads.items()[i].second;
        Tensor& m = state.m.items()[i].second;
        Tensor& v = state.v.items()[i].second;
        for (std::size_t j = 0; j < p.numel(); ++j) {
            const double gj = g[j];
            if (!std::isfinite(gj))
                throw TrainingDivergedError("non-finite gradient in " + name + " at entry " +
                                            std::to_string(j));
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * gj;
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * gj * gj;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + hyper.eps);
        }
    }
}

}  // namespace udaseg
