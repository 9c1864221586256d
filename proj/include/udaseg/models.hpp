#pragma once

// The two networks. The generator is a U-shaped segmentation net:
// per level one 3x3 conv + leaky ReLU followed by 2x2 max pooling, a
// bottleneck conv, then nearest-neighbour upsampling with skip
// concatenation and a conv per level, and a final 1x1 conv + sigmoid.
// The discriminator is a patch classifier: conv_blocks stride-2 4x4
// convs (channels doubling from base_filters) and a valid 3x3 score
// conv + sigmoid. Per stride-2 block the grid shrinks as
// out = floor((in - 2) / 2) + 1, and the score conv subtracts 2; with
// the default 4 blocks a 200x200 input yields a 10x10 score grid.
//
// All weights are drawn from N(0, 2/fan_in) with fan_in = in_ch*kh*kw;
// biases start at zero.

#include <string>
#include <utility>
#include <vector>

#include "udaseg/autodiff.hpp"
#include "udaseg/errors.hpp"
#include "udaseg/rng.hpp"
#include "udaseg/tensor.hpp"

namespace udaseg {

struct GeneratorConfig {
    std::size_t in_channels = 2;
    std::size_t out_channels = 1;
    std::size_t levels = 3;
    std::size_t base_filters = 16;
    double leaky_slope = 0.1;

    void validate() const {
        if (levels < 2) throw ConfigError("generator: levels must be >= 2");
        if (base_filters < 4) throw ConfigError("generator: base_filters must be >= 4");
        if (in_channels == 0 || out_channels == 0) throw ConfigError("generator: channel counts");
    }
};

struct DiscriminatorConfig {
    std::size_t in_channels = 8;
    std::size_t conv_blocks = 4;
    std::size_t base_filters = 16;
    double leaky_slope = 0.2;

    void validate() const {
        if (conv_blocks < 1) throw ConfigError("discriminator: conv_blocks must be >= 1");
        if (base_filters < 4) throw ConfigError("discriminator: base_filters must be >= 4");
        if (in_channels == 0) throw ConfigError("discriminator: in_channels");
    }

    // score-grid side length for a given input side length
    std::size_t grid_dim(std::size_t in) const {
        std::size_t d = in;
        for (std::size_t i = 0; i < conv_blocks; ++i) {
            if (d < 4) throw InvalidInputError("discriminator: input too small for the conv stack");
            d = (d - 2) / 2 + 1;
        }
        if (d < 4) throw InvalidInputError("discriminator: score grid would fall below 2x2");
        return d - 2;
    }
};

// Ordered collection of named tensors. Order is fixed by construction
// and defines serialization and traversal order everywhere.
class ModelParams {
public:
    Tensor& add(const std::string& name, Tensor t) {
        if (has(name)) throw UsageError("duplicate parameter name: " + name);
        items_.emplace_back(name, std::move(t));
        return items_.back().second;
    }

    bool has(const std::string& name) const {
        for (const auto& [n, t] : items_)
            if (n == name) return true;
        return false;
    }

    Tensor& at(const std::string& name) {
        for (auto& [n, t] : items_)
            if (n == name) return t;
        throw UsageError("unknown parameter: " + name);
    }

    const Tensor& at(const std::string& name) const {
        for (const auto& [n, t] : items_)
            if (n == name) return t;
        throw UsageError("unknown parameter: " + name);
    }

    std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    std::size_t count() const { return items_.size(); }

    bool same_layout(const ModelParams& other) const {
        if (items_.size() != other.items_.size()) return false;
        for (std::size_t i = 0; i < items_.size(); ++i)
            if (items_[i].first != other.items_[i].first ||
                items_[i].second.shape() != other.items_[i].second.shape())
                return false;
        return true;
    }

    bool all_finite() const {
        for (const auto& [n, t] : items_)
            if (!udaseg::all_finite(t)) return false;
        return true;
    }

    static ModelParams zeros_like(const ModelParams& ref) {
        ModelParams out;
        for (const auto& [n, t] : ref.items_) out.add(n, Tensor(t.shape()));
        return out;
    }

private:
    std::vector<std::pair<std::string, Tensor>> items_;
};

namespace detail {

inline void add_conv(ModelParams& p, Rng& rng, const std::string& name, std::size_t co, std::size_t ci,
                     std::size_t k) {
    Tensor w({co, ci, k, k});
    const double stddev = std::sqrt(2.0 / static_cast<double>(ci * k * k));
    for (auto& v : w.vec()) v = rng.normal(0.0, stddev);
    p.add(name + ".w", std::move(w));
    p.add(name + ".b", Tensor({co}));
}

}  // namespace detail

inline ModelParams init_params(const GeneratorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ModelParams p;
    std::size_t prev = cfg.in_channels;
    for (std::size_t i = 0; i < cfg.levels; ++i) {
        const std::size_t ch = cfg.base_filters << i;
        detail::add_conv(p, rng, "enc" + std::to_string(i), ch, prev, 3);
        prev = ch;
    }
    detail::add_conv(p, rng, "bottleneck", cfg.base_filters << cfg.levels, prev, 3);
    for (std::size_t i = cfg.levels; i-- > 0;) {
        const std::size_t skip = cfg.base_filters << i;
        const std::size_t up = cfg.base_filters << (i + 1);
        detail::add_conv(p, rng, "dec" + std::to_string(i), skip, up + skip, 3);
    }
    detail::add_conv(p, rng, "out", cfg.out_channels, cfg.base_filters, 1);
    return p;
}

inline ModelParams init_params(const DiscriminatorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ModelParams p;
    std::size_t prev = cfg.in_channels;
    for (std::size_t i = 0; i < cfg.conv_blocks; ++i) {
        const std::size_t ch = cfg.base_filters << i;
        detail::add_conv(p, rng, "block" + std::to_string(i), ch, prev, 4);
        prev = ch;
    }
    detail::add_conv(p, rng, "score", 1, prev, 3);
    return p;
}

// Leaf nodes for one training step, in parameter order.
struct TapeParamSet {
    std::vector<std::pair<std::string, ad::Val>> leaves;

    ad::Val at(const std::string& name) const {
        for (const auto& [n, v] : leaves)
            if (n == name) return v;
        throw UsageError("unknown parameter leaf: " + name);
    }
};

inline TapeParamSet make_param_leaves(const ModelParams& params, bool requires_grad) {
    TapeParamSet set;
    for (const auto& [n, t] : params.items()) set.leaves.emplace_back(n, ad::leaf(t, requires_grad));
    return set;
}

// Gradients accumulated by ad::backward, in the same layout as the
// parameters; leaves the loss never reached contribute zeros.
inline ModelParams collect_grads(const TapeParamSet& set) {
    ModelParams grads;
    for (const auto& [n, v] : set.leaves)
        grads.add(n, v->grad_ready ? v->grad : Tensor(v->val.shape()));
    return grads;
}

inline ad::Val generator_forward_tape(const TapeParamSet& p, const GeneratorConfig& cfg,
                                      ad::Val images) {
    cfg.validate();
    const Tensor& x = images->val;
    if (x.rank() != 4 || x.dim(1) != cfg.in_channels)
        throw InvalidInputError("generator: input must be (B," + std::to_string(cfg.in_channels) +
                                ",H,W), got " + x.shape_str());
    const std::size_t div = std::size_t{1} << cfg.levels;
    if (x.dim(2) % div != 0 || x.dim(3) % div != 0)
        throw InvalidInputError("generator: spatial size " + x.shape_str() + " not divisible by " +
                                std::to_string(div));

    using namespace ad;
    std::vector<Val> skips;
    Val h = images;
    for (std::size_t i = 0; i < cfg.levels; ++i) {
        const std::string n = "enc" + std::to_string(i);
        h = leaky_relu(conv2d(h, p.at(n + ".w"), p.at(n + ".b"), 1, 1), cfg.leaky_slope);
        skips.push_back(h);
        h = maxpool2(h);
    }
    h = leaky_relu(conv2d(h, p.at("bottleneck.w"), p.at("bottleneck.b"), 1, 1), cfg.leaky_slope);
    for (std::size_t i = cfg.levels; i-- > 0;) {
        const std::string n = "dec" + std::to_string(i);
        h = concat_channels({upsample2(h), skips[i]});
        h = leaky_relu(conv2d(h, p.at(n + ".w"), p.at(n + ".b"), 1, 1), cfg.leaky_slope);
    }
    return sigmoid(conv2d(h, p.at("out.w"), p.at("out.b"), 1, 0));
}

inline ad::Val discriminator_forward_tape(const TapeParamSet& p, const DiscriminatorConfig& cfg,
                                          ad::Val input) {
    cfg.validate();
    const Tensor& x = input->val;
    if (x.rank() != 4 || x.dim(1) != cfg.in_channels)
        throw InvalidInputError("discriminator: input must be (B," + std::to_string(cfg.in_channels) +
                                ",H,W), got " + x.shape_str());
    cfg.grid_dim(x.dim(2));
    cfg.grid_dim(x.dim(3));

    using namespace ad;
    Val h = input;
    for (std::size_t i = 0; i < cfg.conv_blocks; ++i) {
        const std::string n = "block" + std::to_string(i);
        h = leaky_relu(conv2d(h, p.at(n + ".w"), p.at(n + ".b"), 2, 1), cfg.leaky_slope);
    }
    return sigmoid(conv2d(h, p.at("score.w"), p.at("score.b"), 1, 0));
}

// Batch inference without gradients: (B, C, H, W) -> (B, 1, H, W).
inline Tensor generator_forward_batch(const ModelParams& params, const GeneratorConfig& cfg,
                                      const Tensor& images) {
    return generator_forward_tape(make_param_leaves(params, false), cfg, ad::constant(images))->val;
}

// Single-sample convenience: (C, H, W) -> probability map (H, W).
inline Tensor generator_forward(const ModelParams& params, const GeneratorConfig& cfg,
                                const Tensor& images) {
    if (images.rank() != 3)
        throw InvalidInputError("generator_forward: expected (C,H,W), got " + images.shape_str());
    Tensor batch({1, images.dim(0), images.dim(1), images.dim(2)});
    batch.vec() = images.vec();
    Tensor out = generator_forward_batch(params, cfg, batch);
    Tensor map({images.dim(1), images.dim(2)});
    map.vec() = out.vec();
    return map;
}

inline Tensor discriminator_forward_batch(const ModelParams& params, const DiscriminatorConfig& cfg,
                                          const Tensor& input) {
    return discriminator_forward_tape(make_param_leaves(params, false), cfg, ad::constant(input))->val;
}

// Single-sample convenience: (C, H, W) -> patch score grid (h, w).
inline Tensor discriminator_forward(const ModelParams& params, const DiscriminatorConfig& cfg,
                                    const Tensor& input) {
    if (input.rank() != 3)
        throw InvalidInputError("discriminator_forward: expected (C,H,W), got " + input.shape_str());
    Tensor batch({1, input.dim(0), input.dim(1), input.dim(2)});
    batch.vec() = input.vec();
    Tensor out = discriminator_forward_batch(params, cfg, batch);
    Tensor grid({out.dim(2), out.dim(3)});
    grid.vec() = out.vec();
    return grid;
}

}  // namespace udaseg
