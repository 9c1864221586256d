#pragma once

// Label-free convergence monitoring for the adaptation loop: Euclidean
// drift of the current target predictions from the frozen initial ones,
// and the population variance of that drift over a sliding window.
// Training stops once the drift has grown past eps2 while its variance
// has settled below eps1.

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "udaseg/errors.hpp"
#include "udaseg/tensor.hpp"

namespace udaseg {

// sqrt(sum (Ai - A0)^2) over all entries of the stacked monitoring subset
inline double mask_distance(const Tensor& ai, const Tensor& a0) {
    if (!ai.same_shape(a0))
        throw InvalidInputError("mask_distance: shape mismatch " + ai.shape_str() + " vs " + a0.shape_str());
    double acc = 0.0;
    for (std::size_t i = 0; i < ai.numel(); ++i) {
        const double d = ai[i] - a0[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

// Population variance (divide by k) of the last k values; empty when the
// history is still shorter than the window.
inline std::optional<double> window_variance(const std::vector<double>& d_history, std::size_t k) {
    if (k < 2) throw ConfigError("window_variance: k must be >= 2");
    if (d_history.size() < k) return std::nullopt;
    const auto first = d_history.end() - static_cast<std::ptrdiff_t>(k);
    double mu = 0.0;
    for (auto it = first; it != d_history.end(); ++it) mu += *it;
    mu /= static_cast<double>(k);
    double acc = 0.0;
    for (auto it = first; it != d_history.end(); ++it) acc += (*it - mu) * (*it - mu);
    return acc / static_cast<double>(k);
}

class MonitorState {
public:
    MonitorState(Tensor a0, std::size_t k, double eps1, double eps2, std::size_t min_epochs)
        : a0_(std::move(a0)), k_(k), eps1_(eps1), eps2_(eps2), min_epochs_(min_epochs) {
        if (k_ < 2) throw ConfigError("MonitorState: window k must be >= 2");
    }

    const Tensor& a0() const { return a0_; }
    std::size_t k() const { return k_; }
    double eps1() const { return eps1_; }
    double eps2() const { return eps2_; }
    std::size_t min_epochs() const { return min_epochs_; }
    const std::vector<double>& d_history() const { return d_history_; }

    // append-only
    void record(double d) { d_history_.push_back(d); }

    double record_prediction(const Tensor& ai) {
        const double d = mask_distance(ai, a0_);
        record(d);
        return d;
    }

    std::optional<double> current_variance() const { return window_variance(d_history_, k_); }

private:
    Tensor a0_;
    std::size_t k_;
    double eps1_;
    double eps2_;
    std::size_t min_epochs_;
    std::vector<double> d_history_;
};

// Stop once the window is full, the variance has settled below eps1 and
// the latest drift exceeds eps2. Short history is "not ready", not an error.
inline bool should_stop(const MonitorState& state, std::size_t current_epoch) {
    if (current_epoch < state.min_epochs()) return false;
    const auto var = state.current_variance();
    if (!var.has_value()) return false;
    return *var < state.eps1() && state.d_history().back() > state.eps2();
}

// Standalone analysis of a recorded drift series (e.g. read back from a
// training log): rolling variance at every index plus the first index at
// which the stop rule fires. Indices count from zero.
struct DriftAnalysis {
    std::vector<std::optional<double>> sigma2;
    std::optional<std::size_t> stop_index;
};

inline DriftAnalysis analyze_drift_series(const std::vector<double>& d, std::size_t k, double eps1,
                                          double eps2, std::size_t min_points = 0) {
    DriftAnalysis out;
    out.sigma2.reserve(d.size());
    std::vector<double> prefix;
    prefix.reserve(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        prefix.push_back(d[i]);
        auto var = window_variance(prefix, k);
        out.sigma2.push_back(var);
        if (!out.stop_index && var && i + 1 >= min_points && *var < eps1 && d[i] > eps2)
            out.stop_index = i;
    }
    return out;
}

}  // namespace udaseg
