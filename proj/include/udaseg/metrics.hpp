#pragma once

// Segmentation evaluation: Dice, 95th-percentile Hausdorff, absolute
// volume difference, and the two lesion-wise detection metrics over
// connected components.
//
// H95 percentile rule: with n directed distances sorted ascending, the
// 95th percentile is the entry of rank min(n, floor(0.95*n) + 1). This
// nearest-rank form coincides with the exact Hausdorff distance whenever
// a mask has at most 20 foreground pixels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "udaseg/errors.hpp"
#include "udaseg/tensor.hpp"

namespace udaseg {

using BinaryMask = Tensor;  // H x W, values in {0, 1}

struct PixelSpacing {
    double row = 1.0;
    double col = 1.0;
};

// id -> pixel set; region ids are assigned in raster order of each
// region's first pixel, starting at 1 (0 is background in the label map).
struct LesionComponents {
    int connectivity = 8;
    std::vector<std::vector<std::pair<int, int>>> regions;
    Tensor labels;  // H x W, 0 = background

    std::size_t count() const { return regions.size(); }
};

inline void validate_binary_mask(const Tensor& m) {
    if (m.rank() != 2) throw InvalidInputError("mask must be H x W");
    for (double v : m.vec())
        if (v != 0.0 && v != 1.0) throw InvalidInputError("mask is not binary");
}

inline void check_mask_pair(const Tensor& g, const Tensor& p) {
    validate_binary_mask(g);
    validate_binary_mask(p);
    if (!g.same_shape(p))
        throw InvalidInputError("mask shapes differ: " + g.shape_str() + " vs " + p.shape_str());
}

inline std::size_t foreground_count(const Tensor& m) {
    std::size_t n = 0;
    for (double v : m.vec()) n += (v != 0.0);
    return n;
}

// 2|G n P| / (|G| + |P|); both-empty pairs score 1 by convention.
inline double dsc(const BinaryMask& g, const BinaryMask& p) {
    check_mask_pair(g, p);
    std::size_t inter = 0, ng = 0, np = 0;
    for (std::size_t i = 0; i < g.numel(); ++i) {
        const bool gi = g[i] != 0.0, pi = p[i] != 0.0;
        inter += (gi && pi);
        ng += gi;
        np += pi;
    }
    if (ng + np == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(ng + np);
}

namespace detail {

inline std::vector<std::pair<int, int>> foreground_pixels(const Tensor& m) {
    std::vector<std::pair<int, int>> px;
    const int H = static_cast<int>(m.dim(0)), W = static_cast<int>(m.dim(1));
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
            if (m.at(i, j) != 0.0) px.emplace_back(i, j);
    return px;
}

// directed distances: min distance from each pixel of `from` to the set `to`
inline std::vector<double> directed_distances(const std::vector<std::pair<int, int>>& from,
                                              const std::vector<std::pair<int, int>>& to,
                                              PixelSpacing sp) {
    std::vector<double> out;
    out.reserve(from.size());
    for (const auto& [fi, fj] : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& [ti, tj] : to) {
            const double dr = (fi - ti) * sp.row;
            const double dc = (fj - tj) * sp.col;
            const double d2 = dr * dr + dc * dc;
            if (d2 < best) best = d2;
        }
        out.push_back(std::sqrt(best));
    }
    return out;
}

inline double percentile95_nearest_rank(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    const std::size_t rank = std::min(n, static_cast<std::size_t>(std::floor(0.95 * static_cast<double>(n))) + 1);
    return v[rank - 1];
}

}  // namespace detail

// Symmetric 95th-percentile Hausdorff distance, Euclidean in spacing units.
inline double hausdorff95(const BinaryMask& g, const BinaryMask& p, PixelSpacing sp = {}) {
    check_mask_pair(g, p);
    auto gpx = detail::foreground_pixels(g);
    auto ppx = detail::foreground_pixels(p);
    if (gpx.empty() || ppx.empty())
        throw UndefinedMetricError("hausdorff95 undefined for an empty mask");
    const double d_gp = detail::percentile95_nearest_rank(detail::directed_distances(gpx, ppx, sp));
    const double d_pg = detail::percentile95_nearest_rank(detail::directed_distances(ppx, gpx, sp));
    return std::max(d_gp, d_pg);
}

// Absolute volume difference, as a percentage of |G|.
inline double avd(const BinaryMask& g, const BinaryMask& p) {
    check_mask_pair(g, p);
    const double ng = static_cast<double>(foreground_count(g));
    const double np = static_cast<double>(foreground_count(p));
    if (ng == 0.0) throw UndefinedMetricError("avd undefined for an empty ground-truth mask");
    return 100.0 * std::abs(ng - np) / ng;
}

inline LesionComponents connected_components(const BinaryMask& mask, int connectivity = 8) {
    validate_binary_mask(mask);
    if (connectivity != 4 && connectivity != 8)
        throw InvalidInputError("connectivity must be 4 or 8");
    const int H = static_cast<int>(mask.dim(0)), W = static_cast<int>(mask.dim(1));
    LesionComponents out;
    out.connectivity = connectivity;
    out.labels = Tensor(mask.shape());

    static const int off8[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}};
    static const int off4[4][2] = {{-1, 0}, {0, -1}, {0, 1}, {1, 0}};
    const int n_off = connectivity == 8 ? 8 : 4;
    const auto* offs = connectivity == 8 ? off8 : off4;

    std::vector<std::pair<int, int>> stack;
    for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
            if (mask.at(i, j) == 0.0 || out.labels.at(i, j) != 0.0) continue;
            const double id = static_cast<double>(out.regions.size() + 1);
            std::vector<std::pair<int, int>> region;
            stack.assign(1, {i, j});
            out.labels.at(i, j) = id;
            while (!stack.empty()) {
                auto [r, c] = stack.back();
                stack.pop_back();
                region.emplace_back(r, c);
                for (int k = 0; k < n_off; ++k) {
                    const int rr = r + offs[k][0], cc = c + offs[k][1];
                    if (rr < 0 || cc < 0 || rr >= H || cc >= W) continue;
                    if (mask.at(rr, cc) == 0.0 || out.labels.at(rr, cc) != 0.0) continue;
                    out.labels.at(rr, cc) = id;
                    stack.emplace_back(rr, cc);
                }
            }
            std::sort(region.begin(), region.end());
            out.regions.push_back(std::move(region));
        }
    }
    return out;
}

namespace detail {

inline double component_iou(const std::vector<std::pair<int, int>>& a,
                            const std::vector<std::pair<int, int>>& b) {
    // both vectors are sorted
    std::size_t inter = 0, ia = 0, ib = 0;
    while (ia < a.size() && ib < b.size()) {
        if (a[ia] < b[ib])
            ++ia;
        else if (b[ib] < a[ia])
            ++ib;
        else {
            ++inter;
            ++ia;
            ++ib;
        }
    }
    return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

// detection rule: with threshold 0 a single shared pixel counts; with a
// positive threshold the component must reach that IoU with some
// counterpart component.
inline bool detected(const std::vector<std::pair<int, int>>& region, const Tensor& other_mask,
                     const LesionComponents& other_comps, double iou_threshold) {
    if (iou_threshold <= 0.0) {
        for (const auto& [r, c] : region)
            if (other_mask.at(r, c) != 0.0) return true;
        return false;
    }
    for (const auto& comp : other_comps.regions)
        if (component_iou(region, comp) >= iou_threshold) return true;
    return false;
}

}  // namespace detail

// N_c / N_G: fraction of ground-truth lesions that P touches.
inline double lesion_recall(const BinaryMask& g, const BinaryMask& p, int connectivity = 8,
                            double iou_threshold = 0.0) {
    check_mask_pair(g, p);
    const LesionComponents gc = connected_components(g, connectivity);
    if (gc.count() == 0) throw UndefinedMetricError("lesion_recall undefined: no ground-truth lesions");
    const LesionComponents pc = connected_components(p, connectivity);
    std::size_t hit = 0;
    for (const auto& region : gc.regions)
        hit += detail::detected(region, p, pc, iou_threshold);
    return static_cast<double>(hit) / static_cast<double>(gc.count());
}

// N_c / (N_c + N_f) over predicted components; N_f are the predicted
// lesions that share no pixel with G.
inline double lesion_f1(const BinaryMask& g, const BinaryMask& p, int connectivity = 8,
                        double iou_threshold = 0.0) {
    check_mask_pair(g, p);
    const LesionComponents pc = connected_components(p, connectivity);
    if (pc.count() == 0) throw UndefinedMetricError("lesion_f1 undefined: no predicted lesions");
    const LesionComponents gc = connected_components(g, connectivity);
    std::size_t correct = 0;
    for (const auto& region : pc.regions)
        correct += detail::detected(region, g, gc, iou_threshold);
    return static_cast<double>(correct) / static_cast<double>(pc.count());
}

}  // namespace udaseg
