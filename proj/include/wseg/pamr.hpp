#pragma once

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "wseg/labels.hpp"
#include "wseg/tensor.hpp"

namespace wseg {

/// Pixel-Adaptive Mask Refinement parameters. The affinity kernel is the
/// union of 3x3 kernels at the given dilation rates (8 off-center taps
/// each); sigma_floor keeps the local std away from zero on flat regions.
struct PamrConfig {
    std::vector<int> dilations = {1, 2, 4, 8, 12, 24};
    int iterations = 10;
    double sigma_floor = 1e-3;

    void validate() const {
        detail::check(!dilations.empty(), "PamrConfig: dilations must be non-empty");
        int prev = 0;
        for (int d : dilations) {
            detail::check(d > prev, "PamrConfig: dilations must be positive and strictly increasing");
            prev = d;
        }
        detail::check(iterations >= 0, "PamrConfig: iterations must be >= 0");
        detail::check(sigma_floor > 0.0, "PamrConfig: sigma_floor must be > 0");
    }
};

/// Neighbor tap offsets (dy, dx) for a dilation set: the 8 off-center taps
/// of each dilated 3x3 kernel, in kernel order.
inline std::vector<std::pair<int, int>> neighbor_offsets(const std::vector<int>& dilations) {
    std::vector<std::pair<int, int>> offsets;
    offsets.reserve(8 * dilations.size());
    for (int d : dilations)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                if (dy == 0 && dx == 0) continue;
                offsets.emplace_back(dy * d, dx * d);
            }
    return offsets;
}

/// Per-pixel, per-neighbor convex weights derived from image appearance.
/// weights is N_neigh x h x w; out-of-bounds taps carry weight zero and the
/// in-bounds weights of every pixel sum to one.
struct AffinityField {
    Tensor weights;
    std::vector<std::pair<int, int>> offsets;
    std::size_t height = 0;
    std::size_t width = 0;
};

/// Per-pixel, per-channel standard deviation of the image over the pixel's
/// own kernel support (center plus all in-bounds dilated taps), floored at
/// cfg.sigma_floor. Population (biased) variance.
inline Tensor local_sigma(const Tensor& image, const PamrConfig& cfg) {
    detail::check_rank3(image, "local_sigma");
    cfg.validate();
    const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
    const auto offsets = neighbor_offsets(cfg.dilations);

    Tensor sigma(image.dims());
    std::vector<double> vals;
    vals.reserve(offsets.size() + 1);
    for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                vals.clear();
                vals.push_back(image.at(c, i, j));
                for (const auto& [dy, dx] : offsets) {
                    const long li = static_cast<long>(i) + dy;
                    const long lj = static_cast<long>(j) + dx;
                    if (li < 0 || lj < 0 || li >= static_cast<long>(h) ||
                        lj >= static_cast<long>(w))
                        continue;
                    vals.push_back(image.at(c, static_cast<std::size_t>(li),
                                            static_cast<std::size_t>(lj)));
                }
                double mean = 0.0;
                for (double v : vals) mean += v;
                mean /= static_cast<double>(vals.size());
                double var = 0.0;
                for (double v : vals) var += (v - mean) * (v - mean);
                var /= static_cast<double>(vals.size());
                sigma.at(c, i, j) = std::max(std::sqrt(var), cfg.sigma_floor);
            }
    return sigma;
}

/// Appearance affinity: per channel k = -|I(i,j) - I(l,n)| / sigma(i,j)^2,
/// averaged over channels, then softmax over each pixel's in-bounds
/// neighbor set (out-of-bounds taps are dropped from the support).
inline AffinityField affinity(const Tensor& image, const PamrConfig& cfg) {
    detail::check_rank3(image, "affinity");
    cfg.validate();
    const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
    const Tensor sigma = local_sigma(image, cfg);

    AffinityField field;
    field.offsets = neighbor_offsets(cfg.dilations);
    field.height = h;
    field.width = w;
    const std::size_t n_neigh = field.offsets.size();
    field.weights = Tensor(std::vector<std::size_t>{n_neigh, h, w});

    std::vector<double> kbar(n_neigh);
    std::vector<bool> in_bounds(n_neigh);
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            double kmax = -std::numeric_limits<double>::infinity();
            for (std::size_t n = 0; n < n_neigh; ++n) {
                const long li = static_cast<long>(i) + field.offsets[n].first;
                const long lj = static_cast<long>(j) + field.offsets[n].second;
                in_bounds[n] = li >= 0 && lj >= 0 && li < static_cast<long>(h) &&
                               lj < static_cast<long>(w);
                if (!in_bounds[n]) continue;
                double acc = 0.0;
                for (std::size_t c = 0; c < ch; ++c) {
                    const double s = sigma.at(c, i, j);
                    acc += -std::abs(image.at(c, i, j) -
                                     image.at(c, static_cast<std::size_t>(li),
                                              static_cast<std::size_t>(lj))) /
                           (s * s);
                }
                kbar[n] = acc / static_cast<double>(ch);
                kmax = std::max(kmax, kbar[n]);
            }
            double sum = 0.0;
            for (std::size_t n = 0; n < n_neigh; ++n)
                if (in_bounds[n]) sum += std::exp(kbar[n] - kmax);
            for (std::size_t n = 0; n < n_neigh; ++n)
                field.weights.at(n, i, j) = in_bounds[n] ? std::exp(kbar[n] - kmax) / sum : 0.0;
        }
    return field;
}

/// Iterative label propagation: each pixel becomes the convex combination
/// of its neighbors' previous values (double-buffered, so every read is
/// from iteration t-1). Not a differentiation path: callers must treat the
/// result as constant self-supervision.
inline Tensor refine(const Tensor& mask, const AffinityField& aff, int iterations) {
    detail::check_rank3(mask, "refine");
    detail::check(iterations >= 0, "refine: iterations must be >= 0");
    detail::check(mask.dim(1) == aff.height && mask.dim(2) == aff.width,
                  "refine: mask spatial dims must match affinity field");
    const std::size_t ch = mask.dim(0), h = aff.height, w = aff.width;
    const std::size_t plane = h * w;

    Tensor cur = mask;
    Tensor next(mask.dims());
    for (int it = 0; it < iterations; ++it) {
        std::fill(next.begin(), next.end(), 0.0);
        for (std::size_t n = 0; n < aff.offsets.size(); ++n) {
            const int dy = aff.offsets[n].first, dx = aff.offsets[n].second;
            // valid destination range so that (i+dy, j+dx) stays in bounds;
            // a dilation larger than the image leaves no valid pixels
            const long i0l = std::max(0L, static_cast<long>(-dy));
            const long i1l = static_cast<long>(h) - std::max(0, dy);
            const long j0l = std::max(0L, static_cast<long>(-dx));
            const long j1l = static_cast<long>(w) - std::max(0, dx);
            if (i0l >= i1l || j0l >= j1l) continue;
            const std::size_t i0 = static_cast<std::size_t>(i0l);
            const std::size_t i1 = static_cast<std::size_t>(i1l);
            const std::size_t j0 = static_cast<std::size_t>(j0l);
            const std::size_t j1 = static_cast<std::size_t>(j1l);
            const double* wn = aff.weights.data() + n * plane;
            for (std::size_t c = 0; c < ch; ++c) {
                const double* src = cur.data() + c * plane;
                double* dst = next.data() + c * plane;
                for (std::size_t i = i0; i < i1; ++i) {
                    const std::size_t row = i * w;
                    const double* srow = src + (static_cast<long>(i) + dy) * static_cast<long>(w);
                    for (std::size_t j = j0; j < j1; ++j)
                        dst[row + j] += wn[row + j] * srow[static_cast<long>(j) + dx];
                }
            }
        }
        std::swap(cur, next);
    }
    return cur;
}

/// Pseudo ground-truth extraction from a refined mask. Channels of absent
/// classes are zeroed first; a pixel is confident for an object class when
/// its value exceeds fg_threshold of that channel's spatial maximum
/// (bg_threshold for background). Pixels confident for exactly one channel
/// get that label; conflicting or unconfident pixels are ignored. Images
/// where some present class ends up with no labeled pixel are discarded.
inline PseudoLabels extract_pseudo_gt(const Tensor& refined, const LabelVector& present_classes,
                                      double fg_threshold = 0.6, double bg_threshold = 0.7,
                                      bool global_max_base = false) {
    detail::check_rank3(refined, "extract_pseudo_gt");
    const std::size_t channels = refined.dim(0), h = refined.dim(1), w = refined.dim(2);
    detail::check(channels == present_classes.num_classes() + 1,
                  "extract_pseudo_gt: mask needs C+1 channels for C classes");
    const std::size_t plane = h * w;

    Tensor m = refined;
    for (std::size_t c = 1; c < channels; ++c)
        if (!present_classes.present(c - 1))
            std::fill(m.begin() + c * plane, m.begin() + (c + 1) * plane, 0.0);

    std::vector<double> channel_max(channels, 0.0);
    for (std::size_t c = 0; c < channels; ++c) {
        double mx = 0.0;
        for (std::size_t p = 0; p < plane; ++p) mx = std::max(mx, m[c * plane + p]);
        channel_max[c] = mx;
    }
    if (global_max_base) {
        const double global = *std::max_element(channel_max.begin(), channel_max.end());
        std::fill(channel_max.begin(), channel_max.end(), global);
    }

    std::vector<double> threshold(channels);
    threshold[0] = bg_threshold * channel_max[0];
    for (std::size_t c = 1; c < channels; ++c) threshold[c] = fg_threshold * channel_max[c];

    std::vector<int> labels(plane, kIgnoreLabel);
    for (std::size_t p = 0; p < plane; ++p) {
        int hits = 0, last = kIgnoreLabel;
        for (std::size_t c = 0; c < channels; ++c) {
            if (m[c * plane + p] > threshold[c]) {
                ++hits;
                last = static_cast<int>(c);
            }
        }
        if (hits == 1) labels[p] = last;
    }

    PseudoLabels out(h, w, std::move(labels), channels, true);
    for (std::size_t c = 1; c < channels; ++c)
        if (present_classes.present(c - 1) && out.counts[c] == 0) out.valid = false;
    return out;
}

}  // namespace wseg
