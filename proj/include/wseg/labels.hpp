#pragma once

#include <cstddef>
#include <vector>

#include "wseg/tensor.hpp"

namespace wseg {

/// Sentinel for pixels excluded from segmentation supervision.
constexpr int kIgnoreLabel = -1;

/// Image-level ground-truth labels: z[c] = 1 iff object class c+1 is present.
struct LabelVector {
    std::vector<int> z;

    LabelVector() = default;
    explicit LabelVector(std::vector<int> v) : z(std::move(v)) {
        for (int b : z) detail::check(b == 0 || b == 1, "LabelVector: entries must be 0/1");
    }

    std::size_t num_classes() const { return z.size(); }
    bool present(std::size_t c) const { return z[c] != 0; }
};

/// Per-pixel hard labels extracted from refined masks. Values are
/// 0 (background), 1..C (object classes) or kIgnoreLabel. `valid` is the
/// whole-image discard flag; invalid images contribute nothing to the
/// segmentation loss. Class pixel counts are derived from the label map
/// so they can never drift out of sync.
struct PseudoLabels {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<int> labels;          // h*w entries
    bool valid = true;
    std::vector<std::size_t> counts;  // counts[c], c in 0..C

    PseudoLabels() = default;

    PseudoLabels(std::size_t h, std::size_t w, std::vector<int> lab, std::size_t num_channels,
                 bool is_valid)
        : height(h), width(w), labels(std::move(lab)), valid(is_valid) {
        detail::check(labels.size() == h * w, "PseudoLabels: label map size mismatch");
        counts.assign(num_channels, 0);
        for (int v : labels) {
            detail::check(v == kIgnoreLabel || (v >= 0 && v < static_cast<int>(num_channels)),
                          "PseudoLabels: label out of range");
            if (v != kIgnoreLabel) ++counts[static_cast<std::size_t>(v)];
        }
    }

    int label(std::size_t i, std::size_t j) const { return labels[i * width + j]; }

    /// M_total: number of supervised (non-ignored) pixels.
    std::size_t total() const {
        std::size_t t = 0;
        for (std::size_t c : counts) t += c;
        return t;
    }
};

}  // namespace wseg
