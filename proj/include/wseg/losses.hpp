#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "wseg/labels.hpp"
#include "wseg/rng.hpp"
#include "wseg/scores.hpp"
#include "wseg/tensor.hpp"

namespace wseg {

/// Scalar loss plus analytic gradient w.r.t. the differentiated input.
struct LossValue {
    double value = 0.0;
    Tensor grad;
};

/// Loss over a batch of images; one gradient tensor per batch element.
struct BatchLossValue {
    double value = 0.0;
    std::vector<Tensor> grad;
};

namespace detail {

// log(1 + e^t) without overflow
inline double softplus(double t) {
    return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)));
}

inline double sigmoid(double t) {
    return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

}  // namespace detail

/// Multi-label soft-margin classification loss over C class scores:
///   L = -(1/C) * sum_c [ z_c log sigma(y_c) + (1-z_c) log(1 - sigma(y_c)) ]
/// in log-sum-exp form; grad_c = (sigma(y_c) - z_c) / C.
inline LossValue multilabel_softmargin(const Tensor& y, const LabelVector& z) {
    detail::check(y.rank() == 1 && y.dim(0) == z.num_classes(),
                  "multilabel_softmargin: scores/labels length mismatch");
    const std::size_t c = y.dim(0);
    LossValue out;
    out.grad = Tensor(std::vector<std::size_t>{c});
    double loss = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
        const double zi = static_cast<double>(z.z[i]);
        // z*softplus(-y) + (1-z)*softplus(y)
        loss += zi * detail::softplus(-y[i]) + (1.0 - zi) * detail::softplus(y[i]);
        out.grad[i] = (detail::sigmoid(y[i]) - zi) / static_cast<double>(c);
    }
    out.value = loss / static_cast<double>(c);
    return out;
}

namespace detail {

// Balancing class weights q_c = (M_total - M_c) / (1 + M_total), one per channel.
inline std::vector<double> class_balance_weights(const PseudoLabels& pseudo) {
    const double total = static_cast<double>(pseudo.total());
    std::vector<double> q(pseudo.counts.size(), 0.0);
    for (std::size_t c = 0; c < q.size(); ++c)
        q[c] = (total - static_cast<double>(pseudo.counts[c])) / (1.0 + total);
    return q;
}

}  // namespace detail

/// Class-balanced weighted cross-entropy against pseudo ground truth.
/// Per labeled pixel: -q_c log m_{c,i,j} with per-image q_c; ignored pixels
/// contribute zero; invalid images are skipped entirely. Batch aggregate:
///   L = 1/(sum_b M_b) * 1/(hw) * sum_b M_b * sum_{i,j} L_{i,j}.
/// The gradient is w.r.t. the pre-softmax logits of each mask (all C+1
/// channels; callers that keep the background logit constant drop row 0).
inline BatchLossValue weighted_seg_loss(const std::vector<Tensor>& masks,
                                        const std::vector<PseudoLabels>& pseudo) {
    detail::check(masks.size() == pseudo.size(), "weighted_seg_loss: batch size mismatch");
    BatchLossValue out;
    out.grad.reserve(masks.size());

    double total_supervised = 0.0;
    for (std::size_t b = 0; b < masks.size(); ++b)
        if (pseudo[b].valid) total_supervised += static_cast<double>(pseudo[b].total());

    for (std::size_t b = 0; b < masks.size(); ++b) {
        const Tensor& m = masks[b];
        detail::check_rank3(m, "weighted_seg_loss");
        const PseudoLabels& pl = pseudo[b];
        detail::check(m.dim(0) == pl.counts.size() && m.dim(1) == pl.height &&
                          m.dim(2) == pl.width,
                      "weighted_seg_loss: mask/pseudo shape mismatch");
        Tensor grad(m.dims());
        const std::size_t channels = m.dim(0), plane = pl.height * pl.width;

        if (!pl.valid || pl.total() == 0 || total_supervised == 0.0) {
            out.grad.push_back(std::move(grad));
            continue;
        }

        const std::vector<double> q = detail::class_balance_weights(pl);
        const double hw = static_cast<double>(plane);
        // scale of this image in the batch aggregate
        const double scale = static_cast<double>(pl.total()) / (total_supervised * hw);

        double image_sum = 0.0;
        for (std::size_t p = 0; p < plane; ++p) {
            const int lab = pl.labels[p];
            if (lab == kIgnoreLabel) continue;
            const std::size_t lc = static_cast<std::size_t>(lab);
            image_sum += -q[lc] * std::log(m[lc * plane + p]);
            // cross-entropy-through-softmax: d/du_k = q * (m_k - [k == label])
            for (std::size_t k = 0; k < channels; ++k)
                grad[k * plane + p] =
                    scale * q[lc] * (m[k * plane + p] - (k == lc ? 1.0 : 0.0));
        }
        out.value += scale * image_sum;
        out.grad.push_back(std::move(grad));
    }
    return out;
}

/// Composite: multi-label soft-margin loss on nGWP + focal scores, with the
/// gradient taken w.r.t. the raw score maps (mask probabilities rebuilt
/// internally). This is the classification objective used in training.
inline LossValue classification_loss_from_scores(const Tensor& score_maps, const LabelVector& z,
                                                 const NgwpConfig& ncfg, const FocalConfig& fcfg) {
    const Tensor mask = build_mask_probs(score_maps, ncfg);
    const Tensor y = classification_scores(mask, score_maps, ncfg, fcfg);
    LossValue margin = multilabel_softmargin(y, z);
    LossValue out;
    out.value = margin.value;
    out.grad = classification_scores_backward(margin.grad, mask, score_maps, ncfg, fcfg);
    return out;
}

/// Composite: weighted segmentation loss driven by raw score-map batches;
/// gradients w.r.t. the score maps (background logit held constant).
inline BatchLossValue seg_loss_from_scores(const std::vector<Tensor>& score_maps,
                                           const std::vector<PseudoLabels>& pseudo,
                                           const NgwpConfig& ncfg) {
    std::vector<Tensor> masks;
    masks.reserve(score_maps.size());
    for (const Tensor& s : score_maps) masks.push_back(build_mask_probs(s, ncfg));
    BatchLossValue full = weighted_seg_loss(masks, pseudo);
    BatchLossValue out;
    out.value = full.value;
    out.grad.reserve(full.grad.size());
    for (std::size_t b = 0; b < full.grad.size(); ++b) {
        const Tensor& g = full.grad[b];
        const std::size_t c = g.dim(0) - 1, plane = g.dim(1) * g.dim(2);
        Tensor gs(std::vector<std::size_t>{c, g.dim(1), g.dim(2)});
        std::copy(g.begin() + plane, g.end(), gs.begin());
        out.grad.push_back(std::move(gs));
    }
    return out;
}

/// Central-finite-difference gradient check. `f` must return the loss value
/// and its analytic gradient at the evaluation point; the check perturbs
/// each coordinate by +-h and reports the maximum relative error. Above
/// 10^4 coordinates a deterministic random subset is probed instead.
inline double gradcheck(const std::function<LossValue(const Tensor&)>& f, const Tensor& x,
                        double h = 1e-5, std::size_t max_coords = 10000,
                        std::uint64_t subset_seed = 0) {
    detail::check(h >= 1e-7 && h <= 1e-4, "gradcheck: step must lie in [1e-7, 1e-4]");
    const LossValue at_x = f(x);
    detail::check(std::isfinite(at_x.value), "gradcheck: non-finite loss at base point");
    detail::check(at_x.grad.size() == x.size(), "gradcheck: gradient size mismatch");

    std::vector<std::size_t> coords;
    if (x.size() <= max_coords) {
        coords.resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) coords[i] = i;
    } else {
        Rng rng(subset_seed);
        coords.resize(max_coords);
        for (std::size_t i = 0; i < max_coords; ++i)
            coords[i] = static_cast<std::size_t>(rng.next_below(x.size()));
    }

    double max_rel = 0.0;
    Tensor xp = x;
    for (std::size_t i : coords) {
        const double orig = xp[i];
        xp[i] = orig + h;
        const double fplus = f(xp).value;
        xp[i] = orig - h;
        const double fminus = f(xp).value;
        xp[i] = orig;
        detail::check(std::isfinite(fplus) && std::isfinite(fminus),
                      "gradcheck: non-finite loss during perturbation");
        const double numeric = (fplus - fminus) / (2.0 * h);
        const double analytic = at_x.grad[i];
        const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
        max_rel = std::max(max_rel, std::abs(numeric - analytic) / denom);
    }
    return max_rel;
}

}  // namespace wseg
