#pragma once

#include <cmath>
#include <stdexcept>

#include "wseg/tensor.hpp"

namespace wseg {

/// Per-class linear weights over K feature channels (C x K).
struct ClassifierWeights {
    Tensor a;
};

/// Normalised Global Weighted Pooling parameters. epsilon must stay
/// strictly positive in production; zero is only reachable through the
/// test-only factory so regular code cannot hit the discontinuity at
/// vanishing masks.
class NgwpConfig {
public:
    double bg_score = 1.0;

    NgwpConfig() = default;
    explicit NgwpConfig(double eps, double bg = 1.0) : bg_score(bg) { set_epsilon(eps); }

    double epsilon() const { return epsilon_; }
    void set_epsilon(double eps) {
        detail::check(eps > 0.0, "NgwpConfig: epsilon must be > 0, got " + std::to_string(eps));
        epsilon_ = eps;
    }

    static NgwpConfig unchecked_epsilon_for_tests(double eps, double bg = 1.0) {
        detail::check(eps >= 0.0, "NgwpConfig: epsilon must be >= 0");
        NgwpConfig cfg;
        cfg.epsilon_ = eps;
        cfg.bg_score = bg;
        return cfg;
    }

private:
    double epsilon_ = 1.0;
};

/// Focal size-penalty parameters.
struct FocalConfig {
    double p = 3.0;
    double lambda = 0.01;

    void validate() const {
        detail::check(p >= 0.0, "FocalConfig: p must be >= 0");
        detail::check(lambda > 0.0, "FocalConfig: lambda must be > 0");
    }
};

/// GAP classifier scores: y_c = (1/hw) * sum_k a_{c,k} * sum_{i,j} x_{k,i,j}.
inline Tensor gap_scores(const Tensor& features, const ClassifierWeights& w) {
    detail::check_rank3(features, "gap_scores");
    detail::check(w.a.rank() == 2, "gap_scores: weights must be C x K");
    const std::size_t k = features.dim(0), plane = features.dim(1) * features.dim(2);
    const std::size_t c = w.a.dim(0);
    detail::check(w.a.dim(1) == k, "gap_scores: K mismatch between weights and features");

    std::vector<double> channel_sum(k, 0.0);
    for (std::size_t kk = 0; kk < k; ++kk)
        for (std::size_t p = 0; p < plane; ++p) channel_sum[kk] += features[kk * plane + p];

    Tensor out(std::vector<std::size_t>{c});
    for (std::size_t cc = 0; cc < c; ++cc) {
        double acc = 0.0;
        for (std::size_t kk = 0; kk < k; ++kk) acc += w.a.at(cc, kk) * channel_sum[kk];
        out[cc] = acc / static_cast<double>(plane);
    }
    return out;
}

/// Class activation maps: m_{c,i,j} = max(0, sum_k a_{c,k} x_{k,i,j}).
inline Tensor cam_maps(const Tensor& features, const ClassifierWeights& w) {
    detail::check_rank3(features, "cam_maps");
    detail::check(w.a.rank() == 2, "cam_maps: weights must be C x K");
    const std::size_t k = features.dim(0), h = features.dim(1), ww = features.dim(2);
    const std::size_t c = w.a.dim(0);
    detail::check(w.a.dim(1) == k, "cam_maps: K mismatch between weights and features");

    Tensor out(std::vector<std::size_t>{c, h, ww});
    const std::size_t plane = h * ww;
    for (std::size_t cc = 0; cc < c; ++cc)
        for (std::size_t p = 0; p < plane; ++p) {
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += w.a.at(cc, kk) * features[kk * plane + p];
            out[cc * plane + p] = std::max(0.0, acc);
        }
    return out;
}

/// Stacks a constant background channel on top of the C score maps and
/// applies a pixelwise softmax, yielding (C+1) x h x w mask probabilities.
inline Tensor build_mask_probs(const Tensor& score_maps, const NgwpConfig& cfg) {
    detail::check_rank3(score_maps, "build_mask_probs");
    const std::size_t c = score_maps.dim(0), h = score_maps.dim(1), w = score_maps.dim(2);
    Tensor logits(std::vector<std::size_t>{c + 1, h, w});
    const std::size_t plane = h * w;
    for (std::size_t p = 0; p < plane; ++p) logits[p] = cfg.bg_score;
    std::copy(score_maps.begin(), score_maps.end(), logits.begin() + plane);
    return softmax_over_channels(logits);
}

/// nGWP class scores: y_c = sum(m_c * y_c) / (eps + sum(m_c)), summed over
/// all pixels. mask carries C+1 channels (0 = background, excluded here).
inline Tensor ngwp(const Tensor& mask, const Tensor& score_maps, const NgwpConfig& cfg) {
    detail::check_rank3(mask, "ngwp");
    detail::check_rank3(score_maps, "ngwp");
    const std::size_t c = score_maps.dim(0);
    detail::check(mask.dim(0) == c + 1 && mask.dim(1) == score_maps.dim(1) &&
                      mask.dim(2) == score_maps.dim(2),
                  "ngwp: mask must be (C+1) x h x w matching score maps");
    const std::size_t plane = mask.dim(1) * mask.dim(2);

    Tensor out(std::vector<std::size_t>{c});
    for (std::size_t cc = 0; cc < c; ++cc) {
        double num = 0.0, den = 0.0;
        const double* m = mask.data() + (cc + 1) * plane;
        const double* y = score_maps.data() + cc * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            num += m[p] * y[p];
            den += m[p];
        }
        den += cfg.epsilon();
        if (den == 0.0)
            throw std::domain_error("ngwp: zero mask with epsilon=0 (limit does not exist)");
        out[cc] = num / den;
    }
    return out;
}

namespace detail {

// d/dm of (1-m)^p * log(lambda + m); the p == 0 branch avoids 0 * inf at m = 1.
inline double focal_penalty_dm(double mbar, double p, double lambda) {
    if (p == 0.0) return 1.0 / (lambda + mbar);
    const double one_m = std::max(0.0, 1.0 - mbar);
    return -p * std::pow(one_m, p - 1.0) * std::log(lambda + mbar) +
           std::pow(one_m, p) / (lambda + mbar);
}

}  // namespace detail

/// Focal size penalty per object class: (1 - mbar_c)^p * log(lambda + mbar_c)
/// with mbar_c the spatial mean of mask channel c. Background excluded.
inline Tensor focal_penalty(const Tensor& mask, const FocalConfig& cfg) {
    detail::check_rank3(mask, "focal_penalty");
    cfg.validate();
    const std::size_t c = mask.dim(0) - 1;
    detail::check(c >= 1, "focal_penalty: mask needs at least one object channel");
    const std::size_t plane = mask.dim(1) * mask.dim(2);

    Tensor out(std::vector<std::size_t>{c});
    for (std::size_t cc = 0; cc < c; ++cc) {
        const double* m = mask.data() + (cc + 1) * plane;
        double mbar = 0.0;
        for (std::size_t p = 0; p < plane; ++p) mbar += m[p];
        mbar /= static_cast<double>(plane);
        out[cc] = std::pow(std::max(0.0, 1.0 - mbar), cfg.p) * std::log(cfg.lambda + mbar);
    }
    return out;
}

/// Final classification scores y_c = nGWP + focal penalty.
inline Tensor classification_scores(const Tensor& mask, const Tensor& score_maps,
                                    const NgwpConfig& ncfg, const FocalConfig& fcfg) {
    Tensor y = ngwp(mask, score_maps, ncfg);
    const Tensor f = focal_penalty(mask, fcfg);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += f[i];
    return y;
}

/// Backward pass of the score-map -> mask -> (nGWP + focal) pipeline.
/// Given dL/dy (length C) it returns dL/d(score_maps), chaining the direct
/// nGWP term, the mask-mediated nGWP and focal terms, and the softmax that
/// produced `mask` (whose background logit is a constant, so its gradient
/// is dropped).
inline Tensor classification_scores_backward(const Tensor& grad_y, const Tensor& mask,
                                             const Tensor& score_maps, const NgwpConfig& ncfg,
                                             const FocalConfig& fcfg) {
    detail::check_rank3(mask, "classification_scores_backward");
    detail::check_rank3(score_maps, "classification_scores_backward");
    fcfg.validate();
    const std::size_t c = score_maps.dim(0);
    detail::check(grad_y.rank() == 1 && grad_y.dim(0) == c,
                  "classification_scores_backward: grad_y must have length C");
    detail::check(mask.dim(0) == c + 1 && mask.dim(1) == score_maps.dim(1) &&
                      mask.dim(2) == score_maps.dim(2),
                  "classification_scores_backward: mask/score shape mismatch");
    const std::size_t h = mask.dim(1), w = mask.dim(2), plane = h * w;
    const double hw = static_cast<double>(plane);

    // per-class nGWP forward quantities
    std::vector<double> den(c), val(c), dfocal(c);
    for (std::size_t cc = 0; cc < c; ++cc) {
        const double* m = mask.data() + (cc + 1) * plane;
        const double* y = score_maps.data() + cc * plane;
        double num = 0.0, d = 0.0;
        for (std::size_t p = 0; p < plane; ++p) {
            num += m[p] * y[p];
            d += m[p];
        }
        const double mbar = d / hw;
        d += ncfg.epsilon();
        if (d == 0.0)
            throw std::domain_error("ngwp backward: zero mask with epsilon=0");
        den[cc] = d;
        val[cc] = num / d;
        dfocal[cc] = detail::focal_penalty_dm(mbar, fcfg.p, fcfg.lambda);
    }

    // dL/dm for object channels (background channel gets zero)
    Tensor grad_m(std::vector<std::size_t>{c + 1, h, w});
    for (std::size_t cc = 0; cc < c; ++cc) {
        const double gy = grad_y[cc];
        const double* y = score_maps.data() + cc * plane;
        double* gm = grad_m.data() + (cc + 1) * plane;
        const double focal_term = dfocal[cc] / hw;
        for (std::size_t p = 0; p < plane; ++p)
            gm[p] = gy * ((y[p] - val[cc]) / den[cc] + focal_term);
    }

    // softmax backward per pixel, then keep the C non-background channels
    Tensor grad_s(std::vector<std::size_t>{c, h, w});
    for (std::size_t p = 0; p < plane; ++p) {
        double dot = 0.0;
        for (std::size_t t = 0; t <= c; ++t) dot += grad_m[t * plane + p] * mask[t * plane + p];
        for (std::size_t cc = 0; cc < c; ++cc) {
            const std::size_t t = cc + 1;
            grad_s[cc * plane + p] = mask[t * plane + p] * (grad_m[t * plane + p] - dot);
        }
    }

    // direct nGWP path: dy_c/ds_{c,ij} at fixed mask
    for (std::size_t cc = 0; cc < c; ++cc) {
        const double gy = grad_y[cc];
        const double* m = mask.data() + (cc + 1) * plane;
        double* gs = grad_s.data() + cc * plane;
        for (std::size_t p = 0; p < plane; ++p) gs[p] += gy * m[p] / den[cc];
    }
    return grad_s;
}

}  // namespace wseg
