#pragma once

#include <cmath>

#include "wseg/rng.hpp"
#include "wseg/tensor.hpp"

namespace wseg {

/// Stochastic Gate parameters. psi < 1 keeps delta = 1/(1-psi) finite.
/// Bernoulli draws are per element by default; per_pixel_shared draws one
/// value per pixel and broadcasts it across channels.
struct GateConfig {
    double psi = 0.3;
    bool gci_enabled = true;
    bool per_pixel_shared = false;

    void validate() const {
        detail::check(psi >= 0.0 && psi < 1.0,
                      "GateConfig: psi must lie in [0,1), got " + std::to_string(psi));
    }
};

/// Training-time gate output together with the Bernoulli draws that
/// produced it (needed to backpropagate the same realisation).
struct GateForward {
    Tensor output;
    Tensor r;  // same shape as output, entries in {0,1}
};

/// Gate output for a fixed Bernoulli realisation r:
/// (1-r) * delta * (x_d - psi*x_s) + r * x_s with delta = 1/(1-psi).
inline Tensor gate_train_apply(const Tensor& x_d, const Tensor& x_s, const GateConfig& cfg,
                               const Tensor& r) {
    const double delta = 1.0 / (1.0 - cfg.psi);
    Tensor out(x_d.dims());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (1.0 - r[i]) * delta * (x_d[i] - cfg.psi * x_s[i]) + r[i] * x_s[i];
    return out;
}

/// Stochastic mixing of the deep and shallow streams, Dropout-style:
/// per element, r ~ Bern(psi), so E[output] = x_d.
inline GateForward gate_train_fwd(const Tensor& x_d, const Tensor& x_s, const GateConfig& cfg,
                                  Rng& rng) {
    cfg.validate();
    detail::check_rank3(x_d, "gate_train");
    detail::check_same_dims(x_d, x_s, "gate_train");

    GateForward fwd;
    if (cfg.per_pixel_shared) {
        const Tensor pixel_r = bernoulli_mask(rng, {x_d.dim(1), x_d.dim(2)}, cfg.psi);
        fwd.r = Tensor(x_d.dims());
        const std::size_t plane = x_d.dim(1) * x_d.dim(2);
        for (std::size_t c = 0; c < x_d.dim(0); ++c)
            for (std::size_t p = 0; p < plane; ++p) fwd.r[c * plane + p] = pixel_r[p];
    } else {
        fwd.r = bernoulli_mask(rng, x_d.dims(), cfg.psi);
    }
    fwd.output = gate_train_apply(x_d, x_s, cfg, fwd.r);
    return fwd;
}

inline Tensor gate_train(const Tensor& x_d, const Tensor& x_s, const GateConfig& cfg, Rng& rng) {
    return gate_train_fwd(x_d, x_s, cfg, rng).output;
}

/// Gradients of gate_train w.r.t. both streams for a fixed realisation r.
inline void gate_train_backward(const Tensor& r, const GateConfig& cfg, const Tensor& grad_out,
                                Tensor& grad_xd, Tensor& grad_xs) {
    const double delta = 1.0 / (1.0 - cfg.psi);
    grad_xd = Tensor(grad_out.dims());
    grad_xs = Tensor(grad_out.dims());
    for (std::size_t i = 0; i < grad_out.size(); ++i) {
        const double keep = (1.0 - r[i]) * delta;
        grad_xd[i] = grad_out[i] * keep;
        grad_xs[i] = grad_out[i] * (r[i] - keep * cfg.psi);
    }
}

/// Deterministic inference-time combination: (1-psi)*x_d + psi*x_s.
inline Tensor gate_infer(const Tensor& x_d, const Tensor& x_s, const GateConfig& cfg) {
    cfg.validate();
    detail::check_rank3(x_d, "gate_infer");
    detail::check_same_dims(x_d, x_s, "gate_infer");
    Tensor out(x_d.dims());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (1.0 - cfg.psi) * x_d[i] + cfg.psi * x_s[i];
    return out;
}

/// Global Cue Injection weights: a pointwise channel-doubling expansion of
/// the deep features and a pointwise projection after AdIN.
struct GciParams {
    Tensor expand_w;   // 2K x K
    Tensor expand_b;   // 2K
    Tensor project_w;  // K x K
    Tensor project_b;  // K

    static GciParams init(std::size_t k, Rng& rng) {
        GciParams p;
        p.expand_w = Tensor(std::vector<std::size_t>{2 * k, k});
        p.expand_b = Tensor(std::vector<std::size_t>{2 * k});
        p.project_w = Tensor(std::vector<std::size_t>{k, k});
        p.project_b = Tensor(std::vector<std::size_t>{k});
        const double bound = 1.0 / std::sqrt(static_cast<double>(k));
        for (auto& v : p.expand_w) v = rng.uniform(-bound, bound);
        for (auto& v : p.project_w) v = rng.uniform(-bound, bound);
        return p;
    }

    void check_channels(std::size_t k) const {
        detail::check(expand_w.rank() == 2 && expand_w.dim(0) == 2 * k && expand_w.dim(1) == k &&
                          expand_b.size() == 2 * k && project_w.rank() == 2 &&
                          project_w.dim(0) == k && project_w.dim(1) == k && project_b.size() == k,
                      "GciParams: weight shapes inconsistent with channel count K");
    }
};

constexpr double kAdinSigmaFloor = 1e-5;

/// Cached intermediates of a GCI forward pass.
struct GciForward {
    Tensor output;                    // K x h x w
    std::vector<std::size_t> argmax;  // per expanded channel, flat spatial index of the max
    Tensor z, shift;                  // K each: the two halves of the pooled vector
    Tensor x_hat;                     // normalized shallow features
    Tensor pre_relu;                  // z*x_hat + shift before ReLU
    Tensor sigma;                     // per-channel std (after flooring)
    std::vector<bool> floored;        // channels where the floor was applied
};

/// Global Cue Injection: v = GMP(expand(x_d)) splits into scale z and shift
/// b that modulate instance-normalised shallow features (AdIN), followed
/// by ReLU and a pointwise projection.
inline GciForward gci_forward(const Tensor& x_d, const Tensor& x_s, const GciParams& params) {
    detail::check_rank3(x_d, "gci");
    detail::check_same_dims(x_d, x_s, "gci");
    const std::size_t k = x_d.dim(0), h = x_d.dim(1), w = x_d.dim(2);
    params.check_channels(k);
    const std::size_t plane = h * w;

    GciForward fwd;

    // pointwise channel-doubling expansion of the deep stream
    Tensor expanded(std::vector<std::size_t>{2 * k, h, w});
    for (std::size_t c = 0; c < 2 * k; ++c)
        for (std::size_t p = 0; p < plane; ++p) {
            double acc = params.expand_b[c];
            for (std::size_t kk = 0; kk < k; ++kk)
                acc += params.expand_w.at(c, kk) * x_d[kk * plane + p];
            expanded[c * plane + p] = acc;
        }
    const Tensor pooled = global_max_pool_argmax(expanded, fwd.argmax);

    fwd.z = Tensor(std::vector<std::size_t>{k});
    fwd.shift = Tensor(std::vector<std::size_t>{k});
    for (std::size_t c = 0; c < k; ++c) {
        fwd.z[c] = pooled[c];
        fwd.shift[c] = pooled[k + c];
    }

    // AdIN: per-channel normalisation of the shallow stream
    fwd.x_hat = Tensor(x_s.dims());
    fwd.sigma = Tensor(std::vector<std::size_t>{k});
    fwd.floored.assign(k, false);
    for (std::size_t c = 0; c < k; ++c) {
        const double* xs = x_s.data() + c * plane;
        double mu = 0.0;
        for (std::size_t p = 0; p < plane; ++p) mu += xs[p];
        mu /= static_cast<double>(plane);
        double var = 0.0;
        for (std::size_t p = 0; p < plane; ++p) var += (xs[p] - mu) * (xs[p] - mu);
        var /= static_cast<double>(plane);
        double sd = std::sqrt(var);
        if (sd < kAdinSigmaFloor) {
            sd = kAdinSigmaFloor;
            fwd.floored[c] = true;
        }
        fwd.sigma[c] = sd;
        for (std::size_t p = 0; p < plane; ++p)
            fwd.x_hat[c * plane + p] = (xs[p] - mu) / sd;
    }

    fwd.pre_relu = Tensor(x_s.dims());
    Tensor act(x_s.dims());
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t p = 0; p < plane; ++p) {
            const double v = fwd.z[c] * fwd.x_hat[c * plane + p] + fwd.shift[c];
            fwd.pre_relu[c * plane + p] = v;
            act[c * plane + p] = std::max(0.0, v);
        }

    // pointwise projection
    fwd.output = Tensor(x_s.dims());
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t p = 0; p < plane; ++p) {
            double acc = params.project_b[c];
            for (std::size_t kk = 0; kk < k; ++kk)
                acc += params.project_w.at(c, kk) * act[kk * plane + p];
            fwd.output[c * plane + p] = acc;
        }
    return fwd;
}

inline Tensor gci(const Tensor& x_d, const Tensor& x_s, const GciParams& params) {
    return gci_forward(x_d, x_s, params).output;
}

struct GciGrads {
    Tensor d_xd, d_xs;
    GciParams d_params;
};

/// Backward pass of gci_forward. The max pool routes gradients to the
/// argmax sites cached in the forward pass; channels whose sigma hit the
/// floor treat sigma as a constant.
inline GciGrads gci_backward(const GciForward& fwd, const Tensor& x_d, const Tensor& x_s,
                             const GciParams& params, const Tensor& grad_out) {
    const std::size_t k = x_d.dim(0), plane = x_d.dim(1) * x_d.dim(2);
    GciGrads g;
    g.d_xd = Tensor(x_d.dims());
    g.d_xs = Tensor(x_s.dims());
    g.d_params.expand_w = Tensor(params.expand_w.dims());
    g.d_params.expand_b = Tensor(params.expand_b.dims());
    g.d_params.project_w = Tensor(params.project_w.dims());
    g.d_params.project_b = Tensor(params.project_b.dims());

    // projection backward (activations recomputed from cached pre_relu)
    Tensor d_act(x_s.dims());
    for (std::size_t c = 0; c < k; ++c) {
        const double* go = grad_out.data() + c * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            g.d_params.project_b[c] += go[p];
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double act = std::max(0.0, fwd.pre_relu[kk * plane + p]);
                g.d_params.project_w.at(c, kk) += go[p] * act;
                d_act[kk * plane + p] += params.project_w.at(c, kk) * go[p];
            }
        }
    }

    // ReLU + AdIN backward
    Tensor d_v(std::vector<std::size_t>{2 * k});
    for (std::size_t c = 0; c < k; ++c) {
        double dz = 0.0, dshift = 0.0;
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        const double* xh = fwd.x_hat.data() + c * plane;
        std::vector<double> d_xhat(plane);
        for (std::size_t p = 0; p < plane; ++p) {
            const double d_pre =
                fwd.pre_relu[c * plane + p] > 0.0 ? d_act[c * plane + p] : 0.0;
            dz += d_pre * xh[p];
            dshift += d_pre;
            d_xhat[p] = d_pre * fwd.z[c];
            sum_dxhat += d_xhat[p];
            sum_dxhat_xhat += d_xhat[p] * xh[p];
        }
        d_v[c] = dz;
        d_v[k + c] = dshift;

        const double inv_n = 1.0 / static_cast<double>(plane);
        const double inv_sigma = 1.0 / fwd.sigma[c];
        double* dxs = g.d_xs.data() + c * plane;
        if (fwd.floored[c]) {
            for (std::size_t p = 0; p < plane; ++p)
                dxs[p] = inv_sigma * (d_xhat[p] - sum_dxhat * inv_n);
        } else {
            for (std::size_t p = 0; p < plane; ++p)
                dxs[p] = inv_sigma *
                         (d_xhat[p] - sum_dxhat * inv_n - xh[p] * sum_dxhat_xhat * inv_n);
        }
    }

    // max-pool + expansion backward, sparse through the argmax sites
    for (std::size_t c = 0; c < 2 * k; ++c) {
        const double gv = d_v[c];
        if (gv == 0.0) continue;
        const std::size_t p = fwd.argmax[c];
        g.d_params.expand_b[c] += gv;
        for (std::size_t kk = 0; kk < k; ++kk) {
            g.d_params.expand_w.at(c, kk) += gv * x_d[kk * plane + p];
            g.d_xd[kk * plane + p] += params.expand_w.at(c, kk) * gv;
        }
    }
    return g;
}

}  // namespace wseg
