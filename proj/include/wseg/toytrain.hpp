#pragma once

#include <array>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "wseg/gate.hpp"
#include "wseg/losses.hpp"
#include "wseg/nn.hpp"
#include "wseg/pamr.hpp"
#include "wseg/rng.hpp"
#include "wseg/scores.hpp"
#include "wseg/tensor.hpp"

namespace wseg {

// ---------------------------------------------------------------------------
// Synthetic labeled-shapes dataset

struct ToyDatasetConfig {
    std::size_t n_images = 150;
    std::size_t image_size = 48;  // must be a multiple of 4 (two stride-2 stages)
    std::size_t n_classes = 3;    // disk, square, triangle, then cycling
    double color_jitter = 0.08;
    double pixel_noise = 0.04;
    double val_fraction = 0.25;
    std::uint64_t seed = 7;

    void validate() const {
        detail::check(n_images > 0, "ToyDatasetConfig: n_images must be > 0");
        detail::check(image_size >= 16 && image_size % 4 == 0,
                      "ToyDatasetConfig: image_size must be >= 16 and a multiple of 4");
        detail::check(n_classes >= 1, "ToyDatasetConfig: n_classes must be >= 1");
        detail::check(color_jitter >= 0.0 && pixel_noise >= 0.0,
                      "ToyDatasetConfig: noise levels must be >= 0");
        detail::check(val_fraction > 0.0 && val_fraction < 1.0,
                      "ToyDatasetConfig: val_fraction must lie in (0,1)");
    }
};

struct ToySample {
    Tensor image;              // 3 x S x S, intensities in [0,1]
    LabelVector labels;        // C image-level labels
    std::vector<int> gt_mask;  // S*S dense labels 0..C, evaluation only
};

struct ToyDataset {
    std::vector<ToySample> train;
    std::vector<ToySample> val;
    std::size_t image_size = 0;
    std::size_t n_classes = 0;
};

namespace detail {

inline std::array<double, 3> class_base_color(std::size_t cls, std::size_t n_classes) {
    // evenly spaced hues, bright against the dark background
    const double hue = 6.0 * static_cast<double>(cls - 1) / static_cast<double>(n_classes);
    const double s = 0.75, v = 0.85;
    const int sector = static_cast<int>(hue) % 6;
    const double f = hue - std::floor(hue);
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (sector) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

struct ShapeSpec {
    int type;  // 0 disk, 1 square, 2 triangle
    long cy, cx, r;
    int cls;
};

inline bool shape_contains(const ShapeSpec& s, long i, long j) {
    switch (s.type) {
        case 0:
            return (i - s.cy) * (i - s.cy) + (j - s.cx) * (j - s.cx) <= s.r * s.r;
        case 1:
            return std::abs(i - s.cy) <= s.r && std::abs(j - s.cx) <= s.r;
        default: {  // upward triangle: apex at cy - r
            const long t = i - (s.cy - s.r);
            if (t < 0 || t > 2 * s.r) return false;
            return std::abs(j - s.cx) * 2 <= t;
        }
    }
}

inline bool boxes_overlap(const ShapeSpec& a, const ShapeSpec& b, long margin) {
    return std::abs(a.cy - b.cy) <= a.r + b.r + margin &&
           std::abs(a.cx - b.cx) <= a.r + b.r + margin;
}

}  // namespace detail

/// Deterministic synthetic dataset: dark noisy backgrounds with one or two
/// brightly colored shapes. Image-level labels come with held-out dense
/// masks used only for evaluation. The first shape's class cycles with the
/// image index, so every class is guaranteed frequent appearances.
inline ToyDataset gen_dataset(const ToyDatasetConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const long s = static_cast<long>(cfg.image_size);

    ToyDataset ds;
    ds.image_size = cfg.image_size;
    ds.n_classes = cfg.n_classes;
    const std::size_t n_train =
        std::max<std::size_t>(1, static_cast<std::size_t>(
                                     std::ceil(static_cast<double>(cfg.n_images) *
                                               (1.0 - cfg.val_fraction))));

    for (std::size_t idx = 0; idx < cfg.n_images; ++idx) {
        ToySample sample;
        sample.image = Tensor(std::vector<std::size_t>{3, cfg.image_size, cfg.image_size});
        sample.gt_mask.assign(cfg.image_size * cfg.image_size, 0);

        std::array<double, 3> bg;
        for (auto& v : bg) v = rng.uniform(0.08, 0.30);

        std::vector<detail::ShapeSpec> shapes;
        const int first_cls = static_cast<int>(idx % cfg.n_classes) + 1;
        const bool two_shapes = cfg.n_classes >= 2 && rng.next_double() < 0.5;

        auto place_shape = [&](int cls) -> bool {
            for (int attempt = 0; attempt < 25; ++attempt) {
                detail::ShapeSpec spec;
                spec.cls = cls;
                spec.type = (cls - 1) % 3;
                spec.r = static_cast<long>(rng.uniform(static_cast<double>(s) / 8.0,
                                                       static_cast<double>(s) / 4.5));
                spec.cy = static_cast<long>(rng.uniform(static_cast<double>(spec.r + 2),
                                                        static_cast<double>(s - spec.r - 2)));
                spec.cx = static_cast<long>(rng.uniform(static_cast<double>(spec.r + 2),
                                                        static_cast<double>(s - spec.r - 2)));
                bool ok = true;
                for (const auto& other : shapes)
                    if (detail::boxes_overlap(spec, other, 2)) ok = false;
                if (!ok) continue;
                shapes.push_back(spec);
                return true;
            }
            return false;
        };

        place_shape(first_cls);
        if (two_shapes) {
            int second = first_cls;
            while (second == first_cls)
                second = 1 + static_cast<int>(rng.next_below(cfg.n_classes));
            place_shape(second);
        }

        std::vector<std::array<double, 3>> shape_colors;
        for (const auto& spec : shapes) {
            auto color = detail::class_base_color(static_cast<std::size_t>(spec.cls),
                                                  cfg.n_classes);
            for (auto& ch : color)
                ch = std::clamp(ch + rng.uniform(-cfg.color_jitter, cfg.color_jitter), 0.05,
                                0.95);
            shape_colors.push_back(color);
        }

        std::vector<int> present(cfg.n_classes, 0);
        for (long i = 0; i < s; ++i)
            for (long j = 0; j < s; ++j) {
                std::array<double, 3> color = bg;
                for (std::size_t k = 0; k < shapes.size(); ++k)
                    if (detail::shape_contains(shapes[k], i, j)) {
                        color = shape_colors[k];
                        sample.gt_mask[static_cast<std::size_t>(i * s + j)] = shapes[k].cls;
                        present[static_cast<std::size_t>(shapes[k].cls - 1)] = 1;
                        break;
                    }
                for (std::size_t c = 0; c < 3; ++c)
                    sample.image.at(c, static_cast<std::size_t>(i), static_cast<std::size_t>(j)) =
                        std::clamp(color[c] + rng.uniform(-cfg.pixel_noise, cfg.pixel_noise), 0.0,
                                   1.0);
            }
        sample.labels = LabelVector(present);

        if (idx < n_train)
            ds.train.push_back(std::move(sample));
        else
            ds.val.push_back(std::move(sample));
    }
    detail::check(!ds.val.empty(), "gen_dataset: validation split is empty");
    return ds;
}

inline Tensor flip_horizontal(const Tensor& t) {
    detail::check_rank3(t, "flip_horizontal");
    Tensor out(t.dims());
    const std::size_t w = t.dim(2);
    for (std::size_t c = 0; c < t.dim(0); ++c)
        for (std::size_t i = 0; i < t.dim(1); ++i)
            for (std::size_t j = 0; j < w; ++j) out.at(c, i, j) = t.at(c, i, w - 1 - j);
    return out;
}

/// Affinity field of the horizontally flipped image, obtained by mirroring
/// the cached field of the original (weight of offset (dy,dx) at (i,j)
/// equals the original weight of (dy,-dx) at the mirrored column).
inline AffinityField flip_affinity_horizontal(const AffinityField& f) {
    AffinityField out;
    out.offsets = f.offsets;
    out.height = f.height;
    out.width = f.width;
    out.weights = Tensor(f.weights.dims());

    std::vector<std::size_t> mirror(f.offsets.size());
    for (std::size_t n = 0; n < f.offsets.size(); ++n) {
        const auto target = std::make_pair(f.offsets[n].first, -f.offsets[n].second);
        for (std::size_t m = 0; m < f.offsets.size(); ++m)
            if (f.offsets[m] == target) {
                mirror[n] = m;
                break;
            }
    }
    const std::size_t w = f.width;
    for (std::size_t n = 0; n < f.offsets.size(); ++n)
        for (std::size_t i = 0; i < f.height; ++i)
            for (std::size_t j = 0; j < w; ++j)
                out.weights.at(mirror[n], i, j) = f.weights.at(n, i, w - 1 - j);
    return out;
}

// ---------------------------------------------------------------------------
// Model and training configuration

enum class SgMode { kStochastic, kDeterministic, kOff };

struct TrainConfig {
    int epochs_phase1 = 5;
    int epochs_total = 14;
    double learning_rate = 0.02;
    double momentum = 0.9;
    int batch_size = 8;
    double prune_threshold = 0.1;
    double fg_threshold = 0.6;
    double bg_threshold = 0.7;
    bool augment_flip = true;
    SgMode sg_mode = SgMode::kStochastic;
    std::uint64_t seed = 1;

    GateConfig gate;
    FocalConfig focal;
    NgwpConfig ngwp;
    PamrConfig pamr;

    void validate() const {
        detail::check(epochs_phase1 >= 0 && epochs_total >= 0,
                      "TrainConfig: epoch counts must be >= 0");
        detail::check(learning_rate > 0.0, "TrainConfig: learning_rate must be > 0");
        detail::check(momentum >= 0.0 && momentum < 1.0, "TrainConfig: momentum must be in [0,1)");
        detail::check(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
        detail::check(prune_threshold >= 0.0 && prune_threshold <= 1.0,
                      "TrainConfig: prune_threshold must be in [0,1]");
        detail::check(fg_threshold > 0.0 && fg_threshold < 1.0 && bg_threshold > 0.0 &&
                          bg_threshold < 1.0,
                      "TrainConfig: pseudo-GT thresholds must lie in (0,1)");
        gate.validate();
        focal.validate();
        pamr.validate();
    }
};

struct Metrics {
    std::vector<double> per_class_iou;  // C+1 entries incl. background; -1 = skipped
    double mean_iou = 0.0;
    double classification_accuracy = 0.0;
    double phase1_mean_iou = 0.0;
    std::vector<double> cls_loss_curve;
    std::vector<double> seg_loss_curve;
};

/// Miniature two-stream network: two conv blocks to the shallow stream
/// (stride 2), two more to the deep stream (stride 4, upsampled back),
/// GCI + Stochastic Gate between them, and a pointwise head producing C
/// score maps at half the input resolution.
struct ToyModel {
    static constexpr std::size_t kShallowChannels = 8;
    static constexpr std::size_t kMidChannels = 12;

    Conv2d conv1, conv2, conv3, conv4, head;
    GciParams gci;
    GateConfig gate;
    SgMode sg_mode = SgMode::kStochastic;
    std::size_t n_classes = 0;

    static ToyModel init(std::size_t n_classes, const GateConfig& gate_cfg, SgMode mode,
                         Rng& rng) {
        ToyModel m;
        m.n_classes = n_classes;
        m.gate = gate_cfg;
        m.sg_mode = mode;
        m.conv1 = Conv2d::init(kShallowChannels, 3, 3, 2, 1, rng);
        m.conv2 = Conv2d::init(kShallowChannels, kShallowChannels, 3, 1, 1, rng);
        m.conv3 = Conv2d::init(kMidChannels, kShallowChannels, 3, 2, 1, rng);
        m.conv4 = Conv2d::init(kShallowChannels, kMidChannels, 3, 1, 1, rng);
        m.gci = GciParams::init(kShallowChannels, rng);
        m.head = Conv2d::init(n_classes, kShallowChannels, 1, 1, 0, rng);
        return m;
    }
};

struct ModelForward {
    Tensor a1_pre, a1, a2_pre, xs, a3_pre, a3, a4_pre, xd_low, xd;
    bool used_gci = false;
    GciForward gci_fwd;
    Tensor xs_eff;
    bool stochastic = false;
    Tensor gate_r;
    Tensor gated;
    Tensor scores;  // C x S/2 x S/2
};

/// Gradient (or velocity) buffers aligned with the model parameters.
struct ModelGrads {
    Tensor conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b, conv4_w, conv4_b;
    Tensor gci_expand_w, gci_expand_b, gci_project_w, gci_project_b;
    Tensor head_w, head_b;

    static ModelGrads zeros_like(const ToyModel& m) {
        ModelGrads g;
        g.conv1_w = Tensor(m.conv1.w.dims());
        g.conv1_b = Tensor(m.conv1.b.dims());
        g.conv2_w = Tensor(m.conv2.w.dims());
        g.conv2_b = Tensor(m.conv2.b.dims());
        g.conv3_w = Tensor(m.conv3.w.dims());
        g.conv3_b = Tensor(m.conv3.b.dims());
        g.conv4_w = Tensor(m.conv4.w.dims());
        g.conv4_b = Tensor(m.conv4.b.dims());
        g.gci_expand_w = Tensor(m.gci.expand_w.dims());
        g.gci_expand_b = Tensor(m.gci.expand_b.dims());
        g.gci_project_w = Tensor(m.gci.project_w.dims());
        g.gci_project_b = Tensor(m.gci.project_b.dims());
        g.head_w = Tensor(m.head.w.dims());
        g.head_b = Tensor(m.head.b.dims());
        return g;
    }
};

template <typename Fn>
inline void for_each_param(ToyModel& m, ModelGrads& g, ModelGrads& v, Fn&& fn) {
    fn(m.conv1.w, g.conv1_w, v.conv1_w);
    fn(m.conv1.b, g.conv1_b, v.conv1_b);
    fn(m.conv2.w, g.conv2_w, v.conv2_w);
    fn(m.conv2.b, g.conv2_b, v.conv2_b);
    fn(m.conv3.w, g.conv3_w, v.conv3_w);
    fn(m.conv3.b, g.conv3_b, v.conv3_b);
    fn(m.conv4.w, g.conv4_w, v.conv4_w);
    fn(m.conv4.b, g.conv4_b, v.conv4_b);
    fn(m.gci.expand_w, g.gci_expand_w, v.gci_expand_w);
    fn(m.gci.expand_b, g.gci_expand_b, v.gci_expand_b);
    fn(m.gci.project_w, g.gci_project_w, v.gci_project_w);
    fn(m.gci.project_b, g.gci_project_b, v.gci_project_b);
    fn(m.head.w, g.head_w, v.head_w);
    fn(m.head.b, g.head_b, v.head_b);
}

/// Forward pass. Training mode draws the gate's Bernoulli mask from `rng`
/// unless a fixed realisation is supplied (used by gradient checks).
inline ModelForward model_forward(const ToyModel& m, const Tensor& image, bool training,
                                  Rng* rng = nullptr, const Tensor* fixed_gate_r = nullptr) {
    ModelForward f;
    f.a1_pre = m.conv1.forward(image);
    f.a1 = relu(f.a1_pre);
    f.a2_pre = m.conv2.forward(f.a1);
    f.xs = relu(f.a2_pre);
    f.a3_pre = m.conv3.forward(f.xs);
    f.a3 = relu(f.a3_pre);
    f.a4_pre = m.conv4.forward(f.a3);
    f.xd_low = relu(f.a4_pre);
    f.xd = upsample_nearest(f.xd_low, 2);

    if (m.sg_mode != SgMode::kOff && m.gate.gci_enabled) {
        f.used_gci = true;
        f.gci_fwd = gci_forward(f.xd, f.xs, m.gci);
        f.xs_eff = f.gci_fwd.output;
    } else {
        f.xs_eff = f.xs;
    }

    if (m.sg_mode == SgMode::kOff) {
        f.gated = f.xd;
    } else if (training && m.sg_mode == SgMode::kStochastic) {
        f.stochastic = true;
        if (fixed_gate_r) {
            f.gate_r = *fixed_gate_r;
            f.gated = gate_train_apply(f.xd, f.xs_eff, m.gate, f.gate_r);
        } else {
            detail::check(rng != nullptr, "model_forward: stochastic training needs an rng");
            GateForward gf = gate_train_fwd(f.xd, f.xs_eff, m.gate, *rng);
            f.gate_r = std::move(gf.r);
            f.gated = std::move(gf.output);
        }
    } else {
        f.gated = gate_infer(f.xd, f.xs_eff, m.gate);
    }
    f.scores = m.head.forward(f.gated);
    return f;
}

/// Backward pass; accumulates parameter gradients into `g`.
inline void model_backward(const ToyModel& m, const Tensor& image, const ModelForward& f,
                           const Tensor& grad_scores, ModelGrads& g) {
    Tensor d_gated = m.head.backward(f.gated, grad_scores, g.head_w, g.head_b);

    Tensor d_xd, d_xs_eff;
    if (m.sg_mode == SgMode::kOff) {
        d_xd = std::move(d_gated);
        d_xs_eff = Tensor(f.xd.dims());
    } else if (f.stochastic) {
        gate_train_backward(f.gate_r, m.gate, d_gated, d_xd, d_xs_eff);
    } else {
        d_xd = Tensor(d_gated.dims());
        d_xs_eff = Tensor(d_gated.dims());
        for (std::size_t i = 0; i < d_gated.size(); ++i) {
            d_xd[i] = (1.0 - m.gate.psi) * d_gated[i];
            d_xs_eff[i] = m.gate.psi * d_gated[i];
        }
    }

    Tensor d_xs;
    if (f.used_gci) {
        GciGrads gg = gci_backward(f.gci_fwd, f.xd, f.xs, m.gci, d_xs_eff);
        for (std::size_t i = 0; i < d_xd.size(); ++i) d_xd[i] += gg.d_xd[i];
        d_xs = std::move(gg.d_xs);
        for (std::size_t i = 0; i < g.gci_expand_w.size(); ++i)
            g.gci_expand_w[i] += gg.d_params.expand_w[i];
        for (std::size_t i = 0; i < g.gci_expand_b.size(); ++i)
            g.gci_expand_b[i] += gg.d_params.expand_b[i];
        for (std::size_t i = 0; i < g.gci_project_w.size(); ++i)
            g.gci_project_w[i] += gg.d_params.project_w[i];
        for (std::size_t i = 0; i < g.gci_project_b.size(); ++i)
            g.gci_project_b[i] += gg.d_params.project_b[i];
    } else {
        d_xs = std::move(d_xs_eff);
    }

    Tensor d_xd_low = upsample_nearest_backward(d_xd, 2);
    Tensor d4 = relu_backward(f.a4_pre, d_xd_low);
    Tensor d_a3 = m.conv4.backward(f.a3, d4, g.conv4_w, g.conv4_b);
    Tensor d3 = relu_backward(f.a3_pre, d_a3);
    Tensor d_xs2 = m.conv3.backward(f.xs, d3, g.conv3_w, g.conv3_b);
    for (std::size_t i = 0; i < d_xs.size(); ++i) d_xs[i] += d_xs2[i];
    Tensor d2 = relu_backward(f.a2_pre, d_xs);
    Tensor d_a1 = m.conv2.backward(f.a1, d2, g.conv2_w, g.conv2_b);
    Tensor d1 = relu_backward(f.a1_pre, d_a1);
    m.conv1.backward(image, d1, g.conv1_w, g.conv1_b);
}

// ---------------------------------------------------------------------------
// Prediction and evaluation

struct Prediction {
    Tensor mask;              // (C+1) x S x S, pruned channels zeroed
    std::vector<int> labels;  // argmax labels at image resolution
    Tensor class_scores;      // aggregated y_c, length C
};

/// Inference: deterministic gate, aggregated class scores for pruning, and
/// the pruned full-resolution mask. Classes whose sigmoid classification
/// confidence falls below prune_threshold have their channels zeroed before
/// the argmax.
inline Prediction predict(const ToyModel& m, const Tensor& image, const TrainConfig& cfg) {
    const ModelForward f = model_forward(m, image, /*training=*/false);
    const Tensor m_half = build_mask_probs(f.scores, cfg.ngwp);
    Prediction pred;
    pred.class_scores = classification_scores(m_half, f.scores, cfg.ngwp, cfg.focal);

    const Tensor s_full = upsample_nearest(f.scores, 2);
    pred.mask = build_mask_probs(s_full, cfg.ngwp);
    const std::size_t plane = pred.mask.dim(1) * pred.mask.dim(2);
    for (std::size_t c = 0; c < m.n_classes; ++c)
        if (detail::sigmoid(pred.class_scores[c]) < cfg.prune_threshold)
            std::fill(pred.mask.begin() + (c + 1) * plane, pred.mask.begin() + (c + 2) * plane,
                      0.0);

    pred.labels.assign(plane, 0);
    for (std::size_t p = 0; p < plane; ++p) {
        double best = pred.mask[p];
        int arg = 0;
        for (std::size_t c = 1; c <= m.n_classes; ++c)
            if (pred.mask[c * plane + p] > best) {
                best = pred.mask[c * plane + p];
                arg = static_cast<int>(c);
            }
        pred.labels[p] = arg;
    }
    return pred;
}

/// Split-level IoU: intersections and unions are accumulated over all
/// images; classes absent from both predictions and ground truth are
/// reported as -1 and skipped from the mean.
inline Metrics eval_iou(const std::vector<std::vector<int>>& predictions,
                        const std::vector<std::vector<int>>& gt_masks, std::size_t n_classes) {
    detail::check(predictions.size() == gt_masks.size() && !predictions.empty(),
                  "eval_iou: prediction/ground-truth count mismatch");
    std::vector<double> inter(n_classes + 1, 0.0), uni(n_classes + 1, 0.0);
    for (std::size_t s = 0; s < predictions.size(); ++s) {
        detail::check(predictions[s].size() == gt_masks[s].size(),
                      "eval_iou: label map size mismatch");
        for (std::size_t p = 0; p < predictions[s].size(); ++p) {
            const int a = predictions[s][p], b = gt_masks[s][p];
            if (a == b) {
                inter[static_cast<std::size_t>(a)] += 1.0;
                uni[static_cast<std::size_t>(a)] += 1.0;
            } else {
                uni[static_cast<std::size_t>(a)] += 1.0;
                uni[static_cast<std::size_t>(b)] += 1.0;
            }
        }
    }
    Metrics metrics;
    metrics.per_class_iou.assign(n_classes + 1, -1.0);
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c <= n_classes; ++c) {
        if (uni[c] == 0.0) continue;
        metrics.per_class_iou[c] = inter[c] / uni[c];
        sum += metrics.per_class_iou[c];
        ++counted;
    }
    metrics.mean_iou = counted ? sum / static_cast<double>(counted) : 0.0;
    return metrics;
}

namespace detail {

inline Metrics evaluate_split(const ToyModel& model, const std::vector<ToySample>& split,
                              const TrainConfig& cfg) {
    std::vector<std::vector<int>> preds, gts;
    preds.reserve(split.size());
    gts.reserve(split.size());
    double correct = 0.0, total = 0.0;
    for (const ToySample& sample : split) {
        const Prediction p = predict(model, sample.image, cfg);
        preds.push_back(p.labels);
        gts.push_back(sample.gt_mask);
        for (std::size_t c = 0; c < sample.labels.num_classes(); ++c) {
            const bool said_present = sigmoid(p.class_scores[c]) > 0.5;
            correct += said_present == sample.labels.present(c) ? 1.0 : 0.0;
            total += 1.0;
        }
    }
    const std::size_t n_classes = split.front().labels.num_classes();
    Metrics m = eval_iou(preds, gts, n_classes);
    m.classification_accuracy = total > 0.0 ? correct / total : 0.0;
    return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Two-phase training

struct TrainResult {
    ToyModel model;
    Metrics metrics;
};

/// Two-phase schedule: classification-only warmup, then the self-supervised
/// segmentation loss against PAMR-refined pseudo ground truth, recomputed
/// from the current predictions at every step. Deterministic for a given
/// dataset, config and rng seed.
inline TrainResult train(const ToyDataset& ds, const TrainConfig& cfg, Rng& rng) {
    cfg.validate();
    detail::check(!ds.train.empty(), "train: empty training split");

    ToyModel model = ToyModel::init(ds.n_classes, cfg.gate, cfg.sg_mode, rng);
    ModelGrads velocity = ModelGrads::zeros_like(model);
    Metrics metrics;

    // appearance affinities depend only on the image; cache per sample
    std::vector<AffinityField> aff_cache(ds.train.size());
    std::vector<AffinityField> aff_cache_flip(ds.train.size());
    std::vector<bool> aff_ready(ds.train.size(), false);
    auto affinity_for = [&](std::size_t idx, bool flipped) -> const AffinityField& {
        if (!aff_ready[idx]) {
            aff_cache[idx] = affinity(ds.train[idx].image, cfg.pamr);
            aff_cache_flip[idx] = flip_affinity_horizontal(aff_cache[idx]);
            aff_ready[idx] = true;
        }
        return flipped ? aff_cache_flip[idx] : aff_cache[idx];
    };

    std::vector<std::size_t> order(ds.train.size());
    std::iota(order.begin(), order.end(), 0);

    const std::size_t batch_size = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 0; epoch < cfg.epochs_total; ++epoch) {
        const bool seg_phase = epoch >= cfg.epochs_phase1;

        // Fisher-Yates shuffle
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(rng.next_below(i));
            std::swap(order[i - 1], order[j]);
        }

        double cls_sum = 0.0, seg_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t end = std::min(start + batch_size, order.size());
            const std::size_t bsz = end - start;

            std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
            std::vector<bool> flipped(bsz, false);
            std::vector<Tensor> images(bsz);
            for (std::size_t b = 0; b < bsz; ++b) {
                flipped[b] = cfg.augment_flip && rng.next_double() < 0.5;
                images[b] =
                    flipped[b] ? flip_horizontal(ds.train[idx[b]].image) : ds.train[idx[b]].image;
            }

            std::vector<ModelForward> fwd(bsz);
            for (std::size_t b = 0; b < bsz; ++b)
                fwd[b] = model_forward(model, images[b], /*training=*/true, &rng);

            // classification loss (mean over the batch)
            std::vector<Tensor> grad_scores(bsz);
            double batch_cls = 0.0;
            for (std::size_t b = 0; b < bsz; ++b) {
                LossValue lv = classification_loss_from_scores(
                    fwd[b].scores, ds.train[idx[b]].labels, cfg.ngwp, cfg.focal);
                batch_cls += lv.value;
                grad_scores[b] = std::move(lv.grad);
                for (auto& v : grad_scores[b]) v /= static_cast<double>(bsz);
            }
            batch_cls /= static_cast<double>(bsz);

            double batch_seg = 0.0;
            if (seg_phase) {
                // pseudo ground truth from the current (refined) predictions
                std::vector<Tensor> scores_full(bsz);
                std::vector<PseudoLabels> pseudo(bsz);
                for (std::size_t b = 0; b < bsz; ++b) {
                    scores_full[b] = upsample_nearest(fwd[b].scores, 2);
                    const Tensor mask_full = build_mask_probs(scores_full[b], cfg.ngwp);
                    const Tensor refined =
                        refine(mask_full, affinity_for(idx[b], flipped[b]), cfg.pamr.iterations);
                    pseudo[b] = extract_pseudo_gt(refined, ds.train[idx[b]].labels,
                                                  cfg.fg_threshold, cfg.bg_threshold);
                }
                BatchLossValue seg = seg_loss_from_scores(scores_full, pseudo, cfg.ngwp);
                batch_seg = seg.value;
                for (std::size_t b = 0; b < bsz; ++b) {
                    const Tensor g_half = upsample_nearest_backward(seg.grad[b], 2);
                    for (std::size_t i = 0; i < g_half.size(); ++i)
                        grad_scores[b][i] += g_half[i];
                }
            }

            if (!std::isfinite(batch_cls) || !std::isfinite(batch_seg))
                throw std::runtime_error("train: loss diverged at epoch " +
                                         std::to_string(epoch) + ", batch " +
                                         std::to_string(start / batch_size));

            ModelGrads grads = ModelGrads::zeros_like(model);
            for (std::size_t b = 0; b < bsz; ++b)
                model_backward(model, images[b], fwd[b], grad_scores[b], grads);

            for_each_param(model, grads, velocity, [&](Tensor& p, Tensor& g, Tensor& v) {
                for (std::size_t i = 0; i < p.size(); ++i) {
                    v[i] = cfg.momentum * v[i] - cfg.learning_rate * g[i];
                    p[i] += v[i];
                }
            });

            cls_sum += batch_cls;
            seg_sum += batch_seg;
            ++n_batches;
        }

        metrics.cls_loss_curve.push_back(cls_sum / static_cast<double>(n_batches));
        metrics.seg_loss_curve.push_back(seg_phase ? seg_sum / static_cast<double>(n_batches)
                                                   : 0.0);

        if (epoch + 1 == cfg.epochs_phase1)
            metrics.phase1_mean_iou = detail::evaluate_split(model, ds.val, cfg).mean_iou;
    }

    const Metrics final_eval = detail::evaluate_split(model, ds.val, cfg);
    metrics.per_class_iou = final_eval.per_class_iou;
    metrics.mean_iou = final_eval.mean_iou;
    metrics.classification_accuracy = final_eval.classification_accuracy;
    if (cfg.epochs_total < cfg.epochs_phase1) metrics.phase1_mean_iou = metrics.mean_iou;

    return TrainResult{std::move(model), std::move(metrics)};
}

}  // namespace wseg
