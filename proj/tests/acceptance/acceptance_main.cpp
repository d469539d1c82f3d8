// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria are pinned to fixed tolerances and seeds; the end-to-end
// run uses the default hyperparameters throughout.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "wseg/gate.hpp"
#include "wseg/json_io.hpp"
#include "wseg/losses.hpp"
#include "wseg/pamr.hpp"
#include "wseg/rng.hpp"
#include "wseg/scores.hpp"
#include "wseg/toytrain.hpp"

using wseg::kIgnoreLabel;
using wseg::LabelVector;
using wseg::NgwpConfig;
using wseg::PseudoLabels;
using wseg::Rng;
using wseg::Tensor;

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---------------------------------------------------------------------------
// criterion 1: gradient suite

bool criterion_gradients(std::string& detail) {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(2026);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t c = 1 + rng.next_below(8);
        const std::size_t h = 2 + rng.next_below(7), w = 2 + rng.next_below(7);  // <= 8x8

        // multilabel soft-margin on a random score vector
        Tensor y(std::vector<std::size_t>{c});
        std::vector<int> z(c);
        for (std::size_t i = 0; i < c; ++i) {
            y[i] = rng.uniform(-4.0, 4.0);
            z[i] = rng.next_double() < 0.5;
        }
        const LabelVector labels(z);
        worst = std::max(worst, wseg::gradcheck([&](const Tensor& x) {
            return wseg::multilabel_softmargin(x, labels);
        }, y));

        // weighted segmentation loss through build_mask_probs
        Tensor s(std::vector<std::size_t>{c, h, w});
        for (auto& v : s) v = rng.uniform(-2.0, 2.0);
        std::vector<int> pl_labels(h * w);
        for (auto& v : pl_labels) {
            const double u = rng.next_double();
            v = u < 0.2 ? kIgnoreLabel : static_cast<int>(rng.next_below(c + 1));
        }
        const PseudoLabels pseudo(h, w, pl_labels, c + 1, true);
        const NgwpConfig ncfg;
        worst = std::max(worst, wseg::gradcheck([&](const Tensor& x) {
            wseg::BatchLossValue b = wseg::seg_loss_from_scores({x}, {pseudo}, ncfg);
            return wseg::LossValue{b.value, b.grad.at(0)};
        }, s));

        // full classification composite (nGWP + focal + soft-margin)
        std::vector<int> z2(c, 0);
        z2[rng.next_below(c)] = 1;
        const LabelVector labels2(z2);
        const wseg::FocalConfig fcfg;
        worst = std::max(worst, wseg::gradcheck([&](const Tensor& x) {
            return wseg::classification_loss_from_scores(x, labels2, ncfg, fcfg);
        }, s));
    }
    const double elapsed = seconds_since(start);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "max rel err %.3g, %.1f s", worst, elapsed);
    detail = buf;
    return worst < 1e-4 && elapsed < 30.0;
}

// ---------------------------------------------------------------------------
// criterion 2: Lemma 1

bool criterion_lemma1(std::string& detail) {
    Rng rng(5);
    const double t = 1e-6;
    double worst_diff = 0.0, worst_mag = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t h = 2 + rng.next_below(4), w = 2 + rng.next_below(4);
        Tensor scores(std::vector<std::size_t>{1, h, w});
        for (auto& v : scores) v = rng.uniform(-1.0, 1.0);
        std::size_t k = rng.next_below(h * w), l = rng.next_below(h * w);
        while (l == k) l = rng.next_below(h * w);

        Tensor mask_k(std::vector<std::size_t>{2, h, w});
        mask_k[h * w + k] = t;
        Tensor mask_l(std::vector<std::size_t>{2, h, w});
        mask_l[h * w + l] = t;

        const NgwpConfig eps0 = NgwpConfig::unchecked_epsilon_for_tests(0.0);
        const double yk = wseg::ngwp(mask_k, scores, eps0)[0];
        const double yl = wseg::ngwp(mask_l, scores, eps0)[0];
        const double want = std::abs(scores[k] - scores[l]);
        worst_diff = std::max(worst_diff, std::abs(std::abs(yk - yl) - want));

        const NgwpConfig eps1;
        worst_mag = std::max(worst_mag, std::abs(wseg::ngwp(mask_k, scores, eps1)[0]));
        worst_mag = std::max(worst_mag, std::abs(wseg::ngwp(mask_l, scores, eps1)[0]));
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf), "path diff err %.3g, eps=1 magnitude %.3g (t=1e-6)",
                  worst_diff, worst_mag);
    detail = buf;
    // with |y| <= 1 the eps=1 value is t*y/(1+t): magnitude below 1e-5 and linear in t
    return worst_diff < 1e-6 && worst_mag < 1e-5 && worst_mag <= t;
}

// ---------------------------------------------------------------------------
// criterion 3: PAMR simplex preservation

bool criterion_simplex(std::string& detail) {
    Rng rng(7);
    wseg::PamrConfig cfg;  // dilations [1,2,4,8,12,24], 10 iterations
    double worst_mask = 0.0, worst_aff = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t h = 6 + rng.next_below(9), w = 6 + rng.next_below(9);
        Tensor img(std::vector<std::size_t>{3, h, w});
        for (auto& v : img) v = rng.next_double();
        const std::size_t channels = 2 + rng.next_below(3);
        Tensor logits(std::vector<std::size_t>{channels, h, w});
        for (auto& v : logits) v = rng.uniform(-3.0, 3.0);
        const Tensor mask = wseg::softmax_over_channels(logits);

        const wseg::AffinityField aff = wseg::affinity(img, cfg);
        for (std::size_t p = 0; p < h * w; ++p) {
            double sum = 0.0;
            for (std::size_t n = 0; n < aff.offsets.size(); ++n)
                sum += aff.weights[n * h * w + p];
            worst_aff = std::max(worst_aff, std::abs(sum - 1.0));
        }
        const Tensor refined = wseg::refine(mask, aff, cfg.iterations);
        for (std::size_t p = 0; p < h * w; ++p) {
            double sum = 0.0;
            for (std::size_t c = 0; c < channels; ++c) sum += refined[c * h * w + p];
            worst_mask = std::max(worst_mask, std::abs(sum - 1.0));
        }
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf), "worst mask-sum err %.3g, worst affinity-row err %.3g",
                  worst_mask, worst_aff);
    detail = buf;
    return worst_mask < 1e-9 && worst_aff < 1e-9;
}

// ---------------------------------------------------------------------------
// criterion 4: PAMR oracle equivalence (independent brute-force reference)

double oracle_sigma(const Tensor& img, std::size_t c, long i, long j,
                    const std::vector<int>& dilations, double floor) {
    const long h = static_cast<long>(img.dim(1)), w = static_cast<long>(img.dim(2));
    std::vector<double> vals{img.at(c, i, j)};
    for (int d : dilations)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                if (dy == 0 && dx == 0) continue;
                const long y = i + dy * d, x = j + dx * d;
                if (y < 0 || x < 0 || y >= h || x >= w) continue;
                vals.push_back(img.at(c, y, x));
            }
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= vals.size();
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= vals.size();
    return std::max(std::sqrt(var), floor);
}

Tensor oracle_refine(const Tensor& img, const Tensor& mask, const std::vector<int>& dilations,
                     int iterations, double floor) {
    const long h = static_cast<long>(img.dim(1)), w = static_cast<long>(img.dim(2));
    std::vector<std::pair<int, int>> offsets;
    for (int d : dilations)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                if (dy == 0 && dx == 0) continue;
                offsets.emplace_back(dy * d, dx * d);
            }
    std::vector<std::vector<double>> alpha(static_cast<std::size_t>(h * w),
                                           std::vector<double>(offsets.size(), 0.0));
    for (long i = 0; i < h; ++i)
        for (long j = 0; j < w; ++j) {
            std::vector<double> k(offsets.size(), 0.0);
            std::vector<bool> ok(offsets.size(), false);
            double kmax = -1e300;
            for (std::size_t n = 0; n < offsets.size(); ++n) {
                const long y = i + offsets[n].first, x = j + offsets[n].second;
                if (y < 0 || x < 0 || y >= h || x >= w) continue;
                ok[n] = true;
                double acc = 0.0;
                for (std::size_t c = 0; c < img.dim(0); ++c) {
                    const double s = oracle_sigma(img, c, i, j, dilations, floor);
                    acc += -std::abs(img.at(c, i, j) - img.at(c, y, x)) / (s * s);
                }
                k[n] = acc / static_cast<double>(img.dim(0));
                kmax = std::max(kmax, k[n]);
            }
            double zsum = 0.0;
            for (std::size_t n = 0; n < offsets.size(); ++n)
                if (ok[n]) zsum += std::exp(k[n] - kmax);
            for (std::size_t n = 0; n < offsets.size(); ++n)
                if (ok[n])
                    alpha[static_cast<std::size_t>(i * w + j)][n] = std::exp(k[n] - kmax) / zsum;
        }
    Tensor cur = mask;
    for (int it = 0; it < iterations; ++it) {
        Tensor next(mask.dims());
        for (std::size_t c = 0; c < mask.dim(0); ++c)
            for (long i = 0; i < h; ++i)
                for (long j = 0; j < w; ++j) {
                    double acc = 0.0;
                    for (std::size_t n = 0; n < offsets.size(); ++n) {
                        const long y = i + offsets[n].first, x = j + offsets[n].second;
                        if (y < 0 || x < 0 || y >= h || x >= w) continue;
                        acc += alpha[static_cast<std::size_t>(i * w + j)][n] * cur.at(c, y, x);
                    }
                    next.at(c, static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = acc;
                }
        cur = next;
    }
    return cur;
}

bool criterion_oracle(std::string& detail) {
    wseg::PamrConfig cfg;  // defaults
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(1000 + seed);
        Tensor img(std::vector<std::size_t>{3, 6, 6});
        for (auto& v : img) v = rng.next_double();
        Tensor logits(std::vector<std::size_t>{3, 6, 6});
        for (auto& v : logits) v = rng.uniform(-3.0, 3.0);
        const Tensor mask = wseg::softmax_over_channels(logits);

        const Tensor ours = wseg::refine(mask, wseg::affinity(img, cfg), cfg.iterations);
        const Tensor expect =
            oracle_refine(img, mask, cfg.dilations, cfg.iterations, cfg.sigma_floor);
        for (std::size_t i = 0; i < ours.size(); ++i)
            worst = std::max(worst, std::abs(ours[i] - expect[i]));
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "max abs deviation %.3g over 50 seeds", worst);
    detail = buf;
    return worst < 1e-12;
}

// ---------------------------------------------------------------------------
// criterion 5: boundary snap

bool criterion_boundary_snap(std::string& detail) {
    Rng rng(11);
    wseg::PamrConfig cfg;
    cfg.dilations = {1, 2, 4, 8};
    const std::size_t h = 24, w = 24;
    int improved = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t split = 8 + rng.next_below(8);
        std::array<double, 3> left, right;
        for (auto& v : left) v = rng.uniform(0.0, 0.35);
        for (auto& v : right) v = rng.uniform(0.65, 1.0);
        Tensor img(std::vector<std::size_t>{3, h, w});
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    img.at(c, i, j) = std::clamp(
                        (j < split ? left[c] : right[c]) + rng.uniform(-0.02, 0.02), 0.0, 1.0);

        const long offset = trial % 2 ? 2 : -2;
        Tensor mask(std::vector<std::size_t>{2, h, w});
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                const bool fg = static_cast<long>(j) < static_cast<long>(split) + offset;
                mask.at(0, i, j) = fg ? 0.1 : 0.9;
                mask.at(1, i, j) = fg ? 0.9 : 0.1;
            }
        auto mislabeled = [&](const Tensor& m) {
            int errs = 0;
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j) {
                    const int arg = m.at(1, i, j) > m.at(0, i, j) ? 1 : 0;
                    errs += arg != (j < split ? 1 : 0);
                }
            return errs;
        };
        const Tensor refined = wseg::refine(mask, wseg::affinity(img, cfg), 10);
        if (mislabeled(refined) < mislabeled(mask)) ++improved;
    }
    detail = std::to_string(improved) + "/20 cases improved";
    return improved >= 19;
}

// ---------------------------------------------------------------------------
// criterion 6: stochastic gate expectation

bool criterion_gate_expectation(std::string& detail) {
    std::string parts;
    bool ok = true;
    for (double psi : {0.3, 0.5}) {
        Rng rng(17);
        Tensor xd(std::vector<std::size_t>{4, 5, 5}), xs(std::vector<std::size_t>{4, 5, 5});
        for (auto& v : xd) v = rng.uniform(-2.0, 2.0);
        for (auto& v : xs) v = rng.uniform(-2.0, 2.0);
        wseg::GateConfig cfg;
        cfg.psi = psi;

        const int n = 100000;
        Tensor sum(xd.dims());
        for (int i = 0; i < n; ++i) {
            const Tensor out = wseg::gate_train(xd, xs, cfg, rng);
            for (std::size_t e = 0; e < sum.size(); ++e) sum[e] += out[e];
        }
        const double delta = 1.0 / (1.0 - psi);
        std::size_t within = 0;
        for (std::size_t e = 0; e < sum.size(); ++e) {
            const double mean = sum[e] / n;
            const double v0 = delta * (xd[e] - psi * xs[e]);
            const double sigma = std::sqrt(psi * (1.0 - psi)) * std::abs(v0 - xs[e]);
            if (std::abs(mean - xd[e]) <= 4.0 * sigma / std::sqrt(double(n)) + 1e-12) ++within;
        }
        const double frac = static_cast<double>(within) / static_cast<double>(sum.size());
        char buf[64];
        std::snprintf(buf, sizeof(buf), "psi=%.1f: %.1f%% within 4 SE  ", psi, 100.0 * frac);
        parts += buf;
        ok = ok && frac >= 0.99;
    }
    detail = parts;
    return ok;
}

// ---------------------------------------------------------------------------
// criteria 7 and 8: end-to-end toy runs

struct ToyOutcome {
    double final_iou = 0.0;
    double phase1_iou = 0.0;
    std::string metrics_json;
};

ToyOutcome run_toy(std::uint64_t seed, bool disable_pamr, bool disable_sg) {
    wseg::ToyDatasetConfig dcfg;
    dcfg.n_images = 120;
    dcfg.seed = 100 + seed;
    const wseg::ToyDataset ds = wseg::gen_dataset(dcfg);

    wseg::TrainConfig cfg;  // paper defaults: psi=0.3 + GCI, p=3, lambda=0.01,
                            // dilations [1,2,4,8,12,24], 10 iters, thresholds 0.6/0.7
    cfg.seed = seed;
    if (disable_pamr) cfg.pamr.iterations = 0;
    if (disable_sg) cfg.sg_mode = wseg::SgMode::kOff;

    Rng rng(cfg.seed);
    const wseg::TrainResult result = wseg::train(ds, cfg, rng);
    ToyOutcome out;
    out.final_iou = result.metrics.mean_iou;
    out.phase1_iou = result.metrics.phase1_mean_iou;
    out.metrics_json = wseg::metrics_to_json(result.metrics).dump(2);
    return out;
}

bool criterion_end_to_end(std::string& detail, std::vector<ToyOutcome>& defaults_out) {
    const auto start = std::chrono::steady_clock::now();
    const std::vector<std::uint64_t> seeds = {1, 2, 3};

    int gain_ok = 0, pamr_ok = 0, sg_ok = 0;
    std::string parts;
    for (std::uint64_t seed : seeds) {
        const ToyOutcome def = run_toy(seed, false, false);
        const ToyOutcome no_pamr = run_toy(seed, true, false);
        const ToyOutcome no_sg = run_toy(seed, false, true);
        defaults_out.push_back(def);

        gain_ok += def.final_iou >= def.phase1_iou + 0.10;
        pamr_ok += no_pamr.final_iou < def.final_iou;
        sg_ok += no_sg.final_iou < def.final_iou;

        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "\n    seed %llu: default %.3f (phase1 %.3f), no-PAMR %.3f, no-SG %.3f",
                      static_cast<unsigned long long>(seed), def.final_iou, def.phase1_iou,
                      no_pamr.final_iou, no_sg.final_iou);
        parts += buf;
    }
    const double elapsed = seconds_since(start);
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "gain>=0.10 on %d/3, no-PAMR worse on %d/3, no-SG worse on %d/3, %.0f s",
                  gain_ok, pamr_ok, sg_ok, elapsed);
    detail = std::string(buf) + parts;
    return gain_ok >= 2 && pamr_ok >= 2 && sg_ok >= 2 && elapsed < 600.0;
}

bool criterion_determinism(std::string& detail, const std::vector<ToyOutcome>& defaults) {
    if (defaults.empty()) {
        detail = "skipped (criterion 7 did not run)";
        return false;
    }
    const ToyOutcome again = run_toy(1, false, false);
    const bool ok = again.metrics_json == defaults.front().metrics_json;
    detail = ok ? "metrics JSON bit-identical across reruns" : "metrics JSON differs";
    return ok;
}

}  // namespace

int main() {
    int failures = 0;
    std::vector<ToyOutcome> defaults;

    struct Criterion {
        const char* name;
        std::function<bool(std::string&)> run;
    };
    const std::vector<Criterion> criteria = {
        {"1 gradient suite (<1e-4, <30 s)", criterion_gradients},
        {"2 Lemma-1 epsilon analysis", criterion_lemma1},
        {"3 PAMR simplex preservation (1000 pairs)", criterion_simplex},
        {"4 PAMR brute-force oracle equivalence (50 seeds)", criterion_oracle},
        {"5 boundary snap (>=19/20)", criterion_boundary_snap},
        {"6 stochastic gate expectation", criterion_gate_expectation},
        {"7 end-to-end toy pipeline + ablations",
         [&](std::string& d) { return criterion_end_to_end(d, defaults); }},
        {"8 determinism of metrics JSON",
         [&](std::string& d) { return criterion_determinism(d, defaults); }},
    };

    for (const auto& c : criteria) {
        std::string detail;
        bool ok = false;
        try {
            ok = c.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        std::printf("[%s] criterion %s: %s\n", ok ? "PASS" : "FAIL", c.name, detail.c_str());
        std::fflush(stdout);
        failures += !ok;
    }
    if (failures) std::printf("%d criterion(s) failed\n", failures);
    return failures ? 1 : 0;
}
