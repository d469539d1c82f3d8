// Command-line surface for the library: PAMR refinement of images,
// toy training, IoU evaluation, and analytic-gradient checks.
//
// Exit codes: 0 success, 1 threshold failure, 2 malformed input.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "wseg/json_io.hpp"
#include "wseg/losses.hpp"
#include "wseg/pamr.hpp"
#include "wseg/png_io.hpp"
#include "wseg/tnsr_io.hpp"
#include "wseg/toytrain.hpp"

namespace fs = std::filesystem;

namespace {

constexpr double kGradcheckTolerance = 1e-4;

std::vector<int> argmax_labels(const wseg::Tensor& mask) {
    const std::size_t plane = mask.dim(1) * mask.dim(2);
    std::vector<int> labels(plane, 0);
    for (std::size_t p = 0; p < plane; ++p) {
        double best = mask[p];
        int arg = 0;
        for (std::size_t c = 1; c < mask.dim(0); ++c)
            if (mask[c * plane + p] > best) {
                best = mask[c * plane + p];
                arg = static_cast<int>(c);
            }
        labels[p] = arg;
    }
    return labels;
}

wseg::Tensor labels_to_tensor(const std::vector<int>& labels, std::size_t h, std::size_t w) {
    std::vector<double> data(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) data[i] = static_cast<double>(labels[i]);
    return wseg::Tensor::from_data({h, w}, std::move(data));
}

std::vector<int> tensor_to_labels(const wseg::Tensor& t, const std::string& origin) {
    std::vector<int> labels;
    const wseg::Tensor* src = &t;
    wseg::Tensor squeezed;
    if (t.rank() == 3) {
        labels = argmax_labels(t);
        return labels;
    }
    if (t.rank() != 2)
        throw std::runtime_error("'" + origin + "': expected a rank-2 label map or rank-3 mask");
    labels.reserve(src->size());
    for (std::size_t i = 0; i < src->size(); ++i) {
        const double v = (*src)[i];
        const int lab = static_cast<int>(std::lround(v));
        if (std::abs(v - lab) > 1e-3 || lab < 0 || lab > 255)
            throw std::runtime_error("'" + origin + "': non-integral or out-of-range label " +
                                     std::to_string(v));
        labels.push_back(lab);
    }
    return labels;
}

int cmd_refine(const std::string& image_path, const std::string& scores_path,
               const std::vector<int>& dilations, int iters, double sigma_floor, double bg_score,
               const std::string& out_path, const std::string& png_path) {
    const wseg::Tensor image = wseg::read_png_rgb(image_path);
    const wseg::Tensor scores = wseg::tnsr_load(scores_path);
    if (scores.rank() != 3)
        throw std::runtime_error("'" + scores_path + "': scores must be rank-3 (C x h x w), got " +
                                 wseg::detail::dims_str(scores.dims()));

    wseg::PamrConfig pamr_cfg;
    pamr_cfg.dilations = dilations;
    pamr_cfg.iterations = iters;
    pamr_cfg.sigma_floor = sigma_floor;
    pamr_cfg.validate();

    wseg::NgwpConfig ncfg;
    ncfg.bg_score = bg_score;

    const wseg::Tensor scores_full = wseg::resize_nearest(scores, image.dim(1), image.dim(2));
    const wseg::Tensor mask = wseg::build_mask_probs(scores_full, ncfg);
    const wseg::AffinityField aff = wseg::affinity(image, pamr_cfg);
    const wseg::Tensor refined = wseg::refine(mask, aff, pamr_cfg.iterations);

    wseg::tnsr_save(refined, out_path);
    if (!png_path.empty())
        wseg::write_indexed_png(png_path, argmax_labels(refined), refined.dim(1),
                                refined.dim(2));
    std::cout << "refined " << wseg::detail::dims_str(refined.dims()) << " mask -> " << out_path
              << "\n";
    return 0;
}

int cmd_train_toy(const std::string& config_path, const std::string& out_dir,
                  std::uint64_t seed_override, bool has_seed_override) {
    std::string text = "{}";
    if (!config_path.empty()) {
        std::ifstream f(config_path);
        if (!f) throw std::runtime_error("cannot open config '" + config_path + "'");
        text.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    }
    wseg::RunConfig cfg = wseg::parse_run_config(text, config_path.empty() ? "<defaults>"
                                                                           : config_path);
    if (has_seed_override) cfg.train.seed = seed_override;

    const wseg::ToyDataset ds = wseg::gen_dataset(cfg.dataset);
    wseg::Rng rng(cfg.train.seed);
    wseg::TrainResult result = wseg::train(ds, cfg.train, rng);

    fs::create_directories(fs::path(out_dir) / "pred");
    fs::create_directories(fs::path(out_dir) / "gt");
    fs::create_directories(fs::path(out_dir) / "pred_png");

    const std::size_t s = ds.image_size;
    for (std::size_t i = 0; i < ds.val.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "val_%03zu", i);
        const wseg::Prediction p = wseg::predict(result.model, ds.val[i].image, cfg.train);
        wseg::tnsr_save(labels_to_tensor(p.labels, s, s),
                        (fs::path(out_dir) / "pred" / (std::string(name) + ".tnsr")).string());
        wseg::tnsr_save(labels_to_tensor(ds.val[i].gt_mask, s, s),
                        (fs::path(out_dir) / "gt" / (std::string(name) + ".tnsr")).string());
        wseg::write_indexed_png(
            (fs::path(out_dir) / "pred_png" / (std::string(name) + ".png")).string(), p.labels,
            s, s);
    }

    const std::string metrics_path = (fs::path(out_dir) / "metrics.json").string();
    std::ofstream mf(metrics_path, std::ios::trunc);
    if (!mf) throw std::runtime_error("cannot write '" + metrics_path + "'");
    mf << wseg::metrics_to_json(result.metrics).dump(2) << "\n";

    std::cout << "mean IoU " << result.metrics.mean_iou << " (phase-1 "
              << result.metrics.phase1_mean_iou << "), classification accuracy "
              << result.metrics.classification_accuracy << "\n"
              << "metrics written to " << metrics_path << "\n";
    return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir,
             const std::string& out_path) {
    auto list_tnsr = [](const std::string& dir) {
        if (!fs::is_directory(dir))
            throw std::runtime_error("'" + dir + "' is not a directory");
        std::vector<std::string> names;
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.is_regular_file() && entry.path().extension() == ".tnsr")
                names.push_back(entry.path().filename().string());
        std::sort(names.begin(), names.end());
        if (names.empty()) throw std::runtime_error("no .tnsr files in '" + dir + "'");
        return names;
    };

    const std::vector<std::string> names = list_tnsr(pred_dir);
    std::vector<std::vector<int>> preds, gts;
    int max_label = 0;
    for (const std::string& name : names) {
        const std::string pred_path = (fs::path(pred_dir) / name).string();
        const std::string gt_path = (fs::path(gt_dir) / name).string();
        if (!fs::exists(gt_path))
            throw std::runtime_error("missing ground truth '" + gt_path + "' for '" + name + "'");
        preds.push_back(tensor_to_labels(wseg::tnsr_load(pred_path), pred_path));
        gts.push_back(tensor_to_labels(wseg::tnsr_load(gt_path), gt_path));
        for (int v : preds.back()) max_label = std::max(max_label, v);
        for (int v : gts.back()) max_label = std::max(max_label, v);
    }

    const wseg::Metrics metrics =
        wseg::eval_iou(preds, gts, static_cast<std::size_t>(max_label));
    std::cout << "images evaluated: " << preds.size() << "\n";
    for (std::size_t c = 0; c < metrics.per_class_iou.size(); ++c) {
        if (metrics.per_class_iou[c] < 0.0)
            std::cout << "  class " << c << ": skipped (absent everywhere)\n";
        else
            std::cout << "  class " << c << ": IoU " << metrics.per_class_iou[c] << "\n";
    }
    std::cout << "mean IoU: " << metrics.mean_iou << "\n";

    if (!out_path.empty()) {
        std::ofstream f(out_path, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write '" + out_path + "'");
        f << wseg::metrics_to_json(metrics).dump(2) << "\n";
    }
    return 0;
}

int cmd_gradcheck(const std::string& op, std::uint64_t seed) {
    wseg::Rng rng(seed);
    double err = 0.0;

    if (op == "softmargin") {
        const std::size_t c = 8;
        wseg::Tensor y(std::vector<std::size_t>{c});
        std::vector<int> z(c);
        for (auto& v : y) v = rng.uniform(-3.0, 3.0);
        for (auto& v : z) v = rng.next_double() < 0.5 ? 1 : 0;
        const wseg::LabelVector labels(z);
        err = wseg::gradcheck(
            [&](const wseg::Tensor& x) { return wseg::multilabel_softmargin(x, labels); }, y);
    } else if (op == "classification") {
        wseg::Tensor s(std::vector<std::size_t>{3, 5, 5});
        for (auto& v : s) v = rng.uniform(-2.0, 2.0);
        const wseg::LabelVector labels(std::vector<int>{1, 0, 1});
        const wseg::NgwpConfig ncfg;
        const wseg::FocalConfig fcfg;
        err = wseg::gradcheck(
            [&](const wseg::Tensor& x) {
                return wseg::classification_loss_from_scores(x, labels, ncfg, fcfg);
            },
            s);
    } else if (op == "segloss") {
        const std::size_t n_classes = 3, h = 6, w = 6;
        wseg::Tensor s(std::vector<std::size_t>{n_classes, h, w});
        for (auto& v : s) v = rng.uniform(-2.0, 2.0);
        std::vector<int> labels(h * w);
        for (auto& v : labels) {
            const double u = rng.next_double();
            v = u < 0.2 ? wseg::kIgnoreLabel
                        : static_cast<int>(rng.next_below(n_classes + 1));
        }
        const wseg::PseudoLabels pseudo(h, w, labels, n_classes + 1, true);
        const wseg::NgwpConfig ncfg;
        err = wseg::gradcheck(
            [&](const wseg::Tensor& x) {
                wseg::BatchLossValue b = wseg::seg_loss_from_scores({x}, {pseudo}, ncfg);
                return wseg::LossValue{b.value, b.grad.at(0)};
            },
            s);
    } else {
        throw std::runtime_error("unknown gradcheck op '" + op +
                                 "' (expected softmargin, classification or segloss)");
    }

    std::cout << "gradcheck " << op << ": max relative error " << err << " (tolerance "
              << kGradcheckTolerance << ")\n";
    return err < kGradcheckTolerance ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"weakly supervised segmentation toolkit"};
    app.require_subcommand(1);

    // refine
    auto* refine = app.add_subcommand("refine", "PAMR-refine score maps against an image");
    std::string image_path, scores_path, out_path, png_path;
    std::vector<int> dilations = {1, 2, 4, 8, 12, 24};
    int iters = 10;
    double sigma_floor = 1e-3, bg_score = 1.0;
    refine->add_option("--image", image_path, "input RGB PNG")->required();
    refine->add_option("--scores", scores_path, "class score maps, TNSR C x h x w")->required();
    refine->add_option("--dilations", dilations, "affinity kernel dilations");
    refine->add_option("--iters", iters, "refinement iterations");
    refine->add_option("--sigma-floor", sigma_floor, "lower bound for the local std");
    refine->add_option("--bg-score", bg_score, "constant background logit");
    refine->add_option("--out", out_path, "output TNSR for the refined mask")->required();
    refine->add_option("--png", png_path, "optional indexed-PNG argmax visualization");

    // train-toy
    auto* train = app.add_subcommand("train-toy", "two-phase training on the synthetic dataset");
    std::string config_path, out_dir;
    std::uint64_t seed_override = 0;
    train->add_option("--config", config_path, "run config JSON (defaults when omitted)");
    train->add_option("--out-dir", out_dir, "output directory")->required();
    auto* seed_opt = train->add_option("--seed", seed_override, "override the training seed");

    // eval
    auto* eval = app.add_subcommand("eval", "IoU between prediction and ground-truth label maps");
    std::string pred_dir, gt_dir, eval_out;
    eval->add_option("--pred", pred_dir, "directory of predicted .tnsr label maps")->required();
    eval->add_option("--gt", gt_dir, "directory of ground-truth .tnsr label maps")->required();
    eval->add_option("--out", eval_out, "optional metrics JSON path");

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of a loss gradient");
    std::string op;
    std::uint64_t gc_seed = 0;
    gradcheck->add_option("--op", op, "softmargin | classification | segloss")->required();
    gradcheck->add_option("--seed", gc_seed, "instance seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (refine->parsed())
            return cmd_refine(image_path, scores_path, dilations, iters, sigma_floor, bg_score,
                              out_path, png_path);
        if (train->parsed())
            return cmd_train_toy(config_path, out_dir, seed_override, seed_opt->count() > 0);
        if (eval->parsed()) return cmd_eval(pred_dir, gt_dir, eval_out);
        if (gradcheck->parsed()) return cmd_gradcheck(op, gc_seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
