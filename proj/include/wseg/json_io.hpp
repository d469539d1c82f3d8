#pragma once

#include <json.hpp>

#include <string>
#include <vector>

#include "wseg/toytrain.hpp"

namespace wseg {

/// Raised when a run-config document violates the schema; carries every
/// violation, not just the first.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::vector<std::string>& problems)
        : std::runtime_error(join(problems)), problems_(problems) {}

    const std::vector<std::string>& problems() const { return problems_; }

private:
    static std::string join(const std::vector<std::string>& problems) {
        std::string s = "invalid run config:";
        for (const auto& p : problems) s += "\n  - " + p;
        return s;
    }
    std::vector<std::string> problems_;
};

struct RunConfig {
    TrainConfig train;
    ToyDatasetConfig dataset;
};

namespace detail {

class ConfigReader {
public:
    ConfigReader(const nlohmann::json& j, std::string scope, std::vector<std::string>& problems)
        : j_(j), scope_(std::move(scope)), problems_(problems) {
        if (!j.is_object()) problems_.push_back(scope_ + ": expected a JSON object");
    }

    ~ConfigReader() {
        if (!j_.is_object()) return;
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
                problems_.push_back(scope_ + ": unknown key '" + it.key() + "'");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.push_back(key);
        if (!j_.is_object() || !j_.contains(key)) return;  // missing -> keep default
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            problems_.push_back(scope_ + "." + key + ": wrong type");
        }
    }

    bool has_object(const char* key) {
        seen_.push_back(key);
        return j_.is_object() && j_.contains(key);
    }

    const nlohmann::json& child(const char* key) const { return j_.at(key); }

private:
    const nlohmann::json& j_;
    std::string scope_;
    std::vector<std::string>& problems_;
    std::vector<std::string> seen_;
};

}  // namespace detail

/// Parses a run-config JSON document. Missing keys keep their documented
/// defaults; unknown keys and constraint violations are all collected and
/// reported together via ConfigError.
inline RunConfig parse_run_config(const std::string& text, const std::string& origin) {
    std::vector<std::string> problems;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError({origin + ": not valid JSON (" + e.what() + ")"});
    }

    RunConfig cfg;
    double ngwp_epsilon = 1.0;
    std::string sg_mode = "stochastic";
    {
        detail::ConfigReader top(j, origin, problems);
        top.get("epochs_phase1", cfg.train.epochs_phase1);
        top.get("epochs_total", cfg.train.epochs_total);
        top.get("learning_rate", cfg.train.learning_rate);
        top.get("momentum", cfg.train.momentum);
        top.get("batch_size", cfg.train.batch_size);
        top.get("prune_threshold", cfg.train.prune_threshold);
        top.get("fg_threshold", cfg.train.fg_threshold);
        top.get("bg_threshold", cfg.train.bg_threshold);
        top.get("augment_flip", cfg.train.augment_flip);
        top.get("seed", cfg.train.seed);
        top.get("sg_mode", sg_mode);
        if (top.has_object("gate")) {
            detail::ConfigReader r(top.child("gate"), origin + ".gate", problems);
            r.get("psi", cfg.train.gate.psi);
            r.get("gci_enabled", cfg.train.gate.gci_enabled);
            r.get("per_pixel_shared", cfg.train.gate.per_pixel_shared);
        }
        if (top.has_object("focal")) {
            detail::ConfigReader r(top.child("focal"), origin + ".focal", problems);
            r.get("p", cfg.train.focal.p);
            r.get("lambda", cfg.train.focal.lambda);
        }
        if (top.has_object("ngwp")) {
            detail::ConfigReader r(top.child("ngwp"), origin + ".ngwp", problems);
            r.get("epsilon", ngwp_epsilon);
            r.get("bg_score", cfg.train.ngwp.bg_score);
        }
        if (top.has_object("pamr")) {
            detail::ConfigReader r(top.child("pamr"), origin + ".pamr", problems);
            r.get("dilations", cfg.train.pamr.dilations);
            r.get("iterations", cfg.train.pamr.iterations);
            r.get("sigma_floor", cfg.train.pamr.sigma_floor);
        }
        if (top.has_object("dataset")) {
            detail::ConfigReader r(top.child("dataset"), origin + ".dataset", problems);
            r.get("n_images", cfg.dataset.n_images);
            r.get("image_size", cfg.dataset.image_size);
            r.get("n_classes", cfg.dataset.n_classes);
            r.get("color_jitter", cfg.dataset.color_jitter);
            r.get("pixel_noise", cfg.dataset.pixel_noise);
            r.get("val_fraction", cfg.dataset.val_fraction);
            r.get("seed", cfg.dataset.seed);
        }
    }

    if (sg_mode == "stochastic")
        cfg.train.sg_mode = SgMode::kStochastic;
    else if (sg_mode == "deterministic")
        cfg.train.sg_mode = SgMode::kDeterministic;
    else if (sg_mode == "off")
        cfg.train.sg_mode = SgMode::kOff;
    else
        problems.push_back(origin + ".sg_mode: must be 'stochastic', 'deterministic' or 'off'");

    try {
        cfg.train.ngwp.set_epsilon(ngwp_epsilon);
    } catch (const std::invalid_argument& e) {
        problems.push_back(origin + ".ngwp.epsilon: " + e.what());
    }
    try {
        cfg.train.validate();
    } catch (const std::invalid_argument& e) {
        problems.push_back(origin + ": " + e.what());
    }
    try {
        cfg.dataset.validate();
    } catch (const std::invalid_argument& e) {
        problems.push_back(origin + ".dataset: " + e.what());
    }

    if (!problems.empty()) throw ConfigError(problems);
    return cfg;
}

inline nlohmann::json metrics_to_json(const Metrics& m) {
    nlohmann::json j;
    nlohmann::json per_class = nlohmann::json::array();
    for (double v : m.per_class_iou) {
        if (v < 0.0)
            per_class.push_back(nullptr);  // class absent from both pred and gt
        else
            per_class.push_back(v);
    }
    j["per_class_iou"] = per_class;
    j["mean_iou"] = m.mean_iou;
    j["phase1_mean_iou"] = m.phase1_mean_iou;
    j["classification_accuracy"] = m.classification_accuracy;
    j["cls_loss_curve"] = m.cls_loss_curve;
    j["seg_loss_curve"] = m.seg_loss_curve;
    return j;
}

}  // namespace wseg
