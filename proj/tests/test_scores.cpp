#include <gtest/gtest.h>

#include <cmath>

#include "wseg/rng.hpp"
#include "wseg/scores.hpp"

using wseg::ClassifierWeights;
using wseg::FocalConfig;
using wseg::NgwpConfig;
using wseg::Rng;
using wseg::Tensor;

namespace {

// Straightforward scalar re-implementations used as oracles; kept
// deliberately independent of the library code paths.

double oracle_cam(const Tensor& features, const Tensor& a, std::size_t c, std::size_t i,
                  std::size_t j) {
    double acc = 0.0;
    for (std::size_t k = 0; k < features.dim(0); ++k) acc += a.at(c, k) * features.at(k, i, j);
    return acc > 0.0 ? acc : 0.0;
}

double oracle_classification_score(const Tensor& scores, std::size_t c, double epsilon,
                                   double bg, double p, double lambda) {
    const std::size_t nc = scores.dim(0), h = scores.dim(1), w = scores.dim(2);
    double num = 0.0, den = epsilon, msum = 0.0;
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            // softmax over (bg, scores) at this pixel
            double mx = bg;
            for (std::size_t t = 0; t < nc; ++t) mx = std::max(mx, scores.at(t, i, j));
            double z = std::exp(bg - mx);
            for (std::size_t t = 0; t < nc; ++t) z += std::exp(scores.at(t, i, j) - mx);
            const double m = std::exp(scores.at(c, i, j) - mx) / z;
            num += m * scores.at(c, i, j);
            den += m;
            msum += m;
        }
    const double mbar = msum / static_cast<double>(h * w);
    return num / den + std::pow(1.0 - mbar, p) * std::log(lambda + mbar);
}

}  // namespace

TEST(GapScores, ZeroFeaturesGiveZeroScores) {
    const Tensor features(std::vector<std::size_t>{2, 3, 3});
    ClassifierWeights w{Tensor::from_data({2, 2}, {1.0, -1.0, 0.5, 2.0})};
    const Tensor y = wseg::gap_scores(features, w);
    EXPECT_DOUBLE_EQ(y[0], 0.0);
    EXPECT_DOUBLE_EQ(y[1], 0.0);
}

TEST(GapScores, HandEvaluation) {
    const Tensor features = Tensor::from_data({1, 2, 2}, {1.0, 1.0, 1.0, 3.0});
    ClassifierWeights w{Tensor::from_data({1, 1}, {2.0})};
    EXPECT_DOUBLE_EQ(wseg::gap_scores(features, w)[0], 3.0);
}

TEST(GapScores, TilingInvariance) {
    Rng rng(3);
    Tensor features(std::vector<std::size_t>{2, 2, 3});
    for (auto& v : features) v = rng.uniform(-2.0, 2.0);
    ClassifierWeights w{Tensor::from_data({2, 2}, {0.3, -1.2, 2.0, 0.7})};
    const Tensor base = wseg::gap_scores(features, w);

    // tile 1x2 spatially
    Tensor tiled(std::vector<std::size_t>{2, 2, 6});
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 6; ++j)
                tiled.at(c, i, j) = features.at(c, i, j % 3);
    const Tensor y = wseg::gap_scores(tiled, w);
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(y[c], base[c], 1e-12);
}

TEST(GapScores, ShapeMismatch) {
    const Tensor features(std::vector<std::size_t>{2, 2, 2});
    ClassifierWeights w{Tensor::from_data({1, 3}, {1.0, 2.0, 3.0})};
    EXPECT_THROW(wseg::gap_scores(features, w), std::invalid_argument);
}

TEST(CamMaps, ReluClampsNegative) {
    const Tensor features(std::vector<std::size_t>{1, 2, 2}, 1.0);
    ClassifierWeights w{Tensor::from_data({1, 1}, {-3.0})};
    const Tensor m = wseg::cam_maps(features, w);
    for (double v : m) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(CamMaps, IdentityWeights) {
    Tensor features(std::vector<std::size_t>{1, 2, 2});
    features.at(0, 1, 1) = 2.5;
    ClassifierWeights w{Tensor::from_data({1, 1}, {1.0})};
    EXPECT_DOUBLE_EQ(wseg::cam_maps(features, w).at(0, 1, 1), 2.5);
}

TEST(CamMaps, BruteForceOracle) {
    Rng rng(17);
    Tensor features(std::vector<std::size_t>{3, 4, 4});
    for (auto& v : features) v = rng.uniform(-2.0, 2.0);
    Tensor a(std::vector<std::size_t>{2, 3});
    for (auto& v : a) v = rng.uniform(-1.0, 1.0);
    const Tensor m = wseg::cam_maps(features, ClassifierWeights{a});
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                EXPECT_DOUBLE_EQ(m.at(c, i, j), oracle_cam(features, a, c, i, j));
}

TEST(BuildMaskProbs, SymmetricWhenScoresEqualBackground) {
    const NgwpConfig cfg;
    const Tensor scores(std::vector<std::size_t>{1, 2, 2}, cfg.bg_score);
    const Tensor m = wseg::build_mask_probs(scores, cfg);
    for (double v : m) EXPECT_NEAR(v, 0.5, 1e-15);
}

TEST(BuildMaskProbs, SaturatesForVeryNegativeScore) {
    const NgwpConfig cfg;
    Tensor scores(std::vector<std::size_t>{1, 1, 1});
    scores[0] = -1e9;
    const Tensor m = wseg::build_mask_probs(scores, cfg);
    EXPECT_NEAR(m[1], 0.0, 1e-300);
    EXPECT_NEAR(m[0], 1.0, 1e-15);
}

TEST(BuildMaskProbs, ThreeWaySymmetry) {
    const NgwpConfig cfg;
    const Tensor scores(std::vector<std::size_t>{2, 1, 1}, 1.0);
    const Tensor m = wseg::build_mask_probs(scores, cfg);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(m[c], 1.0 / 3.0, 1e-15);
}

TEST(Ngwp, ZeroMaskWithUnitEpsilonGivesZero) {
    Tensor mask(std::vector<std::size_t>{2, 2, 2});
    for (std::size_t p = 0; p < 4; ++p) mask[p] = 1.0;  // all mass on background
    Tensor scores(std::vector<std::size_t>{1, 2, 2}, 5.0);
    const NgwpConfig cfg;
    EXPECT_DOUBLE_EQ(wseg::ngwp(mask, scores, cfg)[0], 0.0);
}

TEST(Ngwp, HandEvaluation) {
    Tensor mask(std::vector<std::size_t>{2, 2, 2});
    for (std::size_t p = 0; p < 4; ++p) {
        mask[p] = 0.5;
        mask[4 + p] = 0.5;
    }
    const Tensor scores = Tensor::from_data({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    EXPECT_NEAR(wseg::ngwp(mask, scores, NgwpConfig())[0], 5.0 / 3.0, 1e-15);
}

TEST(Ngwp, ConvexCombinationLimit) {
    const double d = 7.5;
    Tensor mask(std::vector<std::size_t>{2, 20, 20});
    for (std::size_t p = 0; p < 400; ++p) {
        mask[p] = 0.1;
        mask[400 + p] = 0.9;
    }
    const Tensor scores(std::vector<std::size_t>{1, 20, 20}, d);
    const double got = wseg::ngwp(mask, scores, NgwpConfig())[0];
    const double sum_m = 0.9 * 400;
    EXPECT_LE(std::abs(got - d), (1.0 / sum_m) * std::abs(d));
}

TEST(Ngwp, ZeroEpsilonZeroMaskSignalsDivisionError) {
    const NgwpConfig cfg = NgwpConfig::unchecked_epsilon_for_tests(0.0);
    Tensor mask(std::vector<std::size_t>{2, 1, 1});
    mask[0] = 1.0;
    const Tensor scores(std::vector<std::size_t>{1, 1, 1}, 2.0);
    EXPECT_THROW(wseg::ngwp(mask, scores, cfg), std::domain_error);
}

TEST(NgwpConfig, ZeroEpsilonOnlyThroughTestFactory) {
    EXPECT_THROW(NgwpConfig(0.0), std::invalid_argument);
    NgwpConfig cfg;
    EXPECT_THROW(cfg.set_epsilon(-1.0), std::invalid_argument);
    EXPECT_DOUBLE_EQ(NgwpConfig::unchecked_epsilon_for_tests(0.0).epsilon(), 0.0);
}

TEST(Ngwp, TilingInvariance) {
    Rng rng(5);
    Tensor mask(std::vector<std::size_t>{2, 3, 3});
    Tensor scores(std::vector<std::size_t>{1, 3, 3});
    for (std::size_t p = 0; p < 9; ++p) {
        mask[9 + p] = rng.uniform(0.05, 0.9);
        mask[p] = 1.0 - mask[9 + p];
        scores[p] = rng.uniform(-2.0, 2.0);
    }
    const double base = wseg::ngwp(mask, scores, NgwpConfig())[0];

    // 2x2 tiling of mask and scores jointly; epsilon fixed => only the
    // epsilon share shrinks, so compare against the epsilon-free ratio.
    Tensor mask_t(std::vector<std::size_t>{2, 6, 6});
    Tensor scores_t(std::vector<std::size_t>{1, 6, 6});
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 6; ++i)
            for (std::size_t j = 0; j < 6; ++j)
                mask_t.at(c, i, j) = mask.at(c, i % 3, j % 3);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j) scores_t.at(0, i, j) = scores.at(0, i % 3, j % 3);

    const NgwpConfig tiny = NgwpConfig::unchecked_epsilon_for_tests(1e-12);
    const double a = wseg::ngwp(mask, scores, tiny)[0];
    const double b = wseg::ngwp(mask_t, scores_t, tiny)[0];
    EXPECT_NEAR(a, b, 1e-9);
    // with epsilon = 1 the tiled value moves toward the epsilon-free ratio
    const double tiled = wseg::ngwp(mask_t, scores_t, NgwpConfig())[0];
    EXPECT_LE(std::abs(tiled - a), std::abs(base - a) + 1e-12);
}

TEST(Ngwp, Lemma1PathDependenceAtZeroEpsilon) {
    // two pixels with different scores; mask paths t*e_k and t*e_l
    const Tensor scores = Tensor::from_data({1, 1, 2}, {3.0, -1.5});
    for (double t : {1e-3, 1e-6}) {
        Tensor mask_k(std::vector<std::size_t>{2, 1, 2});
        mask_k.at(1, 0, 0) = t;
        Tensor mask_l(std::vector<std::size_t>{2, 1, 2});
        mask_l.at(1, 0, 1) = t;

        const NgwpConfig eps0 = NgwpConfig::unchecked_epsilon_for_tests(0.0);
        const double yk = wseg::ngwp(mask_k, scores, eps0)[0];
        const double yl = wseg::ngwp(mask_l, scores, eps0)[0];
        EXPECT_NEAR(yk, 3.0, 1e-9);
        EXPECT_NEAR(yl, -1.5, 1e-9);

        const NgwpConfig eps1;
        EXPECT_LE(std::abs(wseg::ngwp(mask_k, scores, eps1)[0]), t * 3.0 + 1e-18);
        EXPECT_LE(std::abs(wseg::ngwp(mask_l, scores, eps1)[0]), t * 1.5 + 1e-18);
    }
}

TEST(Ngwp, NegativeClassDebiasingInequality) {
    Rng rng(31);
    const NgwpConfig eps0 = NgwpConfig::unchecked_epsilon_for_tests(0.0);
    const NgwpConfig eps1;
    for (int trial = 0; trial < 100; ++trial) {
        Tensor mask(std::vector<std::size_t>{2, 3, 3});
        Tensor scores(std::vector<std::size_t>{1, 3, 3});
        for (std::size_t p = 0; p < 9; ++p) {
            mask[9 + p] = rng.uniform(1e-4, 1.0);
            mask[p] = 1.0 - mask[9 + p];
            scores[p] = rng.uniform(-5.0, -1e-3);
        }
        EXPECT_GT(wseg::ngwp(mask, scores, eps1)[0], wseg::ngwp(mask, scores, eps0)[0]);
    }
}

TEST(FocalPenalty, FullMaskGivesZero) {
    Tensor mask(std::vector<std::size_t>{2, 2, 2});
    for (std::size_t p = 0; p < 4; ++p) mask[4 + p] = 1.0;
    const FocalConfig cfg;
    EXPECT_DOUBLE_EQ(wseg::focal_penalty(mask, cfg)[0], 0.0);
}

TEST(FocalPenalty, EmptyMaskScalarEvaluation) {
    Tensor mask(std::vector<std::size_t>{2, 2, 2});
    for (std::size_t p = 0; p < 4; ++p) mask[p] = 1.0;
    const FocalConfig cfg;  // p=3, lambda=0.01
    EXPECT_NEAR(wseg::focal_penalty(mask, cfg)[0], -4.60517, 1e-5);
}

TEST(FocalPenalty, ZeroPReducesToPlainPenalty) {
    Tensor mask(std::vector<std::size_t>{2, 1, 2});
    mask.at(1, 0, 0) = 1.0;  // mbar = 0.5
    mask.at(0, 0, 1) = 1.0;
    FocalConfig cfg;
    cfg.p = 0.0;
    cfg.lambda = 0.01;
    EXPECT_NEAR(wseg::focal_penalty(mask, cfg)[0], -0.67334, 1e-5);
}

TEST(FocalPenalty, MonotoneOnGrid) {
    // strictly increasing while the penalty is active (log term <= 0, i.e.
    // mbar <= 1-lambda); checked on a fine grid there and a coarse grid on
    // the whole of (0,1)
    for (double p : {0.0, 3.0, 5.0})
        for (double lambda : {0.1, 0.01}) {
            double prev = -1e30;
            for (double mbar = 0.01; mbar <= 1.0 - lambda + 1e-12; mbar += 0.01) {
                const double v = std::pow(1.0 - mbar, p) * std::log(lambda + mbar);
                EXPECT_GT(v, prev) << "p=" << p << " lambda=" << lambda << " mbar=" << mbar;
                prev = v;
            }
            prev = -1e30;
            for (double mbar = 0.05; mbar < 0.975; mbar += 0.05) {
                const double v = std::pow(1.0 - mbar, p) * std::log(lambda + mbar);
                EXPECT_GT(v, prev) << "coarse p=" << p << " lambda=" << lambda;
                prev = v;
            }
        }
}

TEST(ClassificationScores, EmptyMaskComposition) {
    Tensor mask(std::vector<std::size_t>{2, 2, 2});
    for (std::size_t p = 0; p < 4; ++p) mask[p] = 1.0;
    Tensor scores(std::vector<std::size_t>{1, 2, 2}, -3.0);
    const double y = wseg::classification_scores(mask, scores, NgwpConfig(), FocalConfig())[0];
    EXPECT_NEAR(y, 0.0 + std::log(0.01), 1e-9);
}

TEST(ClassificationScores, FullMaskConstantScores) {
    const double d = 4.2;
    Tensor mask(std::vector<std::size_t>{2, 10, 10});
    for (std::size_t p = 0; p < 100; ++p) mask[100 + p] = 1.0;
    const Tensor scores(std::vector<std::size_t>{1, 10, 10}, d);
    const double y = wseg::classification_scores(mask, scores, NgwpConfig(), FocalConfig())[0];
    EXPECT_NEAR(y, d * 100.0 / 101.0, 1e-12);  // nGWP + zero focal term
}

TEST(ClassificationScores, MatchesScalarOracleOnRandomInput) {
    Rng rng(23);
    Tensor scores(std::vector<std::size_t>{3, 5, 5});
    for (auto& v : scores) v = rng.uniform(-2.0, 2.0);
    const NgwpConfig ncfg;
    const FocalConfig fcfg;
    const Tensor mask = wseg::build_mask_probs(scores, ncfg);
    const Tensor y = wseg::classification_scores(mask, scores, ncfg, fcfg);
    for (std::size_t c = 0; c < 3; ++c) {
        const double expect = oracle_classification_score(scores, c, ncfg.epsilon(),
                                                          ncfg.bg_score, fcfg.p, fcfg.lambda);
        EXPECT_NEAR(y[c], expect, 1e-12);
    }
}
