#include "prefseg/metrics.hpp"
#include "prefseg/synth.hpp"
#include "prefseg/upo.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <cmath>
#include <numbers>

using namespace prefseg;
using namespace prefseg::upo;
using oracles::Disk;
using oracles::max_contour_gap;

namespace {

bool all_finite(const Grid<double>& g) {
    return std::all_of(g.begin(), g.end(), [](double v) { return std::isfinite(v); });
}

long differing(const Mask& a, const Mask& b) {
    long n = 0;
    for (size_t i = 0; i < a.size(); ++i) n += a[i] != b[i];
    return n;
}

ProbMap prob_from(const Mask& m) {
    ProbMap p(m.rows(), m.cols());
    for (size_t i = 0; i < p.size(); ++i) p[i] = m[i] ? 0.9 : 0.1;
    return p;
}

}  // namespace

TEST(EdgeIndicatorTest, ConstantImageIsOne) {
    const auto g = edge_indicator(Image(8, 9, 0.3), 1.5, 255.0);
    for (double v : g) EXPECT_EQ(v, 1.0);
    EXPECT_THROW(edge_indicator(Image(4, 4), 0.0), std::invalid_argument);
}

TEST(EdgeIndicatorTest, StepEdgeInSharpLimit) {
    Image img(5, 8, 0.0);
    for (int r = 0; r < 5; ++r)
        for (int c = 4; c < 8; ++c) img(r, c) = 1.0;
    const auto g = edge_indicator(img, 1e-3);
    // Central difference 0.5 on both columns next to the step.
    for (int r = 0; r < 5; ++r) {
        EXPECT_NEAR(g(r, 3), 0.8, 1e-9);
        EXPECT_NEAR(g(r, 4), 0.8, 1e-9);
        EXPECT_NEAR(g(r, 0), 1.0, 1e-12);
        EXPECT_NEAR(g(r, 7), 1.0, 1e-12);
    }
}

TEST(EdgeIndicatorTest, WiderSmoothingSpreadsAndWeakensResponse) {
    Image img(9, 40, 0.0);
    for (int r = 0; r < 9; ++r)
        for (int c = 20; c < 40; ++c) img(r, c) = 1.0;
    const auto narrow = edge_indicator(img, 1.0, 10.0);
    const auto wide = edge_indicator(img, 3.0, 10.0);
    auto min_g = [](const Grid<double>& g) { return *std::min_element(g.begin(), g.end()); };
    auto width = [](const Grid<double>& g) {
        int n = 0;
        for (int c = 0; c < g.cols(); ++c) n += g(4, c) < 0.99;
        return n;
    };
    EXPECT_GT(min_g(wide), min_g(narrow));
    EXPECT_GT(width(wide), width(narrow));
}

TEST(EdgeIndicatorTest, RangeOnRandomImages) {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 20; ++t) {
        const auto g = edge_indicator(prefseg::testing::random_image(16, 16, rng), 1.0, 255.0);
        for (double v : g) {
            EXPECT_GT(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(LevelSetTest, InitIsBinaryStep) {
    const Disk d(8.0);
    const auto phi = init_levelset(d.truth, 2.0);
    for (size_t i = 0; i < phi.size(); ++i) EXPECT_EQ(phi[i], d.truth[i] ? -2.0 : 2.0);
    EXPECT_EQ(levelset_mask(phi), d.truth);
    EXPECT_THROW(init_levelset(Mask(4, 4, 1), 2.0), std::invalid_argument);
    EXPECT_THROW(init_levelset(Mask(4, 4, 0), 2.0), std::invalid_argument);
    EXPECT_THROW(init_levelset(d.truth, 0.0), std::invalid_argument);
}

TEST(LevelSetTest, ParamsValidation) {
    DrlseParams p;
    EXPECT_NO_THROW(p.validate());
    p.mu = 0.25;
    EXPECT_THROW(p.validate(), std::invalid_argument);
    p = DrlseParams{};
    p.iterations = 0;
    EXPECT_THROW(p.validate(), std::invalid_argument);
    p = DrlseParams{};
    p.sigma_g = -1.0;
    EXPECT_THROW(p.validate(), std::invalid_argument);
    p = DrlseParams{};
    p.epsilon = 0.0;
    EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(LevelSetTest, PureRegularizationKeepsInterface) {
    DrlseParams p;
    p.alpha = 0.0;
    p.lambda = 0.0;
    p.iterations = 100;
    const Disk d(12.0);
    const auto phi0 = d.distance_levelset(0.0, p.c0);
    const auto phi = drlse_evolve(phi0, Grid<double>(d.n, d.n, 1.0), p);
    EXPECT_TRUE(all_finite(phi));
    EXPECT_LT(max_contour_gap(phi, phi0, d.center, d.center, 28.0), 0.5);

    // Straight binary-step interface between columns 9 and 10.
    Mask half(20, 20);
    for (int r = 0; r < 20; ++r)
        for (int c = 0; c < 10; ++c) half(r, c) = 1;
    const auto step = drlse_evolve(init_levelset(half, p.c0), Grid<double>(20, 20, 1.0), p);
    for (int r = 0; r < 20; ++r) {
        EXPECT_LT(step(r, 9), 0.0);
        EXPECT_GT(step(r, 10), 0.0);
        EXPECT_NEAR(step(r, 9), -step(r, 10), 1e-9);
    }
}

TEST(LevelSetTest, DiskConvergesToRim) {
    const Disk d;
    const DrlseParams p;  // 200 iterations
    const auto g = edge_indicator(d.image, p.sigma_g, p.intensity_scale);
    const auto phi = drlse_evolve(init_levelset(d.grown(3.0), p.c0), g, p);
    ASSERT_TRUE(all_finite(phi));
    // The rim location is read off the true mask's own binary-step level set
    // with the same interpolation.
    const auto truth_phi = init_levelset(d.truth, p.c0);
    EXPECT_LE(max_contour_gap(phi, truth_phi, d.center, d.center, 28.0), 1.0);
    // Starting point is well outside the tolerance.
    EXPECT_GT(max_contour_gap(init_levelset(d.grown(3.0), p.c0), truth_phi, d.center, d.center, 28.0), 2.5);
}

TEST(LevelSetTest, DoublingIterationsAfterConvergence) {
    const Disk d;
    DrlseParams p;
    const auto g = edge_indicator(d.image, p.sigma_g, p.intensity_scale);
    const auto init = init_levelset(d.grown(3.0), p.c0);
    const auto a = levelset_mask(drlse_evolve(init, g, p));
    p.iterations *= 2;
    const auto b = levelset_mask(drlse_evolve(init, g, p));
    EXPECT_LT(static_cast<double>(differing(a, b)) / a.size(), 0.005);
}

TEST(LevelSetTest, StableForManyIterations) {
    std::mt19937_64 rng(2);
    DrlseParams p;
    p.iterations = 10000;
    for (int t = 0; t < 3; ++t) {
        const auto img = prefseg::testing::random_image(16, 16, rng);
        auto m = prefseg::testing::random_mask(16, 16, 0.5, rng);
        const auto phi = drlse_evolve(init_levelset(m, p.c0), edge_indicator(img, p.sigma_g, p.intensity_scale), p);
        EXPECT_TRUE(all_finite(phi));
    }
}

TEST(LevelSetTest, NonFiniteAborts) {
    const Disk d(8.0);
    auto phi = init_levelset(d.truth, 2.0);
    phi(30, 30) = NAN;
    EXPECT_THROW(drlse_evolve(phi, Grid<double>(d.n, d.n, 1.0), DrlseParams{}), std::runtime_error);
    EXPECT_THROW(drlse_evolve(Grid<double>(2, 5, 1.0), Grid<double>(2, 5, 1.0), DrlseParams{}), std::invalid_argument);
    EXPECT_THROW(drlse_evolve(phi, Grid<double>(3, 3, 1.0), DrlseParams{}), std::invalid_argument);
}

TEST(RefineTest, BlankProbIsUnchanged) {
    const Disk d(8.0);
    const auto out = refine_mask(ProbMap(d.n, d.n, 0.1), d.image, DrlseParams{});
    EXPECT_EQ(count_foreground(out), 0);
}

TEST(RefineTest, AlignedMaskIsNearFixedPoint) {
    const Disk d;
    const DrlseParams p;
    const auto refined = refine_mask(prob_from(d.truth), d.image, p);
    EXPECT_GE(metrics::dice(refined, d.truth), 0.95);
    const auto again = refine_mask(prob_from(refined), d.image, p);
    EXPECT_LT(static_cast<double>(differing(refined, again)) / refined.size(), 0.01);
}

TEST(LevelSetTest, MembraneDiskReachesRimWithinDefaultIterations) {
    // With a dark membrane the outer edge is the weaker of two nearby edges;
    // at the default iteration count the contour sits within 1 px of it.
    const Disk d(15.0, true);
    const DrlseParams p;
    const auto g = edge_indicator(d.image, p.sigma_g, p.intensity_scale);
    const auto phi = drlse_evolve(init_levelset(d.grown(3.0), p.c0), g, p);
    EXPECT_LE(max_contour_gap(phi, init_levelset(d.truth, p.c0), d.center, d.center, 28.0), 1.0);
}

TEST(RefineTest, DilatedDiskMovesTowardRim) {
    for (double radius : {10.0, 15.0, 20.0}) {
        const Disk d(radius, true);
        const Mask coarse = synth::dilate(d.truth, 2);
        const auto refined = refine_mask(prob_from(coarse), d.image, DrlseParams{});
        EXPECT_GT(metrics::dice(refined, d.truth), metrics::dice(coarse, d.truth)) << "radius " << radius;
    }
}

TEST(RefineTest, DilatedSyntheticMasksImprove) {
    synth::GeneratorConfig cfg;
    cfg.count = 6;
    cfg.domain = synth::Domain::target;
    cfg.shift = synth::default_shift(cfg.domain);
    double coarse_dice = 0.0, refined_dice = 0.0;
    for (const auto& s : synth::synthesize(cfg, 101)) {
        const Mask coarse = synth::dilate(s.true_mask, 2);
        coarse_dice += metrics::dice(coarse, s.true_mask);
        refined_dice += metrics::dice(refine_mask(prob_from(coarse), s.image, DrlseParams{}), s.true_mask);
    }
    EXPECT_GT(refined_dice, coarse_dice);
}

TEST(RefineTest, ComponentsEvolveSeparately) {
    // Two disks close together stay two components.
    Image img(40, 80, 0.42);
    Mask truth(40, 80);
    for (int r = 0; r < 40; ++r)
        for (int c = 0; c < 80; ++c)
            for (double cx : {19.5, 58.5}) {
                const double d = std::hypot(r - 19.5, c - cx);
                if (d <= 12.0) {
                    img(r, c) = d > 10.0 ? 0.16 : 0.74;
                    truth(r, c) = 1;
                }
            }
    const auto refined = refine_mask(prob_from(synth::dilate(truth, 2)), img, DrlseParams{});
    EXPECT_EQ(metrics::instance_count(metrics::connected_components(refined)), 2);
}

namespace {

prefs::CandidateSet set_of(std::vector<Mask> masks) {
    prefs::CandidateSet s{"img", {}};
    for (size_t j = 0; j < masks.size(); ++j)
        s.candidates.push_back(prefs::Candidate{0.3 + 0.1 * static_cast<double>(j), static_cast<int>(j), std::move(masks[j])});
    return s;
}

}  // namespace

TEST(UpoSelectTest, ExactMatchIsPreferred) {
    std::mt19937_64 rng(3);
    std::vector<Mask> masks;
    for (int j = 0; j < 4; ++j) masks.push_back(prefseg::testing::random_mask(8, 8, 0.5, rng));
    const auto rec = upo_select(set_of(masks), masks[2], "ts");
    EXPECT_EQ(rec.preferred, 2);
    EXPECT_EQ(rec.dispreferred, (std::vector<int>{0, 1, 3}));
    EXPECT_EQ(rec.patch_index, -1);
    EXPECT_EQ(rec.rater, prefs::Rater::upo);
    EXPECT_EQ(rec.timestamp, "ts");
    EXPECT_EQ(rec.image_id, "img");
    EXPECT_THROW(upo_select(set_of({masks[0]}), masks[0], "ts"), std::invalid_argument);
}

TEST(UpoSelectTest, ArgmaxOfDice) {
    // Refined = first 10 pixels; candidates cover 6, 9 and 8 of them.
    Mask refined(4, 5);
    for (int i = 0; i < 10; ++i) refined[i] = 1;
    std::vector<Mask> masks(3, Mask(4, 5));
    for (int i = 0; i < 6; ++i) masks[0][i] = 1;
    for (int i = 0; i < 9; ++i) masks[1][i] = 1;
    for (int i = 0; i < 8; ++i) masks[2][i] = 1;
    EXPECT_EQ(upo_select(set_of(masks), refined, "t").preferred, 1);
}

TEST(UpoSelectTest, MatchesBruteForceRanking) {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 200; ++t) {
        std::vector<Mask> masks;
        for (int j = 0; j < 5; ++j) masks.push_back(prefseg::testing::random_mask(6, 6, 0.5, rng));
        if (t % 10 == 0) masks[3] = masks[1];  // force ties
        const Mask refined = prefseg::testing::random_mask(6, 6, 0.5, rng);
        int best = 0;
        double best_score = -1.0;
        for (int j = 0; j < 5; ++j) {
            long inter = 0, a = 0, b = 0;
            for (size_t i = 0; i < refined.size(); ++i) {
                inter += masks[j][i] && refined[i];
                a += masks[j][i];
                b += refined[i];
            }
            const double score = a + b == 0 ? 1.0 : 2.0 * inter / static_cast<double>(a + b);
            if (score > best_score) {
                best_score = score;
                best = j;
            }
        }
        EXPECT_EQ(upo_select(set_of(masks), refined, "t").preferred, best);
    }
}
