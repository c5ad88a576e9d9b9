#include "prefseg/adapt.hpp"
#include "test_util.hpp"

using namespace prefseg;
using namespace prefseg::adapt;
using prefseg::testing::numeric_gradient;
using prefseg::testing::relative_error;

namespace {

model::ModelParams random_params(std::mt19937_64& rng, double scale = 0.5) {
    std::normal_distribution<double> nd(0.0, scale);
    model::ModelParams p;
    for (auto& v : p.values()) v = nd(rng);
    return p;
}

model::FeatureStack random_feats(int rows, int cols, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> ur(0, rows - 1), uc(0, cols - 1);
    return model::extract_features(prefseg::testing::random_image(rows, cols, rng), {{ur(rng), uc(rng), 1.0}});
}

PartialLabels random_labels(int rows, int cols, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> u(0, 2);
    PartialLabels l{Grid<std::uint8_t>(rows, cols), LabelSource::pseudo};
    for (auto& v : l.labels) {
        const int k = u(rng);
        v = k == 2 ? kIgnore : static_cast<std::uint8_t>(k);
    }
    return l;
}

std::vector<double> flat(const model::ModelParams& p) { return {p.values().begin(), p.values().end()}; }

model::ModelParams unflat(const std::vector<double>& x) {
    model::ModelParams p;
    std::copy(x.begin(), x.end(), p.values().begin());
    return p;
}

// Every pixel that is >= threshold and strictly above every other pixel of
// its window, except equal pixels earlier in row-major order.
PointSet nms_brute_force(const DensityMap& d, double threshold, int window) {
    const int h = window / 2;
    PointSet out;
    for (int r = 0; r < d.rows(); ++r) {
        for (int c = 0; c < d.cols(); ++c) {
            const double v = d(r, c);
            if (v < threshold) continue;
            bool keep = true;
            for (int y = r - h; y <= r + h && keep; ++y) {
                for (int x = c - h; x <= c + h && keep; ++x) {
                    if (!d.in_bounds(y, x) || (y == r && x == c)) continue;
                    const bool earlier = y < r || (y == r && x < c);
                    if (d(y, x) > v || (d(y, x) == v && earlier)) keep = false;
                }
            }
            if (keep) out.push_back({r, c, std::min(v, 1.0)});
        }
    }
    return out;
}

}  // namespace

TEST(NmsTest, ZeroMapIsEmpty) { EXPECT_TRUE(nms_extract_points(DensityMap(16, 16), 0.3, 5).empty()); }

TEST(NmsTest, SingleBumpGivesItsCenter) {
    const auto d = synth::rasterize_density({{7, 9, 1.0}}, 2.0, 20, 20);
    const auto pts = nms_extract_points(d, 0.3, 5);
    ASSERT_EQ(pts.size(), 1u);
    EXPECT_EQ(pts[0].row, 7);
    EXPECT_EQ(pts[0].col, 9);
    EXPECT_DOUBLE_EQ(pts[0].confidence, 1.0);
}

TEST(NmsTest, TwoBumpsMatchBruteForce) {
    const auto d = synth::rasterize_density({{10, 5, 1.0}, {10, 25, 1.0}}, 2.0, 24, 32);
    const auto pts = nms_extract_points(d, 0.3, 5);
    EXPECT_EQ(pts.size(), 2u);
    EXPECT_EQ(pts, nms_brute_force(d, 0.3, 5));
}

TEST(NmsTest, RandomMapsMatchBruteForce) {
    std::mt19937_64 rng(31);
    std::uniform_int_distribution<int> size(3, 32);
    std::uniform_int_distribution<int> win(1, 3);
    for (int trial = 0; trial < 200; ++trial) {
        DensityMap d(size(rng), size(rng));
        // Coarse levels force plateaus and ties.
        std::uniform_int_distribution<int> level(0, 6);
        for (auto& v : d) v = level(rng) / 4.0;
        const int window = 2 * win(rng) + 1;
        EXPECT_EQ(nms_extract_points(d, 0.3, window), nms_brute_force(d, 0.3, window)) << "trial " << trial;
    }
}

TEST(NmsTest, PlateauKeepsEarliestPixel) {
    DensityMap d(5, 5);
    d(2, 2) = 0.8;
    d(2, 3) = 0.8;
    const auto pts = nms_extract_points(d, 0.3, 3);
    ASSERT_EQ(pts.size(), 1u);
    EXPECT_EQ(pts[0].col, 2);
}

TEST(DetectionLossTest, Examples) {
    DensityMap a(3, 3, 0.2);
    EXPECT_EQ(detection_loss(a, a).value, 0.0);
    DensityMap b(3, 3, 1.2);
    EXPECT_DOUBLE_EQ(detection_loss(b, a).value, 1.0);
    EXPECT_THROW(detection_loss(a, DensityMap(3, 4)), std::invalid_argument);

    std::mt19937_64 rng(1);
    const auto p = prefseg::testing::random_grid(3, 3, 0.0, 2.0, rng);
    const auto t = prefseg::testing::random_grid(3, 3, 0.0, 2.0, rng);
    const auto res = detection_loss(p, t);
    double sum = 0.0;
    for (size_t i = 0; i < 9; ++i) {
        sum += (p[i] - t[i]) * (p[i] - t[i]);
        EXPECT_NEAR(res.grad[i], 2.0 * (p[i] - t[i]) / 9.0, 1e-15);
    }
    EXPECT_NEAR(res.value, sum / 9.0, 1e-15);
}

TEST(SegLossTest, Examples) {
    ProbMap half(3, 3, 0.5);
    std::mt19937_64 rng(2);
    PartialLabels labels{prefseg::testing::random_mask(3, 3, 0.5, rng), LabelSource::ground_truth};
    EXPECT_NEAR(segmentation_loss(half, labels).value, std::log(2.0), 1e-15);

    PartialLabels ignore{Grid<std::uint8_t>(3, 3, kIgnore), LabelSource::pseudo};
    const auto none = segmentation_loss(half, ignore);
    EXPECT_EQ(none.value, 0.0);
    for (double g : none.grad) EXPECT_EQ(g, 0.0);

    const auto prob = prefseg::testing::random_grid(3, 3, 0.05, 0.95, rng);
    const auto l = random_labels(3, 3, rng);
    double sum = 0.0;
    int n = 0;
    for (size_t i = 0; i < 9; ++i) {
        if (l.labels[i] == kIgnore) continue;
        sum -= l.labels[i] ? std::log(prob[i]) : std::log(1.0 - prob[i]);
        ++n;
    }
    EXPECT_NEAR(segmentation_loss(prob, l).value, n ? sum / n : 0.0, 1e-14);
    EXPECT_THROW(segmentation_loss(prob, PartialLabels{Grid<std::uint8_t>(2, 3), LabelSource::pseudo}),
                 std::invalid_argument);
}

TEST(SegLossTest, IgnoredPixelsHaveZeroGradient) {
    std::mt19937_64 rng(3);
    const auto prob = prefseg::testing::random_grid(6, 6, 0.05, 0.95, rng);
    const auto l = random_labels(6, 6, rng);
    const auto res = segmentation_loss(prob, l);
    for (size_t i = 0; i < l.labels.size(); ++i)
        if (l.labels[i] == kIgnore) {
            EXPECT_EQ(res.grad[i], 0.0);
        }
}

TEST(PseudoLabelTest, Thresholds) {
    ProbMap p(1, 5);
    p[0] = 0.95;
    p[1] = 0.5;
    p[2] = 0.05;
    p[3] = 0.9;
    p[4] = 0.1;
    const auto l = make_pseudo_labels(p, 0.9, 0.1);
    EXPECT_EQ(l.labels[0], 1);
    EXPECT_EQ(l.labels[1], kIgnore);
    EXPECT_EQ(l.labels[2], 0);
    EXPECT_EQ(l.labels[3], 1);
    EXPECT_EQ(l.labels[4], 0);
    EXPECT_EQ(l.source, LabelSource::pseudo);
    EXPECT_THROW(make_pseudo_labels(p, 0.1, 0.9), std::invalid_argument);
}

TEST(ContrastivePointsTest, ThreePerComponentClampedToSize) {
    ProbMap prob(12, 12, 0.5);
    // Component A: 2 pixels; component B: 50 pixels (5 x 10).
    prob(0, 0) = 0.95;
    prob(0, 1) = 0.97;
    for (int r = 4; r < 9; ++r)
        for (int c = 2; c < 12; ++c) prob(r, c) = 0.91 + 0.001 * (r * 12 + c) / 12.0;
    const auto pseudo = make_pseudo_labels(prob, 0.9, 0.1);
    const auto pts = select_contrastive_points(pseudo, prob, 0.9, 0.1, 256, 1);
    EXPECT_EQ(pts.foreground.size(), 5u);
    EXPECT_TRUE(pts.background.empty());  // nothing below 0.1

    ProbMap one(8, 8, 0.02);
    for (int c = 0; c < 10; ++c) one(c / 5, c % 5) = 0.95;
    const auto p1 = select_contrastive_points(make_pseudo_labels(one, 0.9, 0.1), one, 0.9, 0.1, 16, 2);
    EXPECT_EQ(p1.foreground.size(), 3u);
    EXPECT_EQ(p1.background.size(), 16u);
    for (const auto& b : p1.background) EXPECT_LT(one(b.row, b.col), 0.1);
    EXPECT_EQ(p1.background, select_contrastive_points(make_pseudo_labels(one, 0.9, 0.1), one, 0.9, 0.1, 16, 2).background);
}

TEST(ContrastivePointsTest, TopConfidenceChosen) {
    ProbMap prob(6, 6, 0.02);
    const double vals[5] = {0.91, 0.99, 0.93, 0.97, 0.95};
    for (int c = 0; c < 5; ++c) prob(2, c) = vals[c];
    const auto pts = select_contrastive_points(make_pseudo_labels(prob, 0.9, 0.1), prob, 0.9, 0.1, 0, 1);
    ASSERT_EQ(pts.foreground.size(), 3u);
    std::set<int> cols;
    for (const auto& p : pts.foreground) cols.insert(p.col);
    EXPECT_EQ(cols, (std::set<int>{1, 3, 4}));
}

TEST(PclTest, Examples) {
    Embedding z{}, anchor{}, neg{};
    z[0] = 1.0;
    anchor[0] = 1.0;
    neg[1] = 1.0;
    const std::vector<Embedding> q{z};
    EXPECT_NEAR(pcl_loss(q, anchor, {}, 0.5).value, 0.0, 1e-15);
    const std::vector<Embedding> negs{neg};
    const double expected = std::log(1.0 + std::exp(-2.0));
    EXPECT_NEAR(pcl_loss(q, anchor, negs, 0.5).value, expected, 1e-15);
    EXPECT_NEAR(expected, 0.126928, 1e-6);
    EXPECT_EQ(pcl_loss({}, anchor, negs, 0.5).value, 0.0);
    EXPECT_THROW(pcl_loss(q, anchor, negs, 0.0), std::invalid_argument);
}

TEST(PclTest, GradientsWith256NegativesMatchFiniteDifferences) {
    std::mt19937_64 rng(40);
    std::normal_distribution<double> nd;
    auto unit = [&] {
        Embedding e;
        double n = 0.0;
        for (auto& v : e) {
            v = nd(rng);
            n += v * v;
        }
        for (auto& v : e) v /= std::sqrt(n);
        return e;
    };
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Embedding> q(3), negs(trial == 0 ? 256 : 8);
        for (auto& e : q) e = unit();
        for (auto& e : negs) e = unit();
        const Embedding anchor = unit();
        const auto res = pcl_loss(q, anchor, negs, 0.5);
        ASSERT_TRUE(std::isfinite(res.value));

        // Pack queries, anchor and negatives into one vector.
        std::vector<double> x, analytic;
        auto pack = [](std::vector<double>& out, const Embedding& e) { out.insert(out.end(), e.begin(), e.end()); };
        for (size_t i = 0; i < q.size(); ++i) {
            pack(x, q[i]);
            pack(analytic, res.query_grads[i]);
        }
        pack(x, anchor);
        pack(analytic, res.anchor_grad);
        for (size_t k = 0; k < negs.size(); ++k) {
            pack(x, negs[k]);
            pack(analytic, res.negative_grads[k]);
        }
        const size_t E = model::kEmbed;
        auto f = [&](const std::vector<double>& v) {
            std::vector<Embedding> qq(q.size()), nn(negs.size());
            Embedding a;
            size_t o = 0;
            for (auto& e : qq) { std::copy(v.begin() + o, v.begin() + o + E, e.begin()); o += E; }
            std::copy(v.begin() + o, v.begin() + o + E, a.begin());
            o += E;
            for (auto& e : nn) { std::copy(v.begin() + o, v.begin() + o + E, e.begin()); o += E; }
            return pcl_loss(qq, a, nn, 0.5).value;
        };
        EXPECT_LT(relative_error(analytic, numeric_gradient(x, f)), 1e-4) << "trial " << trial;
    }
}

TEST(GradientSuite, SegLossLogitsMatchFiniteDifferences) {
    std::mt19937_64 rng(50);
    for (int trial = 0; trial < 50; ++trial) {
        const auto logits = prefseg::testing::random_grid(8, 8, -4.0, 4.0, rng);
        const auto labels = random_labels(8, 8, rng);
        auto f = [&](const std::vector<double>& x) {
            ProbMap p(8, 8);
            for (size_t i = 0; i < x.size(); ++i) p[i] = model::clamped_prob(x[i]);
            return segmentation_loss(p, labels).value;
        };
        ProbMap p(8, 8);
        for (size_t i = 0; i < logits.size(); ++i) p[i] = model::clamped_prob(logits[i]);
        const auto res = segmentation_loss(p, labels);
        const std::vector<double> x(logits.begin(), logits.end());
        EXPECT_LT(relative_error({res.grad.begin(), res.grad.end()}, numeric_gradient(x, f)), 1e-4);
    }
}

TEST(GradientSuite, SegObjectiveMatchesFiniteDifferences) {
    std::mt19937_64 rng(51);
    for (int trial = 0; trial < 50; ++trial) {
        const auto p = random_params(rng);
        const auto feats = random_feats(8, 8, rng);
        const auto labels = random_labels(8, 8, rng);
        const auto res = seg_objective(p, feats, labels);
        const auto num = numeric_gradient(flat(p), [&](const std::vector<double>& x) {
            return seg_objective(unflat(x), feats, labels).value;
        });
        EXPECT_LT(relative_error(flat(res.grad), num), 1e-4) << "trial " << trial;
    }
}

TEST(GradientSuite, DetObjectiveMatchesFiniteDifferences) {
    std::mt19937_64 rng(52);
    for (int trial = 0; trial < 50; ++trial) {
        const auto p = random_params(rng);
        const auto feats = random_feats(8, 8, rng);
        const auto target = prefseg::testing::random_grid(8, 8, 0.0, 1.5, rng);
        const auto res = det_objective(p, feats, target);
        const auto num = numeric_gradient(flat(p), [&](const std::vector<double>& x) {
            return det_objective(unflat(x), feats, target).value;
        });
        EXPECT_LT(relative_error(flat(res.grad), num), 1e-4) << "trial " << trial;
    }
}

TEST(GradientSuite, PclObjectiveMatchesFiniteDifferences) {
    std::mt19937_64 rng(53);
    std::uniform_int_distribution<int> pix(0, 7);
    auto points = [&](int n) {
        PointSet s;
        for (int i = 0; i < n; ++i) s.push_back({pix(rng), pix(rng), 1.0});
        return s;
    };
    for (int trial = 0; trial < 50; ++trial) {
        const auto p = random_params(rng);
        const auto feats = random_feats(8, 8, rng);
        const auto prompts = points(2), queries = points(3), negatives = points(6);
        const auto res = pcl_objective(p, feats, prompts, queries, negatives, 0.5);
        const auto num = numeric_gradient(flat(p), [&](const std::vector<double>& x) {
            return pcl_objective(unflat(x), feats, prompts, queries, negatives, 0.5).value;
        });
        EXPECT_LT(relative_error(flat(res.grad), num), 1e-4) << "trial " << trial;
    }
}

TEST(EmaHistoryTest, TeacherIsDecayWeightedStudentAverage) {
    const double decay = 0.9;
    model::ModelParams teacher;
    teacher.values()[0] = 2.0;
    std::vector<double> history{0.5, -1.0, 3.0, 0.25, 1.5};
    for (double s : history) {
        model::ModelParams student;
        student.values()[0] = s;
        teacher = model::ema_update(teacher, student, decay);
    }
    const size_t n = history.size();
    double expected = std::pow(decay, static_cast<double>(n)) * 2.0;
    for (size_t i = 0; i < n; ++i) expected += (1 - decay) * std::pow(decay, static_cast<double>(n - 1 - i)) * history[i];
    EXPECT_NEAR(teacher.values()[0], expected, 1e-14);
}

class Stage1Test : public ::testing::Test {
protected:
    void SetUp() override {
        synth::GeneratorConfig c;
        c.count = 2;
        c.height = 48;
        c.width = 48;
        c.min_blobs = 2;
        c.max_blobs = 3;
        source_ = synth::synthesize(c, 1);
        c.domain = synth::Domain::target;
        c.shift = synth::default_shift(c.domain);
        target_ = synth::synthesize(c, 2);
        cfg_.crop_size = 32;
        cfg_.iterations = 4;
        cfg_.num_negatives = 16;
        cfg_.seed = 5;
    }
    std::vector<synth::Sample> source_, target_;
    Stage1Config cfg_;
};

TEST_F(Stage1Test, ZeroIterationsReturnsInitialization) {
    cfg_.iterations = 0;
    const auto init = model::ModelParams::random(3);
    const auto res = train_stage1(source_, target_, 0.15, cfg_, init);
    EXPECT_EQ(res.student.params(), init);
    EXPECT_EQ(res.teacher.params(), init);
    EXPECT_TRUE(res.log.empty());
}

TEST_F(Stage1Test, ZeroLambdasLeaveOnlySegmentation) {
    cfg_.lambda_det = 0.0;
    cfg_.lambda_pcl = 0.0;
    const auto res = train_stage1(source_, target_, 0.15, cfg_, model::ModelParams::random(3));
    ASSERT_EQ(res.log.size(), 4u);
    for (const auto& e : res.log) EXPECT_EQ(e.total, e.seg);
}

TEST_F(Stage1Test, DoublingLambdaDetDoublesItsContribution) {
    cfg_.lambda_pcl = 0.0;
    const auto a = train_stage1(source_, target_, 0.15, cfg_, model::ModelParams::random(3));
    // The first step sees identical parameters, so only the weighting differs.
    cfg_.lambda_det *= 2.0;
    const auto b = train_stage1(source_, target_, 0.15, cfg_, model::ModelParams::random(3));
    EXPECT_EQ(a.log[0].det, b.log[0].det);
    EXPECT_DOUBLE_EQ(b.log[0].total - b.log[0].seg, 2.0 * (a.log[0].total - a.log[0].seg));
}

TEST_F(Stage1Test, DeterministicGivenSeed) {
    const auto a = train_stage1(source_, target_, 0.15, cfg_, model::ModelParams::random(3));
    const auto b = train_stage1(source_, target_, 0.15, cfg_, model::ModelParams::random(3));
    EXPECT_EQ(a.student.params(), b.student.params());
    EXPECT_EQ(a.teacher.params(), b.teacher.params());
    EXPECT_EQ(a.student.tag(), model::PolicyTag::student);
    EXPECT_EQ(a.teacher.tag(), model::PolicyTag::teacher);
    for (const auto& e : a.log) EXPECT_TRUE(std::isfinite(e.total));
}

TEST_F(Stage1Test, UdaModeRuns) {
    const auto res = train_stage1(source_, target_, 0.0, cfg_, model::ModelParams::random(3));
    EXPECT_EQ(res.log.size(), 4u);
    EXPECT_TRUE(res.student.params().all_finite());
}

TEST_F(Stage1Test, InvalidConfigThrows) {
    cfg_.delta_b = 0.95;
    EXPECT_THROW(train_stage1(source_, target_, 0.15, cfg_, model::ModelParams{}), std::invalid_argument);
}

TEST(Stage1LogTest, LineFormat) {
    const std::string line = format_log_line(Stage1LogEntry{3, 0.5, 0.25, 0.125, 0.75});
    EXPECT_EQ(line, "3, 0.5, 0.25, 0.125, 0.75");
}

TEST(SparseTargetPointsTest, FractionZeroIsEmpty) {
    synth::GeneratorConfig c;
    c.count = 2;
    c.height = 32;
    c.width = 32;
    const auto s = synth::synthesize(c, 4);
    for (const auto& p : sparse_target_points(s, 0.0, 1)) EXPECT_TRUE(p.empty());
    const auto some = sparse_target_points(s, 0.5, 1);
    ASSERT_EQ(some.size(), 2u);
    EXPECT_EQ(some, sparse_target_points(s, 0.5, 1));
}
