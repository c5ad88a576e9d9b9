#include "prefseg/image_io.hpp"
#include "prefseg/synth.hpp"
#include "test_util.hpp"

#include <fstream>
#include <queue>
#include <sstream>

using namespace prefseg;
using prefseg::testing::TempDir;
namespace fs = std::filesystem;

namespace {

// Plain BFS component count, 4-connectivity.
int flood_fill_components(const Mask& m) {
    Grid<int> seen(m.rows(), m.cols(), 0);
    int count = 0;
    for (int r = 0; r < m.rows(); ++r) {
        for (int c = 0; c < m.cols(); ++c) {
            if (!m(r, c) || seen(r, c)) continue;
            ++count;
            std::queue<std::pair<int, int>> q;
            q.push({r, c});
            seen(r, c) = 1;
            while (!q.empty()) {
                auto [y, x] = q.front();
                q.pop();
                const int dy[4] = {-1, 1, 0, 0};
                const int dx[4] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int yy = y + dy[k];
                    const int xx = x + dx[k];
                    if (m.in_bounds(yy, xx) && m(yy, xx) && !seen(yy, xx)) {
                        seen(yy, xx) = 1;
                        q.push({yy, xx});
                    }
                }
            }
        }
    }
    return count;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

synth::GeneratorConfig small_config(int count, int blobs) {
    synth::GeneratorConfig c;
    c.count = count;
    c.height = 64;
    c.width = 64;
    c.min_blobs = blobs;
    c.max_blobs = blobs;
    return c;
}

}  // namespace

TEST(SynthTest, NoBlobsGivesEmptyMaskAndPoints) {
    const auto s = synth::synthesize(small_config(1, 0), 7);
    ASSERT_EQ(s.size(), 1u);
    EXPECT_EQ(count_foreground(s[0].mask), 0);
    EXPECT_TRUE(s[0].centers.empty());
}

TEST(SynthTest, OneBlobRunTwiceIsBitIdentical) {
    TempDir a("synth"), b("synth");
    synth::gen_dataset(small_config(1, 1), 7, a.path());
    synth::gen_dataset(small_config(1, 1), 7, b.path());
    std::vector<std::string> names;
    for (const auto& e : fs::recursive_directory_iterator(a.path())) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), a.path());
        ASSERT_TRUE(fs::exists(b.path() / rel)) << rel;
        EXPECT_EQ(slurp(e.path()), slurp(b.path() / rel)) << rel;
        names.push_back(rel.string());
    }
    EXPECT_EQ(names.size(), 4u);  // image, mask, points, manifest
}

TEST(SynthTest, PointCountEqualsComponentCount) {
    synth::GeneratorConfig c;
    c.count = 4;
    c.height = 128;
    c.width = 128;
    c.min_blobs = 3;
    c.max_blobs = 8;
    const auto samples = synth::synthesize(c, 1);
    ASSERT_EQ(samples.size(), 4u);
    for (const auto& s : samples) {
        EXPECT_EQ(static_cast<int>(s.centers.size()), flood_fill_components(s.true_mask)) << s.id;
        EXPECT_GE(s.centers.size(), 3u);
        EXPECT_LE(s.centers.size(), 8u);
        for (const auto& p : s.centers) EXPECT_TRUE(s.true_mask(p.row, p.col)) << s.id;
    }
}

TEST(SynthTest, ImagesAreFiniteAndInRange) {
    synth::GeneratorConfig c = small_config(3, 4);
    c.domain = synth::Domain::target;
    c.shift = synth::default_shift(c.domain);
    for (const auto& s : synth::synthesize(c, 11)) {
        for (double v : s.image) {
            EXPECT_TRUE(std::isfinite(v));
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
        EXPECT_EQ(s.image, io::quantize_roundtrip(s.image));
    }
}

TEST(SynthTest, DomainsDrawIndependentScenes) {
    synth::GeneratorConfig src = small_config(1, 3);
    synth::GeneratorConfig tgt = src;
    tgt.domain = synth::Domain::target;
    tgt.shift = synth::default_shift(tgt.domain);
    const auto a = synth::synthesize(src, 5);
    const auto b = synth::synthesize(tgt, 5);
    EXPECT_NE(a[0].image, b[0].image);
    EXPECT_NE(a[0].id, b[0].id);
    EXPECT_EQ(b[0].image, synth::synthesize(tgt, 5)[0].image);
}

TEST(SynthTest, DefaultShift) {
    EXPECT_EQ(synth::default_shift(synth::Domain::source), synth::ShiftParams{});
    const auto t = synth::default_shift(synth::Domain::target);
    EXPECT_DOUBLE_EQ(t.contrast_scale, 0.8);
    EXPECT_DOUBLE_EQ(t.noise_std, 0.05);
    EXPECT_DOUBLE_EQ(t.texture_freq_scale, 1.5);
}

TEST(SynthTest, BiasedMaskContainsTrueMaskWithinDilationDistance) {
    for (int k : {1, 2, 3}) {
        synth::GeneratorConfig c = small_config(2, 3);
        c.bias_dilation_px = k;
        for (const auto& s : synth::synthesize(c, 21)) {
            long strict = 0;
            for (size_t i = 0; i < s.mask.size(); ++i) {
                if (s.true_mask[i]) {
                    EXPECT_TRUE(s.mask[i]);
                }
                strict += s.mask[i] && !s.true_mask[i];
            }
            EXPECT_GT(strict, 0);
            // Directed distance from the stored mask to the true mask.
            double worst = 0.0;
            for (int r = 0; r < s.mask.rows(); ++r) {
                for (int col = 0; col < s.mask.cols(); ++col) {
                    if (!s.mask(r, col) || s.true_mask(r, col)) continue;
                    double best = 1e9;
                    for (int y = 0; y < s.true_mask.rows(); ++y)
                        for (int x = 0; x < s.true_mask.cols(); ++x)
                            if (s.true_mask(y, x)) best = std::min(best, std::hypot(y - r, x - col));
                    worst = std::max(worst, best);
                }
            }
            EXPECT_LE(worst, k * std::sqrt(2.0) + 1e-12) << "k=" << k;
        }
    }
}

TEST(SynthTest, InvalidConfigThrows) {
    auto c = small_config(1, 1);
    c.height = 15;
    EXPECT_THROW(synth::synthesize(c, 1), std::invalid_argument);
    c = small_config(1, 1);
    c.min_blobs = 4;
    c.max_blobs = 2;
    EXPECT_THROW(synth::synthesize(c, 1), std::invalid_argument);
}

TEST(SynthTest, UnwritableOutputDirectoryThrows) {
    TempDir dir("synth");
    std::ofstream(dir / "file") << "x";
    EXPECT_THROW(synth::gen_dataset(small_config(1, 1), 1, dir / "file" / "sub"), std::runtime_error);
}

TEST(SynthTest, ManifestRoundTrip) {
    TempDir dir("synth");
    auto c = small_config(2, 2);
    c.bias_dilation_px = 2;
    c.id_prefix = "x_";
    const auto written = synth::gen_dataset(c, 9, dir.path());
    const auto m = synth::load_manifest(dir / "manifest.txt");
    EXPECT_EQ(m.seed, 9u);
    EXPECT_EQ(m.config.bias_dilation_px, 2);
    EXPECT_EQ(m.config.shift, c.shift);
    ASSERT_EQ(m.entries.size(), 2u);
    const auto loaded = synth::load_samples(m);
    const auto fresh = synth::synthesize(c, 9);
    for (size_t i = 0; i < fresh.size(); ++i) {
        EXPECT_EQ(loaded[i].id, fresh[i].id);
        EXPECT_EQ(loaded[i].image, fresh[i].image);
        EXPECT_EQ(loaded[i].mask, fresh[i].mask);
        EXPECT_EQ(loaded[i].true_mask, fresh[i].true_mask);
        EXPECT_EQ(loaded[i].centers, fresh[i].centers);
    }
    fs::remove(dir / written.entries[0].mask);
    EXPECT_THROW(synth::load_samples(m), std::runtime_error);
}

TEST(SparsePointsTest, CountsFollowRoundingWithMinimumOne) {
    auto make = [](int n) {
        PointSet p;
        for (int i = 0; i < n; ++i) p.push_back({i, 2 * i, 1.0});
        return p;
    };
    EXPECT_EQ(synth::sample_sparse_points(make(20), 0.15, 1).size(), 3u);
    EXPECT_EQ(synth::sample_sparse_points(make(5), 1.0, 1), make(5));
    EXPECT_EQ(synth::sample_sparse_points(make(3), 0.01, 1).size(), 1u);
    EXPECT_THROW(synth::sample_sparse_points({}, 0.5, 1), std::invalid_argument);
    EXPECT_THROW(synth::sample_sparse_points(make(3), 0.0, 1), std::invalid_argument);
}

TEST(SparsePointsTest, DeterministicSubsetWithoutReplacement) {
    PointSet full;
    for (int i = 0; i < 40; ++i) full.push_back({i, i, 1.0});
    const auto a = synth::sample_sparse_points(full, 0.25, 42);
    EXPECT_EQ(a, synth::sample_sparse_points(full, 0.25, 42));
    ASSERT_EQ(a.size(), 10u);
    std::set<int> rows;
    for (const auto& p : a) rows.insert(p.row);
    EXPECT_EQ(rows.size(), 10u);
}

TEST(DensityTest, EmptyPointsGiveZeroMap) {
    for (double v : synth::rasterize_density({}, 2.0, 8, 8)) EXPECT_EQ(v, 0.0);
}

TEST(DensityTest, SingleBumpMatchesGaussian) {
    const auto d = synth::rasterize_density({{5, 5, 1.0}}, 2.0, 16, 16);
    EXPECT_DOUBLE_EQ(d(5, 5), 1.0);
    EXPECT_NEAR(d(5, 6), std::exp(-1.0 / 8.0), 1e-15);
    EXPECT_NEAR(d(5, 6), 0.8825, 1e-4);
    EXPECT_NEAR(d(7, 8), std::exp(-13.0 / 8.0), 1e-15);
    EXPECT_EQ(d(5, 12), 0.0);  // beyond 3 sigma
}

TEST(DensityTest, OverlappingBumpsSum) {
    const auto d = synth::rasterize_density({{5, 5, 1.0}, {5, 6, 1.0}}, 2.0, 16, 16);
    EXPECT_GT(d(5, 5), 1.0);
    EXPECT_GT(d(5, 6), 1.0);
    EXPECT_NEAR(d(5, 5), 1.0 + std::exp(-1.0 / 8.0), 1e-15);
}

TEST(DilateTest, EuclideanDisk) {
    Mask m(9, 9);
    m(4, 4) = 1;
    const Mask d = synth::dilate(m, 2);
    for (int r = 0; r < 9; ++r)
        for (int c = 0; c < 9; ++c)
            EXPECT_EQ(d(r, c) != 0, (r - 4) * (r - 4) + (c - 4) * (c - 4) <= 4) << r << "," << c;
}
