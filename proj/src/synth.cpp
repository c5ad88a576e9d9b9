#include "prefseg/synth.hpp"

#include "prefseg/filters.hpp"
#include "prefseg/image_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace prefseg::synth {

namespace fs = std::filesystem;

namespace {

constexpr double kBackgroundLevel = 0.42;
constexpr double kInteriorLevel = 0.74;
constexpr double kRimLevel = 0.16;
constexpr double kRimWidth = 2.0;
constexpr double kBaseNoise = 0.015;
constexpr double kRenderBlur = 0.6;

struct Blob {
    double cy = 0.0;
    double cx = 0.0;
    double a = 0.0;  // semi-axis along the rotated u direction
    double b = 0.0;
    double angle = 0.0;
    double exponent = 2.0;
    int lobes = 3;
    double lobe_amp = 0.0;
    double lobe_phase = 0.0;
    double cristae_phase = 0.0;

    double bound() const { return std::max(a, b) * (1.0 + lobe_amp) + 1.0; }

    // (distance from center, boundary radius along that direction, coordinate along major axis)
    void locate(double r, double c, double& dist, double& radius, double& u_out) const {
        const double dx = c - cx;
        const double dy = r - cy;
        const double u = dx * std::cos(angle) + dy * std::sin(angle);
        const double v = -dx * std::sin(angle) + dy * std::cos(angle);
        dist = std::hypot(u, v);
        const double t = std::atan2(v, u);
        const double se = std::pow(std::pow(std::abs(std::cos(t) / a), exponent) +
                                       std::pow(std::abs(std::sin(t) / b), exponent),
                                   -1.0 / exponent);
        radius = se * (1.0 + lobe_amp * std::cos(lobes * t + lobe_phase));
        u_out = u;
    }
};

std::mt19937_64 make_rng(std::uint64_t seed, Domain domain, int index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(domain), static_cast<std::uint32_t>(index)};
    return std::mt19937_64(seq);
}

std::vector<Blob> place_blobs(std::mt19937_64& rng, const GeneratorConfig& cfg) {
    std::uniform_int_distribution<int> count_dist(cfg.min_blobs, cfg.max_blobs);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int wanted = count_dist(rng);
    std::vector<Blob> blobs;
    for (int k = 0; k < wanted; ++k) {
        Blob b;
        b.a = 7.0 + 5.0 * unit(rng);
        b.b = 5.0 + 3.0 * unit(rng);
        b.angle = std::numbers::pi * unit(rng);
        b.exponent = 1.6 + 1.4 * unit(rng);
        b.lobes = 2 + static_cast<int>(3.0 * unit(rng)) % 3;
        b.lobe_amp = 0.15 * unit(rng);
        b.lobe_phase = 2.0 * std::numbers::pi * unit(rng);
        b.cristae_phase = 2.0 * std::numbers::pi * unit(rng);
        const double margin = b.bound() + 2.0 + cfg.bias_dilation_px;
        const double spacing_pad = 4.0 + 2.0 * cfg.bias_dilation_px;
        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
            const double lo_r = margin;
            const double hi_r = cfg.height - 1 - margin;
            const double lo_c = margin;
            const double hi_c = cfg.width - 1 - margin;
            if (hi_r <= lo_r || hi_c <= lo_c) break;
            b.cy = std::round(lo_r + (hi_r - lo_r) * unit(rng));
            b.cx = std::round(lo_c + (hi_c - lo_c) * unit(rng));
            placed = std::all_of(blobs.begin(), blobs.end(), [&](const Blob& o) {
                return std::hypot(o.cy - b.cy, o.cx - b.cx) >= o.bound() + b.bound() + spacing_pad;
            });
        }
        if (placed) blobs.push_back(b);
    }
    return blobs;
}

Grid<double> white_noise(std::mt19937_64& rng, int rows, int cols, double std_dev) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Grid<double> g(rows, cols);
    for (auto& v : g) v = std_dev * nd(rng);
    return g;
}

Sample render(const GeneratorConfig& cfg, std::uint64_t seed, int index) {
    auto rng = make_rng(seed, cfg.domain, index);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int rows = cfg.height;
    const int cols = cfg.width;

    // Texture parameters are drawn first so the draw order never depends on content.
    struct Wave {
        double freq, dir, phase, amp;
    };
    std::array<Wave, 2> waves{};
    const std::array<double, 2> amps{0.05, 0.035};
    for (int w = 0; w < 2; ++w) {
        waves[w].freq = (0.12 + 0.18 * unit(rng)) * cfg.shift.texture_freq_scale;
        waves[w].dir = std::numbers::pi * unit(rng);
        waves[w].phase = 2.0 * std::numbers::pi * unit(rng);
        waves[w].amp = amps[w];
    }
    auto clutter = filters::gaussian_blur(white_noise(rng, rows, cols, 1.0), 6.0 / cfg.shift.texture_freq_scale);
    double clutter_max = 1e-12;
    for (double v : clutter) clutter_max = std::max(clutter_max, std::abs(v));

    auto blobs = place_blobs(rng, cfg);

    Sample s;
    s.id = cfg.id_prefix + (cfg.domain == Domain::source ? "src" : "tgt") + "_" +
           (index < 10 ? "000" : index < 100 ? "00" : index < 1000 ? "0" : "") + std::to_string(index);
    Image img(rows, cols);
    s.true_mask = Mask(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            double v = kBackgroundLevel + 0.04 * clutter(r, c) / clutter_max;
            for (const auto& w : waves) {
                v += w.amp * std::sin(w.freq * (c * std::cos(w.dir) + r * std::sin(w.dir)) + w.phase);
            }
            for (const auto& b : blobs) {
                if (std::abs(r - b.cy) > b.bound() || std::abs(c - b.cx) > b.bound()) continue;
                double dist = 0.0;
                double radius = 0.0;
                double u = 0.0;
                b.locate(r, c, dist, radius, u);
                if (dist <= radius) {
                    s.true_mask(r, c) = 1;
                    v = dist > radius - kRimWidth ? kRimLevel
                                                  : kInteriorLevel + 0.04 * std::sin(0.9 * u + b.cristae_phase);
                }
            }
            img(r, c) = v;
        }
    }
    img = filters::gaussian_blur(img, kRenderBlur);
    auto base_noise = white_noise(rng, rows, cols, kBaseNoise);
    auto shift_noise = white_noise(rng, rows, cols, cfg.shift.noise_std);
    for (size_t i = 0; i < img.size(); ++i) {
        double v = img[i] + base_noise[i];
        v = v * cfg.shift.contrast_scale + cfg.shift.contrast_offset + shift_noise[i];
        img[i] = std::clamp(v, 0.0, 1.0);
    }
    s.image = io::quantize_roundtrip(img);

    for (const auto& b : blobs) s.centers.push_back(Point{static_cast<int>(b.cy), static_cast<int>(b.cx), 1.0});
    std::sort(s.centers.begin(), s.centers.end(),
              [](const Point& p, const Point& q) { return std::tie(p.row, p.col) < std::tie(q.row, q.col); });
    s.mask = cfg.bias_dilation_px > 0 ? dilate(s.true_mask, cfg.bias_dilation_px) : s.true_mask;
    return s;
}

void validate(const GeneratorConfig& cfg) {
    if (cfg.height < 16 || cfg.width < 16) throw std::invalid_argument("generator: H and W must be >= 16");
    if (cfg.count < 0) throw std::invalid_argument("generator: negative image count");
    if (cfg.min_blobs < 0 || cfg.max_blobs < cfg.min_blobs) throw std::invalid_argument("generator: bad blob range");
    if (cfg.bias_dilation_px < 0) throw std::invalid_argument("generator: negative bias dilation");
}

}  // namespace

std::string to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain parse_domain(const std::string& s) {
    if (s == "source") return Domain::source;
    if (s == "target") return Domain::target;
    throw std::invalid_argument("unknown domain '" + s + "'");
}

ShiftParams default_shift(Domain d) {
    if (d == Domain::source) return {};
    return ShiftParams{0.8, 0.18, 0.05, 1.5};
}

Mask dilate(const Mask& mask, int radius) {
    if (radius <= 0) return mask;
    Mask out(mask.rows(), mask.cols());
    for (int r = 0; r < mask.rows(); ++r) {
        for (int c = 0; c < mask.cols(); ++c) {
            if (!mask(r, c)) continue;
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx)
                    if (dy * dy + dx * dx <= radius * radius && out.in_bounds(r + dy, c + dx)) out(r + dy, c + dx) = 1;
        }
    }
    return out;
}

std::vector<Sample> synthesize(const GeneratorConfig& config, std::uint64_t seed) {
    validate(config);
    std::vector<Sample> out;
    out.reserve(config.count);
    for (int i = 0; i < config.count; ++i) out.push_back(render(config, seed, i));
    return out;
}

DatasetManifest gen_dataset(const GeneratorConfig& config, std::uint64_t seed, const fs::path& out_dir) {
    auto samples = synthesize(config, seed);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) throw std::runtime_error("cannot create output directory " + out_dir.string());

    DatasetManifest m;
    m.config = config;
    m.seed = seed;
    m.base_dir = out_dir;
    for (const auto& s : samples) {
        ManifestEntry e;
        e.id = s.id;
        e.image = fs::path("images") / (s.id + ".png");
        e.mask = fs::path("masks") / (s.id + ".png");
        e.points = fs::path("points") / (s.id + ".csv");
        io::write_image(out_dir / e.image, s.image);
        io::write_mask(out_dir / e.mask, s.mask);
        io::write_points(out_dir / e.points, s.centers);
        if (config.bias_dilation_px > 0) {
            e.true_mask = fs::path("true_masks") / (s.id + ".png");
            io::write_mask(out_dir / e.true_mask, s.true_mask);
        }
        m.entries.push_back(std::move(e));
    }
    save_manifest(m, out_dir / "manifest.txt");
    return m;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    const auto& c = m.config;
    os << "# prefseg dataset manifest\n"
       << "format = 1\n"
       << "domain = " << to_string(c.domain) << "\n"
       << "seed = " << m.seed << "\n"
       << "count = " << c.count << "\n"
       << "height = " << c.height << "\n"
       << "width = " << c.width << "\n"
       << "min_blobs = " << c.min_blobs << "\n"
       << "max_blobs = " << c.max_blobs << "\n";
    os.precision(17);
    os << "contrast_scale = " << c.shift.contrast_scale << "\n"
       << "contrast_offset = " << c.shift.contrast_offset << "\n"
       << "noise_std = " << c.shift.noise_std << "\n"
       << "texture_freq_scale = " << c.shift.texture_freq_scale << "\n"
       << "bias_dilation_px = " << c.bias_dilation_px << "\n"
       << "id_prefix = " << c.id_prefix << "\n";
    for (const auto& e : m.entries) {
        os << "entry = " << e.id << ' ' << e.image.generic_string() << ' ' << e.mask.generic_string() << ' '
           << e.points.generic_string();
        if (!e.true_mask.empty()) os << ' ' << e.true_mask.generic_string();
        os << '\n';
    }
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read manifest " + path.string());
    DatasetManifest m;
    m.base_dir = path.parent_path();
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "entry") {
            std::istringstream ls(value);
            ManifestEntry e;
            std::string img, msk, pts, truth;
            if (!(ls >> e.id >> img >> msk >> pts)) {
                throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed entry");
            }
            e.image = img;
            e.mask = msk;
            e.points = pts;
            if (ls >> truth) e.true_mask = truth;
            m.entries.push_back(std::move(e));
        } else {
            kv[key] = value;
        }
    }
    auto get = [&](const std::string& k) -> const std::string& {
        auto it = kv.find(k);
        if (it == kv.end()) throw std::runtime_error(path.string() + ": missing key '" + k + "'");
        return it->second;
    };
    auto& c = m.config;
    c.domain = parse_domain(get("domain"));
    m.seed = std::stoull(get("seed"));
    c.count = std::stoi(get("count"));
    c.height = std::stoi(get("height"));
    c.width = std::stoi(get("width"));
    c.min_blobs = std::stoi(get("min_blobs"));
    c.max_blobs = std::stoi(get("max_blobs"));
    c.shift.contrast_scale = std::stod(get("contrast_scale"));
    c.shift.contrast_offset = std::stod(get("contrast_offset"));
    c.shift.noise_std = std::stod(get("noise_std"));
    c.shift.texture_freq_scale = std::stod(get("texture_freq_scale"));
    c.bias_dilation_px = std::stoi(get("bias_dilation_px"));
    if (kv.count("id_prefix")) c.id_prefix = kv["id_prefix"];
    return m;
}

std::vector<Sample> load_samples(const DatasetManifest& m) {
    std::vector<Sample> out;
    for (const auto& e : m.entries) {
        for (const auto* p : {&e.image, &e.mask, &e.points}) {
            if (!fs::exists(m.base_dir / *p)) throw std::runtime_error("missing dataset file " + (m.base_dir / *p).string());
        }
        Sample s;
        s.id = e.id;
        s.image = io::read_image(m.base_dir / e.image);
        s.mask = io::read_mask(m.base_dir / e.mask);
        s.true_mask = e.true_mask.empty() ? s.mask : io::read_mask(m.base_dir / e.true_mask);
        s.centers = io::read_points(m.base_dir / e.points);
        require_same_shape(s.image, s.mask, ("entry " + e.id).c_str());
        require_same_shape(s.image, s.true_mask, ("entry " + e.id).c_str());
        for (const auto& p : s.centers) {
            if (!s.image.in_bounds(p.row, p.col)) throw std::runtime_error("entry " + e.id + ": point out of bounds");
        }
        out.push_back(std::move(s));
    }
    return out;
}

PointSet sample_sparse_points(const PointSet& full, double fraction, std::uint64_t seed) {
    if (full.empty()) throw std::invalid_argument("sample_sparse_points: empty point set");
    if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("sample_sparse_points: fraction must be in (0,1]");
    const auto n = full.size();
    const size_t k = std::clamp<size_t>(static_cast<size_t>(std::llround(fraction * static_cast<double>(n))), 1, n);
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    PointSet out;
    out.reserve(k);
    for (auto i : idx) out.push_back(full[i]);
    return out;
}

DensityMap rasterize_density(const PointSet& points, double sigma, int rows, int cols) {
    if (!(sigma > 0.0)) throw std::invalid_argument("rasterize_density: sigma must be positive");
    DensityMap d(rows, cols, 0.0);
    const double cutoff = 3.0 * sigma;
    const int reach = static_cast<int>(std::floor(cutoff));
    for (const auto& p : points) {
        for (int dy = -reach; dy <= reach; ++dy) {
            for (int dx = -reach; dx <= reach; ++dx) {
                const int r = p.row + dy;
                const int c = p.col + dx;
                if (!d.in_bounds(r, c)) continue;
                const double d2 = static_cast<double>(dy * dy + dx * dx);
                if (d2 > cutoff * cutoff) continue;
                d(r, c) += std::exp(-d2 / (2.0 * sigma * sigma));
            }
        }
    }
    return d;
}

}  // namespace prefseg::synth
