#include "prefseg/model.hpp"

#include "prefseg/filters.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace prefseg::model {

namespace {

// Fixed channel gains so every channel spans roughly unit range.
constexpr double kGradGain = 4.0;
constexpr double kVarianceGain = 16.0;

// Intensities are centered to [-1, 1].
double center(double v) { return 2.0 * v - 1.0; }

struct ArraySpec {
    const char* name;
    size_t offset;
    int rows;
    int cols;
};

constexpr std::array<ArraySpec, 7> kArrays{{
    {"hidden_w", 0, kHidden, kChannels},
    {"hidden_b", ModelParams::kOffHiddenB, kHidden, 1},
    {"seg_w", ModelParams::kOffSegW, kHidden, 1},
    {"seg_b", ModelParams::kOffSegB, 1, 1},
    {"det_w", ModelParams::kOffDetW, kHidden, 1},
    {"det_b", ModelParams::kOffDetB, 1, 1},
    {"proj_w", ModelParams::kOffProj, kEmbed, kHidden},
}};

}  // namespace

FeatureStack::FeatureStack(int rows, int cols)
    : rows_(rows), cols_(cols), data_(static_cast<size_t>(kChannels) * rows * cols, 0.0) {}

FeatureStack FeatureStack::crop(const Rect& r) const {
    if (r.row0 < 0 || r.col0 < 0 || r.row1 > rows_ || r.col1 > cols_ || r.height() <= 0 || r.width() <= 0) {
        throw std::invalid_argument("FeatureStack::crop: rectangle out of bounds");
    }
    FeatureStack out(r.height(), r.width());
    for (int c = 0; c < kChannels; ++c) {
        auto src = channel(c);
        auto dst = out.channel(c);
        for (int y = 0; y < r.height(); ++y)
            for (int x = 0; x < r.width(); ++x)
                dst[static_cast<size_t>(y) * r.width() + x] = src[static_cast<size_t>(r.row0 + y) * cols_ + r.col0 + x];
    }
    return out;
}

FeatureStack FeatureStack::flipped(bool horizontal, bool vertical) const {
    FeatureStack out(rows_, cols_);
    for (int c = 0; c < kChannels; ++c) {
        auto src = channel(c);
        auto dst = out.channel(c);
        for (int y = 0; y < rows_; ++y) {
            const int sy = vertical ? rows_ - 1 - y : y;
            for (int x = 0; x < cols_; ++x) {
                const int sx = horizontal ? cols_ - 1 - x : x;
                dst[static_cast<size_t>(y) * cols_ + x] = src[static_cast<size_t>(sy) * cols_ + sx];
            }
        }
    }
    return out;
}

void FeatureStack::set_prompts(const PointSet& prompts) {
    auto raster = rasterize_prompts(prompts, rows_, cols_);
    std::copy(raster.begin(), raster.end(), channel(kPrompt).begin());
}

Grid<double> rasterize_prompts(const PointSet& points, int rows, int cols) {
    Grid<double> out(rows, cols, 0.0);
    const int reach = static_cast<int>(std::ceil(3.0 * kPromptSigma));
    for (const auto& p : points) {
        for (int dy = -reach; dy <= reach; ++dy) {
            for (int dx = -reach; dx <= reach; ++dx) {
                const int r = p.row + dy;
                const int c = p.col + dx;
                if (!out.in_bounds(r, c)) continue;
                const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * kPromptSigma * kPromptSigma));
                out(r, c) = std::max(out(r, c), v);
            }
        }
    }
    return out;
}

FeatureStack extract_features(const Image& image, const PointSet& prompts) {
    const int rows = image.rows();
    const int cols = image.cols();
    FeatureStack f(rows, cols);
    const auto s1 = filters::gaussian_blur(image, 1.0);
    const auto s2 = filters::gaussian_blur(image, 2.0);
    const auto s4 = filters::gaussian_blur(image, 4.0);
    const auto g1 = filters::gradient_magnitude(s1);
    const auto g2 = filters::gradient_magnitude(s2);
    const auto var = filters::local_variance(image, 2);
    for (size_t i = 0; i < image.size(); ++i) {
        f.channel(kRaw)[i] = center(image[i]);
        f.channel(kSmooth1)[i] = center(s1[i]);
        f.channel(kSmooth2)[i] = center(s2[i]);
        f.channel(kSmooth4)[i] = center(s4[i]);
        f.channel(kGrad1)[i] = kGradGain * g1[i];
        f.channel(kGrad2)[i] = kGradGain * g2[i];
        f.channel(kVariance)[i] = kVarianceGain * var[i];
        f.channel(kBias)[i] = 1.0;
    }
    f.set_prompts(prompts);
    return f;
}

ModelParams ModelParams::random(std::uint64_t seed) {
    ModelParams p;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (auto& w : p.hidden_w()) w = nd(rng) * 0.5 / std::sqrt(static_cast<double>(kChannels));
    for (auto& w : p.seg_w()) w = nd(rng) * 0.5 / std::sqrt(static_cast<double>(kHidden));
    for (auto& w : p.det_w()) w = nd(rng) * 0.5 / std::sqrt(static_cast<double>(kHidden));
    for (auto& w : p.proj_w()) w = nd(rng) / std::sqrt(static_cast<double>(kHidden));
    return p;
}

bool ModelParams::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void ModelParams::axpy(double scale, const ModelParams& other) {
    for (size_t i = 0; i < values_.size(); ++i) values_[i] += scale * other.values_[i];
}

void ModelParams::set_zero() { std::fill(values_.begin(), values_.end(), 0.0); }

std::string to_string(PolicyTag tag) {
    switch (tag) {
        case PolicyTag::student: return "student";
        case PolicyTag::teacher: return "teacher";
        case PolicyTag::reference: return "reference";
    }
    return "unknown";
}

ModelParams& PolicySnapshot::mutable_params() {
    if (tag_ == PolicyTag::reference) throw std::logic_error("reference policy snapshots are immutable");
    return params_;
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double clamped_prob(double logit) { return std::clamp(sigmoid(logit), kProbEpsilon, 1.0 - kProbEpsilon); }

bool prob_clamped(double logit) {
    const double p = sigmoid(logit);
    return p <= kProbEpsilon || p >= 1.0 - kProbEpsilon;
}

ForwardPass forward(const ModelParams& params, const FeatureStack& feats) {
    if (!params.all_finite()) throw std::invalid_argument("forward: non-finite parameters");
    const size_t n = feats.pixels();
    ForwardPass out;
    out.hidden.assign(n * kHidden, 0.0);
    out.seg_logit = Grid<double>(feats.rows(), feats.cols());
    out.prob = ProbMap(feats.rows(), feats.cols());
    out.det_pre = Grid<double>(feats.rows(), feats.cols());
    out.density = DensityMap(feats.rows(), feats.cols());
    const auto hw = params.hidden_w();
    const auto hb = params.hidden_b();
    const auto sw = params.seg_w();
    const auto dw = params.det_w();
    std::array<double, kChannels> x{};
    for (size_t i = 0; i < n; ++i) {
        for (int c = 0; c < kChannels; ++c) x[c] = feats.at(c, i);
        double* h = out.hidden.data() + i * kHidden;
        double s = params.seg_b();
        double d = params.det_b();
        for (int k = 0; k < kHidden; ++k) {
            double a = hb[k];
            const double* w = hw.data() + static_cast<size_t>(k) * kChannels;
            for (int c = 0; c < kChannels; ++c) a += w[c] * x[c];
            h[k] = std::tanh(a);
            s += sw[k] * h[k];
            d += dw[k] * h[k];
        }
        out.seg_logit[i] = s;
        out.prob[i] = clamped_prob(s);
        out.det_pre[i] = d;
        out.density[i] = softplus(d);
    }
    return out;
}

ProbMap forward_seg(const ModelParams& params, const FeatureStack& feats) { return forward(params, feats).prob; }

DensityMap forward_det(const ModelParams& params, const FeatureStack& feats) { return forward(params, feats).density; }

namespace {

std::array<double, kHidden> hidden_at(const ModelParams& params, const FeatureStack& feats, const Point& p) {
    if (p.row < 0 || p.col < 0 || p.row >= feats.rows() || p.col >= feats.cols()) {
        throw std::invalid_argument("embed_point: point out of bounds");
    }
    const size_t i = static_cast<size_t>(p.row) * feats.cols() + p.col;
    std::array<double, kHidden> h{};
    const auto hw = params.hidden_w();
    for (int k = 0; k < kHidden; ++k) {
        double a = params.hidden_b()[k];
        for (int c = 0; c < kChannels; ++c) a += hw[static_cast<size_t>(k) * kChannels + c] * feats.at(c, i);
        h[k] = std::tanh(a);
    }
    return h;
}

std::array<double, kEmbed> project(const ModelParams& params, const std::array<double, kHidden>& h) {
    std::array<double, kEmbed> z{};
    const auto pw = params.proj_w();
    for (int e = 0; e < kEmbed; ++e) {
        double acc = 0.0;
        for (int k = 0; k < kHidden; ++k) acc += pw[static_cast<size_t>(e) * kHidden + k] * h[k];
        z[e] = acc;
    }
    return z;
}

double norm(const std::array<double, kEmbed>& z) {
    double s = 0.0;
    for (double v : z) s += v * v;
    return std::sqrt(s);
}

}  // namespace

std::array<double, kEmbed> embed_point(const ModelParams& params, const FeatureStack& feats, const Point& point) {
    auto z = project(params, hidden_at(params, feats, point));
    const double n = norm(z);
    if (n == 0.0) {
        std::array<double, kEmbed> e{};
        e[0] = 1.0;
        return e;
    }
    for (auto& v : z) v /= n;
    return z;
}

ModelParams ema_update(const ModelParams& teacher, const ModelParams& student, double decay) {
    if (teacher.values().size() != student.values().size()) throw std::invalid_argument("ema_update: shape mismatch");
    if (!(decay >= 0.0 && decay < 1.0)) throw std::invalid_argument("ema_update: decay must be in [0,1)");
    ModelParams out;
    auto t = teacher.values();
    auto s = student.values();
    auto o = out.values();
    for (size_t i = 0; i < o.size(); ++i) o[i] = decay * t[i] + (1.0 - decay) * s[i];
    return out;
}

void backward(const ModelParams& params, const FeatureStack& feats, const ForwardPass& pass,
              const Grid<double>* seg_logit_grad, const Grid<double>* det_pre_grad, ModelParams& grad) {
    const size_t n = feats.pixels();
    if (seg_logit_grad && seg_logit_grad->size() != n) throw std::invalid_argument("backward: seg grad shape");
    if (det_pre_grad && det_pre_grad->size() != n) throw std::invalid_argument("backward: det grad shape");
    const auto sw = params.seg_w();
    const auto dw = params.det_w();
    auto g_hw = grad.hidden_w();
    auto g_hb = grad.hidden_b();
    auto g_sw = grad.seg_w();
    auto g_dw = grad.det_w();
    for (size_t i = 0; i < n; ++i) {
        const double gs = seg_logit_grad ? (*seg_logit_grad)[i] : 0.0;
        const double gd = det_pre_grad ? (*det_pre_grad)[i] : 0.0;
        if (gs == 0.0 && gd == 0.0) continue;
        const double* h = pass.hidden.data() + i * kHidden;
        grad.seg_b() += gs;
        grad.det_b() += gd;
        for (int k = 0; k < kHidden; ++k) {
            g_sw[k] += gs * h[k];
            g_dw[k] += gd * h[k];
            const double da = (gs * sw[k] + gd * dw[k]) * (1.0 - h[k] * h[k]);
            g_hb[k] += da;
            double* gw = g_hw.data() + static_cast<size_t>(k) * kChannels;
            for (int c = 0; c < kChannels; ++c) gw[c] += da * feats.at(c, i);
        }
    }
}

void backward_embedding(const ModelParams& params, const FeatureStack& feats, const Point& point,
                        std::span<const double> unit_grad, ModelParams& grad) {
    if (unit_grad.size() != static_cast<size_t>(kEmbed)) throw std::invalid_argument("backward_embedding: size");
    const auto h = hidden_at(params, feats, point);
    const auto z = project(params, h);
    const double n = norm(z);
    if (n == 0.0) return;  // degenerate basis-vector rule is locally constant
    std::array<double, kEmbed> u{};
    double dot = 0.0;
    for (int e = 0; e < kEmbed; ++e) {
        u[e] = z[e] / n;
        dot += u[e] * unit_grad[e];
    }
    // d(z/|z|)/dz = (I - u u^T) / |z|
    std::array<double, kEmbed> gz{};
    for (int e = 0; e < kEmbed; ++e) gz[e] = (unit_grad[e] - u[e] * dot) / n;

    const auto pw = params.proj_w();
    auto g_pw = grad.proj_w();
    std::array<double, kHidden> gh{};
    for (int e = 0; e < kEmbed; ++e) {
        for (int k = 0; k < kHidden; ++k) {
            g_pw[static_cast<size_t>(e) * kHidden + k] += gz[e] * h[k];
            gh[k] += gz[e] * pw[static_cast<size_t>(e) * kHidden + k];
        }
    }
    const size_t i = static_cast<size_t>(point.row) * feats.cols() + point.col;
    auto g_hw = grad.hidden_w();
    auto g_hb = grad.hidden_b();
    for (int k = 0; k < kHidden; ++k) {
        const double da = gh[k] * (1.0 - h[k] * h[k]);
        g_hb[k] += da;
        for (int c = 0; c < kChannels; ++c) g_hw[static_cast<size_t>(k) * kChannels + c] += da * feats.at(c, i);
    }
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
    os << "prefseg-checkpoint 1\n";
    os << std::hexfloat;
    const auto v = params.values();
    for (const auto& a : kArrays) {
        os << a.name << ' ' << a.rows << ' ' << a.cols << '\n';
        for (int r = 0; r < a.rows; ++r) {
            for (int c = 0; c < a.cols; ++c) {
                if (c) os << ' ';
                os << v[a.offset + static_cast<size_t>(r) * a.cols + c];
            }
            os << '\n';
        }
    }
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read checkpoint " + path.string());
    std::string magic;
    int version = 0;
    if (!(is >> magic >> version) || magic != "prefseg-checkpoint") {
        throw std::runtime_error(path.string() + ": not a prefseg checkpoint");
    }
    if (version != 1) throw std::runtime_error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    ModelParams p;
    auto v = p.values();
    for (const auto& a : kArrays) {
        std::string name;
        int rows = 0;
        int cols = 0;
        if (!(is >> name >> rows >> cols) || name != a.name || rows != a.rows || cols != a.cols) {
            throw std::runtime_error(path.string() + ": expected array header '" + a.name + "'");
        }
        for (int i = 0; i < rows * cols; ++i) {
            std::string tok;
            if (!(is >> tok)) throw std::runtime_error(path.string() + ": truncated array " + a.name);
            char* end = nullptr;
            const double val = std::strtod(tok.c_str(), &end);
            if (end == tok.c_str() || *end != '\0') throw std::runtime_error(path.string() + ": bad value '" + tok + "'");
            v[a.offset + i] = val;
        }
    }
    return p;
}

}  // namespace prefseg::model
