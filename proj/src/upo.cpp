#include "prefseg/upo.hpp"

#include "prefseg/filters.hpp"
#include "prefseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <stdexcept>

namespace prefseg::upo {

void DrlseParams::validate() const {
    if (!(sigma_g > 0.0)) throw std::invalid_argument("drlse: sigma_g must be > 0");
    if (!(timestep > 0.0)) throw std::invalid_argument("drlse: timestep must be > 0");
    if (!(mu >= 0.0) || !(timestep * mu < 0.25)) throw std::invalid_argument("drlse: timestep * mu must be below 0.25");
    if (!(lambda >= 0.0)) throw std::invalid_argument("drlse: lambda must be >= 0");
    if (!std::isfinite(alpha)) throw std::invalid_argument("drlse: alpha must be finite");
    if (iterations < 1) throw std::invalid_argument("drlse: iterations must be >= 1");
    if (!(c0 > 0.0)) throw std::invalid_argument("drlse: c0 must be > 0");
    if (!(epsilon > 0.0)) throw std::invalid_argument("drlse: epsilon must be > 0");
    if (!(intensity_scale > 0.0)) throw std::invalid_argument("drlse: intensity_scale must be > 0");
    if (margin < 1) throw std::invalid_argument("drlse: margin must be >= 1");
}

namespace {

// Central differences inside, one-sided differences on the border.
void one_sided_gradient(const Grid<double>& f, Grid<double>& dx, Grid<double>& dy) {
    const int rows = f.rows();
    const int cols = f.cols();
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            if (cols == 1) dx(r, c) = 0.0;
            else if (c == 0) dx(r, c) = f(r, 1) - f(r, 0);
            else if (c == cols - 1) dx(r, c) = f(r, c) - f(r, c - 1);
            else dx(r, c) = 0.5 * (f(r, c + 1) - f(r, c - 1));

            if (rows == 1) dy(r, c) = 0.0;
            else if (r == 0) dy(r, c) = f(1, c) - f(0, c);
            else if (r == rows - 1) dy(r, c) = f(r, c) - f(r - 1, c);
            else dy(r, c) = 0.5 * (f(r + 1, c) - f(r - 1, c));
        }
    }
}

Grid<double> divergence(const Grid<double>& nx, const Grid<double>& ny) {
    Grid<double> nxx(nx.rows(), nx.cols()), unused(nx.rows(), nx.cols()), nyy(nx.rows(), nx.cols());
    one_sided_gradient(nx, nxx, unused);
    one_sided_gradient(ny, unused, nyy);
    for (size_t i = 0; i < nxx.size(); ++i) nxx[i] += nyy[i];
    return nxx;
}

Grid<double> laplacian(const Grid<double>& f) {
    const int rows = f.rows();
    const int cols = f.cols();
    Grid<double> out(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const double up = f(std::max(r - 1, 0), c);
            const double down = f(std::min(r + 1, rows - 1), c);
            const double left = f(r, std::max(c - 1, 0));
            const double right = f(r, std::min(c + 1, cols - 1));
            out(r, c) = up + down + left + right - 4.0 * f(r, c);
        }
    }
    return out;
}

void neumann(Grid<double>& phi) {
    const int rows = phi.rows();
    const int cols = phi.cols();
    for (int c = 0; c < cols; ++c) {
        phi(0, c) = phi(2, c);
        phi(rows - 1, c) = phi(rows - 3, c);
    }
    for (int r = 0; r < rows; ++r) {
        phi(r, 0) = phi(r, 2);
        phi(r, cols - 1) = phi(r, cols - 3);
    }
}

double dirac(double x, double eps) {
    if (x > eps || x < -eps) return 0.0;
    return (0.5 / eps) * (1.0 + std::cos(std::numbers::pi * x / eps));
}

}  // namespace

Grid<double> edge_indicator(const Image& image, double sigma, double intensity_scale) {
    if (!(sigma > 0.0)) throw std::invalid_argument("edge_indicator: sigma must be > 0");
    Grid<double> scaled = image;
    for (auto& v : scaled) v *= intensity_scale;
    const auto grad = filters::central_gradient(filters::gaussian_blur(scaled, sigma));
    Grid<double> g(image.rows(), image.cols());
    for (size_t i = 0; i < g.size(); ++i) g[i] = 1.0 / (1.0 + grad.dx[i] * grad.dx[i] + grad.dy[i] * grad.dy[i]);
    return g;
}

LevelSet init_levelset(const Mask& mask, double c0) {
    if (!(c0 > 0.0)) throw std::invalid_argument("init_levelset: c0 must be > 0");
    const long fg = count_foreground(mask);
    if (fg == 0 || fg == static_cast<long>(mask.size())) throw std::invalid_argument("init_levelset: mask has no interface");
    LevelSet phi(mask.rows(), mask.cols());
    for (size_t i = 0; i < phi.size(); ++i) phi[i] = mask[i] ? -c0 : c0;
    return phi;
}

LevelSet drlse_evolve(LevelSet phi, const Grid<double>& g, const DrlseParams& params) {
    params.validate();
    require_same_shape(phi, g, "drlse_evolve");
    if (phi.rows() < 3 || phi.cols() < 3) throw std::invalid_argument("drlse_evolve: level set must be at least 3x3");
    const int rows = phi.rows();
    const int cols = phi.cols();
    Grid<double> vx(rows, cols), vy(rows, cols);
    one_sided_gradient(g, vx, vy);
    // Positive area weight grows phi, i.e. shrinks the negative interior.
    const double area_weight = -params.alpha;

    Grid<double> px(rows, cols), py(rows, cols), nx(rows, cols), ny(rows, cols), rx(rows, cols), ry(rows, cols);
    for (int it = 0; it < params.iterations; ++it) {
        neumann(phi);
        one_sided_gradient(phi, px, py);
        for (size_t i = 0; i < phi.size(); ++i) {
            const double s = std::hypot(px[i], py[i]);
            nx[i] = px[i] / (s + 1e-10);
            ny[i] = py[i] / (s + 1e-10);
            // Double-well potential: p'(s)/s with p'(s) = sin(2 pi s) / (2 pi) below 1, s - 1 above.
            const double ps = s <= 1.0 ? std::sin(2.0 * std::numbers::pi * s) / (2.0 * std::numbers::pi) : s - 1.0;
            const double dps = (ps != 0.0 ? ps : 1.0) / (s != 0.0 ? s : 1.0);
            rx[i] = dps * px[i] - px[i];
            ry[i] = dps * py[i] - py[i];
        }
        const auto curvature = divergence(nx, ny);
        auto dist_reg = divergence(rx, ry);
        const auto lap = laplacian(phi);
        for (size_t i = 0; i < phi.size(); ++i) {
            const double d = dirac(phi[i], params.epsilon);
            const double edge = d * (vx[i] * nx[i] + vy[i] * ny[i]) + d * g[i] * curvature[i];
            phi[i] += params.timestep * (params.mu * (dist_reg[i] + lap[i]) + params.lambda * edge + area_weight * d * g[i]);
        }
        for (size_t i = 0; i < phi.size(); ++i) {
            if (!std::isfinite(phi[i])) {
                throw std::runtime_error("drlse_evolve: non-finite level set at iteration " + std::to_string(it) +
                                         " (timestep * mu = " + std::to_string(params.timestep * params.mu) + ")");
            }
        }
    }
    neumann(phi);
    return phi;
}

Mask levelset_mask(const LevelSet& phi) {
    Mask m(phi.rows(), phi.cols());
    for (size_t i = 0; i < m.size(); ++i) m[i] = phi[i] < 0.0 ? 1 : 0;
    return m;
}

Mask refine_mask(const ProbMap& prob, const Image& image, const DrlseParams& params) {
    params.validate();
    require_same_shape(prob, image, "refine_mask");
    const Mask coarse = threshold_mask(prob, 0.5);
    if (count_foreground(coarse) == 0) {
        std::clog << "warning: refine_mask: empty coarse mask returned unchanged\n";
        return coarse;
    }
    const auto labels = metrics::connected_components(coarse);
    const int count = metrics::instance_count(labels);
    const auto g = edge_indicator(image, params.sigma_g, params.intensity_scale);

    std::vector<Rect> boxes(count + 1, Rect{image.rows(), 0, image.cols(), 0});
    for (int r = 0; r < labels.rows(); ++r) {
        for (int c = 0; c < labels.cols(); ++c) {
            const int k = labels(r, c);
            if (k == 0) continue;
            auto& b = boxes[k];
            b.row0 = std::min(b.row0, r);
            b.row1 = std::max(b.row1, r + 1);
            b.col0 = std::min(b.col0, c);
            b.col1 = std::max(b.col1, c + 1);
        }
    }

    Mask out(image.rows(), image.cols());
    for (int k = 1; k <= count; ++k) {
        const Rect box{std::max(boxes[k].row0 - params.margin, 0), std::min(boxes[k].row1 + params.margin, image.rows()),
                       std::max(boxes[k].col0 - params.margin, 0), std::min(boxes[k].col1 + params.margin, image.cols())};
        Mask local(box.height(), box.width());
        for (int r = box.row0; r < box.row1; ++r)
            for (int c = box.col0; c < box.col1; ++c) local(r - box.row0, c - box.col0) = labels(r, c) == k ? 1 : 0;

        Mask refined = local;
        if (count_foreground(local) < static_cast<long>(local.size()) && box.height() >= 3 && box.width() >= 3) {
            refined = levelset_mask(drlse_evolve(init_levelset(local, params.c0), crop(g, box), params));
        }
        for (int r = box.row0; r < box.row1; ++r)
            for (int c = box.col0; c < box.col1; ++c)
                if (refined(r - box.row0, c - box.col0)) out(r, c) = 1;
    }
    return out;
}

prefs::PreferenceRecord upo_select(const prefs::CandidateSet& cands, const Mask& refined, const std::string& timestamp) {
    if (cands.size() < 2) throw std::invalid_argument("upo_select: need at least 2 candidates");
    int best = 0;
    double best_score = -1.0;
    for (int j = 0; j < static_cast<int>(cands.size()); ++j) {
        const double d = metrics::dice(cands.candidates[j].mask, refined);
        if (d > best_score) {
            best_score = d;
            best = j;
        }
    }
    prefs::PreferenceRecord r;
    r.image_id = cands.image_id;
    r.patch_index = -1;
    r.preferred = best;
    for (int j = 0; j < static_cast<int>(cands.size()); ++j)
        if (j != best) r.dispreferred.push_back(j);
    r.rater = prefs::Rater::upo;
    r.timestamp = timestamp;
    return r;
}

}  // namespace prefseg::upo
