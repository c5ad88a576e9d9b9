#include "prefseg/filters.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace prefseg::filters {

int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

Grid<double> gaussian_blur(const Grid<double>& in, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_blur: sigma must be positive");
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double total = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
        total += kernel[k + radius];
    }
    for (auto& w : kernel) w /= total;

    const int rows = in.rows();
    const int cols = in.cols();
    Grid<double> tmp(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * in(r, reflect_index(c + k, cols));
            tmp(r, c) = acc;
        }
    }
    Grid<double> out(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp(reflect_index(r + k, rows), c);
            out(r, c) = acc;
        }
    }
    return out;
}

Gradient central_gradient(const Grid<double>& in) {
    const int rows = in.rows();
    const int cols = in.cols();
    Gradient g{Grid<double>(rows, cols), Grid<double>(rows, cols)};
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            g.dx(r, c) = 0.5 * (in(r, reflect_index(c + 1, cols)) - in(r, reflect_index(c - 1, cols)));
            g.dy(r, c) = 0.5 * (in(reflect_index(r + 1, rows), c) - in(reflect_index(r - 1, rows), c));
        }
    }
    return g;
}

Grid<double> gradient_magnitude(const Grid<double>& in) {
    auto g = central_gradient(in);
    Grid<double> out(in.rows(), in.cols());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::hypot(g.dx[i], g.dy[i]);
    return out;
}

Grid<double> local_variance(const Grid<double>& in, int radius) {
    const int rows = in.rows();
    const int cols = in.cols();
    const double n = static_cast<double>((2 * radius + 1) * (2 * radius + 1));
    Grid<double> out(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            double s = 0.0;
            double s2 = 0.0;
            for (int dy = -radius; dy <= radius; ++dy) {
                const int rr = reflect_index(r + dy, rows);
                for (int dx = -radius; dx <= radius; ++dx) {
                    const double v = in(rr, reflect_index(c + dx, cols));
                    s += v;
                    s2 += v * v;
                }
            }
            const double mean = s / n;
            out(r, c) = std::max(0.0, s2 / n - mean * mean);
        }
    }
    return out;
}

}  // namespace prefseg::filters
