#pragma once

#include "prefseg/grid.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

namespace prefseg::testing {

inline Image random_image(int rows, int cols, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(rows, cols);
    for (auto& v : img) v = u(rng);
    return img;
}

inline Mask random_mask(int rows, int cols, double p, std::mt19937_64& rng) {
    std::bernoulli_distribution b(p);
    Mask m(rows, cols);
    for (auto& v : m) v = b(rng) ? 1 : 0;
    return m;
}

inline Grid<double> random_grid(int rows, int cols, double lo, double hi, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(lo, hi);
    Grid<double> g(rows, cols);
    for (auto& v : g) v = u(rng);
    return g;
}

// ||a - n|| / max(||a||, ||n||), 0 when both vanish.
inline double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (size_t i = 0; i < analytic.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
    }
    const double denom = std::sqrt(std::max(na, nn));
    return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

// Central differences of f over every entry of x.
template <typename F>
std::vector<double> numeric_gradient(std::vector<double> x, F&& f, double h = 1e-5) {
    std::vector<double> g(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f(x);
        x[i] = keep - h;
        const double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("prefseg_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace prefseg::testing
