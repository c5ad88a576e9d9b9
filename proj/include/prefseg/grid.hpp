#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace prefseg {

// Row-major H x W raster.
template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(int rows, int cols, T fill = T{}) : rows_(rows), cols_(cols), data_(checked_size(rows, cols), fill) {}

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(int r, int c) { return data_[index(r, c)]; }
    const T& operator()(int r, int c) const { return data_[index(r, c)]; }
    T& operator[](size_t i) { return data_[i]; }
    const T& operator[](size_t i) const { return data_[i]; }

    size_t index(int r, int c) const {
        return static_cast<size_t>(r) * static_cast<size_t>(cols_) + static_cast<size_t>(c);
    }
    bool in_bounds(int r, int c) const { return r >= 0 && c >= 0 && r < rows_ && c < cols_; }

    template <typename U>
    bool same_shape(const Grid<U>& other) const {
        return rows_ == other.rows() && cols_ == other.cols();
    }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    auto begin() { return data_.begin(); }
    auto end() { return data_.end(); }
    auto begin() const { return data_.begin(); }
    auto end() const { return data_.end(); }

    bool operator==(const Grid&) const = default;

private:
    static size_t checked_size(int rows, int cols) {
        if (rows < 0 || cols < 0) throw std::invalid_argument("Grid: negative dimensions");
        return static_cast<size_t>(rows) * static_cast<size_t>(cols);
    }

    int rows_ = 0;
    int cols_ = 0;
    std::vector<T> data_;
};

// Intensities in [0, 1].
using Image = Grid<double>;
// Strictly binary {0, 1}.
using Mask = Grid<std::uint8_t>;
// Per-pixel foreground probability, clamped to [kProbEpsilon, 1 - kProbEpsilon] by the model.
using ProbMap = Grid<double>;
// Nonnegative point density.
using DensityMap = Grid<double>;

inline constexpr double kProbEpsilon = 1e-6;

struct Point {
    int row = 0;
    int col = 0;
    double confidence = 1.0;

    bool operator==(const Point&) const = default;
};

using PointSet = std::vector<Point>;

// Half-open rectangle [row0, row1) x [col0, col1).
struct Rect {
    int row0 = 0;
    int row1 = 0;
    int col0 = 0;
    int col1 = 0;

    int height() const { return row1 - row0; }
    int width() const { return col1 - col0; }
    long area() const { return static_cast<long>(height()) * width(); }
    bool contains(int r, int c) const { return r >= row0 && r < row1 && c >= col0 && c < col1; }
    bool operator==(const Rect&) const = default;
};

template <typename T>
Rect full_rect(const Grid<T>& g) {
    return Rect{0, g.rows(), 0, g.cols()};
}

template <typename T, typename U>
void require_same_shape(const Grid<T>& a, const Grid<U>& b, const char* what) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                    std::to_string(b.cols()) + ")");
    }
}

template <typename T>
Grid<T> crop(const Grid<T>& g, const Rect& r) {
    Grid<T> out(r.height(), r.width());
    for (int y = 0; y < r.height(); ++y)
        for (int x = 0; x < r.width(); ++x) out(y, x) = g(r.row0 + y, r.col0 + x);
    return out;
}

// Number of foreground pixels.
inline long count_foreground(const Mask& m) {
    long n = 0;
    for (auto v : m) n += v != 0;
    return n;
}

// Mask of prob >= threshold.
inline Mask threshold_mask(const ProbMap& prob, double threshold) {
    Mask m(prob.rows(), prob.cols());
    for (size_t i = 0; i < prob.size(); ++i) m[i] = prob[i] >= threshold ? 1 : 0;
    return m;
}

}  // namespace prefseg
