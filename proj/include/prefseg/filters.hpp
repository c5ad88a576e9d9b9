#pragma once

#include "prefseg/grid.hpp"

namespace prefseg::filters {

// Half-sample symmetric reflection of an index into [0, n).
int reflect_index(int i, int n);

// Separable Gaussian blur with reflective boundaries; kernel radius ceil(3 sigma).
Grid<double> gaussian_blur(const Grid<double>& in, double sigma);

// Central-difference derivatives with reflective boundaries (d/dcol, d/drow).
struct Gradient {
    Grid<double> dx;
    Grid<double> dy;
};
Gradient central_gradient(const Grid<double>& in);
Grid<double> gradient_magnitude(const Grid<double>& in);

// Population variance over a (2*radius+1)^2 window, reflective boundaries.
Grid<double> local_variance(const Grid<double>& in, int radius);

}  // namespace prefseg::filters
