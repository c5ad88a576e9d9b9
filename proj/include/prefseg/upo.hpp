#pragma once

#include "prefseg/grid.hpp"
#include "prefseg/prefs.hpp"

#include <string>

namespace prefseg::upo {

using LevelSet = Grid<double>;

struct DrlseParams {
    double sigma_g = 0.8;
    double timestep = 1.0;
    double mu = 0.2;       // distance regularization
    double lambda = 5.0;   // weighted length
    double alpha = -1.5;   // weighted area; negative shrinks the contour
    int iterations = 200;
    double c0 = 2.0;
    double epsilon = 1.5;  // Dirac width
    // Images in [0,1] are multiplied by this before the edge indicator so the
    // gradient magnitudes match 8-bit intensities.
    double intensity_scale = 255.0;
    int margin = 6;        // crop margin around each component

    void validate() const;
};

// g = 1 / (1 + |grad(G_sigma * (scale * image))|^2), central differences,
// reflective boundaries.
Grid<double> edge_indicator(const Image& image, double sigma, double intensity_scale = 1.0);

// -c0 inside the mask, +c0 outside. Throws when the mask is empty or full.
LevelSet init_levelset(const Mask& mask, double c0);

// Explicit Euler DRLSE iterations (double-well distance regularization,
// Neumann boundary). Throws std::runtime_error when phi becomes non-finite.
LevelSet drlse_evolve(LevelSet phi, const Grid<double>& g, const DrlseParams& params);

// Pixels where phi < 0.
Mask levelset_mask(const LevelSet& phi);

// Evolves one level set per 4-connected component of [prob >= 0.5] inside its
// bounding box plus margin and returns the union of the refined regions.
Mask refine_mask(const ProbMap& prob, const Image& image, const DrlseParams& params);

// Whole-image record preferring the candidate with the highest Dice against
// `refined` (lowest index on ties).
prefs::PreferenceRecord upo_select(const prefs::CandidateSet& cands, const Mask& refined, const std::string& timestamp);

}  // namespace prefseg::upo
