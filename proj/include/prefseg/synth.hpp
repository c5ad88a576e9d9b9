#pragma once

#include "prefseg/grid.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace prefseg::synth {

enum class Domain { source, target };

std::string to_string(Domain d);
Domain parse_domain(const std::string& s);

// Appearance change applied on top of the base renderer.
struct ShiftParams {
    double contrast_scale = 1.0;
    double contrast_offset = 0.0;
    double noise_std = 0.0;
    double texture_freq_scale = 1.0;

    bool operator==(const ShiftParams&) const = default;
};

// Defaults: identity for source, (x0.8 + 0.18, noise 0.05, texture x1.5) for target.
ShiftParams default_shift(Domain d);

struct GeneratorConfig {
    Domain domain = Domain::source;
    int count = 8;
    int height = 128;
    int width = 128;
    int min_blobs = 3;
    int max_blobs = 8;
    ShiftParams shift = default_shift(Domain::source);
    // Stored masks are dilated by this many pixels; the exact mask goes to a sidecar file.
    int bias_dilation_px = 0;
    std::string id_prefix;
};

struct Sample {
    std::string id;
    Image image;
    Mask mask;       // stored annotation (possibly biased)
    Mask true_mask;  // exact object support
    PointSet centers;
};

struct ManifestEntry {
    std::string id;
    std::filesystem::path image;
    std::filesystem::path mask;
    std::filesystem::path points;
    std::filesystem::path true_mask;  // empty unless the dataset is biased
};

struct DatasetManifest {
    GeneratorConfig config;
    std::uint64_t seed = 0;
    std::filesystem::path base_dir;  // entry paths are relative to this directory
    std::vector<ManifestEntry> entries;
};

// Renders the dataset in memory. Images are already 8-bit quantized, so
// they match what a PNG round trip of the same dataset yields.
std::vector<Sample> synthesize(const GeneratorConfig& config, std::uint64_t seed);

// Renders and writes images, masks, points and manifest.txt under out_dir.
DatasetManifest gen_dataset(const GeneratorConfig& config, std::uint64_t seed, const std::filesystem::path& out_dir);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);
// Loads every entry; checks files exist and shapes agree.
std::vector<Sample> load_samples(const DatasetManifest& manifest);

// round(fraction * |full|) points (minimum 1), sampled without replacement.
PointSet sample_sparse_points(const PointSet& full, double fraction, std::uint64_t seed);

// Sum of exp(-d^2 / (2 sigma^2)) bumps, each truncated at d > 3 sigma.
DensityMap rasterize_density(const PointSet& points, double sigma, int rows, int cols);

// Euclidean-disk dilation.
Mask dilate(const Mask& mask, int radius);

}  // namespace prefseg::synth
