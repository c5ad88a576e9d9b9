#pragma once

#include "prefseg/grid.hpp"
#include "prefseg/model.hpp"
#include "prefseg/synth.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace prefseg::metrics {

// 0 = background, 1..n = instance ids.
using InstanceLabeling = Grid<int>;

// 2|a ∩ b| / (|a| + |b|); 1 when both are empty.
double dice(const Mask& a, const Mask& b);

// 4-connected components, ids assigned in row-major discovery order.
InstanceLabeling connected_components(const Mask& mask);
int instance_count(const InstanceLabeling& labels);

// Aggregated Jaccard index. Throws when truth has no instances.
double aji(const InstanceLabeling& pred, const InstanceLabeling& truth);

struct PanopticQuality {
    double pq = 0.0;
    double sq = 0.0;
    double rq = 0.0;
};

// Matches are pairs with IoU > 0.5.
PanopticQuality panoptic_quality(const InstanceLabeling& pred, const InstanceLabeling& truth);

struct ImageScore {
    std::string image_id;
    double dice = 0.0;
    double aji = 0.0;  // NaN when the truth mask is empty
    double pq = 0.0;
};

ImageScore score_masks(const std::string& image_id, const Mask& pred, const Mask& truth);

struct Summary {
    std::vector<ImageScore> images;
    double mean_dice = 0.0;
    double mean_aji = 0.0;
    double mean_pq = 0.0;
};

Summary summarize(std::vector<ImageScore> images);

// Predicts [prob >= 0.5] for every sample, prompting with `prompt_fraction`
// of its center points (0 = automatic mode), and scores against true masks.
Summary evaluate(const model::ModelParams& params, const std::vector<synth::Sample>& samples, double prompt_fraction,
                 std::uint64_t seed);

struct SweepRow {
    double fraction = 0.0;
    double dice = 0.0;
    double aji = 0.0;
    double pq = 0.0;
};

std::vector<SweepRow> eval_prompt_sweep(const model::ModelParams& params, const std::vector<synth::Sample>& samples,
                                        const std::vector<double>& fractions, std::uint64_t seed);

// Aligned text table and CSV (image_id,dice,aji,pq; last row holds means).
std::string format_report(const Summary& summary);
void write_report_csv(const std::filesystem::path& path, const Summary& summary);

}  // namespace prefseg::metrics
