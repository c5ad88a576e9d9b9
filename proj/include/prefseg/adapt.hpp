#pragma once

#include "prefseg/grid.hpp"
#include "prefseg/model.hpp"
#include "prefseg/synth.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace prefseg::adapt {

inline constexpr std::uint8_t kIgnore = 255;

enum class LabelSource { ground_truth, pseudo };

// Per-pixel {0, 1, kIgnore}.
struct PartialLabels {
    Grid<std::uint8_t> labels;
    LabelSource source = LabelSource::ground_truth;
};

PartialLabels from_mask(const Mask& mask);

struct LossGrad {
    double value = 0.0;
    Grid<double> grad;
};

// Strict window maxima (row-major earliest wins on ties) with value >= threshold,
// returned in row-major order; confidence = min(value, 1).
PointSet nms_extract_points(const DensityMap& density, double threshold, int window);

// Mean squared error; gradient with respect to pred.
LossGrad detection_loss(const DensityMap& pred, const DensityMap& target);

// Mean binary cross-entropy over non-ignored pixels; gradient with respect to
// the seg logits (zero where the probability sits on a clamp bound).
LossGrad segmentation_loss(const ProbMap& prob, const PartialLabels& labels);

// >= delta_f -> 1, <= delta_b -> 0, otherwise ignore.
PartialLabels make_pseudo_labels(const ProbMap& teacher_prob, double delta_f, double delta_b);

struct ContrastivePoints {
    PointSet foreground;
    PointSet background;
};

// Top-3 confidence pixels of each pseudo-foreground component, plus up to
// `num_negatives` pixels with prob < delta_b sampled uniformly.
ContrastivePoints select_contrastive_points(const PartialLabels& pseudo, const ProbMap& teacher_prob, double delta_f,
                                            double delta_b, int num_negatives, std::uint64_t seed);

using Embedding = std::array<double, model::kEmbed>;

struct PclResult {
    double value = 0.0;
    std::vector<Embedding> query_grads;
    Embedding anchor_grad{};
    std::vector<Embedding> negative_grads;
};

// Prompt-guided InfoNCE: -sum_i log softmax over {anchor, negatives} of the
// anchor similarity, temperature tau.
PclResult pcl_loss(std::span<const Embedding> queries, const Embedding& anchor, std::span<const Embedding> negatives,
                   double tau);

// Losses composed with the model, returning parameter gradients.
struct ParamLoss {
    double value = 0.0;
    model::ModelParams grad;
};

ParamLoss seg_objective(const model::ModelParams& params, const model::FeatureStack& feats, const PartialLabels& labels);
ParamLoss det_objective(const model::ModelParams& params, const model::FeatureStack& feats, const DensityMap& target);
// Anchor = normalized mean of the embeddings at `prompt_points`.
ParamLoss pcl_objective(const model::ModelParams& params, const model::FeatureStack& feats,
                        const PointSet& prompt_points, const PointSet& queries, const PointSet& negatives, double tau);

struct Stage1Config {
    double lambda_det = 1e-3;
    double lambda_pcl = 1e-3;
    double delta_f = 0.9;
    double delta_b = 0.1;
    double tau = 0.5;
    int num_negatives = 256;
    double ema_decay = 0.99;
    double learning_rate = 0.5;
    double lr_power = 0.9;
    int iterations = 1000;
    int crop_size = 64;
    int nms_window = 5;
    double nms_threshold = 0.3;
    int max_points_per_crop = 64;
    // Minimum detection value for source-model points used as pseudo-sparse
    // prompts when no target points are given.
    double uda_confidence = 0.9;
    double density_sigma = 2.0;
    // false: train on source crops only (the source model).
    bool use_target = true;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Stage1LogEntry {
    int iter = 0;
    double seg = 0.0;
    double det = 0.0;
    double pcl = 0.0;
    double total = 0.0;
};

struct Stage1Result {
    model::PolicySnapshot student;
    model::PolicySnapshot teacher;
    std::vector<Stage1LogEntry> log;
};

// The sparse target prompts each target image trains with (same rule the
// trainer uses); fraction 0 returns empty sets.
std::vector<PointSet> sparse_target_points(const std::vector<synth::Sample>& target, double sparse_fraction,
                                           std::uint64_t seed);

Stage1Result train_stage1(const std::vector<synth::Sample>& source, const std::vector<synth::Sample>& target,
                          double sparse_fraction, const Stage1Config& cfg, const model::ModelParams& init);

// "iter, L_seg, L_det, L_pcl, total" lines.
std::string format_log_line(const Stage1LogEntry& e);

}  // namespace prefseg::adapt
