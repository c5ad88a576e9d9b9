#pragma once

#include "prefseg/adapt.hpp"
#include "prefseg/grid.hpp"
#include "prefseg/model.hpp"
#include "prefseg/prefs.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace prefseg::dpo {

enum class Normalization { mean, sum };

std::string to_string(Normalization n);
Normalization parse_normalization(const std::string& s);

struct DpoConfig {
    double beta = 1.0;
    Normalization normalization = Normalization::mean;
    double learning_rate = 0.005;
    double lr_power = 0.9;
    int iterations = 200;
    std::uint64_t seed = 0;
    // Weight of the segmentation term kept next to the preference loss. On
    // preference images it labels the pixels where all candidates agree and
    // ignores the rest; anchor images add their own labels. 0 trains on the
    // preference loss alone.
    double seg_weight = 5.0;

    void validate() const;
};

// sum over region of y ln p + (1 - y) ln(1 - p), divided by the region area
// in mean mode. Whole image when region is empty.
double mask_logprob(const ProbMap& prob, const Mask& mask, const std::optional<Rect>& region,
                    Normalization normalization = Normalization::mean);

// grad += scale * d mask_logprob / d logit, i.e. scale * (y - p) / norm
// inside the region and 0 where the probability sits on a clamp bound.
void accumulate_logprob_grad(const Grid<double>& logit, const Mask& mask, const Rect& region,
                             Normalization normalization, double scale, Grid<double>& grad);

double implicit_reward(double policy_lp, double ref_lp, double beta);

// Loss on scalar log-probs with derivatives w.r.t. the policy log-probs.
struct ScalarLoss {
    double value = 0.0;
    double d_preferred = 0.0;
    std::vector<double> d_dispreferred;
};

ScalarLoss bt_loss(double policy_p, double policy_d, double ref_p, double ref_d, double beta);
// softplus(logsumexp_j(-h_j)), h_j the reward gap against negative j.
ScalarLoss pl_loss(double policy_p, std::span<const double> policy_d, double ref_p, std::span<const double> ref_d,
                   double beta);

struct PreferenceGroup {
    std::string image_id;
    int patch_index = -1;
    std::optional<Rect> region;  // empty: whole image
    Mask preferred;              // full-image masks; only the region is read
    std::vector<Mask> dispreferred;
};

// Builds the group for a record from its candidate set (region from the grid
// when patch_index >= 0).
PreferenceGroup make_group(const prefs::PreferenceRecord& record, const prefs::CandidateSet& cands,
                           const prefs::PatchGrid& grid);

// Loss value plus its gradient w.r.t. the policy seg logits.
struct MapLoss {
    double value = 0.0;
    Grid<double> logit_grad;
};

MapLoss dpo_bt_loss(const PreferenceGroup& group, const Grid<double>& policy_logit, const ProbMap& ref_prob,
                    const DpoConfig& cfg);
MapLoss dpo_pl_loss(const PreferenceGroup& group, const Grid<double>& policy_logit, const ProbMap& ref_prob,
                    const DpoConfig& cfg);
// Sum of per-patch PL losses; groups must cover every cell of grid once.
MapLoss lpo_loss(std::span<const PreferenceGroup> groups, const prefs::PatchGrid& grid,
                 const Grid<double>& policy_logit, const ProbMap& ref_prob, const DpoConfig& cfg);
// Sum of per-patch PL losses over a non-empty subset of cells.
MapLoss slpo_loss(std::span<const PreferenceGroup> groups, const prefs::PatchGrid& grid,
                  const Grid<double>& policy_logit, const ProbMap& ref_prob, const DpoConfig& cfg);

enum class Mode { gpo, lpo, slpo, upo };

std::string to_string(Mode m);
Mode parse_mode(const std::string& s);

// Keeps the records a mode trains on (last write wins per image and patch):
// gpo whole-image oracle/human, upo whole-image upo, lpo/slpo patch records.
std::vector<prefs::PreferenceRecord> records_for_mode(const std::vector<prefs::PreferenceRecord>& records, Mode mode);

struct TrainImage {
    std::string image_id;
    model::FeatureStack feats;  // with the prompts the candidates came from
    prefs::CandidateSet candidates;
};

// Features (with the cached prompts) and candidates for every cache entry.
std::vector<TrainImage> train_images_from_cache(const prefs::CandidateCache& cache);

// Keeps patch records whose patch is among the select_sparse_patches choice
// for its image; other records pass through unchanged.
std::vector<prefs::PreferenceRecord> restrict_to_patches(const std::vector<prefs::PreferenceRecord>& records,
                                                         const std::vector<TrainImage>& images, int grid_size,
                                                         double fraction, prefs::SelectionMode mode,
                                                         std::uint64_t seed);

// Labeled image contributing a supervised segmentation term.
struct AnchorImage {
    model::FeatureStack feats;
    adapt::PartialLabels labels;
};

struct FinetuneLogEntry {
    int iter = 0;
    double loss = 0.0;  // preference loss
    double seg = 0.0;   // unweighted segmentation term
    double learning_rate = 0.0;
};

struct FinetuneResult {
    model::PolicySnapshot policy;
    std::vector<FinetuneLogEntry> log;
    int groups = 0;
};

// Full-batch gradient descent on the summed preference loss of the mode plus
// seg_weight times the summed per-image segmentation losses.
FinetuneResult finetune_dpo(const model::PolicySnapshot& policy, const model::PolicySnapshot& ref,
                            const std::vector<TrainImage>& images, const std::vector<prefs::PreferenceRecord>& records,
                            Mode mode, int grid_size, const DpoConfig& cfg,
                            const std::vector<AnchorImage>& anchors = {});

std::string format_log_line(const FinetuneLogEntry& e);

}  // namespace prefseg::dpo
