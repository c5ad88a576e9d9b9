#pragma once

#include "prefseg/grid.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace prefseg::prefs {

inline const std::vector<double> kDefaultThresholds{0.3, 0.4, 0.5, 0.6, 0.7};

struct Candidate {
    double threshold = 0.0;
    int threshold_index = 0;  // position in the threshold list the set was generated from
    Mask mask;
};

// Pairwise distinct masks sorted by ascending threshold.
struct CandidateSet {
    std::string image_id;
    std::vector<Candidate> candidates;

    size_t size() const { return candidates.size(); }
};

class DegenerateCandidates : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// mask_j = [prob >= gamma_j]; duplicates collapse onto the lowest threshold.
CandidateSet generate_candidates(const ProbMap& prob, const std::vector<double>& thresholds,
                                 const std::string& image_id = {});

struct PatchGrid {
    int grid_size = 1;  // L
    int rows = 0;
    int cols = 0;
    std::vector<Rect> cells;  // row-major, L*L cells
};

PatchGrid partition_patches(int rows, int cols, int grid_size);

struct Ranking {
    int preferred = 0;
    std::vector<int> dispreferred;

    bool operator==(const Ranking&) const = default;
};

// Dice of a against b restricted to region (1 when both are empty there).
double region_dice(const Mask& a, const Mask& b, const Rect& region);

// Ranks candidates by Dice against truth inside region (whole image when
// region is empty). Ties go to the lowest threshold; nullopt (skip) when
// every candidate scores the same.
std::optional<Ranking> oracle_rank(const CandidateSet& cands, const Mask& truth, const std::optional<Rect>& region);

enum class SelectionMode { disagreement, random };

SelectionMode parse_selection_mode(const std::string& s);

// Mean pairwise Hamming distance between candidate masks inside each cell.
std::vector<double> patch_disagreement(const CandidateSet& cands, const PatchGrid& grid);

// ceil(fraction * L^2) patch indices. Disagreement mode returns them in
// descending disagreement order (row-major tie-break); random mode ascending.
std::vector<int> select_sparse_patches(const CandidateSet& cands, const PatchGrid& grid, double fraction,
                                       SelectionMode mode, std::uint64_t seed);

enum class Rater { oracle, human, upo };

std::string to_string(Rater r);
Rater parse_rater(const std::string& s);

struct PreferenceRecord {
    std::string image_id;
    int patch_index = -1;  // -1: whole image
    int preferred = 0;
    std::vector<int> dispreferred;
    Rater rater = Rater::oracle;
    std::string timestamp;

    bool operator==(const PreferenceRecord&) const = default;
};

class PreferenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Throws PreferenceError on violated invariants. When candidate_count > 0,
// indices must also be below it.
void validate_record(const PreferenceRecord& r, int candidate_count = 0);

nlohmann::json to_json(const PreferenceRecord& r);
PreferenceRecord record_from_json(const nlohmann::json& j);
std::string to_jsonl_line(const PreferenceRecord& r);

// Appends one line per record.
void store_preferences(const std::vector<PreferenceRecord>& records, const std::filesystem::path& path);
// Missing or empty file: empty list. Malformed lines throw naming the line.
std::vector<PreferenceRecord> load_preferences(const std::filesystem::path& path);

// Current UTC time as "YYYY-MM-DDTHH:MM:SSZ".
std::string utc_timestamp();

struct ConsistencyHistogram {
    std::vector<int> counts;  // counts[k] = images whose global choice wins k patches
    int images = 0;
    std::vector<std::string> excluded;
};

ConsistencyHistogram consistency_histogram(const std::vector<PreferenceRecord>& global_prefs,
                                           const std::vector<PreferenceRecord>& local_prefs, int num_patches);

// On-disk candidate cache written by build-prefs:
//   index.json, images/<id>.png, candidates/<id>/cand_<threshold index>.png
struct CacheEntry {
    std::string image_id;
    std::filesystem::path image;     // relative to the cache dir
    PointSet prompts;                // prompts the candidates were predicted with
    std::vector<double> thresholds;  // per candidate position
    std::vector<int> threshold_indices;
    std::vector<double> disagreement;  // per patch
};

struct CandidateCache {
    std::filesystem::path dir;
    int grid_size = 3;
    std::vector<double> thresholds;
    std::vector<CacheEntry> entries;

    const CacheEntry* find(const std::string& image_id) const;
};

std::filesystem::path candidate_mask_path(const std::filesystem::path& dir, const std::string& image_id,
                                          int threshold_index);

void write_candidate_cache(const std::filesystem::path& dir, int grid_size, const std::vector<double>& thresholds,
                           const std::vector<CandidateSet>& sets, const std::vector<Image>& images,
                           const std::vector<PointSet>& prompts);
CandidateCache load_candidate_cache(const std::filesystem::path& dir);
CandidateSet load_candidates(const CandidateCache& cache, const CacheEntry& entry);
Image load_cached_image(const CandidateCache& cache, const CacheEntry& entry);

}  // namespace prefseg::prefs
