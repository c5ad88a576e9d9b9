#include "prefseg/prefs.hpp"

#include "prefseg/image_io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>

namespace prefseg::prefs {

namespace fs = std::filesystem;
using nlohmann::json;

CandidateSet generate_candidates(const ProbMap& prob, const std::vector<double>& thresholds, const std::string& image_id) {
    if (thresholds.empty()) throw std::invalid_argument("generate_candidates: no thresholds");
    for (size_t j = 0; j < thresholds.size(); ++j) {
        if (!(thresholds[j] > 0.0 && thresholds[j] < 1.0)) throw std::invalid_argument("generate_candidates: thresholds must lie in (0,1)");
        if (j > 0 && !(thresholds[j] > thresholds[j - 1])) throw std::invalid_argument("generate_candidates: thresholds must increase strictly");
    }
    CandidateSet out;
    out.image_id = image_id;
    for (size_t j = 0; j < thresholds.size(); ++j) {
        Mask m = threshold_mask(prob, thresholds[j]);
        const bool dup = std::any_of(out.candidates.begin(), out.candidates.end(), [&](const Candidate& c) { return c.mask == m; });
        if (!dup) out.candidates.push_back(Candidate{thresholds[j], static_cast<int>(j), std::move(m)});
    }
    if (out.candidates.size() < 2) {
        throw DegenerateCandidates("generate_candidates: fewer than 2 distinct masks for '" + image_id + "'");
    }
    return out;
}

PatchGrid partition_patches(int rows, int cols, int grid_size) {
    if (grid_size < 1) throw std::invalid_argument("partition_patches: L must be >= 1");
    if (grid_size > std::min(rows, cols)) throw std::invalid_argument("partition_patches: L exceeds image size");
    auto splits = [grid_size](int n) {
        std::vector<int> edges{0};
        const int base = n / grid_size;
        const int extra = n % grid_size;
        for (int k = 0; k < grid_size; ++k) edges.push_back(edges.back() + base + (k < extra ? 1 : 0));
        return edges;
    };
    const auto re = splits(rows);
    const auto ce = splits(cols);
    PatchGrid g{grid_size, rows, cols, {}};
    for (int i = 0; i < grid_size; ++i)
        for (int j = 0; j < grid_size; ++j) g.cells.push_back(Rect{re[i], re[i + 1], ce[j], ce[j + 1]});
    return g;
}

double region_dice(const Mask& a, const Mask& b, const Rect& region) {
    require_same_shape(a, b, "region_dice");
    long inter = 0;
    long sum = 0;
    for (int r = region.row0; r < region.row1; ++r) {
        for (int c = region.col0; c < region.col1; ++c) {
            const bool x = a(r, c) != 0;
            const bool y = b(r, c) != 0;
            inter += x && y;
            sum += static_cast<long>(x) + static_cast<long>(y);
        }
    }
    return sum == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(sum);
}

std::optional<Ranking> oracle_rank(const CandidateSet& cands, const Mask& truth, const std::optional<Rect>& region) {
    if (cands.candidates.empty()) return std::nullopt;
    const Rect rect = region.value_or(full_rect(truth));
    std::vector<double> scores;
    for (const auto& c : cands.candidates) scores.push_back(region_dice(c.mask, truth, rect));
    if (std::all_of(scores.begin(), scores.end(), [&](double s) { return s == scores.front(); })) return std::nullopt;
    Ranking r;
    r.preferred = static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
    for (int j = 0; j < static_cast<int>(scores.size()); ++j)
        if (j != r.preferred) r.dispreferred.push_back(j);
    return r;
}

SelectionMode parse_selection_mode(const std::string& s) {
    if (s == "disagreement") return SelectionMode::disagreement;
    if (s == "random") return SelectionMode::random;
    throw std::invalid_argument("unknown patch selection mode '" + s + "'");
}

std::vector<double> patch_disagreement(const CandidateSet& cands, const PatchGrid& grid) {
    std::vector<double> out;
    const auto& cs = cands.candidates;
    const size_t pairs = cs.size() * (cs.size() - 1) / 2;
    for (const auto& cell : grid.cells) {
        long total = 0;
        for (size_t a = 0; a < cs.size(); ++a) {
            for (size_t b = a + 1; b < cs.size(); ++b) {
                for (int r = cell.row0; r < cell.row1; ++r)
                    for (int c = cell.col0; c < cell.col1; ++c) total += cs[a].mask(r, c) != cs[b].mask(r, c);
            }
        }
        out.push_back(pairs ? static_cast<double>(total) / static_cast<double>(pairs) : 0.0);
    }
    return out;
}

std::vector<int> select_sparse_patches(const CandidateSet& cands, const PatchGrid& grid, double fraction,
                                       SelectionMode mode, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("select_sparse_patches: fraction must be in (0,1]");
    const int n = static_cast<int>(grid.cells.size());
    // The small slack keeps products such as (1/3) * 9 from rounding up.
    const int m = std::clamp(static_cast<int>(std::ceil(fraction * n - 1e-9)), 1, n);
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (mode == SelectionMode::disagreement) {
        const auto score = patch_disagreement(cands, grid);
        std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return score[a] > score[b]; });
        idx.resize(m);
    } else {
        std::mt19937_64 rng(seed);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(m);
        std::sort(idx.begin(), idx.end());
    }
    return idx;
}

std::string to_string(Rater r) {
    switch (r) {
        case Rater::oracle: return "oracle";
        case Rater::human: return "human";
        case Rater::upo: return "upo";
    }
    return "unknown";
}

Rater parse_rater(const std::string& s) {
    if (s == "oracle") return Rater::oracle;
    if (s == "human") return Rater::human;
    if (s == "upo") return Rater::upo;
    throw PreferenceError("unknown rater '" + s + "'");
}

void validate_record(const PreferenceRecord& r, int candidate_count) {
    if (r.image_id.empty()) throw PreferenceError("image_id is empty");
    if (r.patch_index < -1) throw PreferenceError("patch_index must be >= -1");
    if (r.dispreferred.empty()) throw PreferenceError("dispreferred is empty");
    if (r.preferred < 0) throw PreferenceError("preferred index is negative");
    std::set<int> seen;
    for (int d : r.dispreferred) {
        if (d == r.preferred) throw PreferenceError("preferred candidate also listed as dispreferred");
        if (d < 0) throw PreferenceError("dispreferred index is negative");
        if (!seen.insert(d).second) throw PreferenceError("duplicate dispreferred index");
    }
    if (candidate_count > 0) {
        if (r.preferred >= candidate_count) throw PreferenceError("preferred index out of range");
        for (int d : r.dispreferred)
            if (d >= candidate_count) throw PreferenceError("dispreferred index out of range");
    }
}

json to_json(const PreferenceRecord& r) {
    json j;
    j["image_id"] = r.image_id;
    j["patch_index"] = r.patch_index;
    j["preferred"] = r.preferred;
    j["dispreferred"] = r.dispreferred;
    j["rater"] = to_string(r.rater);
    j["timestamp"] = r.timestamp;
    return j;
}

PreferenceRecord record_from_json(const json& j) {
    if (!j.is_object()) throw PreferenceError("record is not a JSON object");
    auto field = [&](const char* name) -> const json& {
        auto it = j.find(name);
        if (it == j.end()) throw PreferenceError(std::string("missing field '") + name + "'");
        return *it;
    };
    PreferenceRecord r;
    try {
        const auto& id = field("image_id");
        const auto& patch = field("patch_index");
        const auto& pref = field("preferred");
        const auto& disp = field("dispreferred");
        const auto& rater = field("rater");
        const auto& ts = field("timestamp");
        if (!id.is_string() || !patch.is_number_integer() || !pref.is_number_integer() || !disp.is_array() ||
            !rater.is_string() || !ts.is_string()) {
            throw PreferenceError("field has the wrong type");
        }
        r.image_id = id.get<std::string>();
        r.patch_index = patch.get<int>();
        r.preferred = pref.get<int>();
        for (const auto& d : disp) {
            if (!d.is_number_integer()) throw PreferenceError("dispreferred must hold integers");
            r.dispreferred.push_back(d.get<int>());
        }
        r.rater = parse_rater(rater.get<std::string>());
        r.timestamp = ts.get<std::string>();
    } catch (const json::exception& e) {
        throw PreferenceError(e.what());
    }
    validate_record(r);
    return r;
}

std::string to_jsonl_line(const PreferenceRecord& r) { return to_json(r).dump() + "\n"; }

void store_preferences(const std::vector<PreferenceRecord>& records, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::app);
    if (!os) throw std::runtime_error("cannot open " + path.string());
    for (const auto& r : records) {
        validate_record(r);
        const auto line = to_jsonl_line(r);
        os.write(line.data(), static_cast<std::streamsize>(line.size()));
        os.flush();
    }
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::vector<PreferenceRecord> load_preferences(const fs::path& path) {
    std::vector<PreferenceRecord> out;
    if (!fs::exists(path)) return out;
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(record_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw PreferenceError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

ConsistencyHistogram consistency_histogram(const std::vector<PreferenceRecord>& global_prefs,
                                           const std::vector<PreferenceRecord>& local_prefs, int num_patches) {
    if (num_patches < 1) throw std::invalid_argument("consistency_histogram: num_patches must be >= 1");
    std::map<std::string, int> global;
    for (const auto& r : global_prefs)
        if (r.patch_index == -1) global[r.image_id] = r.preferred;  // last write wins
    std::map<std::string, std::map<int, int>> local;
    for (const auto& r : local_prefs)
        if (r.patch_index >= 0) local[r.image_id][r.patch_index] = r.preferred;

    ConsistencyHistogram h;
    h.counts.assign(num_patches + 1, 0);
    for (const auto& [id, g] : global) {
        auto it = local.find(id);
        if (it == local.end()) {
            h.excluded.push_back(id);
            continue;
        }
        int k = 0;
        for (const auto& [patch, pref] : it->second)
            if (patch < num_patches && pref == g) ++k;
        ++h.counts[k];
        ++h.images;
    }
    for (const auto& [id, _] : local)
        if (!global.count(id)) h.excluded.push_back(id);
    for (const auto& id : h.excluded) std::clog << "warning: image '" << id << "' lacks global or local preferences; excluded\n";
    return h;
}

const CacheEntry* CandidateCache::find(const std::string& image_id) const {
    for (const auto& e : entries)
        if (e.image_id == image_id) return &e;
    return nullptr;
}

fs::path candidate_mask_path(const fs::path& dir, const std::string& image_id, int threshold_index) {
    return dir / "candidates" / image_id / ("cand_" + std::to_string(threshold_index) + ".png");
}

void write_candidate_cache(const fs::path& dir, int grid_size, const std::vector<double>& thresholds,
                           const std::vector<CandidateSet>& sets, const std::vector<Image>& images,
                           const std::vector<PointSet>& prompts) {
    if (sets.size() != images.size() || sets.size() != prompts.size()) {
        throw std::invalid_argument("write_candidate_cache: size mismatch");
    }
    fs::create_directories(dir);
    json index;
    index["format"] = 1;
    index["grid_size"] = grid_size;
    index["thresholds"] = thresholds;
    index["images"] = json::array();
    for (size_t i = 0; i < sets.size(); ++i) {
        const auto& set = sets[i];
        const auto grid = partition_patches(images[i].rows(), images[i].cols(), grid_size);
        json e;
        e["image_id"] = set.image_id;
        const fs::path rel_image = fs::path("images") / (set.image_id + ".png");
        io::write_image(dir / rel_image, images[i]);
        e["image"] = rel_image.generic_string();
        json pts = json::array();
        for (const auto& p : prompts[i]) pts.push_back({p.row, p.col});
        e["prompts"] = pts;
        json cands = json::array();
        for (const auto& c : set.candidates) {
            io::write_mask(candidate_mask_path(dir, set.image_id, c.threshold_index), c.mask);
            cands.push_back({{"threshold", c.threshold}, {"threshold_index", c.threshold_index}});
        }
        e["candidates"] = cands;
        e["disagreement"] = patch_disagreement(set, grid);
        index["images"].push_back(e);
    }
    std::ofstream os(dir / "index.json", std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + (dir / "index.json").string());
    os << index.dump(2) << '\n';
}

CandidateCache load_candidate_cache(const fs::path& dir) {
    std::ifstream is(dir / "index.json");
    if (!is) throw std::runtime_error("cannot read candidate cache index in " + dir.string());
    json index;
    try {
        index = json::parse(is);
    } catch (const json::exception& e) {
        throw std::runtime_error("candidate cache index: " + std::string(e.what()));
    }
    CandidateCache cache;
    cache.dir = dir;
    cache.grid_size = index.at("grid_size").get<int>();
    cache.thresholds = index.at("thresholds").get<std::vector<double>>();
    for (const auto& e : index.at("images")) {
        CacheEntry ce;
        ce.image_id = e.at("image_id").get<std::string>();
        ce.image = e.at("image").get<std::string>();
        for (const auto& p : e.at("prompts")) ce.prompts.push_back(Point{p.at(0).get<int>(), p.at(1).get<int>(), 1.0});
        for (const auto& c : e.at("candidates")) {
            ce.thresholds.push_back(c.at("threshold").get<double>());
            ce.threshold_indices.push_back(c.at("threshold_index").get<int>());
        }
        ce.disagreement = e.at("disagreement").get<std::vector<double>>();
        cache.entries.push_back(std::move(ce));
    }
    return cache;
}

CandidateSet load_candidates(const CandidateCache& cache, const CacheEntry& entry) {
    CandidateSet set;
    set.image_id = entry.image_id;
    for (size_t j = 0; j < entry.thresholds.size(); ++j) {
        set.candidates.push_back(Candidate{entry.thresholds[j], entry.threshold_indices[j],
                                           io::read_mask(candidate_mask_path(cache.dir, entry.image_id, entry.threshold_indices[j]))});
    }
    return set;
}

Image load_cached_image(const CandidateCache& cache, const CacheEntry& entry) { return io::read_image(cache.dir / entry.image); }

}  // namespace prefseg::prefs
