#include "prefseg/dpo.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace prefseg::dpo {

std::string to_string(Normalization n) { return n == Normalization::mean ? "mean" : "sum"; }

Normalization parse_normalization(const std::string& s) {
    if (s == "mean") return Normalization::mean;
    if (s == "sum") return Normalization::sum;
    throw std::invalid_argument("unknown normalization '" + s + "'");
}

void DpoConfig::validate() const {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw std::invalid_argument("dpo: beta must be > 0");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("dpo: learning_rate must be >= 0");
    if (iterations < 0) throw std::invalid_argument("dpo: iterations must be >= 0");
    if (!(lr_power >= 0.0)) throw std::invalid_argument("dpo: lr_power must be >= 0");
    if (!(seg_weight >= 0.0)) throw std::invalid_argument("dpo: seg_weight must be >= 0");
}

namespace {

double region_norm(const Rect& r, Normalization n) {
    if (r.area() <= 0) throw std::invalid_argument("mask_logprob: empty region");
    return n == Normalization::mean ? static_cast<double>(r.area()) : 1.0;
}

Rect resolve(const std::optional<Rect>& region, const Mask& m) {
    const Rect r = region.value_or(full_rect(m));
    if (r.row0 < 0 || r.col0 < 0 || r.row1 > m.rows() || r.col1 > m.cols() || r.area() <= 0) {
        throw std::invalid_argument("preference region outside the image or empty");
    }
    return r;
}

ProbMap probs_from_logits(const Grid<double>& logit) {
    ProbMap p(logit.rows(), logit.cols());
    for (size_t i = 0; i < p.size(); ++i) p[i] = model::clamped_prob(logit[i]);
    return p;
}

struct RefLogprobs {
    double preferred = 0.0;
    std::vector<double> dispreferred;
};

RefLogprobs ref_logprobs(const PreferenceGroup& g, const ProbMap& ref_prob, Normalization n) {
    RefLogprobs out;
    out.preferred = mask_logprob(ref_prob, g.preferred, g.region, n);
    for (const auto& d : g.dispreferred) out.dispreferred.push_back(mask_logprob(ref_prob, d, g.region, n));
    return out;
}

void check_group(const PreferenceGroup& g, const Grid<double>& policy_logit) {
    if (g.dispreferred.empty()) throw std::invalid_argument("preference group without dispreferred masks");
    require_same_shape(g.preferred, policy_logit, "preference group");
    for (const auto& d : g.dispreferred) require_same_shape(d, policy_logit, "preference group");
}

// PL (or BT when bt is set) loss of one group; gradient accumulated into grad.
double group_loss(const PreferenceGroup& g, const Grid<double>& policy_logit, const ProbMap& policy_prob,
                  const RefLogprobs& ref, const DpoConfig& cfg, bool bt, Grid<double>& grad) {
    const Rect region = resolve(g.region, g.preferred);
    const double lp_p = mask_logprob(policy_prob, g.preferred, region, cfg.normalization);
    std::vector<double> lp_d;
    for (const auto& d : g.dispreferred) lp_d.push_back(mask_logprob(policy_prob, d, region, cfg.normalization));

    ScalarLoss l;
    if (bt) {
        if (g.dispreferred.size() != 1) throw std::invalid_argument("dpo_bt_loss: exactly one dispreferred mask required");
        l = bt_loss(lp_p, lp_d[0], ref.preferred, ref.dispreferred[0], cfg.beta);
    } else {
        l = pl_loss(lp_p, lp_d, ref.preferred, ref.dispreferred, cfg.beta);
    }
    accumulate_logprob_grad(policy_logit, g.preferred, region, cfg.normalization, l.d_preferred, grad);
    for (size_t j = 0; j < g.dispreferred.size(); ++j) {
        accumulate_logprob_grad(policy_logit, g.dispreferred[j], region, cfg.normalization, l.d_dispreferred[j], grad);
    }
    return l.value;
}

MapLoss single_group(const PreferenceGroup& g, const Grid<double>& policy_logit, const ProbMap& ref_prob,
                     const DpoConfig& cfg, bool bt) {
    cfg.validate();
    check_group(g, policy_logit);
    require_same_shape(ref_prob, policy_logit, "dpo loss");
    MapLoss out{0.0, Grid<double>(policy_logit.rows(), policy_logit.cols())};
    const auto policy_prob = probs_from_logits(policy_logit);
    out.value = group_loss(g, policy_logit, policy_prob, ref_logprobs(g, ref_prob, cfg.normalization), cfg, bt, out.logit_grad);
    return out;
}

void check_patch_groups(std::span<const PreferenceGroup> groups, const prefs::PatchGrid& grid, const Grid<double>& logit,
                        const char* what) {
    if (grid.rows != logit.rows() || grid.cols != logit.cols()) {
        throw std::invalid_argument(std::string(what) + ": grid does not match the image");
    }
    std::set<int> seen;
    for (const auto& g : groups) {
        if (g.patch_index < 0 || g.patch_index >= static_cast<int>(grid.cells.size())) {
            throw std::invalid_argument(std::string(what) + ": patch index out of range");
        }
        if (!g.region || !(*g.region == grid.cells[g.patch_index])) {
            throw std::invalid_argument(std::string(what) + ": group region differs from its grid cell");
        }
        if (!seen.insert(g.patch_index).second) throw std::invalid_argument(std::string(what) + ": duplicate patch");
    }
}

MapLoss patch_sum(std::span<const PreferenceGroup> groups, const Grid<double>& policy_logit, const ProbMap& ref_prob,
                  const DpoConfig& cfg) {
    MapLoss out{0.0, Grid<double>(policy_logit.rows(), policy_logit.cols())};
    const auto policy_prob = probs_from_logits(policy_logit);
    for (const auto& g : groups) {
        check_group(g, policy_logit);
        out.value += group_loss(g, policy_logit, policy_prob, ref_logprobs(g, ref_prob, cfg.normalization), cfg, false,
                                out.logit_grad);
    }
    return out;
}

// Label where every candidate agrees, ignore where they differ.
adapt::PartialLabels agreement_labels(const prefs::CandidateSet& cands) {
    const auto& first = cands.candidates.front().mask;
    adapt::PartialLabels out{Grid<std::uint8_t>(first.rows(), first.cols()), adapt::LabelSource::pseudo};
    for (size_t i = 0; i < first.size(); ++i) {
        const bool agree = std::all_of(cands.candidates.begin(), cands.candidates.end(),
                                       [&](const prefs::Candidate& c) { return c.mask[i] == first[i]; });
        out.labels[i] = agree ? first[i] : adapt::kIgnore;
    }
    return out;
}

}  // namespace

double mask_logprob(const ProbMap& prob, const Mask& mask, const std::optional<Rect>& region, Normalization normalization) {
    require_same_shape(prob, mask, "mask_logprob");
    const Rect r = resolve(region, mask);
    const double norm = region_norm(r, normalization);
    double total = 0.0;
    for (int row = r.row0; row < r.row1; ++row) {
        for (int c = r.col0; c < r.col1; ++c) {
            const double p = std::clamp(prob(row, c), kProbEpsilon, 1.0 - kProbEpsilon);
            total += mask(row, c) ? std::log(p) : std::log1p(-p);
        }
    }
    return total / norm;
}

void accumulate_logprob_grad(const Grid<double>& logit, const Mask& mask, const Rect& region,
                             Normalization normalization, double scale, Grid<double>& grad) {
    require_same_shape(logit, mask, "accumulate_logprob_grad");
    require_same_shape(logit, grad, "accumulate_logprob_grad");
    if (scale == 0.0) return;
    const double k = scale / region_norm(region, normalization);
    for (int row = region.row0; row < region.row1; ++row) {
        for (int c = region.col0; c < region.col1; ++c) {
            const double z = logit(row, c);
            if (model::prob_clamped(z)) continue;
            const double y = mask(row, c) ? 1.0 : 0.0;
            grad(row, c) += k * (y - model::sigmoid(z));
        }
    }
}

double implicit_reward(double policy_lp, double ref_lp, double beta) { return beta * (policy_lp - ref_lp); }

ScalarLoss bt_loss(double policy_p, double policy_d, double ref_p, double ref_d, double beta) {
    const double h = implicit_reward(policy_p, ref_p, beta) - implicit_reward(policy_d, ref_d, beta);
    const double s = model::sigmoid(-h);
    return ScalarLoss{model::softplus(-h), -beta * s, {beta * s}};
}

ScalarLoss pl_loss(double policy_p, std::span<const double> policy_d, double ref_p, std::span<const double> ref_d,
                   double beta) {
    if (policy_d.empty() || policy_d.size() != ref_d.size()) {
        throw std::invalid_argument("pl_loss: need matching, non-empty dispreferred log-probs");
    }
    const double rp = implicit_reward(policy_p, ref_p, beta);
    std::vector<double> neg_h(policy_d.size());
    for (size_t j = 0; j < policy_d.size(); ++j) neg_h[j] = implicit_reward(policy_d[j], ref_d[j], beta) - rp;
    const double m = *std::max_element(neg_h.begin(), neg_h.end());
    double z = 0.0;
    for (double v : neg_h) z += std::exp(v - m);
    const double s = m + std::log(z);
    const double ds = model::sigmoid(s);

    ScalarLoss out;
    out.value = model::softplus(s);
    out.d_preferred = -beta * ds;
    for (double v : neg_h) out.d_dispreferred.push_back(beta * ds * std::exp(v - m) / z);
    return out;
}

PreferenceGroup make_group(const prefs::PreferenceRecord& record, const prefs::CandidateSet& cands,
                           const prefs::PatchGrid& grid) {
    prefs::validate_record(record, static_cast<int>(cands.size()));
    PreferenceGroup g;
    g.image_id = record.image_id;
    g.patch_index = record.patch_index;
    if (record.patch_index >= 0) {
        if (record.patch_index >= static_cast<int>(grid.cells.size())) {
            throw prefs::PreferenceError("patch_index " + std::to_string(record.patch_index) + " outside the grid");
        }
        g.region = grid.cells[record.patch_index];
    }
    g.preferred = cands.candidates[record.preferred].mask;
    for (int d : record.dispreferred) g.dispreferred.push_back(cands.candidates[d].mask);
    return g;
}

MapLoss dpo_bt_loss(const PreferenceGroup& group, const Grid<double>& policy_logit, const ProbMap& ref_prob,
                    const DpoConfig& cfg) {
    return single_group(group, policy_logit, ref_prob, cfg, true);
}

MapLoss dpo_pl_loss(const PreferenceGroup& group, const Grid<double>& policy_logit, const ProbMap& ref_prob,
                    const DpoConfig& cfg) {
    return single_group(group, policy_logit, ref_prob, cfg, false);
}

MapLoss lpo_loss(std::span<const PreferenceGroup> groups, const prefs::PatchGrid& grid,
                 const Grid<double>& policy_logit, const ProbMap& ref_prob, const DpoConfig& cfg) {
    cfg.validate();
    require_same_shape(ref_prob, policy_logit, "lpo_loss");
    check_patch_groups(groups, grid, policy_logit, "lpo_loss");
    if (groups.size() != grid.cells.size()) throw std::invalid_argument("lpo_loss: missing patch group");
    return patch_sum(groups, policy_logit, ref_prob, cfg);
}

MapLoss slpo_loss(std::span<const PreferenceGroup> groups, const prefs::PatchGrid& grid,
                  const Grid<double>& policy_logit, const ProbMap& ref_prob, const DpoConfig& cfg) {
    cfg.validate();
    require_same_shape(ref_prob, policy_logit, "slpo_loss");
    if (groups.empty()) throw std::invalid_argument("slpo_loss: empty labeled patch set");
    check_patch_groups(groups, grid, policy_logit, "slpo_loss");
    return patch_sum(groups, policy_logit, ref_prob, cfg);
}

std::string to_string(Mode m) {
    switch (m) {
        case Mode::gpo: return "GPO";
        case Mode::lpo: return "LPO";
        case Mode::slpo: return "SLPO";
        case Mode::upo: return "UPO";
    }
    return "unknown";
}

Mode parse_mode(const std::string& s) {
    std::string u = s;
    std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    if (u == "GPO") return Mode::gpo;
    if (u == "LPO") return Mode::lpo;
    if (u == "SLPO") return Mode::slpo;
    if (u == "UPO") return Mode::upo;
    throw std::invalid_argument("unknown fine-tuning mode '" + s + "'");
}

std::vector<prefs::PreferenceRecord> records_for_mode(const std::vector<prefs::PreferenceRecord>& records, Mode mode) {
    std::map<std::pair<std::string, int>, size_t> latest;
    std::vector<const prefs::PreferenceRecord*> order;
    for (const auto& r : records) {
        bool keep = false;
        switch (mode) {
            case Mode::gpo: keep = r.patch_index == -1 && r.rater != prefs::Rater::upo; break;
            case Mode::upo: keep = r.patch_index == -1 && r.rater == prefs::Rater::upo; break;
            case Mode::lpo:
            case Mode::slpo: keep = r.patch_index >= 0; break;
        }
        if (!keep) continue;
        const auto key = std::make_pair(r.image_id, r.patch_index);
        auto it = latest.find(key);
        if (it == latest.end()) {
            latest.emplace(key, order.size());
            order.push_back(&r);
        } else {
            order[it->second] = &r;
        }
    }
    std::vector<prefs::PreferenceRecord> out;
    for (const auto* r : order) out.push_back(*r);
    return out;
}

std::vector<TrainImage> train_images_from_cache(const prefs::CandidateCache& cache) {
    std::vector<TrainImage> out;
    for (const auto& e : cache.entries) {
        out.push_back(TrainImage{e.image_id, model::extract_features(prefs::load_cached_image(cache, e), e.prompts),
                                 prefs::load_candidates(cache, e)});
    }
    return out;
}

std::vector<prefs::PreferenceRecord> restrict_to_patches(const std::vector<prefs::PreferenceRecord>& records,
                                                         const std::vector<TrainImage>& images, int grid_size,
                                                         double fraction, prefs::SelectionMode mode,
                                                         std::uint64_t seed) {
    std::map<std::string, std::set<int>> chosen;
    for (size_t i = 0; i < images.size(); ++i) {
        const auto& img = images[i];
        const auto grid = prefs::partition_patches(img.feats.rows(), img.feats.cols(), grid_size);
        const auto sel = prefs::select_sparse_patches(img.candidates, grid, fraction, mode, seed + i);
        chosen[img.image_id] = std::set<int>(sel.begin(), sel.end());
    }
    std::vector<prefs::PreferenceRecord> out;
    for (const auto& r : records) {
        if (r.patch_index < 0) {
            out.push_back(r);
            continue;
        }
        auto it = chosen.find(r.image_id);
        if (it != chosen.end() && it->second.count(r.patch_index)) out.push_back(r);
    }
    return out;
}

FinetuneResult finetune_dpo(const model::PolicySnapshot& policy, const model::PolicySnapshot& ref,
                            const std::vector<TrainImage>& images, const std::vector<prefs::PreferenceRecord>& records,
                            Mode mode, int grid_size, const DpoConfig& cfg, const std::vector<AnchorImage>& anchors) {
    cfg.validate();
    const auto used = records_for_mode(records, mode);
    if (used.empty()) throw std::invalid_argument("finetune_dpo: no preference records for mode " + to_string(mode));

    struct Work {
        const TrainImage* image;
        ProbMap ref_prob;
        adapt::PartialLabels pseudo;
        std::vector<PreferenceGroup> groups;
        std::vector<RefLogprobs> refs;
    };
    std::map<std::string, size_t> by_id;
    std::vector<Work> work;
    for (const auto& r : used) {
        auto it = by_id.find(r.image_id);
        if (it == by_id.end()) {
            const auto img = std::find_if(images.begin(), images.end(), [&](const TrainImage& t) { return t.image_id == r.image_id; });
            if (img == images.end()) throw std::invalid_argument("finetune_dpo: no candidates for image '" + r.image_id + "'");
            it = by_id.emplace(r.image_id, work.size()).first;
            work.push_back(Work{&*img, model::forward_seg(ref.params(), img->feats), agreement_labels(img->candidates), {}, {}});
        }
        auto& w = work[it->second];
        const auto grid = prefs::partition_patches(w.image->feats.rows(), w.image->feats.cols(), grid_size);
        w.groups.push_back(make_group(r, w.image->candidates, grid));
        w.refs.push_back(ref_logprobs(w.groups.back(), w.ref_prob, cfg.normalization));
    }

    model::PolicySnapshot current(policy.params(), model::PolicyTag::student);
    FinetuneResult result{current, {}, static_cast<int>(used.size())};
    model::ModelParams& params = result.policy.mutable_params();
    model::ModelParams grad;
    for (int it = 0; it < cfg.iterations; ++it) {
        grad.set_zero();
        double total = 0.0;
        double seg = 0.0;
        for (const auto& w : work) {
            const auto pass = model::forward(params, w.image->feats);
            Grid<double> logit_grad(pass.seg_logit.rows(), pass.seg_logit.cols());
            for (size_t g = 0; g < w.groups.size(); ++g) {
                total += group_loss(w.groups[g], pass.seg_logit, pass.prob, w.refs[g], cfg, false, logit_grad);
            }
            if (cfg.seg_weight > 0.0) {
                const auto s = adapt::segmentation_loss(pass.prob, w.pseudo);
                seg += s.value;
                for (size_t i = 0; i < logit_grad.size(); ++i) logit_grad[i] += cfg.seg_weight * s.grad[i];
            }
            model::backward(params, w.image->feats, pass, &logit_grad, nullptr, grad);
        }
        if (cfg.seg_weight > 0.0) {
            for (const auto& a : anchors) {
                auto s = adapt::seg_objective(params, a.feats, a.labels);
                seg += s.value;
                grad.axpy(cfg.seg_weight, s.grad);
            }
        }
        if (!std::isfinite(total) || !std::isfinite(seg) || !grad.all_finite()) {
            throw std::runtime_error("finetune_dpo: non-finite loss at iteration " + std::to_string(it));
        }
        const double lr = cfg.learning_rate * std::pow(1.0 - static_cast<double>(it) / cfg.iterations, cfg.lr_power);
        result.log.push_back(FinetuneLogEntry{it, total, seg, lr});
        params.axpy(-lr, grad);
    }
    return result;
}

std::string format_log_line(const FinetuneLogEntry& e) {
    std::ostringstream os;
    os.precision(10);
    os << e.iter << ", " << e.loss << ", " << e.seg << ", " << e.learning_rate;
    return os.str();
}

}  // namespace prefseg::dpo
