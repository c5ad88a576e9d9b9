#include "prefseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace prefseg::metrics {

double dice(const Mask& a, const Mask& b) {
    require_same_shape(a, b, "dice");
    long inter = 0;
    long sa = 0;
    long sb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const bool x = a[i] != 0;
        const bool y = b[i] != 0;
        inter += x && y;
        sa += x;
        sb += y;
    }
    if (sa + sb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(sa + sb);
}

InstanceLabeling connected_components(const Mask& mask) {
    InstanceLabeling labels(mask.rows(), mask.cols(), 0);
    int next = 0;
    std::vector<std::pair<int, int>> stack;
    for (int r = 0; r < mask.rows(); ++r) {
        for (int c = 0; c < mask.cols(); ++c) {
            if (!mask(r, c) || labels(r, c)) continue;
            ++next;
            labels(r, c) = next;
            stack.emplace_back(r, c);
            while (!stack.empty()) {
                auto [y, x] = stack.back();
                stack.pop_back();
                constexpr int dy[4] = {-1, 1, 0, 0};
                constexpr int dx[4] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int ny = y + dy[k];
                    const int nx = x + dx[k];
                    if (mask.in_bounds(ny, nx) && mask(ny, nx) && !labels(ny, nx)) {
                        labels(ny, nx) = next;
                        stack.emplace_back(ny, nx);
                    }
                }
            }
        }
    }
    return labels;
}

int instance_count(const InstanceLabeling& labels) {
    int n = 0;
    for (int v : labels) n = std::max(n, v);
    return n;
}

namespace {

struct Overlap {
    int n_pred = 0;
    int n_truth = 0;
    std::vector<long> pred_area;                  // index 1..n_pred
    std::vector<long> truth_area;                 // index 1..n_truth
    std::map<std::pair<int, int>, long> inter;    // (truth, pred) -> pixels
};

Overlap overlap(const InstanceLabeling& pred, const InstanceLabeling& truth) {
    require_same_shape(pred, truth, "instance metrics");
    Overlap o;
    o.n_pred = instance_count(pred);
    o.n_truth = instance_count(truth);
    o.pred_area.assign(o.n_pred + 1, 0);
    o.truth_area.assign(o.n_truth + 1, 0);
    for (size_t i = 0; i < pred.size(); ++i) {
        const int p = pred[i];
        const int t = truth[i];
        if (p) ++o.pred_area[p];
        if (t) ++o.truth_area[t];
        if (p && t) ++o.inter[{t, p}];
    }
    return o;
}

}  // namespace

double aji(const InstanceLabeling& pred, const InstanceLabeling& truth) {
    const auto o = overlap(pred, truth);
    if (o.n_truth == 0) throw std::invalid_argument("aji: truth has no instances");
    std::vector<bool> used(o.n_pred + 1, false);
    double c_sum = 0.0;
    double u_sum = 0.0;
    for (int t = 1; t <= o.n_truth; ++t) {
        int best = 0;
        double best_iou = 0.0;
        long best_inter = 0;
        long best_union = 0;
        for (auto it = o.inter.lower_bound({t, 0}); it != o.inter.end() && it->first.first == t; ++it) {
            const int p = it->first.second;
            const long inter = it->second;
            const long uni = o.truth_area[t] + o.pred_area[p] - inter;
            const double iou = static_cast<double>(inter) / static_cast<double>(uni);
            if (iou > best_iou) {  // ascending pred ids: ties keep the lowest id
                best = p;
                best_iou = iou;
                best_inter = inter;
                best_union = uni;
            }
        }
        if (best) {
            c_sum += static_cast<double>(best_inter);
            u_sum += static_cast<double>(best_union);
            used[best] = true;
        } else {
            u_sum += static_cast<double>(o.truth_area[t]);
        }
    }
    for (int p = 1; p <= o.n_pred; ++p)
        if (!used[p]) u_sum += static_cast<double>(o.pred_area[p]);
    return u_sum > 0.0 ? c_sum / u_sum : 0.0;
}

PanopticQuality panoptic_quality(const InstanceLabeling& pred, const InstanceLabeling& truth) {
    const auto o = overlap(pred, truth);
    if (o.n_pred == 0 && o.n_truth == 0) {
        std::clog << "warning: panoptic_quality on two empty labelings, defined as 1\n";
        return {1.0, 1.0, 1.0};
    }
    int tp = 0;
    double iou_sum = 0.0;
    for (const auto& [key, inter] : o.inter) {
        const auto [t, p] = key;
        const long uni = o.truth_area[t] + o.pred_area[p] - inter;
        const double iou = static_cast<double>(inter) / static_cast<double>(uni);
        if (iou > 0.5) {
            ++tp;
            iou_sum += iou;
        }
    }
    const int fp = o.n_pred - tp;
    const int fn = o.n_truth - tp;
    const double denom = tp + 0.5 * fp + 0.5 * fn;
    PanopticQuality q;
    q.sq = tp ? iou_sum / tp : 0.0;
    q.rq = tp / denom;
    q.pq = iou_sum / denom;
    return q;
}

ImageScore score_masks(const std::string& image_id, const Mask& pred, const Mask& truth) {
    ImageScore s;
    s.image_id = image_id;
    s.dice = dice(pred, truth);
    const auto lp = connected_components(pred);
    const auto lt = connected_components(truth);
    s.aji = instance_count(lt) ? aji(lp, lt) : std::numeric_limits<double>::quiet_NaN();
    s.pq = panoptic_quality(lp, lt).pq;
    return s;
}

Summary summarize(std::vector<ImageScore> images) {
    Summary out;
    out.images = std::move(images);
    int n_aji = 0;
    for (const auto& s : out.images) {
        out.mean_dice += s.dice;
        out.mean_pq += s.pq;
        if (!std::isnan(s.aji)) {
            out.mean_aji += s.aji;
            ++n_aji;
        }
    }
    if (!out.images.empty()) {
        out.mean_dice /= static_cast<double>(out.images.size());
        out.mean_pq /= static_cast<double>(out.images.size());
    }
    out.mean_aji = n_aji ? out.mean_aji / n_aji : std::numeric_limits<double>::quiet_NaN();
    return out;
}

Summary evaluate(const model::ModelParams& params, const std::vector<synth::Sample>& samples, double prompt_fraction,
                 std::uint64_t seed) {
    if (prompt_fraction < 0.0 || prompt_fraction > 1.0) throw std::invalid_argument("evaluate: fraction outside [0,1]");
    std::vector<ImageScore> scores;
    for (size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        PointSet prompts;
        if (prompt_fraction > 0.0 && !s.centers.empty()) {
            prompts = synth::sample_sparse_points(s.centers, prompt_fraction, seed + 7919 * i);
        }
        const auto prob = model::forward_seg(params, model::extract_features(s.image, prompts));
        scores.push_back(score_masks(s.id, threshold_mask(prob, 0.5), s.true_mask));
    }
    return summarize(std::move(scores));
}

std::vector<SweepRow> eval_prompt_sweep(const model::ModelParams& params, const std::vector<synth::Sample>& samples,
                                        const std::vector<double>& fractions, std::uint64_t seed) {
    std::vector<SweepRow> rows;
    for (double f : fractions) {
        const auto s = evaluate(params, samples, f, seed);
        rows.push_back({f, s.mean_dice, s.mean_aji, s.mean_pq});
    }
    return rows;
}

std::string format_report(const Summary& summary) {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-20s %8s %8s %8s\n", "image_id", "dice", "aji", "pq");
    os << buf;
    for (const auto& s : summary.images) {
        std::snprintf(buf, sizeof(buf), "%-20s %8.4f %8.4f %8.4f\n", s.image_id.c_str(), s.dice, s.aji, s.pq);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "%-20s %8.4f %8.4f %8.4f\n", "mean", summary.mean_dice, summary.mean_aji,
                  summary.mean_pq);
    os << buf;
    return os.str();
}

void write_report_csv(const std::filesystem::path& path, const Summary& summary) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os.precision(10);
    os << "image_id,dice,aji,pq\n";
    for (const auto& s : summary.images) os << s.image_id << ',' << s.dice << ',' << s.aji << ',' << s.pq << '\n';
    os << "mean," << summary.mean_dice << ',' << summary.mean_aji << ',' << summary.mean_pq << '\n';
}

}  // namespace prefseg::metrics
