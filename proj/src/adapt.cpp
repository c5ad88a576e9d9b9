#include "prefseg/adapt.hpp"

#include "prefseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace prefseg::adapt {

using model::FeatureStack;
using model::ModelParams;

PartialLabels from_mask(const Mask& mask) {
    PartialLabels out{Grid<std::uint8_t>(mask.rows(), mask.cols()), LabelSource::ground_truth};
    for (size_t i = 0; i < mask.size(); ++i) out.labels[i] = mask[i] ? 1 : 0;
    return out;
}

PointSet nms_extract_points(const DensityMap& density, double threshold, int window) {
    if (window < 3 || window % 2 == 0) throw std::invalid_argument("nms_extract_points: window must be odd and >= 3");
    const int half = window / 2;
    PointSet out;
    for (int r = 0; r < density.rows(); ++r) {
        for (int c = 0; c < density.cols(); ++c) {
            const double v = density(r, c);
            if (!(v >= threshold)) continue;
            bool is_max = true;
            for (int y = std::max(0, r - half); y <= std::min(density.rows() - 1, r + half) && is_max; ++y) {
                for (int x = std::max(0, c - half); x <= std::min(density.cols() - 1, c + half); ++x) {
                    if (y == r && x == c) continue;
                    const double u = density(y, x);
                    const bool earlier = y < r || (y == r && x < c);
                    if (u > v || (u == v && earlier)) {
                        is_max = false;
                        break;
                    }
                }
            }
            if (is_max) out.push_back(Point{r, c, std::min(v, 1.0)});
        }
    }
    return out;
}

LossGrad detection_loss(const DensityMap& pred, const DensityMap& target) {
    require_same_shape(pred, target, "detection_loss");
    LossGrad out{0.0, Grid<double>(pred.rows(), pred.cols())};
    if (pred.empty()) return out;
    const double n = static_cast<double>(pred.size());
    for (size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        out.value += d * d;
        out.grad[i] = 2.0 * d / n;
    }
    out.value /= n;
    return out;
}

LossGrad segmentation_loss(const ProbMap& prob, const PartialLabels& labels) {
    require_same_shape(prob, labels.labels, "segmentation_loss");
    LossGrad out{0.0, Grid<double>(prob.rows(), prob.cols())};
    long valid = 0;
    for (auto l : labels.labels) valid += l != kIgnore;
    if (valid == 0) return out;
    const double n = static_cast<double>(valid);
    for (size_t i = 0; i < prob.size(); ++i) {
        const auto l = labels.labels[i];
        if (l == kIgnore) continue;
        const double p = prob[i];
        out.value -= l ? std::log(p) : std::log(1.0 - p);
        const bool clamped = p <= kProbEpsilon || p >= 1.0 - kProbEpsilon;
        out.grad[i] = clamped ? 0.0 : (p - static_cast<double>(l)) / n;
    }
    out.value /= n;
    return out;
}

PartialLabels make_pseudo_labels(const ProbMap& teacher_prob, double delta_f, double delta_b) {
    if (!(delta_b >= 0.0 && delta_b < delta_f && delta_f <= 1.0)) {
        throw std::invalid_argument("make_pseudo_labels: need 0 <= delta_b < delta_f <= 1");
    }
    PartialLabels out{Grid<std::uint8_t>(teacher_prob.rows(), teacher_prob.cols()), LabelSource::pseudo};
    for (size_t i = 0; i < teacher_prob.size(); ++i) {
        const double p = teacher_prob[i];
        out.labels[i] = p >= delta_f ? 1 : p <= delta_b ? 0 : kIgnore;
    }
    return out;
}

ContrastivePoints select_contrastive_points(const PartialLabels& pseudo, const ProbMap& teacher_prob, double delta_f,
                                            double delta_b, int num_negatives, std::uint64_t seed) {
    require_same_shape(pseudo.labels, teacher_prob, "select_contrastive_points");
    if (!(delta_b >= 0.0 && delta_b < delta_f && delta_f <= 1.0)) {
        throw std::invalid_argument("select_contrastive_points: need 0 <= delta_b < delta_f <= 1");
    }
    ContrastivePoints out;
    Mask fg(pseudo.labels.rows(), pseudo.labels.cols());
    for (size_t i = 0; i < fg.size(); ++i) fg[i] = pseudo.labels[i] == 1 && teacher_prob[i] > delta_f;
    const auto comps = metrics::connected_components(fg);
    const int n_comp = metrics::instance_count(comps);
    std::vector<std::vector<size_t>> members(n_comp + 1);
    for (size_t i = 0; i < comps.size(); ++i)
        if (comps[i]) members[comps[i]].push_back(i);
    const int cols = fg.cols();
    for (int k = 1; k <= n_comp; ++k) {
        auto& m = members[k];
        const size_t take = std::min<size_t>(3, m.size());
        std::partial_sort(m.begin(), m.begin() + take, m.end(), [&](size_t a, size_t b) {
            if (teacher_prob[a] != teacher_prob[b]) return teacher_prob[a] > teacher_prob[b];
            return a < b;
        });
        for (size_t j = 0; j < take; ++j) {
            out.foreground.push_back(Point{static_cast<int>(m[j] / cols), static_cast<int>(m[j] % cols), teacher_prob[m[j]]});
        }
    }

    std::vector<size_t> bg;
    for (size_t i = 0; i < teacher_prob.size(); ++i)
        if (teacher_prob[i] < delta_b) bg.push_back(i);
    std::mt19937_64 rng(seed);
    const size_t take = std::min<size_t>(bg.size(), static_cast<size_t>(std::max(0, num_negatives)));
    for (size_t j = 0; j < take; ++j) {
        std::uniform_int_distribution<size_t> pick(j, bg.size() - 1);
        std::swap(bg[j], bg[pick(rng)]);
    }
    bg.resize(take);
    std::sort(bg.begin(), bg.end());
    for (auto i : bg) out.background.push_back(Point{static_cast<int>(i / cols), static_cast<int>(i % cols), teacher_prob[i]});
    return out;
}

PclResult pcl_loss(std::span<const Embedding> queries, const Embedding& anchor, std::span<const Embedding> negatives,
                   double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("pcl_loss: tau must be positive");
    PclResult out;
    out.query_grads.assign(queries.size(), Embedding{});
    out.negative_grads.assign(negatives.size(), Embedding{});
    if (queries.empty()) return out;

    auto dot = [](const Embedding& a, const Embedding& b) {
        double s = 0.0;
        for (size_t e = 0; e < a.size(); ++e) s += a[e] * b[e];
        return s;
    };
    std::vector<double> logits(negatives.size() + 1);
    for (size_t i = 0; i < queries.size(); ++i) {
        const auto& z = queries[i];
        logits[0] = dot(anchor, z) / tau;
        for (size_t k = 0; k < negatives.size(); ++k) logits[k + 1] = dot(negatives[k], z) / tau;
        const double mx = *std::max_element(logits.begin(), logits.end());
        double total = 0.0;
        for (double l : logits) total += std::exp(l - mx);
        const double lse = mx + std::log(total);
        out.value += lse - logits[0];

        // d/dlogit_0 = softmax_0 - 1, d/dlogit_k = softmax_k
        const double g0 = std::exp(logits[0] - lse) - 1.0;
        for (size_t e = 0; e < z.size(); ++e) {
            out.query_grads[i][e] += g0 * anchor[e] / tau;
            out.anchor_grad[e] += g0 * z[e] / tau;
        }
        for (size_t k = 0; k < negatives.size(); ++k) {
            const double gk = std::exp(logits[k + 1] - lse);
            for (size_t e = 0; e < z.size(); ++e) {
                out.query_grads[i][e] += gk * negatives[k][e] / tau;
                out.negative_grads[k][e] += gk * z[e] / tau;
            }
        }
    }
    return out;
}

ParamLoss seg_objective(const ModelParams& params, const FeatureStack& feats, const PartialLabels& labels) {
    const auto pass = model::forward(params, feats);
    auto loss = segmentation_loss(pass.prob, labels);
    ParamLoss out{loss.value, ModelParams{}};
    model::backward(params, feats, pass, &loss.grad, nullptr, out.grad);
    return out;
}

ParamLoss det_objective(const ModelParams& params, const FeatureStack& feats, const DensityMap& target) {
    const auto pass = model::forward(params, feats);
    auto loss = detection_loss(pass.density, target);
    for (size_t i = 0; i < loss.grad.size(); ++i) loss.grad[i] *= model::sigmoid(pass.det_pre[i]);
    ParamLoss out{loss.value, ModelParams{}};
    model::backward(params, feats, pass, nullptr, &loss.grad, out.grad);
    return out;
}

ParamLoss pcl_objective(const ModelParams& params, const FeatureStack& feats, const PointSet& prompt_points,
                        const PointSet& queries, const PointSet& negatives, double tau) {
    ParamLoss out{0.0, ModelParams{}};
    if (prompt_points.empty() || queries.empty() || negatives.empty()) return out;

    std::vector<Embedding> prompt_emb;
    Embedding mean{};
    for (const auto& p : prompt_points) {
        prompt_emb.push_back(model::embed_point(params, feats, p));
        for (size_t e = 0; e < mean.size(); ++e) mean[e] += prompt_emb.back()[e] / static_cast<double>(prompt_points.size());
    }
    double mean_norm = 0.0;
    for (double v : mean) mean_norm += v * v;
    mean_norm = std::sqrt(mean_norm);
    Embedding anchor{};
    if (mean_norm == 0.0) {
        anchor[0] = 1.0;
    } else {
        for (size_t e = 0; e < anchor.size(); ++e) anchor[e] = mean[e] / mean_norm;
    }

    std::vector<Embedding> q;
    for (const auto& p : queries) q.push_back(model::embed_point(params, feats, p));
    std::vector<Embedding> neg;
    for (const auto& p : negatives) neg.push_back(model::embed_point(params, feats, p));

    const auto res = pcl_loss(q, anchor, neg, tau);
    out.value = res.value;
    for (size_t i = 0; i < queries.size(); ++i) model::backward_embedding(params, feats, queries[i], res.query_grads[i], out.grad);
    for (size_t k = 0; k < negatives.size(); ++k)
        model::backward_embedding(params, feats, negatives[k], res.negative_grads[k], out.grad);
    if (mean_norm > 0.0) {
        double d = 0.0;
        for (size_t e = 0; e < anchor.size(); ++e) d += anchor[e] * res.anchor_grad[e];
        Embedding g_member{};
        for (size_t e = 0; e < anchor.size(); ++e) {
            g_member[e] = (res.anchor_grad[e] - anchor[e] * d) / mean_norm / static_cast<double>(prompt_points.size());
        }
        for (const auto& p : prompt_points) model::backward_embedding(params, feats, p, g_member, out.grad);
    }
    return out;
}

void Stage1Config::validate() const {
    if (lambda_det < 0.0 || lambda_pcl < 0.0) throw std::invalid_argument("stage1: lambdas must be nonnegative");
    if (!(delta_b >= 0.0 && delta_b < delta_f && delta_f <= 1.0)) throw std::invalid_argument("stage1: need 0 <= delta_b < delta_f <= 1");
    if (!(tau > 0.0)) throw std::invalid_argument("stage1: tau must be positive");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw std::invalid_argument("stage1: ema_decay must be in [0,1)");
    if (iterations < 0) throw std::invalid_argument("stage1: negative iterations");
    if (crop_size < 8) throw std::invalid_argument("stage1: crop_size must be >= 8");
    if (nms_window < 3 || nms_window % 2 == 0) throw std::invalid_argument("stage1: nms_window must be odd and >= 3");
    if (!(density_sigma > 0.0)) throw std::invalid_argument("stage1: density_sigma must be positive");
}

namespace {

struct CropView {
    Rect rect;
    bool flip_h = false;
    bool flip_v = false;

    template <typename T>
    Grid<T> apply(const Grid<T>& g) const {
        Grid<T> out(rect.height(), rect.width());
        for (int y = 0; y < rect.height(); ++y) {
            for (int x = 0; x < rect.width(); ++x) {
                const int sy = rect.row0 + (flip_v ? rect.height() - 1 - y : y);
                const int sx = rect.col0 + (flip_h ? rect.width() - 1 - x : x);
                out(y, x) = g(sy, sx);
            }
        }
        return out;
    }

    FeatureStack apply(const FeatureStack& f) const { return f.crop(rect).flipped(flip_h, flip_v); }

    PointSet apply(const PointSet& pts) const {
        PointSet out;
        for (const auto& p : pts) {
            if (!rect.contains(p.row, p.col)) continue;
            int y = p.row - rect.row0;
            int x = p.col - rect.col0;
            if (flip_v) y = rect.height() - 1 - y;
            if (flip_h) x = rect.width() - 1 - x;
            out.push_back(Point{y, x, p.confidence});
        }
        return out;
    }
};

CropView random_view(std::mt19937_64& rng, int rows, int cols, int crop) {
    const int h = std::min(crop, rows);
    const int w = std::min(crop, cols);
    std::uniform_int_distribution<int> r0(0, rows - h);
    std::uniform_int_distribution<int> c0(0, cols - w);
    std::bernoulli_distribution coin(0.5);
    CropView v;
    v.rect.row0 = r0(rng);
    v.rect.col0 = c0(rng);
    v.rect.row1 = v.rect.row0 + h;
    v.rect.col1 = v.rect.col0 + w;
    v.flip_h = coin(rng);
    v.flip_v = coin(rng);
    return v;
}

PointSet merge_points(const PointSet& a, const PointSet& b) {
    PointSet out = a;
    for (const auto& p : b) {
        const bool dup = std::any_of(out.begin(), out.end(), [&](const Point& q) { return q.row == p.row && q.col == p.col; });
        if (!dup) out.push_back(p);
    }
    return out;
}

PointSet strongest(PointSet pts, int cap) {
    std::stable_sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.confidence > b.confidence; });
    if (static_cast<int>(pts.size()) > cap) pts.resize(std::max(0, cap));
    return pts;
}

struct ImageCache {
    FeatureStack base;  // prompt channel zero
    DensityMap density;
};

}  // namespace

std::vector<PointSet> sparse_target_points(const std::vector<synth::Sample>& target, double sparse_fraction,
                                           std::uint64_t seed) {
    std::vector<PointSet> out(target.size());
    if (sparse_fraction <= 0.0) return out;
    for (size_t i = 0; i < target.size(); ++i) {
        if (!target[i].centers.empty()) {
            out[i] = synth::sample_sparse_points(target[i].centers, sparse_fraction, seed * 1000003ULL + i);
        }
    }
    return out;
}

Stage1Result train_stage1(const std::vector<synth::Sample>& source, const std::vector<synth::Sample>& target,
                          double sparse_fraction, const Stage1Config& cfg, const ModelParams& init) {
    cfg.validate();
    if (source.empty()) throw std::invalid_argument("train_stage1: empty source dataset");
    if (cfg.use_target && target.empty()) throw std::invalid_argument("train_stage1: empty target dataset");
    if (sparse_fraction < 0.0 || sparse_fraction > 1.0) throw std::invalid_argument("train_stage1: sparse fraction outside [0,1]");

    std::mt19937_64 rng(cfg.seed);
    std::vector<ImageCache> src_cache;
    for (const auto& s : source) {
        src_cache.push_back({model::extract_features(s.image, {}),
                             synth::rasterize_density(s.centers, cfg.density_sigma, s.image.rows(), s.image.cols())});
    }
    std::vector<ImageCache> tgt_cache;
    std::vector<PointSet> tgt_sparse;
    if (cfg.use_target) {
        for (const auto& s : target) tgt_cache.push_back({model::extract_features(s.image, {}), {}});
        if (sparse_fraction > 0.0) {
            tgt_sparse = sparse_target_points(target, sparse_fraction, cfg.seed);
        } else {
            // No target points: confident detections of the initial (source) model stand in.
            for (const auto& c : tgt_cache) {
                tgt_sparse.push_back(nms_extract_points(model::forward_det(init, c.base), cfg.uda_confidence, cfg.nms_window));
            }
        }
    }

    ModelParams student = init;
    ModelParams teacher = init;
    Stage1Result result{model::PolicySnapshot(init, model::PolicyTag::student),
                        model::PolicySnapshot(init, model::PolicyTag::teacher), {}};
    std::uniform_int_distribution<size_t> pick_src(0, source.size() - 1);
    std::uniform_int_distribution<size_t> pick_tgt(0, cfg.use_target ? target.size() - 1 : 0);

    for (int it = 0; it < cfg.iterations; ++it) {
        ModelParams grad;
        Stage1LogEntry log{it, 0.0, 0.0, 0.0, 0.0};

        // Source pass: ground-truth masks and densities, n_s random prompts.
        {
            const size_t idx = pick_src(rng);
            const auto& s = source[idx];
            const auto view = random_view(rng, s.image.rows(), s.image.cols(), cfg.crop_size);
            auto feats = view.apply(src_cache[idx].base);
            auto pts = view.apply(s.centers);
            std::uniform_int_distribution<size_t> ns(0, pts.size());
            const size_t n_prompts = ns(rng);
            std::shuffle(pts.begin(), pts.end(), rng);
            pts.resize(n_prompts);
            feats.set_prompts(pts);

            const auto seg = seg_objective(student, feats, from_mask(view.apply(s.mask)));
            const auto det = det_objective(student, feats, view.apply(src_cache[idx].density));
            log.seg += seg.value;
            log.det += det.value;
            grad.axpy(1.0, seg.grad);
            grad.axpy(cfg.lambda_det, det.grad);
        }

        // Target pass: teacher pseudo-labels, sparse + detected prompts.
        if (cfg.use_target) {
            const size_t idx = pick_tgt(rng);
            const auto& s = target[idx];
            const auto view = random_view(rng, s.image.rows(), s.image.cols(), cfg.crop_size);
            auto feats = view.apply(tgt_cache[idx].base);
            const auto sparse = view.apply(tgt_sparse[idx]);
            feats.set_prompts(sparse);
            auto detected = nms_extract_points(model::forward_det(teacher, feats), cfg.nms_threshold, cfg.nms_window);
            const auto prompts = merge_points(sparse, strongest(std::move(detected), cfg.max_points_per_crop));
            feats.set_prompts(prompts);

            const auto teacher_prob = model::forward_seg(teacher, feats);
            const auto pseudo = make_pseudo_labels(teacher_prob, cfg.delta_f, cfg.delta_b);
            const auto pseudo_density = synth::rasterize_density(prompts, cfg.density_sigma, feats.rows(), feats.cols());

            const auto seg = seg_objective(student, feats, pseudo);
            const auto det = det_objective(student, feats, pseudo_density);
            log.seg += seg.value;
            log.det += det.value;
            grad.axpy(1.0, seg.grad);
            grad.axpy(cfg.lambda_det, det.grad);

            if (cfg.lambda_pcl > 0.0 && !sparse.empty()) {
                const auto cp = select_contrastive_points(pseudo, teacher_prob, cfg.delta_f, cfg.delta_b, cfg.num_negatives, rng());
                const auto pcl = pcl_objective(student, feats, sparse, cp.foreground, cp.background, cfg.tau);
                log.pcl += pcl.value;
                grad.axpy(cfg.lambda_pcl, pcl.grad);
            }
        }

        log.total = log.seg + cfg.lambda_det * log.det + cfg.lambda_pcl * log.pcl;
        if (!std::isfinite(log.total) || !grad.all_finite()) {
            throw std::runtime_error("train_stage1: non-finite loss at iteration " + std::to_string(it) + " (" +
                                     format_log_line(log) + ")");
        }
        const double lr = cfg.learning_rate *
                          std::pow(1.0 - static_cast<double>(it) / std::max(1, cfg.iterations), cfg.lr_power);
        student.axpy(-lr, grad);
        teacher = model::ema_update(teacher, student, cfg.ema_decay);
        result.log.push_back(log);
    }
    result.student = model::PolicySnapshot(student, model::PolicyTag::student);
    result.teacher = model::PolicySnapshot(teacher, model::PolicyTag::teacher);
    return result;
}

std::string format_log_line(const Stage1LogEntry& e) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d, %.9g, %.9g, %.9g, %.9g", e.iter, e.seg, e.det, e.pcl, e.total);
    return buf;
}

}  // namespace prefseg::adapt
