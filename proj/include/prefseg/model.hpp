#pragma once

#include "prefseg/grid.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace prefseg::model {

inline constexpr int kChannels = 9;
inline constexpr int kHidden = 16;
inline constexpr int kEmbed = 16;
inline constexpr double kPromptSigma = 3.0;

enum Channel : int {
    kRaw = 0,
    kSmooth1,
    kSmooth2,
    kSmooth4,
    kGrad1,
    kGrad2,
    kVariance,
    kPrompt,
    kBias,
};

// Channel-major C x H x W stack fed to the pixel classifier.
class FeatureStack {
public:
    FeatureStack() = default;
    FeatureStack(int rows, int cols);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    size_t pixels() const { return static_cast<size_t>(rows_) * cols_; }

    std::span<double> channel(int c) { return {data_.data() + c * pixels(), pixels()}; }
    std::span<const double> channel(int c) const { return {data_.data() + c * pixels(), pixels()}; }
    double at(int c, size_t i) const { return data_[c * pixels() + i]; }
    double at(int c, int r, int col) const { return at(c, static_cast<size_t>(r) * cols_ + col); }

    FeatureStack crop(const Rect& r) const;
    FeatureStack flipped(bool horizontal, bool vertical) const;
    // Replaces the prompt channel; every other channel is untouched.
    void set_prompts(const PointSet& prompts);

    bool operator==(const FeatureStack&) const = default;

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

// Max-composited Gaussian bumps (sigma = 3 px), peak 1 at each prompt.
Grid<double> rasterize_prompts(const PointSet& points, int rows, int cols);

FeatureStack extract_features(const Image& image, const PointSet& prompts);

// Flat parameter vector with named views.
class ModelParams {
public:
    static constexpr size_t kHiddenW = static_cast<size_t>(kHidden) * kChannels;
    static constexpr size_t kOffHiddenB = kHiddenW;
    static constexpr size_t kOffSegW = kOffHiddenB + kHidden;
    static constexpr size_t kOffSegB = kOffSegW + kHidden;
    static constexpr size_t kOffDetW = kOffSegB + 1;
    static constexpr size_t kOffDetB = kOffDetW + kHidden;
    static constexpr size_t kOffProj = kOffDetB + 1;
    static constexpr size_t kSize = kOffProj + static_cast<size_t>(kEmbed) * kHidden;

    ModelParams() : values_(kSize, 0.0) {}

    // Small random weights, zero biases.
    static ModelParams random(std::uint64_t seed);

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }

    // Row k holds the kChannels input weights of hidden unit k.
    std::span<double> hidden_w() { return {values_.data(), kHiddenW}; }
    std::span<const double> hidden_w() const { return {values_.data(), kHiddenW}; }
    std::span<double> hidden_b() { return {values_.data() + kOffHiddenB, kHidden}; }
    std::span<const double> hidden_b() const { return {values_.data() + kOffHiddenB, kHidden}; }
    std::span<double> seg_w() { return {values_.data() + kOffSegW, kHidden}; }
    std::span<const double> seg_w() const { return {values_.data() + kOffSegW, kHidden}; }
    double& seg_b() { return values_[kOffSegB]; }
    double seg_b() const { return values_[kOffSegB]; }
    std::span<double> det_w() { return {values_.data() + kOffDetW, kHidden}; }
    std::span<const double> det_w() const { return {values_.data() + kOffDetW, kHidden}; }
    double& det_b() { return values_[kOffDetB]; }
    double det_b() const { return values_[kOffDetB]; }
    // Row e holds the kHidden weights of embedding component e.
    std::span<double> proj_w() { return {values_.data() + kOffProj, static_cast<size_t>(kEmbed) * kHidden}; }
    std::span<const double> proj_w() const { return {values_.data() + kOffProj, static_cast<size_t>(kEmbed) * kHidden}; }

    bool all_finite() const;
    // this += scale * other
    void axpy(double scale, const ModelParams& other);
    void set_zero();

    bool operator==(const ModelParams&) const = default;

private:
    std::vector<double> values_;
};

enum class PolicyTag { student, teacher, reference };

std::string to_string(PolicyTag tag);

// Reference snapshots refuse mutable access.
class PolicySnapshot {
public:
    PolicySnapshot(ModelParams params, PolicyTag tag) : params_(std::move(params)), tag_(tag) {}

    const ModelParams& params() const { return params_; }
    ModelParams& mutable_params();
    PolicyTag tag() const { return tag_; }

private:
    ModelParams params_;
    PolicyTag tag_;
};

struct ForwardPass {
    std::vector<double> hidden;  // pixel-major N x kHidden tanh activations
    Grid<double> seg_logit;
    ProbMap prob;
    Grid<double> det_pre;
    DensityMap density;
};

ForwardPass forward(const ModelParams& params, const FeatureStack& feats);
ProbMap forward_seg(const ModelParams& params, const FeatureStack& feats);
DensityMap forward_det(const ModelParams& params, const FeatureStack& feats);

// Unit-length projection of the hidden activation at `point`. A zero
// projection maps to the first basis vector.
std::array<double, kEmbed> embed_point(const ModelParams& params, const FeatureStack& feats, const Point& point);

// Every weight: decay * teacher + (1 - decay) * student.
ModelParams ema_update(const ModelParams& teacher, const ModelParams& student, double decay);

double sigmoid(double x);
double softplus(double x);
// Probability from a logit, clamped to [kProbEpsilon, 1 - kProbEpsilon].
double clamped_prob(double logit);
// True when clamped_prob(logit) sits on a clamp bound (zero derivative).
bool prob_clamped(double logit);

// Accumulates parameter gradients given per-pixel upstream gradients with
// respect to the seg logit and the det pre-activation. Either may be null.
void backward(const ModelParams& params, const FeatureStack& feats, const ForwardPass& pass,
              const Grid<double>* seg_logit_grad, const Grid<double>* det_pre_grad, ModelParams& grad);

// Accumulates parameter gradients for an upstream gradient on embed_point(point).
void backward_embedding(const ModelParams& params, const FeatureStack& feats, const Point& point,
                        std::span<const double> unit_grad, ModelParams& grad);

// Text checkpoint with per-array shape headers; values are hex floats, so
// the round trip is bit-exact.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace prefseg::model
