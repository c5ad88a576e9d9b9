#include "prefseg/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <string>

namespace prefseg::config {

using nlohmann::json;

namespace {

using Setter = std::function<void(const json&)>;

template <typename T>
Setter bind(T& field) {
    return [&field](const json& v) { field = v.get<T>(); };
}

void apply_section(const json& j, const std::string& section, const std::map<std::string, Setter>& setters) {
    if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        auto it = setters.find(key);
        if (it == setters.end()) throw ConfigError("unknown config key '" + section + "." + key + "'");
        try {
            it->second(value);
        } catch (const json::exception& e) {
            throw ConfigError("config key '" + section + "." + key + "': " + e.what());
        } catch (const std::invalid_argument& e) {
            throw ConfigError("config key '" + section + "." + key + "': " + e.what());
        }
    }
}

}  // namespace

void apply_json(PipelineConfig& cfg, const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    auto& sy = cfg.synth;
    auto& s1 = cfg.stage1;
    auto& d = cfg.dpo;
    auto& dr = cfg.drlse;
    const std::map<std::string, Setter> sections{
        {"synth",
         [&](const json& v) {
             apply_section(v, "synth",
                           {{"domain", [&](const json& x) { sy.domain = synth::parse_domain(x.get<std::string>()); }},
                            {"count", bind(sy.count)},
                            {"height", bind(sy.height)},
                            {"width", bind(sy.width)},
                            {"min_blobs", bind(sy.min_blobs)},
                            {"max_blobs", bind(sy.max_blobs)},
                            {"bias_dilation_px", bind(sy.bias_dilation_px)},
                            {"id_prefix", bind(sy.id_prefix)},
                            {"shift", [&](const json& x) {
                                 apply_section(x, "synth.shift",
                                               {{"contrast_scale", bind(sy.shift.contrast_scale)},
                                                {"contrast_offset", bind(sy.shift.contrast_offset)},
                                                {"noise_std", bind(sy.shift.noise_std)},
                                                {"texture_freq_scale", bind(sy.shift.texture_freq_scale)}});
                             }}});
         }},
        {"stage1",
         [&](const json& v) {
             apply_section(v, "stage1",
                           {{"lambda_det", bind(s1.lambda_det)},
                            {"lambda_pcl", bind(s1.lambda_pcl)},
                            {"delta_f", bind(s1.delta_f)},
                            {"delta_b", bind(s1.delta_b)},
                            {"tau", bind(s1.tau)},
                            {"num_negatives", bind(s1.num_negatives)},
                            {"ema_decay", bind(s1.ema_decay)},
                            {"learning_rate", bind(s1.learning_rate)},
                            {"lr_power", bind(s1.lr_power)},
                            {"iterations", bind(s1.iterations)},
                            {"crop_size", bind(s1.crop_size)},
                            {"nms_window", bind(s1.nms_window)},
                            {"nms_threshold", bind(s1.nms_threshold)},
                            {"max_points_per_crop", bind(s1.max_points_per_crop)},
                            {"uda_confidence", bind(s1.uda_confidence)},
                            {"density_sigma", bind(s1.density_sigma)},
                            {"source_iterations", bind(cfg.source_iterations)},
                            {"source_lambda_det", bind(cfg.source_lambda_det)},
                            {"sparse_fraction", bind(cfg.sparse_fraction)}});
         }},
        {"dpo",
         [&](const json& v) {
             apply_section(v, "dpo",
                           {{"beta", bind(d.beta)},
                            {"normalization",
                             [&](const json& x) { d.normalization = dpo::parse_normalization(x.get<std::string>()); }},
                            {"learning_rate", bind(d.learning_rate)},
                            {"lr_power", bind(d.lr_power)},
                            {"iterations", bind(d.iterations)},
                            {"seg_weight", bind(d.seg_weight)}});
         }},
        {"drlse",
         [&](const json& v) {
             apply_section(v, "drlse",
                           {{"sigma_g", bind(dr.sigma_g)},
                            {"timestep", bind(dr.timestep)},
                            {"mu", bind(dr.mu)},
                            {"lambda", bind(dr.lambda)},
                            {"alpha", bind(dr.alpha)},
                            {"iterations", bind(dr.iterations)},
                            {"c0", bind(dr.c0)},
                            {"epsilon", bind(dr.epsilon)},
                            {"intensity_scale", bind(dr.intensity_scale)},
                            {"margin", bind(dr.margin)}});
         }},
        {"prefs",
         [&](const json& v) {
             apply_section(v, "prefs",
                           {{"thresholds", bind(cfg.thresholds)},
                            {"grid_size", bind(cfg.grid_size)},
                            {"patch_fraction", bind(cfg.patch_fraction)},
                            {"selection",
                             [&](const json& x) { cfg.selection = prefs::parse_selection_mode(x.get<std::string>()); }}});
         }},
    };
    for (const auto& [key, value] : j.items()) {
        auto it = sections.find(key);
        if (it == sections.end()) throw ConfigError("unknown config section '" + key + "'");
        it->second(value);
    }
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file " + path.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path.string() + ": " + e.what());
    }
    PipelineConfig cfg;
    apply_json(cfg, j);
    return cfg;
}

json to_json(const PipelineConfig& cfg) {
    const auto& sy = cfg.synth;
    const auto& s1 = cfg.stage1;
    const auto& d = cfg.dpo;
    const auto& dr = cfg.drlse;
    json j;
    j["synth"] = {{"domain", synth::to_string(sy.domain)},
                  {"count", sy.count},
                  {"height", sy.height},
                  {"width", sy.width},
                  {"min_blobs", sy.min_blobs},
                  {"max_blobs", sy.max_blobs},
                  {"bias_dilation_px", sy.bias_dilation_px},
                  {"id_prefix", sy.id_prefix},
                  {"shift",
                   {{"contrast_scale", sy.shift.contrast_scale},
                    {"contrast_offset", sy.shift.contrast_offset},
                    {"noise_std", sy.shift.noise_std},
                    {"texture_freq_scale", sy.shift.texture_freq_scale}}}};
    j["stage1"] = {{"lambda_det", s1.lambda_det},
                   {"lambda_pcl", s1.lambda_pcl},
                   {"delta_f", s1.delta_f},
                   {"delta_b", s1.delta_b},
                   {"tau", s1.tau},
                   {"num_negatives", s1.num_negatives},
                   {"ema_decay", s1.ema_decay},
                   {"learning_rate", s1.learning_rate},
                   {"lr_power", s1.lr_power},
                   {"iterations", s1.iterations},
                   {"crop_size", s1.crop_size},
                   {"nms_window", s1.nms_window},
                   {"nms_threshold", s1.nms_threshold},
                   {"max_points_per_crop", s1.max_points_per_crop},
                   {"uda_confidence", s1.uda_confidence},
                   {"density_sigma", s1.density_sigma},
                   {"source_iterations", cfg.source_iterations},
                   {"source_lambda_det", cfg.source_lambda_det},
                   {"sparse_fraction", cfg.sparse_fraction}};
    j["dpo"] = {{"beta", d.beta},
                {"normalization", dpo::to_string(d.normalization)},
                {"learning_rate", d.learning_rate},
                {"lr_power", d.lr_power},
                {"iterations", d.iterations},
                {"seg_weight", d.seg_weight}};
    j["drlse"] = {{"sigma_g", dr.sigma_g},   {"timestep", dr.timestep},
                  {"mu", dr.mu},             {"lambda", dr.lambda},
                  {"alpha", dr.alpha},       {"iterations", dr.iterations},
                  {"c0", dr.c0},             {"epsilon", dr.epsilon},
                  {"intensity_scale", dr.intensity_scale}, {"margin", dr.margin}};
    j["prefs"] = {{"thresholds", cfg.thresholds},
                  {"grid_size", cfg.grid_size},
                  {"patch_fraction", cfg.patch_fraction},
                  {"selection", cfg.selection == prefs::SelectionMode::disagreement ? "disagreement" : "random"}};
    return j;
}

}  // namespace prefseg::config
