#pragma once

#include "prefseg/adapt.hpp"
#include "prefseg/dpo.hpp"
#include "prefseg/prefs.hpp"
#include "prefseg/synth.hpp"
#include "prefseg/upo.hpp"

#include <filesystem>
#include <stdexcept>
#include <vector>

#include <json.hpp>

namespace prefseg::config {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Every tunable of the pipeline. JSON sections mirror the members; keys
// match the field names one to one.
struct PipelineConfig {
    synth::GeneratorConfig synth;
    adapt::Stage1Config stage1;
    // Source-only warm start run by `train` when no initial checkpoint is given.
    int source_iterations = 1000;
    double source_lambda_det = 1.0;
    double sparse_fraction = 0.15;
    dpo::DpoConfig dpo;
    upo::DrlseParams drlse;
    std::vector<double> thresholds = prefs::kDefaultThresholds;
    int grid_size = 3;
    double patch_fraction = 0.15;
    prefs::SelectionMode selection = prefs::SelectionMode::disagreement;
};

// Overwrites the fields present in j; unknown keys throw ConfigError.
void apply_json(PipelineConfig& cfg, const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const PipelineConfig& cfg);

}  // namespace prefseg::config
