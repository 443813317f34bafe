#pragma once

#include "dcl/fusion.hpp"

#include <functional>
#include <string>
#include <vector>

namespace dcl::ablation {

struct Run {
    Mode mode = Mode::Baseline;
    uint64_t seed = 0;
    fusion::Metrics test;
    std::vector<fusion::EpochRecord> history;
    int best_epoch = 0;
};

struct Summary {
    Mode mode = Mode::Baseline;
    int runs = 0;
    double overall_mean = 0.0;
    double overall_std = 0.0;  // sample standard deviation; 0 for a single run
    double material_mean = 0.0;
    double material_std = 0.0;
    std::optional<double> probe_static_mean;
    std::optional<double> probe_dynamic_mean;
};

inline const std::vector<Mode> kAllModes = {Mode::Baseline, Mode::Dse, Mode::DseA, Mode::DseAC};

// Trains and tests every (mode, seed) combination on `ds`, with all other
// settings from `base`.
std::vector<Run> run(const synth::DatasetSplit& ds, const Config& base, const std::vector<Mode>& modes,
                     const std::vector<uint64_t>& seeds, const std::function<void(const Run&, const fusion::Model&)>& on_run = {});

std::vector<Summary> summarize(const std::vector<Run>& runs);

// Markdown table: one row per mode, columns overall and material accuracy
// (percent, mean +- std when there is more than one seed).
std::string format_table(const std::vector<Summary>& rows);

nlohmann::json to_json(const std::vector<Run>& runs, const std::vector<Summary>& summary);

} // namespace dcl::ablation
