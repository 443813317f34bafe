#pragma once

#include "dcl/config.hpp"

#include <optional>
#include <string>

namespace dcl::gradcheck {

struct Options {
    double step = 3e-5;        // central-difference step
    double tolerance = 1e-4;   // pass iff every relative error is below this
    double floor = 1e-6;       // denominator floor for near-zero gradients
    uint64_t data_seed = 11;
    // Negative control: multiply the analytic gradient of this parameter by
    // (1 + fault_scale) before comparing.
    std::optional<std::string> fault_parameter;
    double fault_scale = 1e-2;
};

struct Report {
    double max_relative_error = 0.0;
    std::string worst_parameter;
    long worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    size_t checked = 0;
    double seconds = 0.0;
    bool passed = false;
};

// relative error |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor);

// Compares analytic gradients of the full training objective against central
// differences for every scalar of every parameter, on one batch of data
// generated from `config` (normally Config::tiny()).
Report run(const Config& config, const Options& options = {});

} // namespace dcl::gradcheck
