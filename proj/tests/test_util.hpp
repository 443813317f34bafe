#pragma once

#include "dcl/autograd.hpp"
#include "dcl/rng.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace dcl::test {

using ag::Mat;

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("dcl_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

// Largest |analytic - numeric| / max(|analytic|, |numeric|, 1e-3) over every
// input scalar of the scalar-valued graph built by `f`.
inline double max_grad_error(std::vector<Mat> inputs,
                             const std::function<ag::Var(ag::Tape&, const std::vector<ag::Var>&)>& f,
                             double h = 1e-6) {
    std::vector<ag::Parameter> params(inputs.size());
    for (size_t i = 0; i < inputs.size(); ++i) {
        params[i].name = "in" + std::to_string(i);
        params[i].value = inputs[i];
        params[i].zero_grad();
    }
    auto eval = [&]() {
        ag::Tape tape;
        std::vector<ag::Var> vars;
        for (auto& p : params) vars.push_back(tape.param(p));
        return f(tape, vars).scalar();
    };
    {
        ag::Tape tape;
        std::vector<ag::Var> vars;
        for (auto& p : params) vars.push_back(tape.param(p));
        tape.backward(f(tape, vars));
    }
    double worst = 0.0;
    for (auto& p : params) {
        for (Eigen::Index i = 0; i < p.value.size(); ++i) {
            double& v = p.value.data()[i];
            const double saved = v;
            v = saved + h;
            const double up = eval();
            v = saved - h;
            const double down = eval();
            v = saved;
            const double num = (up - down) / (2 * h);
            const double a = p.grad.data()[i];
            worst = std::max(worst, std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-3}));
        }
    }
    return worst;
}

} // namespace dcl::test
