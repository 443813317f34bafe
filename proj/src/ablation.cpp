#include "dcl/ablation.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace dcl::ablation {

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    if (v.size() < 2) return {m, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

std::string cell(double mean, double sd, bool with_std) {
    char buf[64];
    if (with_std) {
        std::snprintf(buf, sizeof buf, "%.1f ± %.1f", 100.0 * mean, 100.0 * sd);
    } else {
        std::snprintf(buf, sizeof buf, "%.1f", 100.0 * mean);
    }
    return buf;
}

} // namespace

std::vector<Run> run(const synth::DatasetSplit& ds, const Config& base, const std::vector<Mode>& modes,
                     const std::vector<uint64_t>& seeds, const std::function<void(const Run&, const fusion::Model&)>& on_run) {
    std::vector<Run> runs;
    for (Mode mode : modes) {
        for (uint64_t seed : seeds) {
            Config c = base;
            c.mode = mode;
            c.seed = seed;
            fusion::FitResult fit = fusion::fit(ds, c);
            Run r;
            r.mode = mode;
            r.seed = seed;
            r.test = fusion::evaluate(*fit.model, ds, fusion::Split::Test);
            r.history = std::move(fit.history);
            r.best_epoch = fit.best_epoch;
            if (on_run) on_run(r, *fit.model);
            runs.push_back(std::move(r));
        }
    }
    return runs;
}

std::vector<Summary> summarize(const std::vector<Run>& runs) {
    std::vector<Summary> out;
    for (Mode mode : kAllModes) {
        std::vector<double> overall;
        std::vector<double> material;
        std::vector<double> ps;
        std::vector<double> pd;
        for (const Run& r : runs) {
            if (r.mode != mode) continue;
            overall.push_back(r.test.accuracy_all);
            material.push_back(r.test.accuracy_material);
            if (r.test.probe_static) ps.push_back(*r.test.probe_static);
            if (r.test.probe_dynamic) pd.push_back(*r.test.probe_dynamic);
        }
        if (overall.empty()) continue;
        Summary s;
        s.mode = mode;
        s.runs = static_cast<int>(overall.size());
        std::tie(s.overall_mean, s.overall_std) = mean_std(overall);
        std::tie(s.material_mean, s.material_std) = mean_std(material);
        if (!ps.empty()) s.probe_static_mean = mean_std(ps).first;
        if (!pd.empty()) s.probe_dynamic_mean = mean_std(pd).first;
        out.push_back(s);
    }
    return out;
}

std::string format_table(const std::vector<Summary>& rows) {
    std::ostringstream out;
    out << "| mode | overall | material |\n|---|---|---|\n";
    for (const Summary& s : rows) {
        const bool sd = s.runs > 1;
        out << "| " << to_string(s.mode) << " | " << cell(s.overall_mean, s.overall_std, sd) << " | "
            << cell(s.material_mean, s.material_std, sd) << " |\n";
    }
    return out.str();
}

nlohmann::json to_json(const std::vector<Run>& runs, const std::vector<Summary>& summary) {
    nlohmann::json j;
    j["runs"] = nlohmann::json::array();
    for (const Run& r : runs) {
        j["runs"].push_back({{"mode", to_string(r.mode)},
                             {"seed", r.seed},
                             {"best_epoch", r.best_epoch},
                             {"test", fusion::to_json(r.test)}});
    }
    j["summary"] = nlohmann::json::array();
    for (const Summary& s : summary) {
        nlohmann::json row = {{"mode", to_string(s.mode)},
                              {"runs", s.runs},
                              {"overall_mean", s.overall_mean},
                              {"overall_std", s.overall_std},
                              {"material_mean", s.material_mean},
                              {"material_std", s.material_std}};
        row["probe_static_mean"] = s.probe_static_mean ? nlohmann::json(*s.probe_static_mean) : nlohmann::json();
        row["probe_dynamic_mean"] = s.probe_dynamic_mean ? nlohmann::json(*s.probe_dynamic_mean) : nlohmann::json();
        j["summary"].push_back(row);
    }
    return j;
}

} // namespace dcl::ablation
