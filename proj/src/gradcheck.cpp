#include "dcl/gradcheck.hpp"

#include "dcl/errors.hpp"
#include "dcl/fusion.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

namespace dcl::gradcheck {

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

Report run(const Config& config, const Options& options) {
    const auto start = std::chrono::steady_clock::now();
    config.validate();
    synth::DatasetSplit ds = synth::generate_dataset(config, options.data_seed);
    fusion::Model model(config, fusion::DataShape::of(ds, config));

    const size_t pairs = std::min(ds.train.size(), static_cast<size_t>(config.batch));
    std::vector<size_t> idx(pairs);
    std::iota(idx.begin(), idx.end(), size_t{0});
    const fusion::Batch batch = fusion::make_batch(ds, ds.train, idx);
    fusion::init_intervention(model, batch);

    Rng rng(derive_seed(config.seed, 0x6c));
    const fusion::ForwardNoise noise =
        fusion::ForwardNoise::draw(model, 2 * batch.pairs(), config.cf_samples_train, rng, true);

    auto loss_at = [&]() {
        ag::Tape tape;
        return fusion::forward(tape, model, batch, noise).loss.scalar();
    };

    model.store.zero_grad();
    {
        ag::Tape tape;
        fusion::ForwardResult r = fusion::forward(tape, model, batch, noise);
        tape.backward(r.loss);
    }

    Report report;
    for (ag::Parameter* p : model.store.all()) {
        ag::Mat analytic = p->grad;
        if (options.fault_parameter && *options.fault_parameter == p->name) analytic *= 1.0 + options.fault_scale;
        for (ag::Index i = 0; i < p->value.size(); ++i) {
            double& v = p->value.data()[i];
            const double saved = v;
            v = saved + options.step;
            const double up = loss_at();
            v = saved - options.step;
            const double down = loss_at();
            v = saved;
            const double numeric = (up - down) / (2.0 * options.step);
            const double a = analytic.data()[i];
            if (!std::isfinite(numeric) || !std::isfinite(a)) {
                throw NumericError("gradcheck: non-finite gradient for " + p->name);
            }
            const double rel = relative_error(a, numeric, options.floor);
            ++report.checked;
            if (rel > report.max_relative_error || report.worst_index < 0) {
                report.max_relative_error = rel;
                report.worst_parameter = p->name;
                report.worst_index = static_cast<long>(i);
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    report.passed = report.max_relative_error < options.tolerance;
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

} // namespace dcl::gradcheck
