#include "dcl/fusion.hpp"

#include "dcl/analysis.hpp"
#include "dcl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

namespace dcl::fusion {

namespace {

// Stream ids for derive_seed; keeps every random draw of a run separable.
constexpr uint64_t kInitStream = 1;
constexpr uint64_t kShuffleStream = 2;
constexpr uint64_t kNoiseStream = 3;
constexpr uint64_t kEvalStream = 4;
constexpr uint64_t kProbeStream = 5;

Var cross_entropy(Tape& tape, const Var& logits, const std::vector<int>& labels) {
    Mat onehot = Mat::Zero(logits.rows(), logits.cols());
    for (size_t i = 0; i < labels.size(); ++i) onehot(static_cast<ag::Index>(i), labels[i]) = 1.0;
    Var picked = ag::sum(ag::log_softmax_rows(logits) * tape.constant(std::move(onehot)));
    return ag::scale(picked, -1.0 / static_cast<double>(labels.size()));
}

std::vector<std::vector<size_t>> chunk(const std::vector<size_t>& order, int batch) {
    std::vector<std::vector<size_t>> out;
    for (size_t i = 0; i < order.size(); i += static_cast<size_t>(batch)) {
        const size_t end = std::min(order.size(), i + static_cast<size_t>(batch));
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

std::vector<size_t> iota_indices(size_t n) {
    std::vector<size_t> v(n);
    std::iota(v.begin(), v.end(), size_t{0});
    return v;
}

struct Snapshot {
    std::vector<Mat> values;

    static Snapshot of(const nn::ParameterStore& store) {
        Snapshot s;
        for (const auto* p : store.all()) s.values.push_back(p->value);
        return s;
    }
    void restore(nn::ParameterStore& store) const {
        auto params = store.all();
        for (size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
    }
};

void accumulate(dse::LossBreakdown& acc, const dse::LossBreakdown& b, double w) {
    acc.recon += w * b.recon;
    acc.kl_s += w * b.kl_s;
    acc.kl_z += w * b.kl_z;
    acc.mi_z_x += w * b.mi_z_x;
    acc.mi_s_x += w * b.mi_s_x;
    acc.mi_z_s += w * b.mi_z_s;
    acc.total += w * b.total;
}

} // namespace

DataShape DataShape::of(const synth::DatasetSplit& ds, const Config& c) {
    DataShape s;
    s.precomputed = ds.precomputed;
    s.feature_dim = ds.feature_dim;
    if (ds.precomputed) {
        int max_q = 0;
        for (const auto* split : {&ds.train, &ds.val, &ds.test})
            for (const auto& q : *split) max_q = std::max(max_q, q.question_id);
        s.question_count = max_q + 1;
    } else {
        s.question_count = static_cast<int>(ds.world.templates.size());
    }
    if (ds.T != c.T) {
        throw ConfigError("dataset has T = " + std::to_string(ds.T) + " but config T = " + std::to_string(c.T));
    }
    const int expected = ds.precomputed ? c.d : c.d_raw;
    if (ds.feature_dim != expected) {
        throw ConfigError("dataset feature width " + std::to_string(ds.feature_dim) + " does not match config (" +
                          std::to_string(expected) + ")");
    }
    return s;
}

Model::Model(const Config& cfg, const DataShape& shp) : config(cfg), shape(shp) {
    config.validate();
    Rng rng(derive_seed(config.seed, kInitStream));
    Config enc_config = config;
    enc_config.d_raw = shape.feature_dim;
    encoders = enc::Encoders(store, enc_config, std::max(1, shape.question_count), rng);
    if (uses_dse(config.mode)) dse.emplace(store, config, rng);
    if (uses_counterfactual(config.mode)) intervention.emplace(store, clip_width());
    const ag::Index w = config.fusion_width;
    pair_mlp = nn::Mlp(store, "fusion.pair", 2 * clip_width(), w, w, rng);
    question_mlp = nn::Mlp(store, "fusion.question", w + config.d, w, w, rng);
    classifier = nn::Linear(store, "fusion.classifier", w, 2, rng);
}

ag::Index Model::clip_width() const {
    return uses_dse(config.mode) ? config.d + config.d_s + config.d_z : 2 * config.d;
}

Var Model::fuse(Tape& tape, const Var& f1, const Var& f2, const Var& q) const {
    const Var pair[] = {f1, f2};
    Var h = pair_mlp(tape, ag::concat_cols(pair));
    const Var with_q[] = {h, q};
    return question_mlp(tape, ag::concat_cols(with_q));
}

Var Model::classify(Tape& tape, const Var& fused) const { return classifier(tape, fused); }

Var Model::head(Tape& tape, const Var& f, const Var& q) const {
    const ag::Index b = q.rows();
    if (f.rows() != 2 * b) {
        throw ShapeError("fusion head: expected " + std::to_string(2 * b) + " clip rows, got " +
                         std::to_string(f.rows()));
    }
    return classify(tape, fuse(tape, ag::slice_rows(f, 0, b), ag::slice_rows(f, b, b), q));
}

Prediction predict(const Eigen::Vector2d& logits) {
    Prediction p;
    p.logits = logits;
    const double m = logits.maxCoeff();
    Eigen::Vector2d e = (logits.array() - m).exp();
    p.probabilities = e / e.sum();
    return p;
}

Batch make_batch(const synth::DatasetSplit& ds, const std::vector<synth::QASample>& samples,
                 const std::vector<size_t>& indices) {
    const auto B = static_cast<ag::Index>(indices.size());
    const ag::Index D = ds.feature_dim;
    Batch b;
    b.frames.assign(static_cast<size_t>(ds.T), Mat(2 * B, D));
    b.audio.resize(2 * B, D);
    if (ds.precomputed) b.text.resize(B, D);
    b.materials.assign(static_cast<size_t>(2 * B), -1);
    b.motions.assign(static_cast<size_t>(2 * B), -1);
    std::map<int, const synth::ObjectSpec*> objects;
    for (const auto& o : ds.objects) objects[o.object_id] = &o;
    for (ag::Index i = 0; i < B; ++i) {
        const synth::QASample& s = samples.at(indices[static_cast<size_t>(i)]);
        const synth::RawClip* clips[] = {&s.clip1, &s.clip2};
        for (int c = 0; c < 2; ++c) {
            const ag::Index row = c * B + i;
            for (int t = 0; t < ds.T; ++t) b.frames[static_cast<size_t>(t)].row(row) = clips[c]->frames.row(t).cast<double>();
            b.audio.row(row) = clips[c]->audio.cast<double>().transpose();
            auto it = objects.find(clips[c]->object_id);
            if (it != objects.end()) {
                b.materials[static_cast<size_t>(row)] = it->second->material;
                b.motions[static_cast<size_t>(row)] = it->second->motion_type;
            }
        }
        if (ds.precomputed) {
            if (!s.text) throw ShapeError("precomputed sample without text feature");
            b.text.row(i) = s.text->cast<double>().transpose();
        }
        b.question_ids.push_back(s.question_id);
        b.labels.push_back(s.label);
        b.targets.push_back(s.question_target);
    }
    return b;
}

ForwardNoise ForwardNoise::draw(const Model& m, ag::Index clips, int cf_samples, Rng& rng, bool latent_noise) {
    ForwardNoise n;
    if (m.dse) n.dse = latent_noise ? dse::DseNoise::draw(m.config, clips, rng) : dse::DseNoise::zeros(m.config, clips);
    if (m.intervention) {
        for (int i = 0; i < cf_samples; ++i) n.counterfactual.push_back(rng.normal_matrix(clips, m.clip_width()));
    }
    return n;
}

ForwardResult forward(Tape& tape, const Model& model, const Batch& batch, const ForwardNoise& noise,
                      const ForwardOptions& options) {
    const Config& c = model.config;
    const ag::Index B = batch.pairs();
    const ag::Index N = 2 * B;
    if (B < 1) {
        throw ShapeError("forward: empty batch");
    }

    std::vector<Var> frames;
    for (const Mat& f : batch.frames) frames.push_back(tape.constant(f));
    Var audio = tape.constant(batch.audio);
    Var question;
    if (model.shape.precomputed) {
        for (int t = 0; t < c.T; ++t) enc::require_finite(batch.frames[static_cast<size_t>(t)], "video features");
        enc::require_finite(batch.audio, "audio features");
        question = tape.constant(batch.text);
    } else {
        frames = model.encoders.encode_video(tape, frames);
        audio = model.encoders.encode_audio(tape, audio);
        question = model.encoders.encode_question(tape, batch.question_ids);
    }

    ForwardResult r;
    Var dse_loss;
    if (!model.dse) {
        const Var parts[] = {audio, ag::average(frames)};
        r.features = ag::concat_cols(parts);
        r.transferred = r.features;
    } else {
        Var s;
        Var z;
        if (options.training) {
            dse::DseOutput out = model.dse->loss(tape, frames, noise.dse, dse::LossWeights::from(c));
            s = out.posterior.s_sample;
            z = out.z_pooled;
            dse_loss = out.loss;
            r.dse = out.breakdown;
        } else {
            dse::Posterior q = model.dse->posterior(tape, frames, noise.dse.raw);
            s = q.s_sample;
            z = clm::pool_dynamic(q.z_samples);
        }
        r.stat = s;
        r.dynamic = z;
        clm::ModalBlocks blocks{audio, s, z};
        const Var parts[] = {audio, s, z};
        r.features = ag::concat_cols(parts);
        if (uses_affinity(c.mode)) {
            r.affinities = clm::build_affinities(blocks, c.tau_aff, c.k);
            r.transferred = clm::transfer(*r.affinities, blocks);
        } else {
            r.transferred = r.features;
        }
    }

    r.logits = model.head(tape, r.transferred, question);
    r.decision = r.logits;

    if (model.intervention && uses_counterfactual(c.mode)) {
        if (noise.counterfactual.empty()) {
            throw ShapeError("forward: counterfactual mode needs at least one noise draw");
        }
        clm::ModalBlocks blocks{audio, r.stat, r.dynamic};
        Var mu = options.identity_intervention ? r.features : tape.param(*model.intervention->mu);
        Var sigma_raw = tape.param(*model.intervention->sigma_raw);
        std::vector<Var> cf;
        for (const Mat& w : noise.counterfactual) {
            if (w.rows() != N || w.cols() != r.features.cols()) {
                throw ShapeError("forward: counterfactual noise shape mismatch");
            }
            Var x_star = clm::intervene(mu, sigma_raw, tape.constant(w));
            clm::ModalBlocks star = clm::split_blocks(x_star, c.d, c.d_s);
            clm::Affinities a_star = clm::build_affinities(star, c.tau_aff, c.k);
            cf.push_back(model.head(tape, clm::transfer(a_star, blocks), question));
        }
        r.tie = clm::tie(r.logits, cf);
        r.decision = *r.tie;
    }

    const bool on_tie = r.tie && c.tie_loss_target == TieLossTarget::Tie;
    r.ce = cross_entropy(tape, on_tie ? *r.tie : r.logits, batch.labels);
    r.ce_value = r.ce.scalar();
    r.loss = dse_loss.valid() ? dse_loss + r.ce : r.ce;
    return r;
}

nlohmann::json to_json(const EpochRecord& r) {
    return {{"epoch", r.epoch},
            {"recon", r.dse.recon},
            {"kl_s", r.dse.kl_s},
            {"kl_z", r.dse.kl_z},
            {"mi_z_x", r.dse.mi_z_x},
            {"mi_s_x", r.dse.mi_s_x},
            {"mi_z_s", r.dse.mi_z_s},
            {"dse_total", r.dse.total},
            {"ce", r.ce},
            {"loss", r.loss},
            {"val_accuracy", r.val_accuracy},
            {"val_accuracy_material", r.val_accuracy_material}};
}

nlohmann::json to_json(const Metrics& m) {
    nlohmann::json j = {{"count", m.count},
                        {"accuracy_all", m.accuracy_all},
                        {"accuracy_material", m.accuracy_material},
                        {"accuracy_motion", m.accuracy_motion},
                        {"accuracy_mixed", m.accuracy_mixed}};
    j["probe_static"] = m.probe_static ? nlohmann::json(*m.probe_static) : nlohmann::json(nullptr);
    j["probe_dynamic"] = m.probe_dynamic ? nlohmann::json(*m.probe_dynamic) : nlohmann::json(nullptr);
    j["probe_static_posterior_mean"] =
        m.probe_static_posterior_mean ? nlohmann::json(*m.probe_static_posterior_mean) : nlohmann::json(nullptr);
    j["probe_dynamic_posterior_mean"] =
        m.probe_dynamic_posterior_mean ? nlohmann::json(*m.probe_dynamic_posterior_mean) : nlohmann::json(nullptr);
    return j;
}

const std::vector<synth::QASample>& samples_of(const synth::DatasetSplit& ds, Split s) {
    switch (s) {
    case Split::Train: return ds.train;
    case Split::Val: return ds.val;
    case Split::Test: return ds.test;
    }
    throw ConfigError("unknown split");
}

void init_intervention(Model& model, const Batch& batch) {
    if (!model.intervention) return;
    Tape tape;
    ForwardOptions opt;
    opt.training = false;
    Rng rng(0);
    ForwardNoise noise = ForwardNoise::draw(model, 2 * batch.pairs(), 1, rng, false);
    ForwardResult r = forward(tape, model, batch, noise, opt);
    model.intervention->init_from_batch(r.features.value());
}

namespace {

// Training pass over one epoch's batches. With `update` unset nothing is
// changed, which gives the pre-training (epoch 0) record.
EpochRecord run_epoch(Model& model, nn::Adam& adam, const synth::DatasetSplit& ds, int epoch, bool update) {
    const Config& c = model.config;
    std::vector<size_t> order = iota_indices(ds.train.size());
    if (update) {
        Rng shuffle(derive_seed(c.seed, kShuffleStream * 1000003 + static_cast<uint64_t>(epoch)));
        for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    double total_pairs = 0.0;
    int b = 0;
    for (const auto& idx : chunk(order, c.batch)) {
        Batch batch = make_batch(ds, ds.train, idx);
        Rng rng(derive_seed(c.seed, kNoiseStream * 1000003 + static_cast<uint64_t>(epoch) * 4099 + static_cast<uint64_t>(b)));
        ForwardNoise noise = ForwardNoise::draw(model, 2 * batch.pairs(), c.cf_samples_train, rng, true);
        Tape tape;
        ForwardResult r = forward(tape, model, batch, noise);
        const double loss = r.loss.scalar();
        if (!std::isfinite(loss)) {
            throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(b) + " (recon " + std::to_string(r.dse.recon) + ", kl_s " +
                               std::to_string(r.dse.kl_s) + ", kl_z " + std::to_string(r.dse.kl_z) + ", ce " +
                               std::to_string(r.ce_value) + ")");
        }
        const double w = static_cast<double>(batch.pairs());
        accumulate(rec.dse, r.dse, w);
        rec.ce += w * r.ce_value;
        rec.loss += w * loss;
        total_pairs += w;
        if (update) {
            model.store.zero_grad();
            tape.backward(r.loss);
            adam.step(model.store);
        }
        ++b;
    }
    const double inv = 1.0 / total_pairs;
    dse::LossBreakdown mean;
    accumulate(mean, rec.dse, inv);
    rec.dse = mean;
    rec.ce *= inv;
    rec.loss *= inv;
    return rec;
}

} // namespace

FitResult fit(const synth::DatasetSplit& ds, const Config& config, const FitOptions& options) {
    if (ds.train.empty()) {
        throw ConfigError("fit: empty training split");
    }
    FitResult out;
    out.model = std::make_unique<Model>(config, DataShape::of(ds, config));
    Model& model = *out.model;
    nn::Adam adam(nn::AdamOptions{config.lr});

    std::ofstream log;
    if (!options.metrics_path.empty()) {
        log.open(options.metrics_path);
        if (!log) throw IoError("cannot write " + options.metrics_path);
    }

    {
        const size_t n0 = std::min(ds.train.size(), static_cast<size_t>(config.batch));
        init_intervention(model, make_batch(ds, ds.train, iota_indices(n0)));
    }

    auto record = [&](EpochRecord rec) {
        if (!ds.val.empty()) {
            Metrics m = evaluate(model, ds, Split::Val, false);
            rec.val_accuracy = m.accuracy_all;
            rec.val_accuracy_material = m.accuracy_material;
        }
        out.history.push_back(rec);
        if (log) log << to_json(rec).dump() << '\n' << std::flush;
        if (options.on_epoch) options.on_epoch(rec);
        return rec;
    };

    record(run_epoch(model, adam, ds, 0, false));

    Snapshot best = Snapshot::of(model.store);
    double best_val = -1.0;
    int since_best = 0;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        EpochRecord rec = record(run_epoch(model, adam, ds, epoch, true));
        if (rec.val_accuracy >= best_val) {
            best_val = rec.val_accuracy;
            out.best_epoch = epoch;
            best = Snapshot::of(model.store);
            since_best = 0;
        } else if (config.patience > 0 && ++since_best >= config.patience) {
            break;
        }
    }
    best.restore(model.store);
    return out;
}

Metrics evaluate(const Model& model, const synth::DatasetSplit& ds, Split split, bool with_probes) {
    const auto& samples = samples_of(ds, split);
    if (samples.empty()) {
        throw ConfigError("evaluate: empty split");
    }
    const Config& c = model.config;
    std::map<synth::QuestionTarget, std::pair<int, int>> per_target;
    int correct = 0;
    int b = 0;
    for (const auto& idx : chunk(iota_indices(samples.size()), c.batch)) {
        Batch batch = make_batch(ds, samples, idx);
        Rng rng(derive_seed(c.seed, kEvalStream * 1000003 + static_cast<uint64_t>(b++)));
        ForwardNoise noise = ForwardNoise::draw(model, 2 * batch.pairs(), c.cf_samples_eval, rng, false);
        Tape tape;
        ForwardOptions opt;
        opt.training = false;
        ForwardResult r = forward(tape, model, batch, noise, opt);
        const Mat& d = r.decision.value();
        for (int i = 0; i < batch.pairs(); ++i) {
            const int choice = d(i, 1) > d(i, 0) ? 1 : 0;
            const bool ok = choice == batch.labels[static_cast<size_t>(i)];
            correct += ok;
            auto& [hit, total] = per_target[batch.targets[static_cast<size_t>(i)]];
            hit += ok;
            ++total;
        }
    }
    Metrics m;
    m.count = static_cast<int>(samples.size());
    m.accuracy_all = static_cast<double>(correct) / m.count;
    auto acc = [&](synth::QuestionTarget t) {
        auto it = per_target.find(t);
        return it == per_target.end() ? 0.0 : static_cast<double>(it->second.first) / it->second.second;
    };
    m.accuracy_material = acc(synth::QuestionTarget::Material);
    m.accuracy_motion = acc(synth::QuestionTarget::Motion);
    m.accuracy_mixed = acc(synth::QuestionTarget::Mixed);

    if (with_probes && model.dse && !ds.train.empty() && !ds.test.empty()) {
        const int classes = c.materials;
        const analysis::ProbeOptions po{c.probe_iters, c.probe_l2};
        auto probe = [&](std::optional<uint64_t> seed, std::optional<double>& stat, std::optional<double>& dyn) {
            ClipLatents tr = extract_latents(model, ds, Split::Train, seed);
            ClipLatents te = extract_latents(model, ds, Split::Test, seed ? std::optional(*seed + 1) : seed);
            auto unlabelled = [](const std::vector<int>& v) {
                return std::any_of(v.begin(), v.end(), [](int x) { return x < 0; });
            };
            if (unlabelled(tr.materials) || unlabelled(te.materials)) return;
            stat = analysis::linear_probe(tr.stat, tr.materials, te.stat, te.materials, classes, po);
            dyn = analysis::linear_probe(tr.dynamic, tr.materials, te.dynamic, te.materials, classes, po);
        };
        probe(derive_seed(c.seed, kProbeStream * 1000003), m.probe_static, m.probe_dynamic);
        probe(std::nullopt, m.probe_static_posterior_mean, m.probe_dynamic_posterior_mean);
    }
    return m;
}

ClipLatents extract_latents(const Model& model, const synth::DatasetSplit& ds, Split split,
                            std::optional<uint64_t> noise_seed) {
    if (!model.dse) {
        throw ConfigError("extract_latents: mode " + to_string(model.config.mode) + " has no latent factors");
    }
    const auto& samples = samples_of(ds, split);
    const Config& c = model.config;
    const auto n = static_cast<ag::Index>(samples.size());
    ClipLatents out;
    out.stat.resize(2 * n, c.d_s);
    out.dynamic.resize(2 * n, c.d_z);
    out.materials.assign(static_cast<size_t>(2 * n), -1);
    out.motions.assign(static_cast<size_t>(2 * n), -1);
    uint64_t b = 0;
    for (const auto& idx : chunk(iota_indices(samples.size()), c.batch)) {
        Batch batch = make_batch(ds, samples, idx);
        const ag::Index B = batch.pairs();
        Tape tape;
        dse::PosteriorNoise noise = dse::PosteriorNoise::zeros(c.T, 2 * B, c.d_s, c.d_z);
        if (noise_seed) {
            Rng rng(derive_seed(*noise_seed, b++));
            noise = dse::PosteriorNoise::draw(rng, c.T, 2 * B, c.d_s, c.d_z);
        }
        std::vector<Var> frames;
        for (const Mat& f : batch.frames) frames.push_back(tape.constant(f));
        if (!model.shape.precomputed) frames = model.encoders.encode_video(tape, frames);
        dse::Posterior q = model.dse->posterior(tape, frames, noise);
        const Mat& s = q.s_sample.value();
        const Mat z = clm::pool_dynamic(q.z_samples).value();
        for (ag::Index i = 0; i < B; ++i) {
            const auto sample = static_cast<ag::Index>(idx[static_cast<size_t>(i)]);
            for (int clip = 0; clip < 2; ++clip) {
                const ag::Index src = clip * B + i;
                const ag::Index dst = 2 * sample + clip;
                out.stat.row(dst) = s.row(src);
                out.dynamic.row(dst) = z.row(src);
                out.materials[static_cast<size_t>(dst)] = batch.materials[static_cast<size_t>(src)];
                out.motions[static_cast<size_t>(dst)] = batch.motions[static_cast<size_t>(src)];
            }
        }
    }
    return out;
}

} // namespace dcl::fusion
