#pragma once
/*
 * Late fusion, the total objective, and the training / evaluation loops.
 *
 *   y      = CLS(MLP_b([MLP_a([F_1 | F_2]) | x_t]))
 *   y_TIE  = y(X, A_X) - E_{X*} y(X, A_X*)
 *   L      = L_DSE + CE(y_TIE, label)     (CE(y, label) with tie_loss_target = factual)
 *
 * F_1 and F_2 are the transferred features of the two clips of a pair. A
 * batch of B pairs is processed as N = 2B clips (all first clips, then all
 * second clips), so affinities span both clips of every pair.
 */

#include "dcl/clm.hpp"
#include "dcl/config.hpp"
#include "dcl/dse.hpp"
#include "dcl/encoders.hpp"
#include "dcl/synthdata.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dcl::fusion {

using ag::Mat;
using ag::Tape;
using ag::Var;

// Shapes that are fixed by the data rather than by Config.
struct DataShape {
    int question_count = 0;
    int feature_dim = 0;  // d_raw for raw clips, d for precomputed features
    bool precomputed = false;

    static DataShape of(const synth::DatasetSplit& ds, const Config& c);
};

class Model {
public:
    Model(const Config& config, const DataShape& shape);
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    Config config;
    DataShape shape;
    nn::ParameterStore store;
    enc::Encoders encoders;
    std::optional<dse::Dse> dse;
    std::optional<clm::InterventionParams> intervention;
    nn::Mlp pair_mlp;      // MLP_a
    nn::Mlp question_mlp;  // MLP_b
    nn::Linear classifier;

    // Width of one clip's feature row entering the fusion head.
    ag::Index clip_width() const;

    // MLP_b([MLP_a([f1 | f2]) | q]), B x fusion_width.
    Var fuse(Tape& tape, const Var& f1, const Var& f2, const Var& q) const;
    // B x 2 logits.
    Var classify(Tape& tape, const Var& fused) const;
    // classify(fuse(F rows 0..B-1, F rows B..2B-1, q))
    Var head(Tape& tape, const Var& f, const Var& q) const;
};

struct Prediction {
    Eigen::Vector2d logits;
    Eigen::Vector2d probabilities;

    int choice() const { return logits(1) > logits(0) ? 1 : 0; }
};

Prediction predict(const Eigen::Vector2d& logits);

// A batch of B question pairs as dense per-step matrices.
struct Batch {
    std::vector<Mat> frames;  // T entries, 2B x feature_dim
    Mat audio;                // 2B x feature_dim
    Mat text;                 // B x d, precomputed features only
    std::vector<int> question_ids;
    std::vector<int> labels;
    std::vector<synth::QuestionTarget> targets;
    std::vector<int> materials;  // 2B, -1 when unknown
    std::vector<int> motions;    // 2B, -1 when unknown

    int pairs() const { return static_cast<int>(labels.size()); }
};

Batch make_batch(const synth::DatasetSplit& ds, const std::vector<synth::QASample>& samples,
                 const std::vector<size_t>& indices);

struct ForwardNoise {
    dse::DseNoise dse;
    std::vector<Mat> counterfactual;  // one N x D draw per counterfactual sample

    static ForwardNoise draw(const Model& m, ag::Index clips, int cf_samples, Rng& rng, bool latent_noise);
};

struct ForwardOptions {
    bool training = true;  // false: posterior means only, no DSE loss
    // Counterfactual pass uses mu = X itself (with the given noise), so a zero
    // noise draw reproduces A_X exactly.
    bool identity_intervention = false;
};

struct ForwardResult {
    Var loss;                  // total objective (training only)
    Var ce;                    // classification cross-entropy
    Var logits;                // B x 2 factual
    std::optional<Var> tie;    // B x 2 when counterfactual passes ran
    Var decision;              // logits used for the predicted answer
    Var features;              // N x D block features before transfer (X)
    Var transferred;           // N x D after transfer (F)
    Var stat;                  // N x d_s static factor (DSE modes)
    Var dynamic;               // N x d_z pooled dynamic factor (DSE modes)
    std::optional<clm::Affinities> affinities;
    dse::LossBreakdown dse;
    double ce_value = 0.0;
};

ForwardResult forward(Tape& tape, const Model& model, const Batch& batch, const ForwardNoise& noise,
                      const ForwardOptions& options = {});

struct EpochRecord {
    int epoch = 0;
    dse::LossBreakdown dse;  // batch means over the epoch
    double ce = 0.0;
    double loss = 0.0;
    double val_accuracy = 0.0;
    double val_accuracy_material = 0.0;
};

nlohmann::json to_json(const EpochRecord& r);

struct Metrics {
    int count = 0;
    double accuracy_all = 0.0;
    double accuracy_material = 0.0;
    double accuracy_motion = 0.0;
    double accuracy_mixed = 0.0;
    // Material probes on factors drawn from the posterior.
    std::optional<double> probe_static;
    std::optional<double> probe_dynamic;
    // Same probes on posterior means. Means expose directions whose spread is
    // far below the posterior noise, so these overstate what a factor carries.
    std::optional<double> probe_static_posterior_mean;
    std::optional<double> probe_dynamic_posterior_mean;
};

nlohmann::json to_json(const Metrics& m);

struct FitOptions {
    std::string metrics_path;  // JSON lines, one record per epoch; empty to skip
    std::function<void(const EpochRecord&)> on_epoch;
};

struct FitResult {
    std::unique_ptr<Model> model;  // parameters of the best validation epoch
    std::vector<EpochRecord> history;
    int best_epoch = 0;
};

FitResult fit(const synth::DatasetSplit& ds, const Config& config, const FitOptions& options = {});

// Initializes the intervention Gaussian from the block features of `batch`.
void init_intervention(Model& model, const Batch& batch);

enum class Split { Train, Val, Test };
const std::vector<synth::QASample>& samples_of(const synth::DatasetSplit& ds, Split s);

// QA accuracies on a split; probes are fitted on train clips and scored on
// test clips when `with_probes` is set and the mode has latent factors.
Metrics evaluate(const Model& model, const synth::DatasetSplit& ds, Split split, bool with_probes = true);

// Latents (static, pooled dynamic) of every clip of a split, two rows per
// sample in (clip1, clip2) order. Posterior means, or one posterior draw per
// clip when `noise_seed` is given.
struct ClipLatents {
    Mat stat;
    Mat dynamic;
    std::vector<int> materials;
    std::vector<int> motions;
};

ClipLatents extract_latents(const Model& model, const synth::DatasetSplit& ds, Split split,
                            std::optional<uint64_t> noise_seed = std::nullopt);

} // namespace dcl::fusion
