#pragma once

#include <json.hpp>

#include <cstdint>
#include <string>

namespace dcl {

// Which parts of the pipeline are active.
//   baseline  late fusion on pooled encoder features only
//   dse       + disentangled sequential encoder (static / dynamic factors)
//   dse_a     + cross-sample affinity transfer
//   dse_a_c   + counterfactual intervention trained on the indirect effect
enum class Mode { Baseline, Dse, DseA, DseAC };

std::string to_string(Mode m);
Mode parse_mode(const std::string& s);
bool uses_dse(Mode m);
bool uses_affinity(Mode m);
bool uses_counterfactual(Mode m);

enum class TieLossTarget { Tie, Factual };

struct Config {
    // sequence / feature shapes
    int T = 8;
    int d = 256;
    int d_raw = 32;
    int d_s = 64;
    int d_z = 64;
    int hidden = 256;
    int fusion_width = 128;

    // training
    int batch = 64;
    double lr = 1e-3;
    int epochs = 20;
    int patience = 0;  // 0 disables early stopping; best-val selection always applies
    uint64_t seed = 7;
    Mode mode = Mode::DseAC;
    bool train_video_encoder = false;

    // contrastive MI
    double tau_nce = 0.5;
    int n_max = 0;  // 0: every other sample in the batch is a negative
    double blur_width = 1.0;

    // DSE loss weights
    double gamma = 1.0;
    double alpha = 0.1;
    double beta = 0.1;
    double theta = 0.1;

    // counterfactual learning module
    double tau_aff = 2.0;
    int k = 5;
    int cf_samples_train = 1;
    int cf_samples_eval = 8;
    TieLossTarget tie_loss_target = TieLossTarget::Tie;

    // synthetic data
    int materials = 6;
    int motions = 5;
    int question_templates = 8;
    int train_pairs = 512;
    int val_pairs = 64;
    int test_pairs = 64;
    int train_objects = 60;
    int val_objects = 15;
    int test_objects = 15;
    double jitter = 0.1;
    double frame_noise = 0.5;
    double audio_noise = 0.5;
    double motion_amplitude = 1.0;

    // linear probe
    int probe_iters = 300;
    double probe_l2 = 1e-3;

    // Throws ConfigError naming the first invalid field.
    void validate() const;

    // Every weight in the (gamma, alpha, beta, theta) set must be >= 0.
    void validate_weights() const;

    // Small shapes for finite-difference gradient checks.
    static Config tiny();
};

nlohmann::json to_json(const Config& c);
// Missing keys keep their defaults; unknown keys are rejected.
Config config_from_json(const nlohmann::json& j);
Config load_config(const std::string& path);
void save_config(const Config& c, const std::string& path);

} // namespace dcl
