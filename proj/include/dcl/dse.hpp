#pragma once
/*
 * Disentangled sequential encoder.
 *
 * A sequence x_1..x_T is factored into one static latent s and per-step
 * dynamic latents z_1..z_T:
 *
 *   q(s, z | x) = q(s | x_1..T) * prod_t q(z_t | z_<t, x)
 *   p(x, s, z)  = p(s) * prod_t p(z_t | z_<t) p(x_t | s, z_t)
 *
 * with p(s) = N(0, I), z_0 = 0, and a learned recurrent prior for z. The
 * training objective adds contrastive mutual-information terms to the
 * negative ELBO:
 *
 *   L = recon + gamma (KL_s + KL_z) - alpha MI(z; x) - beta MI(s; x) + theta MI(z; s)
 */

#include "dcl/config.hpp"
#include "dcl/nn.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace dcl::dse {

using ag::Mat;
using ag::Tape;
using ag::Var;

// Batched diagonal Gaussian: one row per sample.
struct GaussianParams {
    Var mean;
    Var log_var;
};

struct Posterior {
    GaussianParams s;
    std::vector<GaussianParams> z;  // T entries
    Var s_sample;                   // N x d_s
    std::vector<Var> z_samples;     // T x (N x d_z)
};

// Standard-normal draws for one posterior pass.
struct PosteriorNoise {
    Mat s;               // N x d_s
    std::vector<Mat> z;  // T x (N x d_z)

    static PosteriorNoise zeros(int T, ag::Index n, int d_s, int d_z);
    static PosteriorNoise draw(Rng& rng, int T, ag::Index n, int d_s, int d_z);
};

struct LossBreakdown {
    double recon = 0.0;
    double kl_s = 0.0;
    double kl_z = 0.0;
    double mi_z_x = 0.0;
    double mi_s_x = 0.0;
    double mi_z_s = 0.0;
    double total = 0.0;
};

struct LossWeights {
    double gamma = 1.0;
    double alpha = 0.1;
    double beta = 0.1;
    double theta = 0.1;

    static LossWeights from(const Config& c) { return {c.gamma, c.alpha, c.beta, c.theta}; }
};

// Latents of the raw and the two augmented views, as fed to the MI estimators.
struct MiInputs {
    Var z_flat;          // N x (T d_z), raw view
    Var z_flat_motion;   // N x (T d_z), motion-augmented view
    Var s;               // N x d_s, raw view
    Var s_content;       // N x d_s, content-augmented view
    Var z_pooled;        // N x d_z, raw view
};

struct MiTerms {
    Var mi_z_x;
    Var mi_s_x;
    Var mi_z_s;
};

struct DseOutput {
    Posterior posterior;
    std::vector<GaussianParams> prior;
    std::vector<Var> reconstruction;
    Var z_pooled;
    Var loss;
    LossBreakdown breakdown;
};

// Per-sample permutations and noise for one training pass over N sequences.
struct DseNoise {
    PosteriorNoise raw;
    PosteriorNoise content;
    PosteriorNoise motion;
    std::vector<std::vector<int>> permutations;  // N permutations of 0..T-1

    static DseNoise zeros(const Config& c, ag::Index n);
    static DseNoise draw(const Config& c, ag::Index n, Rng& rng);
};

class Dse {
public:
    Dse() = default;
    Dse(nn::ParameterStore& store, const Config& config, Rng& rng);

    // x[t] is N x d. The static head reads the time-mean of the bidirectional
    // states; step t of the dynamic head reads state t and the sampled z_{t-1}.
    Posterior posterior(Tape& tape, const std::vector<Var>& x, const PosteriorNoise& noise) const;

    // Prior parameters for every step of a trajectory; entry t depends only
    // on z_0 = 0 and z_1..z_{t-1}.
    std::vector<GaussianParams> prior_dynamic(Tape& tape, const std::vector<Var>& z) const;
    // Prior for the step following `prefix` (which may be empty).
    GaussianParams prior_next(Tape& tape, const std::vector<Var>& prefix, ag::Index n) const;

    // x_hat_t = g(s, z_t) with one shared map g.
    std::vector<Var> decode(Tape& tape, const Var& s, const std::vector<Var>& z) const;

    // Full objective on a batch of encoded sequences.
    DseOutput loss(Tape& tape, const std::vector<Var>& x, const DseNoise& noise, const LossWeights& w) const;

    int T() const { return T_; }

private:
    int T_ = 0;
    int d_s_ = 0;
    int d_z_ = 0;
    double tau_nce_ = 0.5;
    int n_max_ = 0;
    double blur_width_ = 1.0;
    nn::BiLstm bilstm_;
    nn::Linear static_head_;
    nn::LstmCell z_cell_;
    nn::Linear z_head_;
    nn::LstmCell prior_cell_;
    nn::Linear prior_head_;
    nn::Mlp decoder_;
};

// mean + exp(log_var / 2) * noise
Var reparameterize(const GaussianParams& p, const Var& noise);
Eigen::VectorXd reparameterize(const Eigen::VectorXd& mean, const Eigen::VectorXd& log_var,
                               const Eigen::VectorXd& noise);

// Closed-form KL(q || p) between diagonal Gaussians, one value per row (N x 1).
Var kl_diag_gaussian(const GaussianParams& q, const GaussianParams& p);
double kl_diag_gaussian(const Eigen::VectorXd& q_mean, const Eigen::VectorXd& q_log_var,
                        const Eigen::VectorXd& p_mean, const Eigen::VectorXd& p_log_var);

// Time shuffle of every sequence: out[t] row i = x[perm_i[t]] row i.
std::vector<Var> augment_content(const std::vector<Var>& x, const std::vector<std::vector<int>>& permutations);
Mat augment_content(const Mat& x, uint64_t perm_seed);
std::vector<int> random_permutation(int T, uint64_t seed);

// Gaussian smoothing along the feature axis of every frame; time order kept.
std::vector<Var> augment_motion(const std::vector<Var>& x, double blur_width);
Mat augment_motion(const Mat& x, double blur_width);
// d x d smoothing operator, applied as x * K. Column j of K holds the
// truncated (radius ceil(3 w)) Gaussian weights of output feature j, summing to 1.
Mat blur_operator(ag::Index d, double blur_width);

// InfoNCE log-ratio per anchor row (N x 1):
//   log phi(a_i, p_i) / (phi(a_i, p_i) + sum_{j in neg(i)} phi(a_i, p_j)),
//   phi(a, b) = exp(cos(a, b) / tau).
// Negatives of anchor i are the positives of the other rows, limited to the
// next n_max rows (cyclically) when n_max > 0.
Var contrastive_rows(const Var& anchors, const Var& positives, double tau, int n_max);
double contrastive_term(const Eigen::VectorXd& anchor, const Eigen::VectorXd& positive,
                        const std::vector<Eigen::VectorXd>& negatives, double tau);

// Batch-mean MI estimates. Requires N >= 2.
MiTerms mutual_information(const MiInputs& in, double tau, int n_max);

} // namespace dcl::dse
