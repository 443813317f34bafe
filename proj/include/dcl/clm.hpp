#pragma once
/*
 * Counterfactual learning module.
 *
 * Each modality block (audio, static, pooled dynamic) gets its own
 * cross-sample affinity over the batch:
 *
 *   S[i][j] = exp(cos(x_i, x_j) / tau)
 *   A       = D^-1 topk(S, k)         (row-stochastic)
 *   F       = [A_a X^a | A_s X^v_s | A_z X^v_z]
 *
 * The counterfactual pass keeps X fixed and rebuilds A from
 * X* = sigma * W + mu with W ~ N(0, I). The total indirect effect is the
 * factual prediction minus the mean counterfactual prediction.
 */

#include "dcl/nn.hpp"

#include <span>
#include <string>
#include <vector>

namespace dcl::clm {

using ag::Mat;
using ag::Tape;
using ag::Var;

// Per-sample blocks over a batch of N clips.
struct ModalBlocks {
    Var audio;    // N x d
    Var stat;     // N x d_s
    Var dynamic;  // N x d_z

    ag::Index width() const { return audio.cols() + stat.cols() + dynamic.cols(); }
};

struct Affinities {
    Var audio;
    Var stat;
    Var dynamic;
};

struct RowNormalizeDiagnostics {
    std::vector<ag::Index> fallback_rows;  // rows that were all zero and became self-loops
};

// Time mean of the dynamic factors.
Var pool_dynamic(const std::vector<Var>& z);
Eigen::VectorXd pool_dynamic(const Mat& z);  // T x d_z -> d_z

Var similarity_matrix(const Var& rows, double tau);
Mat similarity_matrix(const Mat& rows, double tau);

// Keeps the k largest entries of each row; among equal values the lowest
// column index wins. Requires 1 <= k <= N.
Mat topk_mask(const Mat& s, int k);
Mat topk_filter(const Mat& s, int k);
Var topk_filter(const Var& s, int k);

// Divides each row by its sum. An all-zero row becomes a self-loop and is
// reported in `diag`.
Mat row_normalize(const Mat& s, RowNormalizeDiagnostics* diag = nullptr);
Var row_normalize(const Var& s, RowNormalizeDiagnostics* diag = nullptr);

// row_normalize(topk_filter(similarity_matrix(rows, tau), min(k, N)))
Var build_affinity(const Var& rows, double tau, int k, RowNormalizeDiagnostics* diag = nullptr);
Mat build_affinity(const Mat& rows, double tau, int k, RowNormalizeDiagnostics* diag = nullptr);
Affinities build_affinities(const ModalBlocks& blocks, double tau, int k);

// F = [A_a audio | A_s stat | A_z dynamic], N x (d + d_s + d_z).
Var transfer(const Affinities& a, const ModalBlocks& blocks);
Mat transfer(const Mat& a_audio, const Mat& a_stat, const Mat& a_dynamic, const Mat& audio, const Mat& stat,
             const Mat& dynamic);

// Splits an N x (d + d_s + d_z) matrix into the three blocks.
ModalBlocks split_blocks(const Var& x, ag::Index d_audio, ag::Index d_s);

// Learned Gaussian over the concatenated block features. sigma is
// softplus(sigma_raw), so it stays positive.
struct InterventionParams {
    ag::Parameter* mu = nullptr;         // 1 x D
    ag::Parameter* sigma_raw = nullptr;  // 1 x D

    InterventionParams() = default;
    InterventionParams(nn::ParameterStore& store, ag::Index width);

    // mu <- column means of x, sigma <- column standard deviations (floored).
    void init_from_batch(const Mat& x);
    Mat sigma() const;
};

// sigma * W + mu, with sigma = softplus(sigma_raw). mu and sigma_raw may be
// 1 x D (broadcast over rows) or N x D.
Var intervene(const Var& mu, const Var& sigma_raw, const Var& noise);
// Plain form; sigma is used as given and must be non-negative.
Mat intervene(const Mat& mu, const Mat& sigma, const Mat& noise);

// factual - mean(counterfactuals)
Var tie(const Var& factual, std::span<const Var> counterfactuals);
Mat tie(const Mat& factual, const std::vector<Mat>& counterfactuals);

// Writes affinity_{audio,static,dynamic}.dcld under `dir` with the given prefix.
void dump_affinities(const Affinities& a, const std::string& dir, const std::string& prefix);

} // namespace dcl::clm
