#include "dcl/dse.hpp"

#include "dcl/errors.hpp"

#include <cmath>
#include <numeric>

namespace dcl::dse {

namespace {

constexpr double kMasked = -1e30;

GaussianParams split_head(const Var& out, ag::Index dim) {
    return {ag::slice_cols(out, 0, dim), ag::slice_cols(out, dim, dim)};
}

void check_finite(const Mat& m, const char* what, int step) {
    if (!m.allFinite()) {
        throw NumericError(std::string("dse: non-finite ") + what + " at step " + std::to_string(step));
    }
}

Var sum_over(const std::vector<Var>& terms) {
    Var acc = terms.front();
    for (size_t i = 1; i < terms.size(); ++i) acc = acc + terms[i];
    return acc;
}

} // namespace

PosteriorNoise PosteriorNoise::zeros(int T, ag::Index n, int d_s, int d_z) {
    PosteriorNoise out;
    out.s = Mat::Zero(n, d_s);
    out.z.assign(static_cast<size_t>(T), Mat::Zero(n, d_z));
    return out;
}

PosteriorNoise PosteriorNoise::draw(Rng& rng, int T, ag::Index n, int d_s, int d_z) {
    PosteriorNoise out;
    out.s = rng.normal_matrix(n, d_s);
    for (int t = 0; t < T; ++t) out.z.push_back(rng.normal_matrix(n, d_z));
    return out;
}

std::vector<int> random_permutation(int T, uint64_t seed) {
    Rng rng(seed);
    std::vector<int> perm(static_cast<size_t>(T));
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = T - 1; i > 0; --i) {
        const auto j = static_cast<int>(rng.below(static_cast<uint64_t>(i) + 1));
        std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
    }
    return perm;
}

DseNoise DseNoise::zeros(const Config& c, ag::Index n) {
    DseNoise out;
    out.raw = PosteriorNoise::zeros(c.T, n, c.d_s, c.d_z);
    out.content = out.raw;
    out.motion = out.raw;
    std::vector<int> id(static_cast<size_t>(c.T));
    std::iota(id.begin(), id.end(), 0);
    out.permutations.assign(static_cast<size_t>(n), id);
    return out;
}

DseNoise DseNoise::draw(const Config& c, ag::Index n, Rng& rng) {
    DseNoise out;
    out.raw = PosteriorNoise::draw(rng, c.T, n, c.d_s, c.d_z);
    out.content = PosteriorNoise::draw(rng, c.T, n, c.d_s, c.d_z);
    out.motion = PosteriorNoise::draw(rng, c.T, n, c.d_s, c.d_z);
    for (ag::Index i = 0; i < n; ++i) out.permutations.push_back(random_permutation(c.T, rng.engine()()));
    return out;
}

Dse::Dse(nn::ParameterStore& store, const Config& config, Rng& rng)
    : T_(config.T), d_s_(config.d_s), d_z_(config.d_z), tau_nce_(config.tau_nce), n_max_(config.n_max),
      blur_width_(config.blur_width),
      bilstm_(store, "dse.bilstm", config.d, config.hidden, rng),
      static_head_(store, "dse.static_head", 2 * config.hidden, 2 * config.d_s, rng),
      z_cell_(store, "dse.z_cell", 2 * config.hidden + config.d_z, config.d_z, rng),
      z_head_(store, "dse.z_head", config.d_z, 2 * config.d_z, rng),
      prior_cell_(store, "dse.prior_cell", config.d_z, config.d_z, rng),
      prior_head_(store, "dse.prior_head", config.d_z, 2 * config.d_z, rng),
      decoder_(store, "dse.decoder", config.d_s + config.d_z, config.hidden, config.d, rng, false) {}

Posterior Dse::posterior(Tape& tape, const std::vector<Var>& x, const PosteriorNoise& noise) const {
    if (static_cast<int>(x.size()) != T_) {
        throw ShapeError("dse posterior: expected " + std::to_string(T_) + " steps, got " +
                         std::to_string(x.size()));
    }
    for (int t = 0; t < T_; ++t) check_finite(x[static_cast<size_t>(t)].value(), "input", t);
    const ag::Index n = x[0].rows();

    std::vector<Var> h = bilstm_(tape, x);
    for (int t = 0; t < T_; ++t) check_finite(h[static_cast<size_t>(t)].value(), "recurrent state", t);

    Posterior out;
    out.s = split_head(static_head_(tape, ag::average(h)), d_s_);
    out.s_sample = reparameterize(out.s, tape.constant(noise.s));

    Var z_prev = tape.constant(Mat::Zero(n, d_z_));
    nn::LstmState state = z_cell_.zero_state(tape, n);
    for (int t = 0; t < T_; ++t) {
        const Var in[] = {h[static_cast<size_t>(t)], z_prev};
        state = z_cell_.step(tape, ag::concat_cols(in), state);
        GaussianParams p = split_head(z_head_(tape, state.h), d_z_);
        check_finite(p.log_var.value(), "dynamic posterior", t);
        z_prev = reparameterize(p, tape.constant(noise.z[static_cast<size_t>(t)]));
        out.z.push_back(p);
        out.z_samples.push_back(z_prev);
    }
    return out;
}

std::vector<GaussianParams> Dse::prior_dynamic(Tape& tape, const std::vector<Var>& z) const {
    std::vector<GaussianParams> out;
    if (z.empty()) return out;
    const ag::Index n = z[0].rows();
    Var input = tape.constant(Mat::Zero(n, d_z_));
    nn::LstmState state = prior_cell_.zero_state(tape, n);
    for (size_t t = 0; t < z.size(); ++t) {
        state = prior_cell_.step(tape, input, state);
        out.push_back(split_head(prior_head_(tape, state.h), d_z_));
        input = z[t];
    }
    return out;
}

GaussianParams Dse::prior_next(Tape& tape, const std::vector<Var>& prefix, ag::Index n) const {
    Var input = tape.constant(Mat::Zero(n, d_z_));
    nn::LstmState state = prior_cell_.zero_state(tape, n);
    state = prior_cell_.step(tape, input, state);
    for (const Var& z : prefix) state = prior_cell_.step(tape, z, state);
    return split_head(prior_head_(tape, state.h), d_z_);
}

std::vector<Var> Dse::decode(Tape&, const Var& s, const std::vector<Var>& z) const {
    if (z.empty()) {
        throw ShapeError("dse decode: empty dynamic sequence");
    }
    const ag::Index n = s.rows();
    std::vector<Var> rows;
    for (const Var& zt : z) {
        if (zt.rows() != n || zt.cols() != d_z_ || s.cols() != d_s_) {
            throw ShapeError("dse decode: shape mismatch");
        }
        const Var parts[] = {s, zt};
        rows.push_back(ag::concat_cols(parts));
    }
    // One matmul over all frames; each output row depends only on its own (s, z_t) row.
    Var out = decoder_(*s.tape(), ag::concat_rows(rows));
    std::vector<Var> frames;
    for (size_t t = 0; t < z.size(); ++t) frames.push_back(ag::slice_rows(out, static_cast<ag::Index>(t) * n, n));
    return frames;
}

DseOutput Dse::loss(Tape& tape, const std::vector<Var>& x, const DseNoise& noise, const LossWeights& w) const {
    if (w.gamma < 0 || w.alpha < 0 || w.beta < 0 || w.theta < 0) {
        throw ConfigError("dse loss: weights must be non-negative");
    }
    const ag::Index n = x.at(0).rows();
    const double inv_n = 1.0 / static_cast<double>(n);

    DseOutput out;
    out.posterior = posterior(tape, x, noise.raw);
    const Posterior& q = out.posterior;
    out.prior = prior_dynamic(tape, q.z_samples);
    out.reconstruction = decode(tape, q.s_sample, q.z_samples);

    std::vector<Var> recon_terms;
    for (size_t t = 0; t < x.size(); ++t) recon_terms.push_back(ag::sum(ag::square(out.reconstruction[t] - x[t])));
    Var recon = ag::scale(sum_over(recon_terms), 0.5 * inv_n);

    GaussianParams standard{tape.constant(Mat::Zero(n, d_s_)), tape.constant(Mat::Zero(n, d_s_))};
    Var kl_s = ag::scale(ag::sum(kl_diag_gaussian(q.s, standard)), inv_n);
    std::vector<Var> kl_terms;
    for (size_t t = 0; t < q.z.size(); ++t) kl_terms.push_back(ag::sum(kl_diag_gaussian(q.z[t], out.prior[t])));
    Var kl_z = ag::scale(sum_over(kl_terms), inv_n);

    Posterior content = posterior(tape, augment_content(x, noise.permutations), noise.content);
    Posterior motion = posterior(tape, augment_motion(x, blur_width_), noise.motion);

    out.z_pooled = ag::average(q.z_samples);
    MiInputs in{ag::concat_cols(q.z_samples), ag::concat_cols(motion.z_samples), q.s_sample, content.s_sample,
                out.z_pooled};
    MiTerms mi = mutual_information(in, tau_nce_, n_max_);

    out.loss = recon + ag::scale(kl_s + kl_z, w.gamma) - ag::scale(mi.mi_z_x, w.alpha) -
               ag::scale(mi.mi_s_x, w.beta) + ag::scale(mi.mi_z_s, w.theta);

    LossBreakdown& b = out.breakdown;
    b.recon = recon.scalar();
    b.kl_s = kl_s.scalar();
    b.kl_z = kl_z.scalar();
    b.mi_z_x = mi.mi_z_x.scalar();
    b.mi_s_x = mi.mi_s_x.scalar();
    b.mi_z_s = mi.mi_z_s.scalar();
    b.total = out.loss.scalar();
    return out;
}

Var reparameterize(const GaussianParams& p, const Var& noise) {
    if (noise.rows() != p.mean.rows() || noise.cols() != p.mean.cols()) {
        throw ShapeError("reparameterize: noise shape does not match mean");
    }
    return p.mean + ag::exp(ag::scale(p.log_var, 0.5)) * noise;
}

Eigen::VectorXd reparameterize(const Eigen::VectorXd& mean, const Eigen::VectorXd& log_var,
                               const Eigen::VectorXd& noise) {
    if (mean.size() != log_var.size() || mean.size() != noise.size()) {
        throw ShapeError("reparameterize: length mismatch");
    }
    return mean.array() + (0.5 * log_var.array()).exp() * noise.array();
}

Var kl_diag_gaussian(const GaussianParams& q, const GaussianParams& p) {
    if (q.mean.cols() != p.mean.cols() || q.mean.rows() != p.mean.rows()) {
        throw ShapeError("kl_diag_gaussian: length mismatch");
    }
    // 0.5 * sum(lv_p - lv_q + (exp(lv_q) + (m_q - m_p)^2) / exp(lv_p) - 1)
    Var diff = q.mean - p.mean;
    Var inner = (p.log_var - q.log_var) + ag::exp(q.log_var - p.log_var) +
                ag::square(diff) * ag::exp(ag::neg(p.log_var));
    return ag::scale(ag::add_scalar(ag::row_sum(inner), -static_cast<double>(q.mean.cols())), 0.5);
}

double kl_diag_gaussian(const Eigen::VectorXd& q_mean, const Eigen::VectorXd& q_log_var,
                        const Eigen::VectorXd& p_mean, const Eigen::VectorXd& p_log_var) {
    const auto n = q_mean.size();
    if (q_log_var.size() != n || p_mean.size() != n || p_log_var.size() != n) {
        throw ShapeError("kl_diag_gaussian: length mismatch");
    }
    double kl = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double dm = q_mean(i) - p_mean(i);
        kl += p_log_var(i) - q_log_var(i) + (std::exp(q_log_var(i)) + dm * dm) / std::exp(p_log_var(i)) - 1.0;
    }
    return 0.5 * kl;
}

std::vector<Var> augment_content(const std::vector<Var>& x, const std::vector<std::vector<int>>& permutations) {
    const auto T = static_cast<ag::Index>(x.size());
    const ag::Index n = x.at(0).rows();
    if (static_cast<ag::Index>(permutations.size()) != n) {
        throw ShapeError("augment_content: need one permutation per sample");
    }
    Var stacked = ag::concat_rows(x);  // row t*n + i is step t of sample i
    std::vector<Var> out;
    for (ag::Index t = 0; t < T; ++t) {
        std::vector<ag::Index> rows(static_cast<size_t>(n));
        for (ag::Index i = 0; i < n; ++i) {
            const auto& perm = permutations[static_cast<size_t>(i)];
            if (static_cast<ag::Index>(perm.size()) != T) {
                throw ShapeError("augment_content: permutation length differs from T");
            }
            rows[static_cast<size_t>(i)] = perm[static_cast<size_t>(t)] * n + i;
        }
        out.push_back(ag::gather_rows(stacked, rows));
    }
    return out;
}

Mat augment_content(const Mat& x, uint64_t perm_seed) {
    std::vector<int> perm = random_permutation(static_cast<int>(x.rows()), perm_seed);
    Mat out(x.rows(), x.cols());
    for (ag::Index t = 0; t < x.rows(); ++t) out.row(t) = x.row(perm[static_cast<size_t>(t)]);
    return out;
}

Mat blur_operator(ag::Index d, double blur_width) {
    if (!(blur_width > 0.0)) {
        throw ConfigError("blur_width must be > 0");
    }
    const auto radius = static_cast<ag::Index>(std::ceil(3.0 * blur_width));
    Mat k = Mat::Zero(d, d);
    for (ag::Index j = 0; j < d; ++j) {
        for (ag::Index i = std::max<ag::Index>(0, j - radius); i <= std::min(d - 1, j + radius); ++i) {
            const double u = static_cast<double>(i - j) / blur_width;
            k(i, j) = std::exp(-0.5 * u * u);
        }
        k.col(j) /= k.col(j).sum();
    }
    return k;
}

std::vector<Var> augment_motion(const std::vector<Var>& x, double blur_width) {
    const ag::Index n = x.at(0).rows();
    Tape& tape = *x[0].tape();
    Var kernel = tape.constant(blur_operator(x[0].cols(), blur_width));
    Var out = ag::matmul(ag::concat_rows(x), kernel);
    std::vector<Var> steps;
    for (size_t t = 0; t < x.size(); ++t) steps.push_back(ag::slice_rows(out, static_cast<ag::Index>(t) * n, n));
    return steps;
}

Mat augment_motion(const Mat& x, double blur_width) { return x * blur_operator(x.cols(), blur_width); }

Var contrastive_rows(const Var& anchors, const Var& positives, double tau, int n_max) {
    const ag::Index n = anchors.rows();
    if (n < 2) {
        throw ShapeError("contrastive estimate needs a batch of at least 2 (no negatives)");
    }
    if (positives.rows() != n || positives.cols() != anchors.cols()) {
        throw ShapeError("contrastive estimate: anchor/positive shape mismatch");
    }
    Var a = ag::l2_normalize_rows(anchors);
    Var p = ag::l2_normalize_rows(positives);
    Var logits = ag::scale(ag::matmul(a, ag::transpose(p)), 1.0 / tau);
    if (n_max > 0 && n_max < n - 1) {
        Mat mask = Mat::Constant(n, n, kMasked);
        for (ag::Index i = 0; i < n; ++i) {
            mask(i, i) = 0.0;
            for (int k = 1; k <= n_max; ++k) mask(i, (i + k) % n) = 0.0;
        }
        logits = logits + anchors.tape()->constant(std::move(mask));
    }
    return ag::diag(logits) - ag::logsumexp_rows(logits);
}

double contrastive_term(const Eigen::VectorXd& anchor, const Eigen::VectorXd& positive,
                        const std::vector<Eigen::VectorXd>& negatives, double tau) {
    if (negatives.empty()) {
        throw ShapeError("contrastive_term: at least one negative is required");
    }
    auto unit = [](const Eigen::VectorXd& v, const char* what) -> Eigen::VectorXd {
        const double norm = v.norm();
        if (!(norm > 0.0) || !std::isfinite(norm)) {
            throw NumericError(std::string("cosine similarity undefined: ") + what + " has zero or non-finite norm");
        }
        return v / norm;
    };
    const Eigen::VectorXd a = unit(anchor, "anchor");
    std::vector<double> logits{a.dot(unit(positive, "positive")) / tau};
    for (const auto& neg : negatives) {
        if (neg.size() != anchor.size()) {
            throw ShapeError("contrastive_term: negative length mismatch");
        }
        logits.push_back(a.dot(unit(neg, "negative")) / tau);
    }
    double m = logits[0];
    for (double l : logits) m = std::max(m, l);
    double s = 0.0;
    for (double l : logits) s += std::exp(l - m);
    return logits[0] - (m + std::log(s));
}

MiTerms mutual_information(const MiInputs& in, double tau, int n_max) {
    MiTerms out;
    out.mi_z_x = ag::scale(ag::mean(contrastive_rows(in.z_flat, in.z_flat_motion, tau, n_max)) +
                               ag::mean(contrastive_rows(in.z_flat_motion, in.z_flat, tau, n_max)),
                           0.5);
    out.mi_s_x = ag::scale(ag::mean(contrastive_rows(in.s, in.s_content, tau, n_max)) +
                               ag::mean(contrastive_rows(in.s_content, in.s, tau, n_max)),
                           0.5);
    if (in.z_pooled.cols() != in.s.cols()) {
        throw ShapeError("MI(z; s) estimate needs d_z == d_s");
    }
    out.mi_z_s = ag::mean(contrastive_rows(in.z_pooled, in.s, tau, n_max));
    return out;
}

} // namespace dcl::dse
