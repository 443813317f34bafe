#include "dcl/clm.hpp"

#include "dcl/blob.hpp"
#include "dcl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

namespace dcl::clm {

namespace {

void require_nonzero_rows(const Mat& m) {
    for (ag::Index i = 0; i < m.rows(); ++i) {
        const double n = m.row(i).norm();
        if (!(n > 0.0) || !std::isfinite(n)) {
            throw NumericError("cosine similarity undefined: row " + std::to_string(i) + " has zero or non-finite norm");
        }
    }
}

Mat self_loop_patch(const Mat& s, RowNormalizeDiagnostics* diag) {
    Mat patch = Mat::Zero(s.rows(), s.cols());
    for (ag::Index i = 0; i < s.rows(); ++i) {
        if ((s.row(i).array() < 0.0).any()) {
            throw NumericError("row_normalize: row " + std::to_string(i) + " has a negative entry");
        }
        if (s.row(i).sum() == 0.0) {
            if (i >= s.cols()) {
                throw ShapeError("row_normalize: zero row " + std::to_string(i) + " has no diagonal entry");
            }
            patch(i, i) = 1.0;
            if (diag) diag->fallback_rows.push_back(i);
        }
    }
    return patch;
}

} // namespace

Var pool_dynamic(const std::vector<Var>& z) {
    if (z.empty()) {
        throw ShapeError("pool_dynamic: T = 0");
    }
    return ag::average(z);
}

Eigen::VectorXd pool_dynamic(const Mat& z) {
    if (z.rows() == 0) {
        throw ShapeError("pool_dynamic: T = 0");
    }
    return z.colwise().mean().transpose();
}

Var similarity_matrix(const Var& rows, double tau) {
    if (!(tau > 0.0)) {
        throw ConfigError("tau_aff must be > 0");
    }
    Var u = ag::l2_normalize_rows(rows);
    return ag::exp(ag::scale(ag::matmul(u, ag::transpose(u)), 1.0 / tau));
}

Mat similarity_matrix(const Mat& rows, double tau) {
    if (!(tau > 0.0)) {
        throw ConfigError("tau_aff must be > 0");
    }
    require_nonzero_rows(rows);
    // Scalar sqrt, dot and exp throughout: Eigen's packet versions are not
    // correctly rounded, which would make ties depend on row position.
    const ag::Index n = rows.rows();
    Mat u(n, rows.cols());
    for (ag::Index i = 0; i < n; ++i) {
        double sq = 0.0;
        for (ag::Index c = 0; c < rows.cols(); ++c) sq += rows(i, c) * rows(i, c);
        const double norm = std::sqrt(sq);
        for (ag::Index c = 0; c < rows.cols(); ++c) u(i, c) = rows(i, c) / norm;
    }
    Mat s(n, n);
    for (ag::Index i = 0; i < n; ++i) {
        s(i, i) = std::exp(1.0 / tau);
        for (ag::Index j = 0; j < i; ++j) {
            double dot = 0.0;
            for (ag::Index c = 0; c < u.cols(); ++c) dot += u(i, c) * u(j, c);
            s(i, j) = s(j, i) = std::exp(dot / tau);
        }
    }
    return s;
}

Mat topk_mask(const Mat& s, int k) {
    if (k < 1 || k > s.cols()) {
        throw ConfigError("topk: k = " + std::to_string(k) + " outside [1, " + std::to_string(s.cols()) + "]");
    }
    Mat mask = Mat::Zero(s.rows(), s.cols());
    std::vector<ag::Index> order(static_cast<size_t>(s.cols()));
    for (ag::Index i = 0; i < s.rows(); ++i) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](ag::Index a, ag::Index b) { return s(i, a) > s(i, b); });
        for (int r = 0; r < k; ++r) mask(i, order[static_cast<size_t>(r)]) = 1.0;
    }
    return mask;
}

Mat topk_filter(const Mat& s, int k) { return s.cwiseProduct(topk_mask(s, k)); }

Var topk_filter(const Var& s, int k) { return s * s.tape()->constant(topk_mask(s.value(), k)); }

Mat row_normalize(const Mat& s, RowNormalizeDiagnostics* diag) {
    Mat patched = s + self_loop_patch(s, diag);
    // sum each row in descending order so the total ignores column order
    Eigen::VectorXd sums(patched.rows());
    std::vector<double> row;
    for (ag::Index i = 0; i < patched.rows(); ++i) {
        row.assign(patched.row(i).begin(), patched.row(i).end());
        std::sort(row.begin(), row.end(), std::greater<>());
        sums(i) = std::accumulate(row.begin(), row.end(), 0.0);
    }
    return patched.array().colwise() / sums.array();
}

Var row_normalize(const Var& s, RowNormalizeDiagnostics* diag) {
    Mat patch = self_loop_patch(s.value(), diag);
    if (patch.isZero(0.0)) return ag::normalize_row_sums(s);
    return ag::normalize_row_sums(s + s.tape()->constant(std::move(patch)));
}

Var build_affinity(const Var& rows, double tau, int k, RowNormalizeDiagnostics* diag) {
    const int k_eff = static_cast<int>(std::min<ag::Index>(k, rows.rows()));
    return row_normalize(topk_filter(similarity_matrix(rows, tau), k_eff), diag);
}

Mat build_affinity(const Mat& rows, double tau, int k, RowNormalizeDiagnostics* diag) {
    const int k_eff = static_cast<int>(std::min<ag::Index>(k, rows.rows()));
    return row_normalize(topk_filter(similarity_matrix(rows, tau), k_eff), diag);
}

Affinities build_affinities(const ModalBlocks& blocks, double tau, int k) {
    if (k < 1) {
        throw ConfigError("k must be >= 1");
    }
    return {build_affinity(blocks.audio, tau, k), build_affinity(blocks.stat, tau, k),
            build_affinity(blocks.dynamic, tau, k)};
}

Var transfer(const Affinities& a, const ModalBlocks& blocks) {
    const ag::Index n = blocks.audio.rows();
    if (blocks.stat.rows() != n || blocks.dynamic.rows() != n || a.audio.cols() != n || a.stat.cols() != n ||
        a.dynamic.cols() != n) {
        throw ShapeError("transfer: affinity and block sizes disagree");
    }
    const Var parts[] = {ag::matmul(a.audio, blocks.audio), ag::matmul(a.stat, blocks.stat),
                         ag::matmul(a.dynamic, blocks.dynamic)};
    return ag::concat_cols(parts);
}

namespace {

// A * x with each output row summed in an order fixed by the terms themselves
// (weight, then source row), so relabelling the batch permutes rows bit-exactly.
Mat mix(const Mat& a, const Mat& x) {
    Mat out = Mat::Zero(a.rows(), x.cols());
    std::vector<ag::Index> terms;
    for (ag::Index i = 0; i < a.rows(); ++i) {
        terms.clear();
        for (ag::Index j = 0; j < a.cols(); ++j)
            if (a(i, j) != 0.0) terms.push_back(j);
        std::sort(terms.begin(), terms.end(), [&](ag::Index p, ag::Index q) {
            if (a(i, p) != a(i, q)) return a(i, p) > a(i, q);
            for (ag::Index c = 0; c < x.cols(); ++c)
                if (x(p, c) != x(q, c)) return x(p, c) < x(q, c);
            return false;
        });
        for (ag::Index j : terms) out.row(i) += a(i, j) * x.row(j);
    }
    return out;
}

} // namespace

Mat transfer(const Mat& a_audio, const Mat& a_stat, const Mat& a_dynamic, const Mat& audio, const Mat& stat,
             const Mat& dynamic) {
    const ag::Index n = audio.rows();
    if (stat.rows() != n || dynamic.rows() != n || a_audio.cols() != n || a_stat.cols() != n ||
        a_dynamic.cols() != n) {
        throw ShapeError("transfer: affinity and block sizes disagree");
    }
    Mat f(a_audio.rows(), audio.cols() + stat.cols() + dynamic.cols());
    f << mix(a_audio, audio), mix(a_stat, stat), mix(a_dynamic, dynamic);
    return f;
}

ModalBlocks split_blocks(const Var& x, ag::Index d_audio, ag::Index d_s) {
    const ag::Index d_z = x.cols() - d_audio - d_s;
    if (d_z < 1) {
        throw ShapeError("split_blocks: width too small");
    }
    return {ag::slice_cols(x, 0, d_audio), ag::slice_cols(x, d_audio, d_s), ag::slice_cols(x, d_audio + d_s, d_z)};
}

InterventionParams::InterventionParams(nn::ParameterStore& store, ag::Index width)
    : mu(&store.create("clm.x_mu", Mat::Zero(1, width))),
      sigma_raw(&store.create("clm.x_sigma_raw", Mat::Constant(1, width, std::log(std::expm1(1.0))))) {}

void InterventionParams::init_from_batch(const Mat& x) {
    if (x.rows() < 1 || x.cols() != mu->value.cols()) {
        throw ShapeError("InterventionParams: batch width does not match");
    }
    Eigen::RowVectorXd mean = x.colwise().mean();
    Eigen::RowVectorXd var = (x.rowwise() - mean).array().square().colwise().mean();
    mu->value = mean;
    for (ag::Index j = 0; j < x.cols(); ++j) {
        const double sd = std::max(std::sqrt(var(j)), 1e-3);
        sigma_raw->value(0, j) = std::log(std::expm1(sd));
    }
}

Mat InterventionParams::sigma() const {
    const Mat& r = sigma_raw->value;
    return r.unaryExpr([](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); });
}

Var intervene(const Var& mu, const Var& sigma_raw, const Var& noise) {
    const ag::Index n = noise.rows();
    auto fits = [&](const Var& v) { return v.cols() == noise.cols() && (v.rows() == 1 || v.rows() == n); };
    if (!fits(mu) || !fits(sigma_raw)) {
        throw ShapeError("intervene: parameter shape does not match noise");
    }
    Var sigma = ag::softplus(sigma_raw);
    Var scaled = sigma.rows() == 1 ? ag::mul_row(noise, sigma) : noise * sigma;
    return mu.rows() == 1 ? ag::add_row(scaled, mu) : scaled + mu;
}

Mat intervene(const Mat& mu, const Mat& sigma, const Mat& noise) {
    if (mu.cols() != noise.cols() || sigma.cols() != noise.cols() || mu.rows() != 1 || sigma.rows() != 1) {
        throw ShapeError("intervene: parameter shape does not match noise");
    }
    if ((sigma.array() < 0.0).any()) {
        throw NumericError("intervene: negative sigma");
    }
    Mat out = noise.array().rowwise() * sigma.row(0).array();
    out.rowwise() += mu.row(0);
    return out;
}

Var tie(const Var& factual, std::span<const Var> counterfactuals) {
    if (counterfactuals.empty()) {
        throw ShapeError("tie: no counterfactual predictions");
    }
    return factual - ag::average(counterfactuals);
}

Mat tie(const Mat& factual, const std::vector<Mat>& counterfactuals) {
    if (counterfactuals.empty()) {
        throw ShapeError("tie: no counterfactual predictions");
    }
    Mat mean = Mat::Zero(factual.rows(), factual.cols());
    for (const Mat& c : counterfactuals) {
        if (c.rows() != factual.rows() || c.cols() != factual.cols()) {
            throw ShapeError("tie: counterfactual shape mismatch");
        }
        mean += c;
    }
    mean /= static_cast<double>(counterfactuals.size());
    return factual - mean;
}

void dump_affinities(const Affinities& a, const std::string& dir, const std::string& prefix) {
    std::filesystem::create_directories(dir);
    auto put = [&](const Var& v, const char* name) {
        const Mat& m = v.value();
        blob::Blob b;
        b.shape = {static_cast<uint32_t>(m.rows()), static_cast<uint32_t>(m.cols())};
        b.data.reserve(static_cast<size_t>(m.size()));
        for (ag::Index i = 0; i < m.rows(); ++i)
            for (ag::Index j = 0; j < m.cols(); ++j) b.data.push_back(static_cast<float>(m(i, j)));
        blob::write((std::filesystem::path(dir) / (prefix + name)).string(), b);
    };
    put(a.audio, "affinity_audio.dcld");
    put(a.stat, "affinity_static.dcld");
    put(a.dynamic, "affinity_dynamic.dcld");
}

} // namespace dcl::clm
