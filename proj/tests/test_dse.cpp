#include "doctest.h"
#include "test_util.hpp"

#include "dcl/dse.hpp"
#include "dcl/errors.hpp"

#include <cmath>
#include <numbers>

using namespace dcl;
using ag::Mat;
using ag::Tape;
using ag::Var;
using Eigen::VectorXd;

namespace {

// KL(q || p) for 1-D Gaussians by Simpson's rule over +-20 standard deviations.
double kl_quadrature(double mq, double vq, double mp, double vp) {
    auto logpdf = [](double x, double m, double v) {
        return -0.5 * std::log(2 * std::numbers::pi * v) - (x - m) * (x - m) / (2 * v);
    };
    const double lo = mq - 20 * std::sqrt(vq);
    const double hi = mq + 20 * std::sqrt(vq);
    const int n = 20000;
    const double h = (hi - lo) / n;
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double x = lo + i * h;
        const double lq = logpdf(x, mq, vq);
        const double f = std::exp(lq) * (lq - logpdf(x, mp, vp));
        acc += f * (i == 0 || i == n ? 1.0 : (i % 2 ? 4.0 : 2.0));
    }
    return acc * h / 3.0;
}

struct Fixture {
    Config c = Config::tiny();
    nn::ParameterStore store;
    Rng rng{5};
    dse::Dse model{store, c, rng};
    ag::Index n = 6;

    std::vector<Mat> inputs(uint64_t seed) const {
        Rng r(seed);
        std::vector<Mat> x;
        for (int t = 0; t < c.T; ++t) x.push_back(r.normal_matrix(n, c.d));
        return x;
    }
};

std::vector<Var> constants(Tape& tape, const std::vector<Mat>& xs) {
    std::vector<Var> out;
    for (const Mat& x : xs) out.push_back(tape.constant(x));
    return out;
}

} // namespace

TEST_CASE("closed-form KL matches numerical integration") {
    struct Case {
        double mq, lvq, mp, lvp;
    };
    for (Case k : {Case{0.3, -0.4, -0.5, 0.7}, Case{0.0, 0.0, 0.0, 0.0}, Case{2.0, 1.2, -1.0, -0.8}}) {
        VectorXd mq(1), lvq(1), mp(1), lvp(1);
        mq << k.mq;
        lvq << k.lvq;
        mp << k.mp;
        lvp << k.lvp;
        const double oracle = kl_quadrature(k.mq, std::exp(k.lvq), k.mp, std::exp(k.lvp));
        CHECK(dse::kl_diag_gaussian(mq, lvq, mp, lvp) == doctest::Approx(oracle).epsilon(1e-8));
    }
}

TEST_CASE("KL is a sum over dimensions and the batched form agrees") {
    Rng rng(1);
    const Mat qm = rng.normal_matrix(3, 4), qv = rng.normal_matrix(3, 4);
    const Mat pm = rng.normal_matrix(3, 4), pv = rng.normal_matrix(3, 4);
    Tape t;
    const Mat kl = dse::kl_diag_gaussian({t.constant(qm), t.constant(qv)}, {t.constant(pm), t.constant(pv)}).value();
    REQUIRE(kl.rows() == 3);
    REQUIRE(kl.cols() == 1);
    for (int i = 0; i < 3; ++i) {
        double sum = 0.0;
        for (int j = 0; j < 4; ++j) {
            sum += kl_quadrature(qm(i, j), std::exp(qv(i, j)), pm(i, j), std::exp(pv(i, j)));
        }
        CHECK(kl(i, 0) == doctest::Approx(sum).epsilon(1e-7));
        CHECK(kl(i, 0) == doctest::Approx(dse::kl_diag_gaussian(qm.row(i).transpose(), qv.row(i).transpose(),
                                                               pm.row(i).transpose(), pv.row(i).transpose())));
    }
}

TEST_CASE("KL is nonnegative and vanishes at q == p") {
    Rng rng(2);
    int violations = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        VectorXd qm = rng.normal_matrix(5, 1) * 3.0, qv = rng.normal_matrix(5, 1) * 2.0;
        VectorXd pm = rng.normal_matrix(5, 1) * 3.0, pv = rng.normal_matrix(5, 1) * 2.0;
        if (dse::kl_diag_gaussian(qm, qv, pm, pv) < 0.0) ++violations;
    }
    CHECK(violations == 0);
    VectorXd m = VectorXd::LinSpaced(4, -1, 1);
    VectorXd v = VectorXd::LinSpaced(4, -2, 2);
    CHECK(dse::kl_diag_gaussian(m, v, m, v) == 0.0);
}

TEST_CASE("reparameterized samples have the posterior moments") {
    VectorXd mean(2), log_var(2);
    mean << 1.5, -0.7;
    log_var << std::log(0.25), std::log(4.0);
    Rng rng(3);
    const int draws = 200000;
    VectorXd sum = VectorXd::Zero(2), sq = VectorXd::Zero(2);
    for (int i = 0; i < draws; ++i) {
        VectorXd eps(2);
        eps << rng.normal(), rng.normal();
        VectorXd x = dse::reparameterize(mean, log_var, eps);
        sum += x;
        sq += x.cwiseProduct(x);
    }
    const VectorXd m = sum / draws;
    const VectorXd var = sq / draws - m.cwiseProduct(m);
    // 5 standard errors
    CHECK(std::abs(m(0) - 1.5) < 5 * 0.5 / std::sqrt(draws));
    CHECK(std::abs(m(1) + 0.7) < 5 * 2.0 / std::sqrt(draws));
    CHECK(var(0) == doctest::Approx(0.25).epsilon(0.02));
    CHECK(var(1) == doctest::Approx(4.0).epsilon(0.02));

    VectorXd zero = VectorXd::Zero(2);
    CHECK(dse::reparameterize(mean, log_var, zero) == mean);
}

TEST_CASE("contrastive term: symmetric similarities give ln(1/(n+1))") {
    VectorXd v(3);
    v << 0.2, -1.0, 0.5;
    for (int n : {1, 4, 9}) {
        std::vector<VectorXd> negatives(static_cast<size_t>(n), v);
        CHECK(std::abs(dse::contrastive_term(v, v, negatives, 0.5) - std::log(1.0 / (n + 1))) < 1e-9);
    }
    std::vector<VectorXd> four(4, v * 3.0);
    CHECK(std::abs(dse::contrastive_term(v, v * 2.0, four, 2.0) - std::log(0.2)) < 1e-9);
}

TEST_CASE("contrastive term is negative for random vectors") {
    Rng rng(4);
    int violations = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        VectorXd a = rng.normal_matrix(6, 1), p = rng.normal_matrix(6, 1);
        std::vector<VectorXd> negs;
        for (int j = 0; j < 1 + trial % 7; ++j) negs.push_back(rng.normal_matrix(6, 1));
        if (!(dse::contrastive_term(a, p, negs, 0.5) < 0.0)) ++violations;
    }
    CHECK(violations == 0);
    CHECK_THROWS_AS(dse::contrastive_term(VectorXd::Zero(3), VectorXd::Ones(3), {VectorXd::Ones(3)}, 0.5),
                    NumericError);
}

TEST_CASE("batched contrastive rows agree with the per-anchor form") {
    Rng rng(6);
    const Mat a = rng.normal_matrix(5, 3);
    const Mat p = rng.normal_matrix(5, 3);
    for (int n_max : {0, 2}) {
        Tape t;
        const Mat rows = dse::contrastive_rows(t.constant(a), t.constant(p), 0.7, n_max).value();
        for (int i = 0; i < 5; ++i) {
            std::vector<VectorXd> negs;
            const int count = n_max > 0 ? n_max : 4;
            for (int j = 1; j <= count; ++j) negs.push_back(p.row((i + j) % 5).transpose());
            CHECK(rows(i, 0) == doctest::Approx(dse::contrastive_term(a.row(i).transpose(), p.row(i).transpose(), negs,
                                                                      0.7))
                                    .epsilon(1e-12));
        }
    }
    Tape t;
    CHECK_THROWS_AS(dse::contrastive_rows(t.constant(a.topRows(1)), t.constant(p.topRows(1)), 0.5, 0), ShapeError);
}

TEST_CASE("blur operator") {
    const Mat k = dse::blur_operator(10, 1.5);
    CHECK((k.colwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK((k.array() >= 0.0).all());
    // radius ceil(3 * 1.5) = 5
    CHECK(k(0, 5) > 0.0);
    CHECK(k(0, 6) == 0.0);
    CHECK((dse::blur_operator(10, 1e-3) - Mat::Identity(10, 10)).cwiseAbs().maxCoeff() < 1e-6);
    CHECK_THROWS_AS(dse::blur_operator(10, 0.0), ConfigError);

    Rng rng(7);
    const Mat x = rng.normal_matrix(4, 10);
    CHECK((dse::augment_motion(x, 1e-3) - x).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("content augmentation permutes time and keeps each frame") {
    const auto perm = dse::random_permutation(8, 11);
    CHECK(perm == dse::random_permutation(8, 11));
    auto sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 8; ++i) CHECK(sorted[static_cast<size_t>(i)] == i);

    Rng rng(8);
    const Mat seq = rng.normal_matrix(8, 3);
    const Mat shuffled = dse::augment_content(seq, 11);
    for (int t = 0; t < 8; ++t) CHECK(shuffled.row(t) == seq.row(perm[static_cast<size_t>(t)]));

    Tape tape;
    std::vector<Var> x;
    for (int t = 0; t < 3; ++t) x.push_back(tape.constant(Mat::Constant(2, 1, t)));
    const auto out = dse::augment_content(x, {{2, 0, 1}, {0, 1, 2}});
    CHECK(out[0].value()(0, 0) == 2.0);
    CHECK(out[0].value()(1, 0) == 0.0);
    CHECK(out[1].value()(0, 0) == 0.0);
}

TEST_CASE("decoder frame t depends on z_t only") {
    Fixture f;
    Rng rng(9);
    const Mat s = rng.normal_matrix(f.n, f.c.d_s);
    std::vector<Mat> z;
    for (int t = 0; t < f.c.T; ++t) z.push_back(rng.normal_matrix(f.n, f.c.d_z));
    auto decode = [&](const std::vector<Mat>& zs) {
        Tape tape;
        std::vector<Mat> out;
        for (const Var& v : f.model.decode(tape, tape.constant(s), constants(tape, zs))) out.push_back(v.value());
        return out;
    };
    const auto base = decode(z);
    for (int tp = 0; tp < f.c.T; ++tp) {
        auto zp = z;
        zp[static_cast<size_t>(tp)].array() += 0.37;
        const auto moved = decode(zp);
        for (int t = 0; t < f.c.T; ++t) {
            const double diff = (moved[static_cast<size_t>(t)] - base[static_cast<size_t>(t)]).cwiseAbs().maxCoeff();
            if (t == tp) {
                CHECK(diff > 0.0);
            } else {
                CHECK(diff == 0.0);
            }
        }
    }
}

TEST_CASE("dynamic prior at step t ignores z_t and later") {
    Fixture f;
    Rng rng(10);
    std::vector<Mat> z;
    for (int t = 0; t < f.c.T; ++t) z.push_back(rng.normal_matrix(f.n, f.c.d_z));
    auto prior = [&](const std::vector<Mat>& zs) {
        Tape tape;
        std::vector<std::pair<Mat, Mat>> out;
        for (const auto& g : f.model.prior_dynamic(tape, constants(tape, zs))) {
            out.emplace_back(g.mean.value(), g.log_var.value());
        }
        return out;
    };
    const auto base = prior(z);
    REQUIRE(base.size() == static_cast<size_t>(f.c.T));
    for (int tp = 0; tp < f.c.T; ++tp) {
        auto zp = z;
        zp[static_cast<size_t>(tp)].array() -= 1.1;
        const auto moved = prior(zp);
        for (int t = 0; t <= tp; ++t) {
            CHECK(moved[static_cast<size_t>(t)].first == base[static_cast<size_t>(t)].first);
            CHECK(moved[static_cast<size_t>(t)].second == base[static_cast<size_t>(t)].second);
        }
        if (tp + 1 < f.c.T) CHECK(moved[static_cast<size_t>(tp + 1)].first != base[static_cast<size_t>(tp + 1)].first);
    }
    // prior_next on a prefix reproduces the corresponding entry
    for (int len = 0; len < f.c.T; ++len) {
        Tape tape;
        std::vector<Mat> prefix(z.begin(), z.begin() + len);
        const auto g = f.model.prior_next(tape, constants(tape, prefix), f.n);
        CHECK((g.mean.value() - base[static_cast<size_t>(len)].first).cwiseAbs().maxCoeff() < 1e-14);
    }
}

TEST_CASE("posterior with zero noise returns the means") {
    Fixture f;
    Tape tape;
    const auto x = constants(tape, f.inputs(12));
    const auto q = f.model.posterior(tape, x, dse::PosteriorNoise::zeros(f.c.T, f.n, f.c.d_s, f.c.d_z));
    CHECK(q.s_sample.value() == q.s.mean.value());
    REQUIRE(q.z_samples.size() == static_cast<size_t>(f.c.T));
    for (int t = 0; t < f.c.T; ++t) CHECK(q.z_samples[static_cast<size_t>(t)].value() == q.z[static_cast<size_t>(t)].mean.value());

    auto bad = f.inputs(12);
    bad[2](1, 3) = std::nan("");
    Tape t2;
    CHECK_THROWS_AS(f.model.posterior(t2, constants(t2, bad), dse::PosteriorNoise::zeros(f.c.T, f.n, f.c.d_s, f.c.d_z)),
                    NumericError);
}

TEST_CASE("DSE objective composes its breakdown") {
    Fixture f;
    Rng rng(13);
    const auto noise = dse::DseNoise::draw(f.c, f.n, rng);
    const dse::LossWeights w{0.7, 0.3, 0.2, 0.9};
    Tape tape;
    const auto out = f.model.loss(tape, constants(tape, f.inputs(14)), noise, w);
    const auto& b = out.breakdown;
    CHECK(b.kl_s >= 0.0);
    CHECK(b.kl_z >= 0.0);
    CHECK(b.recon > 0.0);
    const double expect = b.recon + w.gamma * (b.kl_s + b.kl_z) - w.alpha * b.mi_z_x - w.beta * b.mi_s_x + w.theta * b.mi_z_s;
    CHECK(b.total == doctest::Approx(expect).epsilon(1e-12));
    CHECK(out.loss.scalar() == doctest::Approx(b.total).epsilon(1e-12));
    // Each log-ratio is below 0: its denominator contains its numerator.
    CHECK(b.mi_z_x < 0.0);
    CHECK(b.mi_s_x < 0.0);
    CHECK(b.mi_z_s < 0.0);

    Tape t2;
    CHECK_THROWS_AS(f.model.loss(t2, constants(t2, f.inputs(14)), noise, {1.0, -0.1, 0.1, 0.1}), ConfigError);
}

TEST_CASE("config requires matching static and dynamic widths") {
    Config c = Config::tiny();
    c.d_z = c.d_s + 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}
