#include "doctest.h"
#include "test_util.hpp"

#include "dcl/errors.hpp"
#include "dcl/nn.hpp"

#include <cmath>

using namespace dcl;
using ag::Mat;
using ag::Tape;
using ag::Var;
using test::max_grad_error;

namespace {

// Contracts any output with a fixed random weight so every entry of the
// upstream gradient differs.
Var probe(Tape& t, const Var& v, uint64_t seed = 99) {
    Rng rng(seed);
    Var w = t.constant(rng.normal_matrix(v.rows(), v.cols()));
    return ag::sum(ag::mul(v, w));
}

Mat randn(Eigen::Index r, Eigen::Index c, uint64_t seed) {
    Rng rng(seed);
    return rng.normal_matrix(r, c);
}

Mat positive(Eigen::Index r, Eigen::Index c, uint64_t seed) { return randn(r, c, seed).array().abs() + 0.5; }

} // namespace

TEST_CASE("elementwise and matrix ops match finite differences") {
    const Mat a = randn(3, 4, 1);
    const Mat b = randn(4, 2, 2);
    const Mat c = randn(3, 4, 3);
    const Mat row = randn(1, 4, 4);
    const Mat col = randn(3, 1, 5);

    CHECK(max_grad_error({a, b}, [](Tape& t, auto& v) { return probe(t, ag::matmul(v[0], v[1])); }) < 1e-6);
    CHECK(max_grad_error({a, c}, [](Tape& t, auto& v) { return probe(t, v[0] - v[1] * v[0]); }) < 1e-6);
    CHECK(max_grad_error({a, row}, [](Tape& t, auto& v) { return probe(t, ag::add_row(v[0], v[1])); }) < 1e-6);
    CHECK(max_grad_error({a, row}, [](Tape& t, auto& v) { return probe(t, ag::mul_row(v[0], v[1])); }) < 1e-6);
    CHECK(max_grad_error({a, col}, [](Tape& t, auto& v) { return probe(t, ag::mul_col(v[0], v[1])); }) < 1e-6);
    CHECK(max_grad_error({a}, [](Tape& t, auto& v) { return probe(t, ag::transpose(v[0])); }) < 1e-6);
    CHECK(max_grad_error({a}, [](Tape& t, auto& v) { return probe(t, ag::tanh(v[0])); }) < 1e-6);
    CHECK(max_grad_error({a}, [](Tape& t, auto& v) { return probe(t, ag::sigmoid(v[0])); }) < 1e-6);
    CHECK(max_grad_error({a}, [](Tape& t, auto& v) { return probe(t, ag::exp(v[0])); }) < 1e-6);
    CHECK(max_grad_error({a}, [](Tape& t, auto& v) { return probe(t, ag::softplus(v[0])); }) < 1e-6);
    CHECK(max_grad_error({a}, [](Tape& t, auto& v) { return probe(t, ag::square(v[0])); }) < 1e-6);
    CHECK(max_grad_error({positive(3, 4, 6)}, [](Tape& t, auto& v) { return probe(t, ag::log(v[0])); }) < 1e-6);
    CHECK(max_grad_error({a}, [](Tape& t, auto& v) { return probe(t, ag::scale(ag::add_scalar(v[0], 2.0), -3.0)); }) <
          1e-6);
}

TEST_CASE("reductions and normalizations match finite differences") {
    const Mat a = randn(4, 5, 7);
    CHECK(max_grad_error({a}, [](Tape& t, auto& v) { return probe(t, ag::row_sum(v[0])); }) < 1e-6);
    CHECK(max_grad_error({a}, [](Tape& t, auto& v) { return probe(t, ag::col_mean(v[0])); }) < 1e-6);
    CHECK(max_grad_error({a}, [](Tape&, auto& v) { return ag::mean(ag::square(v[0])); }) < 1e-6);
    CHECK(max_grad_error({a}, [](Tape& t, auto& v) { return probe(t, ag::logsumexp_rows(v[0])); }) < 1e-6);
    CHECK(max_grad_error({a}, [](Tape& t, auto& v) { return probe(t, ag::log_softmax_rows(v[0])); }) < 1e-6);
    CHECK(max_grad_error({a}, [](Tape& t, auto& v) { return probe(t, ag::l2_normalize_rows(v[0])); }) < 1e-6);
    CHECK(max_grad_error({positive(4, 5, 8)}, [](Tape& t, auto& v) { return probe(t, ag::normalize_row_sums(v[0])); }) <
          1e-6);
    CHECK(max_grad_error({randn(4, 4, 9)}, [](Tape& t, auto& v) { return probe(t, ag::diag(v[0])); }) < 1e-6);
}

TEST_CASE("structural ops route gradients to the right entries") {
    const Mat a = randn(5, 6, 10);
    const Mat b = randn(5, 2, 11);
    // Overlapping slices of one input exercise block accumulation into an
    // existing gradient.
    CHECK(max_grad_error({a}, [](Tape& t, auto& v) {
              return probe(t, ag::slice_cols(v[0], 1, 3)) + probe(t, ag::slice_cols(v[0], 2, 4), 3) +
                     probe(t, ag::slice_rows(v[0], 0, 2), 4) + probe(t, ag::slice_rows(v[0], 1, 4), 5);
          }) < 1e-6);
    CHECK(max_grad_error({a, b}, [](Tape& t, auto& v) {
              std::vector<Var> parts = {v[1], v[0], v[1]};
              return probe(t, ag::concat_cols(parts));
          }) < 1e-6);
    CHECK(max_grad_error({a, randn(2, 6, 12)}, [](Tape& t, auto& v) {
              std::vector<Var> parts = {v[0], v[1]};
              return probe(t, ag::concat_rows(parts));
          }) < 1e-6);
    CHECK(max_grad_error({a}, [](Tape& t, auto& v) {
              std::vector<Eigen::Index> rows = {4, 0, 4, 2};
              return probe(t, ag::gather_rows(v[0], rows));
          }) < 1e-6);
    CHECK(max_grad_error({a, randn(5, 6, 13)}, [](Tape& t, auto& v) {
              std::vector<Var> parts = {v[0], v[1], v[0]};
              return probe(t, ag::average(parts));
          }) < 1e-6);
}

TEST_CASE("tanh and sigmoid agree with libm") {
    Mat x(1, 7);
    x << -30.0, -2.5, -1e-9, 0.0, 1e-9, 0.7, 30.0;
    Tape t;
    Var v = t.constant(x);
    const Mat th = ag::tanh(v).value();
    const Mat sg = ag::sigmoid(v).value();
    for (int i = 0; i < x.cols(); ++i) {
        CHECK(th(0, i) == doctest::Approx(std::tanh(x(0, i))).epsilon(1e-12));
        CHECK(sg(0, i) == doctest::Approx(1.0 / (1.0 + std::exp(-x(0, i)))).epsilon(1e-14));
    }
    CHECK(th(0, 3) == 0.0);
}

TEST_CASE("a parameter used twice on one tape accumulates both paths") {
    ag::Parameter p{"w", Mat::Constant(1, 1, 3.0), Mat()};
    p.zero_grad();
    Tape t;
    Var a = t.param(p);
    Var b = t.param(p);
    t.backward(ag::sum(ag::mul(a, b)));
    CHECK(p.grad(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("shape mismatches raise ShapeError") {
    Tape t;
    Var a = t.constant(Mat::Zero(2, 3));
    Var b = t.constant(Mat::Zero(2, 2));
    CHECK_THROWS_AS(ag::matmul(a, a), ShapeError);
    CHECK_THROWS_AS(ag::add(a, b), ShapeError);
    CHECK_THROWS_AS(ag::diag(a), ShapeError);
    std::vector<Eigen::Index> bad = {5};
    CHECK_THROWS_AS(ag::gather_rows(a, bad), ShapeError);
}

TEST_CASE("lstm cell gradient and forget bias") {
    nn::ParameterStore store;
    Rng rng(3);
    nn::LstmCell cell(store, "cell", 3, 4, rng);
    const Mat b = cell.bias->value;
    CHECK(b.middleCols(4, 4).isApproxToConstant(1.0));
    CHECK(b.leftCols(4).isZero());

    const Mat x = randn(2, 3, 14);
    auto loss = [&](Tape& t) {
        nn::LstmState st = cell.zero_state(t, 2);
        st = cell.step(t, t.constant(x), st);
        st = cell.step(t, t.constant(x * 0.5), st);
        return probe(t, st.h) + probe(t, st.c, 5);
    };
    store.zero_grad();
    {
        Tape t;
        t.backward(loss(t));
    }
    double worst = 0.0;
    for (ag::Parameter* p : store.all()) {
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            double& v = p->value.data()[i];
            const double saved = v;
            v = saved + 1e-6;
            Tape up;
            const double fu = loss(up).scalar();
            v = saved - 1e-6;
            Tape down;
            const double fd = loss(down).scalar();
            v = saved;
            const double num = (fu - fd) / 2e-6;
            const double a = p->grad.data()[i];
            worst = std::max(worst, std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-3}));
        }
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("adam moves parameters against the gradient") {
    nn::ParameterStore store;
    auto& p = store.create("p", Mat::Constant(2, 2, 1.0));
    store.zero_grad();
    p.grad.setConstant(0.5);
    nn::Adam adam({0.1});
    adam.step(store);
    CHECK(p.value(0, 0) == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(adam.steps() == 1);
}
