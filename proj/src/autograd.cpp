#include "dcl/autograd.hpp"

#include "dcl/errors.hpp"

#include <cmath>
#include <sstream>

namespace dcl::ag {

namespace {

std::string shape_str(const Mat& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " +
                         shape_str(b.value()));
    }
}

Tape& tape_of(const Var& a) {
    if (!a.valid()) {
        throw Error("autograd: use of an unbound Var");
    }
    return *a.tape();
}

// Numerically stable log(1 + exp(x)).
double softplus_scalar(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

} // namespace

const Mat& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
    const Mat& v = value();
    if (v.size() != 1) {
        throw ShapeError("scalar(): node is " + shape_str(v));
    }
    return v(0, 0);
}

Var Tape::constant(Mat value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
        return Var(this, it->second);
    }
    Node n;
    n.value = p.value;
    n.needs_grad = true;
    n.param = &p;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size() - 1);
    param_nodes_.emplace(&p, id);
    return Var(this, id);
}

Var Tape::record(Mat value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
}

Var Tape::record(Mat value, std::span<const Var> inputs, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    for (const Var& in : inputs) {
        if (in.tape() != this) {
            throw Error("autograd: mixing Vars from different tapes");
        }
        n.needs_grad = n.needs_grad || nodes_[static_cast<size_t>(in.id())].needs_grad;
    }
    if (n.needs_grad) {
        n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::accumulate(const Var& v, const Mat& g) {
    Node& n = nodes_[static_cast<size_t>(v.id())];
    if (!n.needs_grad) {
        return;
    }
    if (!n.has_grad) {
        n.grad = g;
        n.has_grad = true;
    } else {
        n.grad += g;
    }
}

void Tape::accumulate_block(const Var& v, Index row, Index col, const Mat& g) {
    Node& n = nodes_[static_cast<size_t>(v.id())];
    if (!n.needs_grad) {
        return;
    }
    if (!n.has_grad) {
        n.grad = Mat::Zero(n.value.rows(), n.value.cols());
        n.has_grad = true;
    }
    n.grad.block(row, col, g.rows(), g.cols()) += g;
}

Mat Tape::grad(const Var& v) const {
    const Node& n = nodes_[static_cast<size_t>(v.id())];
    if (!n.has_grad) {
        return Mat::Zero(n.value.rows(), n.value.cols());
    }
    return n.grad;
}

void Tape::backward(const Var& loss) {
    if (loss.value().size() != 1) {
        throw ShapeError("backward(): loss must be 1x1, got " + shape_str(loss.value()));
    }
    accumulate(loss, Mat::Ones(1, 1));
    for (int i = loss.id(); i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (!n.has_grad) {
            continue;
        }
        if (n.backward) {
            n.backward(*this, n.value, n.grad);
        }
        if (n.param != nullptr) {
            if (n.param->grad.rows() != n.value.rows() || n.param->grad.cols() != n.value.cols()) {
                n.param->zero_grad();
            }
            n.param->grad += n.grad;
        }
    }
}

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + shape_str(a.value()) + " * " + shape_str(b.value()));
    }
    Mat out = a.value() * b.value();
    return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Mat&, const Mat& g) {
        if (t.needs_grad(a)) t.accumulate(a, g * b.value().transpose());
        if (t.needs_grad(b)) t.accumulate(b, a.value().transpose() * g);
    });
}

Var add(const Var& a, const Var& b) {
    require_same_shape("add", a, b);
    return tape_of(a).record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Mat&, const Mat& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape("sub", a, b);
    return tape_of(a).record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Mat&, const Mat& g) {
        t.accumulate(a, g);
        if (t.needs_grad(b)) t.accumulate(b, -g);
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape("mul", a, b);
    Mat out = a.value().cwiseProduct(b.value());
    return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Mat&, const Mat& g) {
        if (t.needs_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
        if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
    });
}

Var scale(const Var& a, double s) {
    return tape_of(a).record(a.value() * s, {a}, [a, s](Tape& t, const Mat&, const Mat& g) {
        t.accumulate(a, g * s);
    });
}

Var add_scalar(const Var& a, double s) {
    Mat out = a.value().array() + s;
    return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Mat&, const Mat& g) {
        t.accumulate(a, g);
    });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var add_row(const Var& a, const Var& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw ShapeError("add_row: " + shape_str(a.value()) + " + " + shape_str(row.value()));
    }
    Mat out = a.value().rowwise() + row.value().row(0);
    return tape_of(a).record(std::move(out), {a, row}, [a, row](Tape& t, const Mat&, const Mat& g) {
        t.accumulate(a, g);
        if (t.needs_grad(row)) t.accumulate(row, g.colwise().sum());
    });
}

Var mul_row(const Var& a, const Var& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw ShapeError("mul_row: " + shape_str(a.value()) + " * " + shape_str(row.value()));
    }
    Mat out = a.value().array().rowwise() * row.value().row(0).array();
    return tape_of(a).record(std::move(out), {a, row}, [a, row](Tape& t, const Mat&, const Mat& g) {
        if (t.needs_grad(a)) {
            Mat ga = g.array().rowwise() * row.value().row(0).array();
            t.accumulate(a, ga);
        }
        if (t.needs_grad(row)) t.accumulate(row, g.cwiseProduct(a.value()).colwise().sum());
    });
}

Var mul_col(const Var& a, const Var& col) {
    if (col.cols() != 1 || col.rows() != a.rows()) {
        throw ShapeError("mul_col: " + shape_str(a.value()) + " * " + shape_str(col.value()));
    }
    Mat out = a.value().array().colwise() * col.value().col(0).array();
    return tape_of(a).record(std::move(out), {a, col}, [a, col](Tape& t, const Mat&, const Mat& g) {
        if (t.needs_grad(a)) {
            Mat ga = g.array().colwise() * col.value().col(0).array();
            t.accumulate(a, ga);
        }
        if (t.needs_grad(col)) t.accumulate(col, g.cwiseProduct(a.value()).rowwise().sum());
    });
}

Var transpose(const Var& a) {
    return tape_of(a).record(a.value().transpose(), {a}, [a](Tape& t, const Mat&, const Mat& g) {
        t.accumulate(a, g.transpose());
    });
}

Var tanh(const Var& a) {
    // 2 sigmoid(2x) - 1: Eigen vectorizes exp but not tanh for doubles.
    Mat out = 2.0 * (1.0 + (-2.0 * a.value().array()).exp()).inverse() - 1.0;
    return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Mat& y, const Mat& g) {
        Mat ga = g.array() * (1.0 - y.array().square());
        t.accumulate(a, ga);
    });
}

Var sigmoid(const Var& a) {
    Mat out = (1.0 + (-a.value().array()).exp()).inverse();
    return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Mat& y, const Mat& g) {
        Mat ga = g.array() * y.array() * (1.0 - y.array());
        t.accumulate(a, ga);
    });
}

Var exp(const Var& a) {
    Mat out = a.value().array().exp();
    return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Mat& y, const Mat& g) {
        t.accumulate(a, g.cwiseProduct(y));
    });
}

Var log(const Var& a) {
    Mat out = a.value().array().log();
    return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Mat&, const Mat& g) {
        t.accumulate(a, g.cwiseQuotient(a.value()));
    });
}

Var softplus(const Var& a) {
    Mat out = a.value().unaryExpr(&softplus_scalar);
    return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Mat&, const Mat& g) {
        Mat s = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
        t.accumulate(a, g.cwiseProduct(s));
    });
}

Var square(const Var& a) {
    Mat out = a.value().array().square();
    return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Mat&, const Mat& g) {
        t.accumulate(a, 2.0 * g.cwiseProduct(a.value()));
    });
}

Var sum(const Var& a) {
    Mat out(1, 1);
    out(0, 0) = a.value().sum();
    return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Mat&, const Mat& g) {
        t.accumulate(a, Mat::Constant(a.rows(), a.cols(), g(0, 0)));
    });
}

Var mean(const Var& a) {
    const auto n = static_cast<double>(a.value().size());
    return scale(sum(a), 1.0 / n);
}

Var row_sum(const Var& a) {
    Mat out = a.value().rowwise().sum();
    return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Mat&, const Mat& g) {
        Mat ga = g.col(0).replicate(1, a.cols());
        t.accumulate(a, ga);
    });
}

Var col_mean(const Var& a) {
    Mat out = a.value().colwise().mean();
    return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Mat&, const Mat& g) {
        Mat ga = (g.row(0) / static_cast<double>(a.rows())).replicate(a.rows(), 1);
        t.accumulate(a, ga);
    });
}

Var logsumexp_rows(const Var& a) {
    const Mat& x = a.value();
    Eigen::VectorXd m = x.rowwise().maxCoeff();
    Mat out(x.rows(), 1);
    for (Index i = 0; i < x.rows(); ++i) {
        out(i, 0) = m(i) + std::log((x.row(i).array() - m(i)).exp().sum());
    }
    return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Mat& y, const Mat& g) {
        const Mat& x = a.value();
        Mat p = (x.colwise() - y.col(0)).array().exp();
        Mat ga = p.array().colwise() * g.col(0).array();
        t.accumulate(a, ga);
    });
}

Var log_softmax_rows(const Var& a) {
    const Mat& x = a.value();
    Mat out(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i) {
        const double m = x.row(i).maxCoeff();
        const double lse = m + std::log((x.row(i).array() - m).exp().sum());
        out.row(i) = x.row(i).array() - lse;
    }
    return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Mat& y, const Mat& g) {
        Mat p = y.array().exp();
        Eigen::VectorXd gs = g.rowwise().sum();
        Mat ga = g - Mat(p.array().colwise() * gs.array());
        t.accumulate(a, ga);
    });
}

Var diag(const Var& a) {
    if (a.rows() != a.cols()) {
        throw ShapeError("diag: matrix is " + shape_str(a.value()));
    }
    Mat out = a.value().diagonal();
    return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Mat&, const Mat& g) {
        Mat ga = Mat::Zero(a.rows(), a.cols());
        ga.diagonal() = g.col(0);
        t.accumulate(a, ga);
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) {
        throw ShapeError("concat_cols: no inputs");
    }
    const Index rows = parts[0].rows();
    Index cols = 0;
    for (const Var& p : parts) {
        if (p.rows() != rows) {
            throw ShapeError("concat_cols: row mismatch " + shape_str(parts[0].value()) + " vs " +
                             shape_str(p.value()));
        }
        cols += p.cols();
    }
    Mat out(rows, cols);
    Index c = 0;
    for (const Var& p : parts) {
        out.middleCols(c, p.cols()) = p.value();
        c += p.cols();
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return tape_of(parts[0]).record(std::move(out), parts, [inputs](Tape& t, const Mat&, const Mat& g) {
        Index c = 0;
        for (const Var& p : inputs) {
            if (t.needs_grad(p)) t.accumulate(p, g.middleCols(c, p.cols()));
            c += p.cols();
        }
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) {
        throw ShapeError("concat_rows: no inputs");
    }
    const Index cols = parts[0].cols();
    Index rows = 0;
    for (const Var& p : parts) {
        if (p.cols() != cols) {
            throw ShapeError("concat_rows: column mismatch " + shape_str(parts[0].value()) + " vs " +
                             shape_str(p.value()));
        }
        rows += p.rows();
    }
    Mat out(rows, cols);
    Index r = 0;
    for (const Var& p : parts) {
        out.middleRows(r, p.rows()) = p.value();
        r += p.rows();
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return tape_of(parts[0]).record(std::move(out), parts, [inputs](Tape& t, const Mat&, const Mat& g) {
        Index r = 0;
        for (const Var& p : inputs) {
            if (t.needs_grad(p)) t.accumulate(p, g.middleRows(r, p.rows()));
            r += p.rows();
        }
    });
}

Var slice_cols(const Var& a, Index start, Index count) {
    if (start < 0 || count < 0 || start + count > a.cols()) {
        throw ShapeError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") out of " + shape_str(a.value()));
    }
    Mat out = a.value().middleCols(start, count);
    return tape_of(a).record(std::move(out), {a}, [a, start, count](Tape& t, const Mat&, const Mat& g) {
        t.accumulate_block(a, 0, start, g);
    });
}

Var slice_rows(const Var& a, Index start, Index count) {
    if (start < 0 || count < 0 || start + count > a.rows()) {
        throw ShapeError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") out of " + shape_str(a.value()));
    }
    Mat out = a.value().middleRows(start, count);
    return tape_of(a).record(std::move(out), {a}, [a, start, count](Tape& t, const Mat&, const Mat& g) {
        t.accumulate_block(a, start, 0, g);
    });
}

Var gather_rows(const Var& a, std::span<const Index> rows) {
    Mat out(static_cast<Index>(rows.size()), a.cols());
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= a.rows()) {
            throw ShapeError("gather_rows: index " + std::to_string(rows[i]) + " out of " +
                             shape_str(a.value()));
        }
        out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
    }
    std::vector<Index> idx(rows.begin(), rows.end());
    return tape_of(a).record(std::move(out), {a}, [a, idx](Tape& t, const Mat&, const Mat& g) {
        Mat ga = Mat::Zero(a.rows(), a.cols());
        for (size_t i = 0; i < idx.size(); ++i) {
            ga.row(idx[i]) += g.row(static_cast<Index>(i));
        }
        t.accumulate(a, ga);
    });
}

Var average(std::span<const Var> parts) {
    if (parts.empty()) {
        throw ShapeError("average: no inputs");
    }
    Mat out = parts[0].value();
    for (size_t i = 1; i < parts.size(); ++i) {
        require_same_shape("average", parts[0], parts[i]);
        out += parts[i].value();
    }
    const double w = 1.0 / static_cast<double>(parts.size());
    out *= w;
    std::vector<Var> inputs(parts.begin(), parts.end());
    return tape_of(parts[0]).record(std::move(out), parts, [inputs, w](Tape& t, const Mat&, const Mat& g) {
        for (const Var& p : inputs) {
            if (t.needs_grad(p)) t.accumulate(p, g * w);
        }
    });
}

Var l2_normalize_rows(const Var& a) {
    const Mat& x = a.value();
    Eigen::VectorXd norms = x.rowwise().norm();
    for (Index i = 0; i < norms.size(); ++i) {
        if (!(norms(i) > 0.0) || !std::isfinite(norms(i))) {
            throw NumericError("cosine similarity undefined: row " + std::to_string(i) +
                               " has zero or non-finite norm");
        }
    }
    Mat out = x.array().colwise() / norms.array();
    return tape_of(a).record(std::move(out), {a}, [a, norms](Tape& t, const Mat& y, const Mat& g) {
        // d(x/|x|) = (g - y (y.g)) / |x|
        Eigen::VectorXd yg = y.cwiseProduct(g).rowwise().sum();
        Mat ga = (g - Mat(y.array().colwise() * yg.array())).array().colwise() / norms.array();
        t.accumulate(a, ga);
    });
}

Var normalize_row_sums(const Var& a) {
    const Mat& x = a.value();
    Eigen::VectorXd sums = x.rowwise().sum();
    for (Index i = 0; i < sums.size(); ++i) {
        if (!(sums(i) > 0.0)) {
            throw NumericError("normalize_row_sums: row " + std::to_string(i) + " has non-positive sum");
        }
    }
    Mat out = x.array().colwise() / sums.array();
    return tape_of(a).record(std::move(out), {a}, [a, sums](Tape& t, const Mat& y, const Mat& g) {
        // d(x_j / s) = (g_j - sum_k g_k y_k) / s
        Eigen::VectorXd gy = y.cwiseProduct(g).rowwise().sum();
        Mat ga = (g.colwise() - gy).array().colwise() / sums.array();
        t.accumulate(a, ga);
    });
}

} // namespace dcl::ag
