#pragma once
/*
 * Reverse-mode automatic differentiation over dense double matrices.
 *
 * A Tape records every operation of one forward pass. Values are Eigen
 * matrices; batches are laid out row-major by sample (N x features).
 * Parameters live outside the tape and receive accumulated gradients when
 * Tape::backward() runs. A tape is single-use: build, backward, discard.
 */

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <string>
#include <vector>

namespace dcl::ag {

using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

struct Parameter {
    std::string name;
    Mat value;
    Mat grad;
    bool trainable = true;

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

// Handle to a node on a tape. Cheap to copy.
class Var {
public:
    Var() = default;

    const Mat& value() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    double scalar() const;

    Tape* tape() const { return tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    // Receives the node's own value and the gradient flowing into it.
    using BackwardFn = std::function<void(Tape&, const Mat& value, const Mat& grad)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Mat value);
    // One node per parameter per tape; repeated calls return the same Var.
    Var param(Parameter& p);

    // Appends a node computed from `inputs`. `backward` is skipped when no
    // input needs a gradient.
    Var record(Mat value, std::initializer_list<Var> inputs, BackwardFn backward);
    Var record(Mat value, std::span<const Var> inputs, BackwardFn backward);

    // Seeds d(loss)/d(loss) = 1 and propagates to every reachable parameter.
    void backward(const Var& loss);

    // Adds `g` into the gradient of node `v` (no-op when v needs no gradient).
    void accumulate(const Var& v, const Mat& g);
    // Adds `g` into the block of v's gradient starting at (row, col).
    void accumulate_block(const Var& v, Index row, Index col, const Mat& g);

    const Mat& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    // Gradient of a node after backward(); zero matrix if none reached it.
    Mat grad(const Var& v) const;
    bool needs_grad(const Var& v) const { return nodes_[static_cast<size_t>(v.id())].needs_grad; }
    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat value;
        Mat grad;
        bool needs_grad = false;
        bool has_grad = false;
        BackwardFn backward;
        Parameter* param = nullptr;
    };

    std::deque<Node> nodes_;
    std::unordered_map<const Parameter*, int> param_nodes_;
};

// ---- elementwise / linear algebra ----
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);
// a (N x C) + row (1 x C) broadcast over rows.
Var add_row(const Var& a, const Var& row);
// a (N x C) * row (1 x C) broadcast over rows.
Var mul_row(const Var& a, const Var& row);
// a (N x C) * col (N x 1) broadcast over columns.
Var mul_col(const Var& a, const Var& col);
Var transpose(const Var& a);

Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var softplus(const Var& a);
Var square(const Var& a);

// ---- reductions ----
Var sum(const Var& a);       // 1 x 1
Var mean(const Var& a);      // 1 x 1
Var row_sum(const Var& a);   // N x 1
Var col_mean(const Var& a);  // 1 x C
Var logsumexp_rows(const Var& a);  // N x 1
Var log_softmax_rows(const Var& a);
Var diag(const Var& a);      // square N x N -> N x 1

// ---- shape ----
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(const Var& a, Index start, Index count);
Var slice_rows(const Var& a, Index start, Index count);
Var gather_rows(const Var& a, std::span<const Index> rows);
// Elementwise mean of equally shaped matrices.
Var average(std::span<const Var> parts);

// ---- normalizations ----
// Divides each row by its L2 norm. Throws NumericError naming the first
// zero-norm row.
Var l2_normalize_rows(const Var& a);
// Divides each row by its sum. Rows must have positive sums.
Var normalize_row_sums(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

} // namespace dcl::ag
