#pragma once
/*
 * Small trainable layers on top of the autograd tape, plus the parameter
 * registry and the Adam optimizer.
 */

#include "dcl/autograd.hpp"
#include "dcl/rng.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace dcl::nn {

using ag::Mat;
using ag::Parameter;
using ag::Tape;
using ag::Var;

// Owns every parameter of a model, in registration order. Order is part of
// the checkpoint format, so it must be deterministic.
class ParameterStore {
public:
    Parameter& create(const std::string& name, Mat init, bool trainable = true);
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<Parameter*> all();
    std::vector<const Parameter*> all() const;
    size_t size() const { return params_.size(); }
    size_t scalar_count() const;

    void zero_grad();

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::map<std::string, size_t> index_;
};

// Glorot-uniform weight initialization.
Mat glorot(Rng& rng, ag::Index fan_in, ag::Index fan_out);

struct Linear {
    Parameter* weight = nullptr;  // in x out
    Parameter* bias = nullptr;    // 1 x out

    Linear() = default;
    Linear(ParameterStore& store, const std::string& name, ag::Index in, ag::Index out, Rng& rng);

    Var operator()(Tape& tape, const Var& x) const;
    ag::Index in_features() const { return weight->value.rows(); }
    ag::Index out_features() const { return weight->value.cols(); }
};

// Two-layer perceptron with a tanh hidden layer and, optionally, a tanh output.
struct Mlp {
    Linear first;
    Linear second;
    bool tanh_output = true;

    Mlp() = default;
    Mlp(ParameterStore& store, const std::string& name, ag::Index in, ag::Index hidden, ag::Index out,
        Rng& rng, bool tanh_output = true);

    Var operator()(Tape& tape, const Var& x) const;
};

struct LstmState {
    Var h;
    Var c;
};

// Standard LSTM cell; gate order i, f, g, o. Forget-gate bias starts at 1.
struct LstmCell {
    Parameter* weight = nullptr;  // (in + hidden) x 4*hidden
    Parameter* bias = nullptr;    // 1 x 4*hidden
    ag::Index hidden = 0;

    LstmCell() = default;
    LstmCell(ParameterStore& store, const std::string& name, ag::Index in, ag::Index hidden, Rng& rng);

    LstmState zero_state(Tape& tape, ag::Index batch) const;
    LstmState step(Tape& tape, const Var& x, const LstmState& state) const;
};

// Bidirectional LSTM over a sequence of N x in matrices. Output step t is
// [forward_h_t | backward_h_t], N x 2*hidden.
struct BiLstm {
    LstmCell forward;
    LstmCell backward;

    BiLstm() = default;
    BiLstm(ParameterStore& store, const std::string& name, ag::Index in, ag::Index hidden, Rng& rng);

    std::vector<Var> operator()(Tape& tape, const std::vector<Var>& steps) const;
};

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    explicit Adam(AdamOptions options = {}) : opt_(options) {}

    // Updates every trainable parameter from its accumulated gradient.
    void step(ParameterStore& store);
    long steps() const { return t_; }

private:
    AdamOptions opt_;
    long t_ = 0;
    std::map<std::string, std::pair<Mat, Mat>> moments_;
};

} // namespace dcl::nn
