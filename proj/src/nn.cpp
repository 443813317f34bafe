#include "dcl/nn.hpp"

#include "dcl/errors.hpp"

#include <cmath>

namespace dcl::nn {

Parameter& ParameterStore::create(const std::string& name, Mat init, bool trainable) {
    if (index_.count(name) != 0) {
        throw ConfigError("duplicate parameter name: " + name);
    }
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->value = std::move(init);
    p->trainable = trainable;
    p->zero_grad();
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw LookupError("unknown parameter: " + name);
    }
    return *params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw LookupError("unknown parameter: " + name);
    }
    return *params_[it->second];
}

std::vector<Parameter*> ParameterStore::all() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
    std::vector<const Parameter*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.get());
    return out;
}

size_t ParameterStore::scalar_count() const {
    size_t n = 0;
    for (const auto& p : params_) n += static_cast<size_t>(p->value.size());
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

Mat glorot(Rng& rng, ag::Index fan_in, ag::Index fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Mat w(fan_in, fan_out);
    for (ag::Index j = 0; j < fan_out; ++j) {
        for (ag::Index i = 0; i < fan_in; ++i) {
            w(i, j) = rng.uniform(-limit, limit);
        }
    }
    return w;
}

Linear::Linear(ParameterStore& store, const std::string& name, ag::Index in, ag::Index out, Rng& rng)
    : weight(&store.create(name + ".weight", glorot(rng, in, out))),
      bias(&store.create(name + ".bias", Mat::Zero(1, out))) {}

Var Linear::operator()(Tape& tape, const Var& x) const {
    return ag::add_row(ag::matmul(x, tape.param(*weight)), tape.param(*bias));
}

Mlp::Mlp(ParameterStore& store, const std::string& name, ag::Index in, ag::Index hidden, ag::Index out,
         Rng& rng, bool tanh_output_)
    : first(store, name + ".0", in, hidden, rng), second(store, name + ".1", hidden, out, rng),
      tanh_output(tanh_output_) {}

Var Mlp::operator()(Tape& tape, const Var& x) const {
    Var h = ag::tanh(first(tape, x));
    Var y = second(tape, h);
    return tanh_output ? ag::tanh(y) : y;
}

LstmCell::LstmCell(ParameterStore& store, const std::string& name, ag::Index in, ag::Index hidden_,
                   Rng& rng)
    : hidden(hidden_) {
    Mat b = Mat::Zero(1, 4 * hidden_);
    b.middleCols(hidden_, hidden_).setOnes();
    weight = &store.create(name + ".weight", glorot(rng, in + hidden_, 4 * hidden_));
    bias = &store.create(name + ".bias", std::move(b));
}

LstmState LstmCell::zero_state(Tape& tape, ag::Index batch) const {
    return {tape.constant(Mat::Zero(batch, hidden)), tape.constant(Mat::Zero(batch, hidden))};
}

LstmState LstmCell::step(Tape& tape, const Var& x, const LstmState& state) const {
    const Var parts[] = {x, state.h};
    Var gates = ag::add_row(ag::matmul(ag::concat_cols(parts), tape.param(*weight)), tape.param(*bias));
    Var i = ag::sigmoid(ag::slice_cols(gates, 0, hidden));
    Var f = ag::sigmoid(ag::slice_cols(gates, hidden, hidden));
    Var g = ag::tanh(ag::slice_cols(gates, 2 * hidden, hidden));
    Var o = ag::sigmoid(ag::slice_cols(gates, 3 * hidden, hidden));
    Var c = f * state.c + i * g;
    Var h = o * ag::tanh(c);
    return {h, c};
}

BiLstm::BiLstm(ParameterStore& store, const std::string& name, ag::Index in, ag::Index hidden, Rng& rng)
    : forward(store, name + ".fwd", in, hidden, rng), backward(store, name + ".bwd", in, hidden, rng) {}

std::vector<Var> BiLstm::operator()(Tape& tape, const std::vector<Var>& steps) const {
    const size_t T = steps.size();
    if (T == 0) {
        throw ShapeError("BiLstm: empty sequence");
    }
    const ag::Index n = steps[0].rows();
    std::vector<Var> fwd(T);
    std::vector<Var> bwd(T);
    LstmState s = forward.zero_state(tape, n);
    for (size_t t = 0; t < T; ++t) {
        s = forward.step(tape, steps[t], s);
        fwd[t] = s.h;
    }
    s = backward.zero_state(tape, n);
    for (size_t t = T; t-- > 0;) {
        s = backward.step(tape, steps[t], s);
        bwd[t] = s.h;
    }
    std::vector<Var> out(T);
    for (size_t t = 0; t < T; ++t) {
        const Var parts[] = {fwd[t], bwd[t]};
        out[t] = ag::concat_cols(parts);
    }
    return out;
}

void Adam::step(ParameterStore& store) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (Parameter* p : store.all()) {
        if (!p->trainable) {
            continue;
        }
        auto [it, inserted] = moments_.try_emplace(p->name);
        auto& [m, v] = it->second;
        if (inserted) {
            m = Mat::Zero(p->value.rows(), p->value.cols());
            v = Mat::Zero(p->value.rows(), p->value.cols());
        }
        m = opt_.beta1 * m + (1.0 - opt_.beta1) * p->grad;
        v = opt_.beta2 * v + (1.0 - opt_.beta2) * p->grad.cwiseAbs2();
        p->value.array() -= opt_.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + opt_.eps);
    }
}

} // namespace dcl::nn
