#pragma once

#include "dcl/config.hpp"
#include "dcl/nn.hpp"
#include "dcl/synthdata.hpp"

#include <span>
#include <vector>

namespace dcl::enc {

using ag::Mat;
using ag::Tape;
using ag::Var;

// Maps raw clips into the d-dimensional feature spaces: a time-distributed
// video map (tanh(x W + b) per frame), an audio map of the same form, and a
// learned question embedding table.
class Encoders {
public:
    Encoders() = default;
    Encoders(nn::ParameterStore& store, const Config& config, int question_count, Rng& rng);

    // steps[t] is N x d_raw; returns T matrices of N x d.
    std::vector<Var> encode_video(Tape& tape, const std::vector<Var>& steps) const;
    // N x d_raw -> N x d
    Var encode_audio(Tape& tape, const Var& audio) const;
    // One row of the embedding table per id; throws LookupError when out of range.
    Var encode_question(Tape& tape, std::span<const int> question_ids) const;

    int question_count() const { return static_cast<int>(question_table_->value.rows()); }

private:
    nn::Linear video_;
    nn::Linear audio_;
    ag::Parameter* question_table_ = nullptr;
};

// Single-clip conveniences (T x d and d-vectors), mostly for inspection and tests.
Mat encode_video(const Encoders& enc, const synth::RawClip& clip);
Eigen::VectorXd encode_audio(const Encoders& enc, const synth::FloatVec& audio);
Eigen::VectorXd encode_question(const Encoders& enc, int question_id);

// Throws NumericError naming the first non-finite entry.
void require_finite(const Mat& m, const std::string& what);

} // namespace dcl::enc
