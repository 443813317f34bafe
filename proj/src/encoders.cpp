#include "dcl/encoders.hpp"

#include "dcl/errors.hpp"

#include <cmath>

namespace dcl::enc {

void require_finite(const Mat& m, const std::string& what) {
    for (ag::Index j = 0; j < m.cols(); ++j) {
        for (ag::Index i = 0; i < m.rows(); ++i) {
            if (!std::isfinite(m(i, j))) {
                throw NumericError(what + ": non-finite value at (" + std::to_string(i) + ", " + std::to_string(j) +
                                   ")");
            }
        }
    }
}

Encoders::Encoders(nn::ParameterStore& store, const Config& config, int question_count, Rng& rng)
    : video_(store, "enc.video", config.d_raw, config.d, rng), audio_(store, "enc.audio", config.d_raw, config.d, rng) {
    video_.weight->trainable = config.train_video_encoder;
    video_.bias->trainable = config.train_video_encoder;
    question_table_ = &store.create("enc.question", rng.normal_matrix(question_count, config.d) * 0.5);
}

std::vector<Var> Encoders::encode_video(Tape& tape, const std::vector<Var>& steps) const {
    if (steps.empty()) {
        throw ShapeError("encode_video: empty sequence");
    }
    for (size_t t = 0; t < steps.size(); ++t) {
        require_finite(steps[t].value(), "encode_video frame " + std::to_string(t));
    }
    // All frames go through one matmul; the map is applied row by row, so
    // stacking does not couple frames.
    const ag::Index n = steps[0].rows();
    Var stacked = ag::concat_rows(steps);
    Var out = ag::tanh(video_(tape, stacked));
    std::vector<Var> result(steps.size());
    for (size_t t = 0; t < steps.size(); ++t) {
        result[t] = ag::slice_rows(out, static_cast<ag::Index>(t) * n, n);
    }
    return result;
}

Var Encoders::encode_audio(Tape& tape, const Var& audio) const {
    require_finite(audio.value(), "encode_audio");
    return ag::tanh(audio_(tape, audio));
}

Var Encoders::encode_question(Tape& tape, std::span<const int> question_ids) const {
    std::vector<ag::Index> rows;
    rows.reserve(question_ids.size());
    for (int q : question_ids) {
        if (q < 0 || q >= question_count()) {
            throw LookupError("question id " + std::to_string(q) + " not in embedding table of size " +
                              std::to_string(question_count()));
        }
        rows.push_back(q);
    }
    return ag::gather_rows(tape.param(*question_table_), rows);
}

Mat encode_video(const Encoders& enc, const synth::RawClip& clip) {
    Tape tape;
    std::vector<Var> steps;
    for (ag::Index t = 0; t < clip.frames.rows(); ++t) {
        steps.push_back(tape.constant(clip.frames.row(t).cast<double>()));
    }
    auto out = enc.encode_video(tape, steps);
    Mat m(static_cast<ag::Index>(out.size()), out[0].cols());
    for (size_t t = 0; t < out.size(); ++t) m.row(static_cast<ag::Index>(t)) = out[t].value().row(0);
    return m;
}

Eigen::VectorXd encode_audio(const Encoders& enc, const synth::FloatVec& audio) {
    Tape tape;
    Var a = tape.constant(audio.cast<double>().transpose());
    return enc.encode_audio(tape, a).value().row(0).transpose();
}

Eigen::VectorXd encode_question(const Encoders& enc, int question_id) {
    Tape tape;
    const int ids[] = {question_id};
    return enc.encode_question(tape, ids).value().row(0).transpose();
}

} // namespace dcl::enc
