#pragma once
/*
 * Synthetic paired-object audiovisual QA data.
 *
 * Each object has a material (carried by its appearance and timbre codes)
 * and a motion type (carried only by how its frames evolve over time). A
 * question template scores each object from material and/or motion
 * attributes; the answer is the clip whose object scores higher. Test
 * objects never appear in train or val.
 */

#include "dcl/config.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dcl::synth {

using FloatMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using FloatVec = Eigen::VectorXf;

enum class QuestionTarget { Material, Motion, Mixed };

std::string to_string(QuestionTarget t);
QuestionTarget parse_question_target(const std::string& s);

struct ObjectSpec {
    int object_id = 0;
    int material = 0;     // -1 when unknown (ingested features)
    int motion_type = 0;  // -1 when unknown
    FloatVec appearance_code;
    FloatVec timbre_code;

    bool operator==(const ObjectSpec& o) const;
};

struct RawClip {
    int object_id = 0;
    FloatMat frames;  // T x d_raw (T x d for ingested features)
    FloatVec audio;   // d_raw (d for ingested features)

    bool operator==(const RawClip& o) const;
};

struct QASample {
    RawClip clip1;
    RawClip clip2;
    int question_id = 0;
    QuestionTarget question_target = QuestionTarget::Material;
    int label = 0;                 // 0 selects clip1, 1 selects clip2
    std::optional<FloatVec> text;  // only for ingested features

    bool operator==(const QASample& o) const;
};

// A question scores an object as
//   material_weights . material_attributes[material] + motion_weights . motion_attributes[motion].
struct QuestionTemplate {
    QuestionTarget target = QuestionTarget::Material;
    std::vector<double> material_weights;
    std::vector<double> motion_weights;

    bool operator==(const QuestionTemplate&) const = default;
};

// Latent "physics" and rendering constants shared by every split.
struct World {
    std::vector<std::vector<double>> material_attributes;  // M x 3
    std::vector<std::vector<double>> motion_attributes;    // K x 2
    std::vector<QuestionTemplate> templates;
    std::vector<std::vector<double>> appearance_centers;   // M x d_raw
    std::vector<std::vector<double>> timbre_centers;       // M x d_raw
    std::vector<std::vector<double>> motion_basis;         // d_raw x 2

    double score(const ObjectSpec& o, int question_id) const;
    // 0 if a scores strictly higher, 1 if b does, nullopt on a tie.
    std::optional<int> answer(const ObjectSpec& a, const ObjectSpec& b, int question_id) const;

    bool operator==(const World&) const = default;
};

struct DatasetSplit {
    int T = 0;
    int feature_dim = 0;  // d_raw, or d for ingested features
    bool precomputed = false;
    World world;
    std::vector<ObjectSpec> objects;
    std::vector<int> train_objects;
    std::vector<int> val_objects;
    std::vector<int> test_objects;
    std::vector<QASample> train;
    std::vector<QASample> val;
    std::vector<QASample> test;

    const ObjectSpec& object(int object_id) const;
    bool operator==(const DatasetSplit& o) const;
};

World make_world(const Config& config, uint64_t seed);

// `count` objects with ids first_id.. . Materials and motions come from
// independent generator streams.
std::vector<ObjectSpec> generate_objects(const Config& config, const World& world, uint64_t seed, int count,
                                         int first_id = 0);

// Renders one clip of `object`; fully determined by (config, world, clip_seed).
RawClip render_clip(const Config& config, const World& world, const ObjectSpec& object, uint64_t clip_seed);

// Motion trajectory (2-D displacement) of a motion type at frame t.
Eigen::Vector2d motion_trajectory(int motion_type, int t, int T);

DatasetSplit generate_dataset(const Config& config, uint64_t seed);

void write_dataset(const DatasetSplit& split, const std::string& dir);
DatasetSplit read_dataset(const std::string& dir);

// SHA-256 over the manifest and every blob in a written dataset directory.
std::string dataset_hash(const std::string& dir);

// Loads precomputed per-sample features listed in a JSON manifest; see README
// for the schema. Dimensions are checked against config.T and config.d.
DatasetSplit ingest_precomputed_features(const std::string& manifest_path, const Config& config);

// Plug-in estimate (nats) of the mutual information between two label arrays.
double empirical_mutual_information(const std::vector<int>& a, const std::vector<int>& b);

} // namespace dcl::synth
