#include "doctest.h"
#include "test_util.hpp"

#include "dcl/blob.hpp"
#include "dcl/encoders.hpp"
#include "dcl/errors.hpp"
#include "dcl/synthdata.hpp"

#include <json.hpp>

#include <fstream>
#include <set>

using namespace dcl;
namespace fs = std::filesystem;

namespace {

Config small() {
    Config c = Config::tiny();
    c.train_pairs = 40;
    c.val_pairs = 10;
    c.test_pairs = 10;
    return c;
}

void write_bytes(const fs::path& p, const std::vector<uint8_t>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

} // namespace

TEST_CASE("blob encode/decode round-trips and rejects damage") {
    blob::Blob b;
    b.shape = {2, 3};
    b.data = {1.5f, -2.0f, 0.0f, 3.25f, 1e-30f, -7.0f};
    const auto bytes = blob::encode(b);
    CHECK(bytes.size() == 4 + 2 + 1 + 8 + 24);
    CHECK(blob::decode(bytes, "mem") == b);

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(blob::decode(bad_magic, "mem"), FormatError);
    auto bad_version = bytes;
    bad_version[4] = 9;
    CHECK_THROWS_AS(blob::decode(bad_version, "mem"), FormatError);
    std::vector<uint8_t> truncated(bytes.begin(), bytes.end() - 3);
    CHECK_THROWS_AS(blob::decode(truncated, "mem"), CorruptionError);

    const auto dir = test::scratch_dir("blob");
    blob::write((dir / "x.dcld").string(), b);
    CHECK(blob::read((dir / "x.dcld").string()) == b);
    CHECK_THROWS_AS(blob::read((dir / "missing.dcld").string()), IoError);
}

TEST_CASE("object generation invariants") {
    const Config c = small();
    const synth::World w = synth::make_world(c, 3);
    const auto objects = synth::generate_objects(c, w, 3, 200);
    for (const auto& o : objects) {
        const auto& center = w.appearance_centers[static_cast<size_t>(o.material)];
        for (int j = 0; j < c.d_raw; ++j) {
            CHECK(std::abs(o.appearance_code(j) - center[static_cast<size_t>(j)]) <= 0.1 + 1e-6);
        }
        const auto& timbre = w.timbre_centers[static_cast<size_t>(o.material)];
        for (int j = 0; j < c.d_raw; ++j) CHECK(o.timbre_code(j) == static_cast<float>(timbre[static_cast<size_t>(j)]));
        CHECK(o.motion_type >= 0);
        CHECK(o.motion_type < c.motions);
    }
    // Motions come from their own stream: changing the material count leaves
    // every motion draw unchanged.
    Config c2 = c;
    c2.materials = 3;
    const auto other = synth::generate_objects(c2, synth::make_world(c2, 3), 3, 200);
    for (size_t i = 0; i < objects.size(); ++i) CHECK(objects[i].motion_type == other[i].motion_type);

    std::vector<int> mat, mot;
    for (const auto& o : objects) {
        mat.push_back(o.material);
        mot.push_back(o.motion_type);
    }
    // plug-in bias alone is about (M-1)(K-1)/(2n) = 0.05 nats here
    CHECK(synth::empirical_mutual_information(mat, mot) < 0.15);
    CHECK(synth::empirical_mutual_information(mat, mat) > 1.0);
}

TEST_CASE("dataset splits, labels and determinism") {
    const Config c = small();
    const synth::DatasetSplit ds = synth::generate_dataset(c, 21);
    CHECK(ds == synth::generate_dataset(c, 21));
    CHECK(!(ds == synth::generate_dataset(c, 22)));
    CHECK(ds.train.size() == 40);
    CHECK(ds.val.size() == 10);
    CHECK(ds.test.size() == 10);

    std::set<int> tr(ds.train_objects.begin(), ds.train_objects.end());
    for (int id : ds.test_objects) CHECK(tr.count(id) == 0);
    for (int id : ds.val_objects) CHECK(tr.count(id) == 0);

    for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
        int ones = 0;
        for (const auto& s : *split) {
            CHECK(s.clip1.object_id != s.clip2.object_id);
            const auto answer = ds.world.answer(ds.object(s.clip1.object_id), ds.object(s.clip2.object_id), s.question_id);
            REQUIRE(answer.has_value());
            CHECK(*answer == s.label);
            CHECK(s.clip1.frames.rows() == c.T);
            CHECK(s.clip1.frames.cols() == c.d_raw);
            CHECK(s.clip1.frames.allFinite());
            ones += s.label;
        }
        CHECK(std::abs(2 * ones - static_cast<int>(split->size())) <= 1);
    }
}

TEST_CASE("dataset write/read round-trips bit-exactly") {
    const Config c = small();
    const synth::DatasetSplit ds = synth::generate_dataset(c, 5);
    const auto dir = test::scratch_dir("dataset");
    synth::write_dataset(ds, dir.string());
    const synth::DatasetSplit back = synth::read_dataset(dir.string());
    CHECK(back == ds);
    const std::string h = synth::dataset_hash(dir.string());
    CHECK(h.size() == 64);

    const auto dir2 = test::scratch_dir("dataset2");
    synth::write_dataset(back, dir2.string());
    CHECK(synth::dataset_hash(dir2.string()) == h);

    // damage one blob
    const auto victim = dir2 / "train_frames1.dcld";
    auto bytes = blob::read_file(victim.string());
    bytes.resize(bytes.size() - 8);
    write_bytes(victim, bytes);
    CHECK_THROWS_AS(synth::read_dataset(dir2.string()), CorruptionError);
    CHECK_THROWS_AS(synth::read_dataset((dir / "nope").string()), IoError);
}

TEST_CASE("precomputed feature manifests") {
    const Config c = Config::tiny();
    const auto dir = test::scratch_dir("features");
    Rng rng(4);
    auto put = [&](const std::string& name, std::vector<uint32_t> shape) {
        blob::Blob b;
        b.shape = shape;
        size_t n = 1;
        for (auto s : shape) n *= s;
        for (size_t i = 0; i < n; ++i) b.data.push_back(static_cast<float>(rng.normal()));
        blob::write((dir / name).string(), b);
        return name;
    };
    const auto T = static_cast<uint32_t>(c.T);
    const auto D = static_cast<uint32_t>(c.d);
    nlohmann::json m;
    m["format"] = "dcl-features";
    for (int i = 0; i < 3; ++i) {
        const std::string p = "s" + std::to_string(i) + "_";
        m["samples"].push_back({{"split", i == 2 ? "test" : "train"},
                                {"video1", put(p + "v1.dcld", {T, D})},
                                {"video2", put(p + "v2.dcld", {T, D})},
                                {"audio1", put(p + "a1.dcld", {D})},
                                {"audio2", put(p + "a2.dcld", {D})},
                                {"text", put(p + "t.dcld", {D})},
                                {"label", i % 2},
                                {"question_id", i}});
    }
    std::ofstream((dir / "features.json").string()) << m.dump();
    const auto ds = synth::ingest_precomputed_features((dir / "features.json").string(), c);
    CHECK(ds.precomputed);
    CHECK(ds.train.size() == 2);
    CHECK(ds.test.size() == 1);
    CHECK(ds.train[1].label == 1);
    REQUIRE(ds.train[0].text.has_value());
    CHECK(ds.train[0].clip1.frames.rows() == c.T);

    Config wrong = c;
    wrong.d = c.d + 1;
    CHECK_THROWS_AS(synth::ingest_precomputed_features((dir / "features.json").string(), wrong), ShapeError);
    m["format"] = "other";
    std::ofstream((dir / "bad.json").string()) << m.dump();
    CHECK_THROWS_AS(synth::ingest_precomputed_features((dir / "bad.json").string(), c), FormatError);
}

TEST_CASE("video encoder is applied frame by frame") {
    const Config c = Config::tiny();
    nn::ParameterStore store;
    Rng rng(8);
    enc::Encoders e(store, c, 4, rng);
    const synth::DatasetSplit ds = synth::generate_dataset(small(), 2);
    synth::RawClip clip = ds.train[0].clip1;
    const ag::Mat f = enc::encode_video(e, clip);
    CHECK(f.rows() == c.T);
    CHECK(f.cols() == c.d);
    // reversing time reverses the encoded sequence
    synth::RawClip rev = clip;
    rev.frames = clip.frames.colwise().reverse();
    CHECK(enc::encode_video(e, rev) == f.colwise().reverse());
    CHECK_THROWS_AS(enc::encode_question(e, 4), LookupError);
    CHECK(enc::encode_question(e, 3).size() == c.d);
}
