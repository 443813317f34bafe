#include "dcl/synthdata.hpp"

#include "dcl/blob.hpp"
#include "dcl/errors.hpp"
#include "dcl/parallel.hpp"
#include "dcl/rng.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

namespace dcl::synth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kMaterialAttributes = 3;
constexpr int kMotionAttributes = 2;
constexpr int kManifestVersion = 1;

// Seed streams; keeps the pieces of the generator independent of each other.
constexpr uint64_t kStreamWorld = 1;
constexpr uint64_t kStreamObjectsMaterial = 2;
constexpr uint64_t kStreamObjectsMotion = 3;
constexpr uint64_t kStreamObjectsJitter = 4;
constexpr uint64_t kStreamPairs = 16;
constexpr uint64_t kStreamClips = 32;

const char* const kSplitNames[3] = {"train", "val", "test"};

std::vector<std::vector<double>> normal_table(Rng& rng, int rows, int cols) {
    std::vector<std::vector<double>> t(static_cast<size_t>(rows), std::vector<double>(static_cast<size_t>(cols)));
    for (auto& row : t) {
        for (double& v : row) v = rng.normal();
    }
    return t;
}

bool same_values(const FloatVec& a, const FloatVec& b) {
    return a.size() == b.size() && (a.array() == b.array()).all();
}

bool same_values(const FloatMat& a, const FloatMat& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

} // namespace

std::string to_string(QuestionTarget t) {
    switch (t) {
    case QuestionTarget::Material: return "material";
    case QuestionTarget::Motion: return "motion";
    case QuestionTarget::Mixed: return "mixed";
    }
    return "?";
}

QuestionTarget parse_question_target(const std::string& s) {
    if (s == "material") return QuestionTarget::Material;
    if (s == "motion") return QuestionTarget::Motion;
    if (s == "mixed") return QuestionTarget::Mixed;
    throw FormatError("unknown question target '" + s + "'");
}

bool ObjectSpec::operator==(const ObjectSpec& o) const {
    return object_id == o.object_id && material == o.material && motion_type == o.motion_type &&
           same_values(appearance_code, o.appearance_code) && same_values(timbre_code, o.timbre_code);
}

bool RawClip::operator==(const RawClip& o) const {
    return object_id == o.object_id && same_values(frames, o.frames) && same_values(audio, o.audio);
}

bool QASample::operator==(const QASample& o) const {
    if (text.has_value() != o.text.has_value()) return false;
    if (text && !same_values(*text, *o.text)) return false;
    return clip1 == o.clip1 && clip2 == o.clip2 && question_id == o.question_id &&
           question_target == o.question_target && label == o.label;
}

bool DatasetSplit::operator==(const DatasetSplit& o) const {
    return T == o.T && feature_dim == o.feature_dim && precomputed == o.precomputed && world == o.world &&
           objects == o.objects && train_objects == o.train_objects && val_objects == o.val_objects &&
           test_objects == o.test_objects && train == o.train && val == o.val && test == o.test;
}

const ObjectSpec& DatasetSplit::object(int object_id) const {
    for (const auto& o : objects) {
        if (o.object_id == object_id) return o;
    }
    throw LookupError("unknown object id " + std::to_string(object_id));
}

double World::score(const ObjectSpec& o, int question_id) const {
    if (question_id < 0 || question_id >= static_cast<int>(templates.size())) {
        throw LookupError("question id " + std::to_string(question_id) + " out of range");
    }
    const auto& q = templates[static_cast<size_t>(question_id)];
    double s = 0.0;
    const auto& ma = material_attributes.at(static_cast<size_t>(o.material));
    for (size_t i = 0; i < q.material_weights.size(); ++i) s += q.material_weights[i] * ma[i];
    const auto& mo = motion_attributes.at(static_cast<size_t>(o.motion_type));
    for (size_t i = 0; i < q.motion_weights.size(); ++i) s += q.motion_weights[i] * mo[i];
    return s;
}

std::optional<int> World::answer(const ObjectSpec& a, const ObjectSpec& b, int question_id) const {
    const double sa = score(a, question_id);
    const double sb = score(b, question_id);
    if (std::abs(sa - sb) < 1e-9) return std::nullopt;
    return sa > sb ? 0 : 1;
}

World make_world(const Config& config, uint64_t seed) {
    Rng rng(derive_seed(seed, kStreamWorld));
    World w;
    w.material_attributes = normal_table(rng, config.materials, kMaterialAttributes);
    w.motion_attributes = normal_table(rng, config.motions, kMotionAttributes);
    w.appearance_centers = normal_table(rng, config.materials, config.d_raw);
    w.timbre_centers = normal_table(rng, config.materials, config.d_raw);
    w.motion_basis = normal_table(rng, config.d_raw, 2);

    // Templates cycle through material-only, motion-only and mixed
    // questions; the second cycle asks the reversed ("less") question.
    for (int q = 0; q < config.question_templates; ++q) {
        const int r = q % 8;
        const double sign = ((q / 8) % 2 == 0) ? 1.0 : -1.0;
        QuestionTemplate t;
        t.material_weights.assign(kMaterialAttributes, 0.0);
        t.motion_weights.assign(kMotionAttributes, 0.0);
        if (r < 3) {
            t.target = QuestionTarget::Material;
            t.material_weights[static_cast<size_t>(r)] = sign;
        } else if (r < 5) {
            t.target = QuestionTarget::Motion;
            t.motion_weights[static_cast<size_t>(r - 3)] = sign;
        } else {
            t.target = QuestionTarget::Mixed;
            t.material_weights[static_cast<size_t>((r - 5) % kMaterialAttributes)] = sign;
            t.motion_weights[static_cast<size_t>((r - 5) % kMotionAttributes)] = sign;
        }
        w.templates.push_back(std::move(t));
    }
    return w;
}

std::vector<ObjectSpec> generate_objects(const Config& config, const World& world, uint64_t seed, int count,
                                         int first_id) {
    Rng material_rng(derive_seed(seed, kStreamObjectsMaterial));
    Rng motion_rng(derive_seed(seed, kStreamObjectsMotion));
    Rng jitter_rng(derive_seed(seed, kStreamObjectsJitter));
    std::vector<ObjectSpec> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        ObjectSpec o;
        o.object_id = first_id + i;
        o.material = static_cast<int>(material_rng.below(static_cast<uint64_t>(config.materials)));
        o.motion_type = static_cast<int>(motion_rng.below(static_cast<uint64_t>(config.motions)));
        const auto& center = world.appearance_centers[static_cast<size_t>(o.material)];
        const auto& timbre = world.timbre_centers[static_cast<size_t>(o.material)];
        o.appearance_code.resize(config.d_raw);
        o.timbre_code.resize(config.d_raw);
        for (int j = 0; j < config.d_raw; ++j) {
            const double jitter = jitter_rng.uniform(-config.jitter, config.jitter);
            o.appearance_code(j) = static_cast<float>(center[static_cast<size_t>(j)] + jitter);
            o.timbre_code(j) = static_cast<float>(timbre[static_cast<size_t>(j)]);
        }
        out.push_back(std::move(o));
    }
    return out;
}

Eigen::Vector2d motion_trajectory(int motion_type, int t, int T) {
    const double u = T > 1 ? static_cast<double>(t) / static_cast<double>(T - 1) : 0.0;
    const double two_pi = 2.0 * std::numbers::pi;
    switch (motion_type) {
    case 0: return {0.0, 0.0};                                                     // still
    case 1: return {2.0 * u - 1.0, 0.0};                                           // slide
    case 2: return {0.0, 2.0 * std::abs(std::sin(two_pi * u)) - 1.0};              // bounce
    case 3: return {std::cos(two_pi * u), std::sin(two_pi * u)};                   // spin
    case 4: return {0.0, 1.0 - 2.0 * u * u};                                       // fall
    default: {
        // Further motion types: harmonics of increasing frequency.
        const double f = static_cast<double>(motion_type - 3);
        return {std::sin(two_pi * f * u), std::cos(std::numbers::pi * f * u)};
    }
    }
}

RawClip render_clip(const Config& config, const World& world, const ObjectSpec& object, uint64_t clip_seed) {
    Rng rng(clip_seed);
    RawClip clip;
    clip.object_id = object.object_id;
    clip.frames.resize(config.T, config.d_raw);
    for (int t = 0; t < config.T; ++t) {
        const Eigen::Vector2d r = motion_trajectory(object.motion_type, t, config.T);
        for (int j = 0; j < config.d_raw; ++j) {
            const auto& basis = world.motion_basis[static_cast<size_t>(j)];
            const double motion = config.motion_amplitude * (basis[0] * r(0) + basis[1] * r(1));
            clip.frames(t, j) =
                static_cast<float>(object.appearance_code(j) + motion + config.frame_noise * rng.normal());
        }
    }
    clip.audio.resize(config.d_raw);
    for (int j = 0; j < config.d_raw; ++j) {
        clip.audio(j) = static_cast<float>(object.timbre_code(j) + config.audio_noise * rng.normal());
    }
    return clip;
}

namespace {

struct PairPlan {
    int object1;
    int object2;
    int question_id;
};

std::vector<QASample> generate_split_samples(const Config& config, const World& world,
                                             const std::vector<ObjectSpec>& objects,
                                             const std::vector<int>& ids, int n, int split_index,
                                             uint64_t seed) {
    auto find = [&](int id) -> const ObjectSpec& { return objects[static_cast<size_t>(id)]; };

    // Every unordered (object pair, template) whose answer is not a tie.
    std::vector<PairPlan> candidates;
    for (size_t a = 0; a < ids.size(); ++a) {
        for (size_t b = a + 1; b < ids.size(); ++b) {
            for (int q = 0; q < config.question_templates; ++q) {
                if (world.answer(find(ids[a]), find(ids[b]), q)) {
                    candidates.push_back({ids[a], ids[b], q});
                }
            }
        }
    }
    if (static_cast<size_t>(n) > candidates.size()) {
        throw ConfigError(std::string(kSplitNames[split_index]) + " split requests " + std::to_string(n) +
                          " samples but only " + std::to_string(candidates.size()) +
                          " distinct non-tied (object pair, question) combinations exist");
    }

    Rng rng(derive_seed(seed, kStreamPairs + static_cast<uint64_t>(split_index)));
    std::shuffle(candidates.begin(), candidates.end(), rng.engine());
    candidates.resize(static_cast<size_t>(n));

    std::vector<int> labels(static_cast<size_t>(n));
    for (size_t i = 0; i < candidates.size(); ++i) {
        if (rng.below(2) == 1) std::swap(candidates[i].object1, candidates[i].object2);
        labels[i] = *world.answer(find(candidates[i].object1), find(candidates[i].object2), candidates[i].question_id);
    }

    // Rebalance: present majority-label pairs in the opposite order until the
    // label counts differ by at most one.
    std::vector<size_t> order(static_cast<size_t>(n));
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng.engine());
    long ones = std::count(labels.begin(), labels.end(), 1);
    const long target = n / 2;
    for (size_t i : order) {
        if (ones == target || ones == n - target) break;
        const int majority = ones > n - ones ? 1 : 0;
        if (labels[i] == majority) {
            std::swap(candidates[i].object1, candidates[i].object2);
            labels[i] = 1 - labels[i];
            ones += majority == 1 ? -1 : 1;
        }
    }

    std::vector<QASample> samples(static_cast<size_t>(n));
    const uint64_t stream_base = kStreamClips + (static_cast<uint64_t>(split_index) << 40);
    parallel_for(samples.size(), [&](size_t i) {
        const PairPlan& p = candidates[i];
        QASample& s = samples[i];
        s.clip1 = render_clip(config, world, find(p.object1), derive_seed(seed, stream_base + 2 * i));
        s.clip2 = render_clip(config, world, find(p.object2), derive_seed(seed, stream_base + 2 * i + 1));
        s.question_id = p.question_id;
        s.question_target = world.templates[static_cast<size_t>(p.question_id)].target;
        s.label = labels[i];
    });
    return samples;
}

} // namespace

DatasetSplit generate_dataset(const Config& config, uint64_t seed) {
    config.validate();
    DatasetSplit ds;
    ds.T = config.T;
    ds.feature_dim = config.d_raw;
    ds.world = make_world(config, seed);
    const int total = config.train_objects + config.val_objects + config.test_objects;
    ds.objects = generate_objects(config, ds.world, seed, total);

    // Objects are assigned to splits by id range, so test ids never occur in
    // train or val.
    for (int id = 0; id < total; ++id) {
        if (id < config.train_objects) {
            ds.train_objects.push_back(id);
        } else if (id < config.train_objects + config.val_objects) {
            ds.val_objects.push_back(id);
        } else {
            ds.test_objects.push_back(id);
        }
    }
    ds.train = generate_split_samples(config, ds.world, ds.objects, ds.train_objects, config.train_pairs, 0, seed);
    ds.val = generate_split_samples(config, ds.world, ds.objects, ds.val_objects, config.val_pairs, 1, seed);
    ds.test = generate_split_samples(config, ds.world, ds.objects, ds.test_objects, config.test_pairs, 2, seed);
    return ds;
}

// ---------------------------------------------------------------------------
// persistence

namespace {

blob::Blob vec_blob(const std::vector<const FloatVec*>& rows, uint32_t dim) {
    blob::Blob b;
    b.shape = {static_cast<uint32_t>(rows.size()), dim};
    b.data.reserve(rows.size() * dim);
    for (const FloatVec* r : rows) {
        if (r->size() != static_cast<Eigen::Index>(dim)) {
            throw ShapeError("vector of length " + std::to_string(r->size()) + " where " + std::to_string(dim) +
                             " expected");
        }
        b.data.insert(b.data.end(), r->data(), r->data() + r->size());
    }
    return b;
}

blob::Blob seq_blob(const std::vector<const FloatMat*>& seqs, uint32_t T, uint32_t dim) {
    blob::Blob b;
    b.shape = {static_cast<uint32_t>(seqs.size()), T, dim};
    b.data.reserve(seqs.size() * T * dim);
    for (const FloatMat* m : seqs) {
        if (m->rows() != static_cast<Eigen::Index>(T) || m->cols() != static_cast<Eigen::Index>(dim)) {
            throw ShapeError("frame array " + std::to_string(m->rows()) + "x" + std::to_string(m->cols()) +
                             " where " + std::to_string(T) + "x" + std::to_string(dim) + " expected");
        }
        // FloatMat is row-major, so its storage is already the blob layout.
        b.data.insert(b.data.end(), m->data(), m->data() + m->size());
    }
    return b;
}

blob::Blob read_checked(const fs::path& path, const std::vector<uint32_t>& shape) {
    blob::Blob b = blob::read(path.string());
    if (b.shape != shape) {
        std::string want;
        std::string got;
        for (auto s : shape) want += std::to_string(s) + " ";
        for (auto s : b.shape) got += std::to_string(s) + " ";
        throw ShapeError(path.string() + ": shape [" + got + "] does not match manifest [" + want + "]");
    }
    return b;
}

FloatVec row_of(const blob::Blob& b, size_t i) {
    const size_t dim = b.shape[1];
    FloatVec v(static_cast<Eigen::Index>(dim));
    std::copy_n(b.data.data() + i * dim, dim, v.data());
    return v;
}

FloatMat seq_of(const blob::Blob& b, size_t i) {
    const size_t T = b.shape[1];
    const size_t dim = b.shape[2];
    FloatMat m(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(dim));
    std::copy_n(b.data.data() + i * T * dim, T * dim, m.data());
    return m;
}

json world_json(const World& w) {
    json templates = json::array();
    for (const auto& t : w.templates) {
        templates.push_back({{"target", to_string(t.target)},
                             {"material_weights", t.material_weights},
                             {"motion_weights", t.motion_weights}});
    }
    return {{"material_attributes", w.material_attributes},
            {"motion_attributes", w.motion_attributes},
            {"appearance_centers", w.appearance_centers},
            {"timbre_centers", w.timbre_centers},
            {"motion_basis", w.motion_basis},
            {"templates", templates}};
}

World world_from_json(const json& j) {
    World w;
    w.material_attributes = j.at("material_attributes").get<std::vector<std::vector<double>>>();
    w.motion_attributes = j.at("motion_attributes").get<std::vector<std::vector<double>>>();
    w.appearance_centers = j.at("appearance_centers").get<std::vector<std::vector<double>>>();
    w.timbre_centers = j.at("timbre_centers").get<std::vector<std::vector<double>>>();
    w.motion_basis = j.at("motion_basis").get<std::vector<std::vector<double>>>();
    for (const auto& t : j.at("templates")) {
        QuestionTemplate q;
        q.target = parse_question_target(t.at("target").get<std::string>());
        q.material_weights = t.at("material_weights").get<std::vector<double>>();
        q.motion_weights = t.at("motion_weights").get<std::vector<double>>();
        w.templates.push_back(std::move(q));
    }
    return w;
}

const std::vector<QASample>& split_samples(const DatasetSplit& ds, int i) {
    return i == 0 ? ds.train : (i == 1 ? ds.val : ds.test);
}

std::vector<QASample>& split_samples(DatasetSplit& ds, int i) {
    return i == 0 ? ds.train : (i == 1 ? ds.val : ds.test);
}

const std::vector<int>& split_objects(const DatasetSplit& ds, int i) {
    return i == 0 ? ds.train_objects : (i == 1 ? ds.val_objects : ds.test_objects);
}

std::vector<int>& split_objects(DatasetSplit& ds, int i) {
    return i == 0 ? ds.train_objects : (i == 1 ? ds.val_objects : ds.test_objects);
}

} // namespace

void write_dataset(const DatasetSplit& ds, const std::string& dir) {
    fs::create_directories(dir);
    const fs::path root(dir);
    const auto T = static_cast<uint32_t>(ds.T);
    const auto D = static_cast<uint32_t>(ds.feature_dim);

    json manifest;
    manifest["format"] = "dcl-dataset";
    manifest["version"] = kManifestVersion;
    manifest["T"] = ds.T;
    manifest["feature_dim"] = ds.feature_dim;
    manifest["precomputed"] = ds.precomputed;
    manifest["world"] = world_json(ds.world);

    json objects = json::array();
    std::vector<const FloatVec*> appearance;
    std::vector<const FloatVec*> timbre;
    for (const auto& o : ds.objects) {
        objects.push_back({{"object_id", o.object_id}, {"material", o.material}, {"motion_type", o.motion_type}});
        appearance.push_back(&o.appearance_code);
        timbre.push_back(&o.timbre_code);
    }
    manifest["objects"] = objects;
    const uint32_t code_dim = ds.objects.empty() ? 0u : static_cast<uint32_t>(ds.objects[0].appearance_code.size());
    manifest["code_dim"] = code_dim;
    blob::write((root / "objects_appearance.dcld").string(), vec_blob(appearance, code_dim));
    blob::write((root / "objects_timbre.dcld").string(), vec_blob(timbre, code_dim));

    json counts;
    json splits;
    for (int si = 0; si < 3; ++si) {
        const auto& samples = split_samples(ds, si);
        const std::string name = kSplitNames[si];
        counts[name] = samples.size();
        json records = json::array();
        std::vector<const FloatMat*> f1;
        std::vector<const FloatMat*> f2;
        std::vector<const FloatVec*> a1;
        std::vector<const FloatVec*> a2;
        std::vector<const FloatVec*> text;
        for (const auto& s : samples) {
            records.push_back({{"object1", s.clip1.object_id},
                               {"object2", s.clip2.object_id},
                               {"question_id", s.question_id},
                               {"question_target", to_string(s.question_target)},
                               {"label", s.label}});
            f1.push_back(&s.clip1.frames);
            f2.push_back(&s.clip2.frames);
            a1.push_back(&s.clip1.audio);
            a2.push_back(&s.clip2.audio);
            if (ds.precomputed) {
                if (!s.text) throw ShapeError("precomputed sample without text feature");
                text.push_back(&*s.text);
            }
        }
        splits[name] = {{"object_ids", split_objects(ds, si)}, {"samples", records}};
        blob::write((root / (name + "_frames1.dcld")).string(), seq_blob(f1, T, D));
        blob::write((root / (name + "_frames2.dcld")).string(), seq_blob(f2, T, D));
        blob::write((root / (name + "_audio1.dcld")).string(), vec_blob(a1, D));
        blob::write((root / (name + "_audio2.dcld")).string(), vec_blob(a2, D));
        if (ds.precomputed) {
            blob::write((root / (name + "_text.dcld")).string(), vec_blob(text, D));
        }
    }
    manifest["counts"] = counts;
    manifest["splits"] = splits;

    std::ofstream out(root / "manifest.json");
    if (!out) {
        throw IoError("cannot write " + (root / "manifest.json").string());
    }
    out << manifest.dump(1) << "\n";
}

DatasetSplit read_dataset(const std::string& dir) {
    const fs::path root(dir);
    const fs::path manifest_path = root / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) {
        throw IoError("cannot open " + manifest_path.string());
    }
    json m;
    try {
        in >> m;
    } catch (const json::exception& e) {
        throw CorruptionError(manifest_path.string() + ": " + e.what());
    }
    if (m.value("format", "") != "dcl-dataset") {
        throw FormatError(manifest_path.string() + ": not a dcl-dataset manifest");
    }
    if (m.value("version", -1) != kManifestVersion) {
        throw FormatError(manifest_path.string() + ": unsupported manifest version");
    }

    DatasetSplit ds;
    try {
        ds.T = m.at("T").get<int>();
        ds.feature_dim = m.at("feature_dim").get<int>();
        ds.precomputed = m.at("precomputed").get<bool>();
        ds.world = world_from_json(m.at("world"));
        const auto T = static_cast<uint32_t>(ds.T);
        const auto D = static_cast<uint32_t>(ds.feature_dim);

        const auto& objects = m.at("objects");
        const auto code_dim = m.at("code_dim").get<uint32_t>();
        const auto n_obj = static_cast<uint32_t>(objects.size());
        const auto appearance = read_checked(root / "objects_appearance.dcld", {n_obj, code_dim});
        const auto timbre = read_checked(root / "objects_timbre.dcld", {n_obj, code_dim});
        for (size_t i = 0; i < objects.size(); ++i) {
            ObjectSpec o;
            o.object_id = objects[i].at("object_id").get<int>();
            o.material = objects[i].at("material").get<int>();
            o.motion_type = objects[i].at("motion_type").get<int>();
            o.appearance_code = row_of(appearance, i);
            o.timbre_code = row_of(timbre, i);
            ds.objects.push_back(std::move(o));
        }

        for (int si = 0; si < 3; ++si) {
            const std::string name = kSplitNames[si];
            const auto& split = m.at("splits").at(name);
            split_objects(ds, si) = split.at("object_ids").get<std::vector<int>>();
            const auto& records = split.at("samples");
            const auto n = static_cast<uint32_t>(records.size());
            if (m.at("counts").at(name).get<uint32_t>() != n) {
                throw CorruptionError(manifest_path.string() + ": count for " + name + " disagrees with sample list");
            }
            const auto f1 = read_checked(root / (name + "_frames1.dcld"), {n, T, D});
            const auto f2 = read_checked(root / (name + "_frames2.dcld"), {n, T, D});
            const auto a1 = read_checked(root / (name + "_audio1.dcld"), {n, D});
            const auto a2 = read_checked(root / (name + "_audio2.dcld"), {n, D});
            std::optional<blob::Blob> text;
            if (ds.precomputed) {
                text = read_checked(root / (name + "_text.dcld"), {n, D});
            }
            auto& samples = split_samples(ds, si);
            samples.resize(n);
            for (size_t i = 0; i < n; ++i) {
                const auto& r = records[i];
                QASample& s = samples[i];
                s.clip1.object_id = r.at("object1").get<int>();
                s.clip2.object_id = r.at("object2").get<int>();
                s.clip1.frames = seq_of(f1, i);
                s.clip2.frames = seq_of(f2, i);
                s.clip1.audio = row_of(a1, i);
                s.clip2.audio = row_of(a2, i);
                s.question_id = r.at("question_id").get<int>();
                s.question_target = parse_question_target(r.at("question_target").get<std::string>());
                s.label = r.at("label").get<int>();
                if (text) s.text = row_of(*text, i);
            }
        }
    } catch (const json::exception& e) {
        throw CorruptionError(manifest_path.string() + ": " + e.what());
    }
    return ds;
}

std::string dataset_hash(const std::string& dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (name == "manifest.json" || entry.path().extension() == ".dcld") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());

    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    for (const auto& f : files) {
        const auto name = f.filename().string();
        EVP_DigestUpdate(ctx, name.data(), name.size());
        const auto bytes = blob::read_file(f.string());
        EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);

    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// precomputed features

DatasetSplit ingest_precomputed_features(const std::string& manifest_path, const Config& config) {
    std::ifstream in(manifest_path);
    if (!in) {
        throw IoError("cannot open " + manifest_path);
    }
    json m;
    try {
        in >> m;
    } catch (const json::exception& e) {
        throw FormatError(manifest_path + ": " + e.what());
    }
    if (m.value("format", "") != "dcl-features") {
        throw FormatError(manifest_path + ": not a dcl-features manifest");
    }
    const fs::path base = fs::path(manifest_path).parent_path();
    const auto T = static_cast<uint32_t>(config.T);
    const auto D = static_cast<uint32_t>(config.d);

    auto load = [&](const json& entry, const char* key, const std::vector<uint32_t>& shape) {
        const fs::path p = base / entry.at(key).get<std::string>();
        blob::Blob b = blob::read(p.string());
        if (b.shape != shape) {
            std::string got;
            for (auto s : b.shape) got += (got.empty() ? "" : "x") + std::to_string(s);
            std::string want;
            for (auto s : shape) want += (want.empty() ? "" : "x") + std::to_string(s);
            throw ShapeError(p.string() + ": feature shape " + got + " does not match config " + want);
        }
        return b;
    };

    DatasetSplit ds;
    ds.T = config.T;
    ds.feature_dim = config.d;
    ds.precomputed = true;
    std::map<int, ObjectSpec> objects;
    std::set<int> split_ids[3];
    int next_id = 0;
    int max_question = 0;
    const json samples = m.value("samples", json::array());
    for (const auto& e : samples) {
        const auto& id_of = [&](const char* key) {
            if (e.contains(key)) return e.at(key).get<int>();
            return -1;
        };
        const std::string split = e.value("split", "test");
        int si = 0;
        for (; si < 3 && split != kSplitNames[si]; ++si) {
        }
        if (si == 3) {
            throw FormatError(manifest_path + ": unknown split '" + split + "'");
        }
        QASample s;
        const auto v1 = load(e, "video1", {T, D});
        const auto v2 = load(e, "video2", {T, D});
        const auto a1 = load(e, "audio1", {D});
        const auto a2 = load(e, "audio2", {D});
        const auto tx = load(e, "text", {D});
        s.clip1.frames = Eigen::Map<const FloatMat>(v1.data.data(), T, D);
        s.clip2.frames = Eigen::Map<const FloatMat>(v2.data.data(), T, D);
        s.clip1.audio = Eigen::Map<const FloatVec>(a1.data.data(), D);
        s.clip2.audio = Eigen::Map<const FloatVec>(a2.data.data(), D);
        s.text = Eigen::Map<const FloatVec>(tx.data.data(), D);
        s.label = e.at("label").get<int>();
        if (s.label != 0 && s.label != 1) {
            throw FormatError(manifest_path + ": label must be 0 or 1");
        }
        s.question_id = e.value("question_id", 0);
        max_question = std::max(max_question, s.question_id);
        s.question_target = parse_question_target(e.value("question_target", "mixed"));
        int o1 = id_of("object1");
        int o2 = id_of("object2");
        if (o1 < 0) o1 = 1000000 + next_id++;
        if (o2 < 0) o2 = 1000000 + next_id++;
        s.clip1.object_id = o1;
        s.clip2.object_id = o2;
        for (int id : {o1, o2}) {
            split_ids[si].insert(id);
            if (!objects.count(id)) {
                ObjectSpec o;
                o.object_id = id;
                o.material = -1;
                o.motion_type = -1;
                objects[id] = o;
            }
        }
        split_samples(ds, si).push_back(std::move(s));
    }
    for (auto& [id, o] : objects) ds.objects.push_back(o);
    for (int si = 0; si < 3; ++si) {
        split_objects(ds, si).assign(split_ids[si].begin(), split_ids[si].end());
    }
    ds.world.templates.resize(static_cast<size_t>(max_question + 1));
    return ds;
}

double empirical_mutual_information(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) {
        throw ShapeError("mutual information: label arrays differ in length");
    }
    if (a.empty()) return 0.0;
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> pa;
    std::map<int, double> pb;
    const double n = static_cast<double>(a.size());
    for (size_t i = 0; i < a.size(); ++i) {
        joint[{a[i], b[i]}] += 1.0 / n;
        pa[a[i]] += 1.0 / n;
        pb[b[i]] += 1.0 / n;
    }
    double mi = 0.0;
    for (const auto& [key, p] : joint) {
        mi += p * std::log(p / (pa[key.first] * pb[key.second]));
    }
    return mi;
}

} // namespace dcl::synth
