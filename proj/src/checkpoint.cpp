#include "dcl/checkpoint.hpp"

#include "dcl/blob.hpp"
#include "dcl/errors.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>

namespace dcl::checkpoint {

namespace {

constexpr char kMagic[4] = {'D', 'C', 'L', 'C'};
constexpr size_t kDigestSize = 32;

std::vector<uint8_t> sha256(const uint8_t* data, size_t n) {
    std::vector<uint8_t> out(kDigestSize);
    unsigned int len = 0;
    if (EVP_Digest(data, n, out.data(), &len, EVP_sha256(), nullptr) != 1 || len != kDigestSize) {
        throw IoError("SHA-256 computation failed");
    }
    return out;
}

class Writer {
public:
    template <typename T>
    void uint(T v) {
        for (size_t i = 0; i < sizeof(T); ++i) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { uint(std::bit_cast<uint64_t>(v)); }
    void raw(const void* p, size_t n) {
        const auto* b = static_cast<const uint8_t*>(p);
        bytes.insert(bytes.end(), b, b + n);
    }

    std::vector<uint8_t> bytes;
};

class Reader {
public:
    Reader(const std::vector<uint8_t>& b, size_t end, std::string path) : bytes_(b), end_(end), path_(std::move(path)) {}

    template <typename T>
    T uint() {
        need(sizeof(T));
        T v = 0;
        for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
        pos_ += sizeof(T);
        return v;
    }
    double f64() { return std::bit_cast<double>(uint<uint64_t>()); }
    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == end_; }

private:
    void need(size_t n) const {
        if (pos_ + n > end_) throw CorruptionError(path_ + ": checkpoint truncated");
    }

    const std::vector<uint8_t>& bytes_;
    size_t end_;
    size_t pos_ = 0;
    std::string path_;
};

} // namespace

void save(const fusion::Model& model, const std::string& path) {
    Writer w;
    w.raw(kMagic, 4);
    w.uint<uint16_t>(kVersion);
    const std::string cfg = to_json(model.config).dump();
    w.uint<uint32_t>(static_cast<uint32_t>(cfg.size()));
    w.raw(cfg.data(), cfg.size());
    w.uint<uint32_t>(static_cast<uint32_t>(model.shape.question_count));
    w.uint<uint32_t>(static_cast<uint32_t>(model.shape.feature_dim));
    w.uint<uint8_t>(model.shape.precomputed ? 1 : 0);
    const auto params = model.store.all();
    w.uint<uint32_t>(static_cast<uint32_t>(params.size()));
    for (const ag::Parameter* p : params) {
        w.uint<uint16_t>(static_cast<uint16_t>(p->name.size()));
        w.raw(p->name.data(), p->name.size());
        w.uint<uint32_t>(static_cast<uint32_t>(p->value.rows()));
        w.uint<uint32_t>(static_cast<uint32_t>(p->value.cols()));
        for (ag::Index i = 0; i < p->value.size(); ++i) w.f64(p->value.data()[i]);
    }
    const auto digest = sha256(w.bytes.data(), w.bytes.size());
    w.raw(digest.data(), digest.size());

    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write checkpoint " + path);
    }
    out.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<std::streamsize>(w.bytes.size()));
    if (!out) {
        throw IoError("failed writing checkpoint " + path);
    }
}

std::unique_ptr<fusion::Model> load(const std::string& path) {
    const std::vector<uint8_t> bytes = blob::read_file(path);
    if (bytes.size() < 6 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError(path + ": not a checkpoint (bad magic)");
    }
    const uint16_t version = static_cast<uint16_t>(bytes[4] | (bytes[5] << 8));
    if (version != kVersion) {
        throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kVersion) + ")");
    }
    if (bytes.size() < 6 + kDigestSize) {
        throw CorruptionError(path + ": checkpoint truncated");
    }
    const size_t body = bytes.size() - kDigestSize;
    if (sha256(bytes.data(), body) != std::vector<uint8_t>(bytes.begin() + static_cast<std::ptrdiff_t>(body), bytes.end())) {
        throw CorruptionError(path + ": checkpoint checksum mismatch");
    }

    Reader r(bytes, body, path);
    r.str(6);
    Config config;
    try {
        config = config_from_json(nlohmann::json::parse(r.str(r.uint<uint32_t>())));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": bad config block: " + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(path + ": incompatible config block: " + e.what());
    }
    fusion::DataShape shape;
    shape.question_count = static_cast<int>(r.uint<uint32_t>());
    shape.feature_dim = static_cast<int>(r.uint<uint32_t>());
    shape.precomputed = r.uint<uint8_t>() != 0;

    auto model = std::make_unique<fusion::Model>(config, shape);
    auto params = model->store.all();
    const uint32_t count = r.uint<uint32_t>();
    if (count != params.size()) {
        throw FormatError(path + ": checkpoint has " + std::to_string(count) + " parameters, model expects " +
                          std::to_string(params.size()));
    }
    for (ag::Parameter* p : params) {
        const std::string name = r.str(r.uint<uint16_t>());
        const uint32_t rows = r.uint<uint32_t>();
        const uint32_t cols = r.uint<uint32_t>();
        if (name != p->name || rows != p->value.rows() || cols != p->value.cols()) {
            throw FormatError(path + ": parameter " + name + " does not match model layout (" + p->name + ")");
        }
        for (ag::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = r.f64();
    }
    if (!r.done()) {
        throw CorruptionError(path + ": trailing bytes after parameters");
    }
    return model;
}

void require_compatible(const Config& stored, const Config& requested, const std::string& path) {
    auto check = [&](bool same, const char* field) {
        if (!same) {
            throw ConfigError(path + ": checkpoint was trained with a different " + std::string(field));
        }
    };
    check(stored.T == requested.T, "T");
    check(stored.d == requested.d, "d");
    check(stored.d_raw == requested.d_raw, "d_raw");
    check(stored.d_s == requested.d_s, "d_s");
    check(stored.d_z == requested.d_z, "d_z");
    check(stored.hidden == requested.hidden, "hidden");
    check(stored.fusion_width == requested.fusion_width, "fusion_width");
    check(stored.mode == requested.mode, "mode");
}

} // namespace dcl::checkpoint
