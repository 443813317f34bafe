#include "dcl/blob.hpp"

#include "dcl/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace dcl::blob {

namespace {

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xFF));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
}

uint32_t get_u32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

} // namespace

size_t Blob::element_count() const {
    size_t n = 1;
    for (uint32_t s : shape) n *= s;
    return n;
}

bool Blob::operator==(const Blob& other) const {
    return shape == other.shape && data.size() == other.data.size() &&
           std::memcmp(data.data(), other.data.data(), data.size() * sizeof(float)) == 0;
}

std::vector<uint8_t> encode(const Blob& b) {
    if (b.shape.size() > 255) {
        throw ShapeError("blob rank exceeds 255");
    }
    if (b.element_count() != b.data.size()) {
        throw ShapeError("blob payload has " + std::to_string(b.data.size()) + " values, shape implies " +
                         std::to_string(b.element_count()));
    }
    std::vector<uint8_t> out;
    out.reserve(7 + 4 * b.shape.size() + 4 * b.data.size());
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    put_u16(out, kVersion);
    out.push_back(static_cast<uint8_t>(b.shape.size()));
    for (uint32_t s : b.shape) put_u32(out, s);
    for (float f : b.data) put_u32(out, std::bit_cast<uint32_t>(f));
    return out;
}

Blob decode(std::span<const uint8_t> bytes, const std::string& name) {
    if (bytes.size() < 7) {
        if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) != 0) {
            throw FormatError(name + ": bad magic (expected DCLD)");
        }
        throw CorruptionError(name + ": truncated header (" + std::to_string(bytes.size()) + " bytes)");
    }
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError(name + ": bad magic (expected DCLD)");
    }
    const uint16_t version = static_cast<uint16_t>(bytes[4] | (bytes[5] << 8));
    if (version != kVersion) {
        throw FormatError(name + ": unsupported version " + std::to_string(version));
    }
    const size_t rank = bytes[6];
    size_t pos = 7;
    if (bytes.size() < pos + 4 * rank) {
        throw CorruptionError(name + ": truncated shape header");
    }
    Blob b;
    b.shape.resize(rank);
    for (size_t i = 0; i < rank; ++i) {
        b.shape[i] = get_u32(bytes.data() + pos);
        pos += 4;
    }
    const size_t n = b.element_count();
    if (bytes.size() - pos != 4 * n) {
        throw CorruptionError(name + ": payload is " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                              std::to_string(4 * n));
    }
    b.data.resize(n);
    for (size_t i = 0; i < n; ++i) {
        b.data[i] = std::bit_cast<float>(get_u32(bytes.data() + pos));
        pos += 4;
    }
    return b;
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write(const std::string& path, const Blob& b) {
    const auto bytes = encode(b);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("write failed: " + path);
    }
}

Blob read(const std::string& path) {
    const auto bytes = read_file(path);
    return decode(bytes, path);
}

} // namespace dcl::blob
