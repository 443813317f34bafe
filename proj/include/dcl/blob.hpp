#pragma once
/*
 * DCLD array blobs.
 *
 *   offset 0   4 bytes   magic "DCLD"
 *          4   u16       version (1)
 *          6   u8        rank
 *          7   u32[rank] dimension sizes
 *          .   f32[...]  row-major payload
 *
 * All integers and floats are little-endian.
 */

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dcl::blob {

inline constexpr char kMagic[4] = {'D', 'C', 'L', 'D'};
inline constexpr uint16_t kVersion = 1;

struct Blob {
    std::vector<uint32_t> shape;
    std::vector<float> data;

    size_t element_count() const;
    bool operator==(const Blob& other) const;
};

std::vector<uint8_t> encode(const Blob& b);
// `name` is only used in error messages.
Blob decode(std::span<const uint8_t> bytes, const std::string& name);

void write(const std::string& path, const Blob& b);
Blob read(const std::string& path);

std::vector<uint8_t> read_file(const std::string& path);

} // namespace dcl::blob
