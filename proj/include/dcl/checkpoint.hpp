#pragma once
/*
 * Model checkpoints.
 *
 *   "DCLC"  u16 version
 *   u32 n, n bytes of config JSON
 *   i32 question_count, i32 feature_dim, u8 precomputed
 *   u32 parameter count, then per parameter:
 *       u16 name length, name, u32 rows, u32 cols, f64[rows*cols] column-major
 *   32-byte SHA-256 of everything above
 *
 * Integers and floats are little-endian. Values are stored at full double
 * precision, so a loaded model reproduces the saved one bit for bit.
 */

#include "dcl/fusion.hpp"

#include <memory>
#include <string>

namespace dcl::checkpoint {

inline constexpr uint16_t kVersion = 1;

void save(const fusion::Model& model, const std::string& path);

// Throws FormatError (wrong magic, unsupported version, parameter layout that
// does not match the stored config) or CorruptionError (truncated file,
// checksum mismatch). Messages name the file.
std::unique_ptr<fusion::Model> load(const std::string& path);

// Throws ConfigError when `requested` disagrees with the checkpoint's config
// on any field that changes parameter shapes or the mode.
void require_compatible(const Config& stored, const Config& requested, const std::string& path);

} // namespace dcl::checkpoint
