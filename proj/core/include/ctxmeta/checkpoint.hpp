#pragma once

#include <cstdint>
#include <string>

#include "ctxmeta/model.hpp"
#include "ctxmeta/trainer.hpp"

namespace ctxmeta {

/// Binary checkpoint layout, all integers little-endian:
///   magic "CTXMCKPT" | u32 version | kind string | config record (JSON text)
///   | u64 entry count | entries (name, u32 rank, u64 dims, f64 payload) | u32 CRC-32 of all prior bytes
/// Strings are u32 length + bytes. Doubles are stored as their IEEE-754 bit patterns, so a
/// round trip is bit-exact.
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes to a sibling temporary file and renames it, so a failed save leaves no partial file.
void save_checkpoint(const std::string& path, const ModelParams& m, const std::string& config_hash = {});
void save_checkpoint(const std::string& path, const FlatClassifier& f, const std::string& config_hash = {});

/// Kind string stored in a checkpoint ("concept-model" or "flat-classifier"). Throws like the loaders.
std::string checkpoint_kind(const std::string& path);

/// Throws FormatError (bad magic or layout), VersionError, CorruptionError (checksum or
/// truncation) and IoError (unreadable file).
ModelParams load_checkpoint(const std::string& path);
/// Also throws CheckpointMismatchError naming the first dimension that differs from `expected`.
ModelParams load_checkpoint(const std::string& path, const ModelConfig& expected);
FlatClassifier load_flat_checkpoint(const std::string& path);

/// Config hash recorded at save time (empty when none was given).
std::string checkpoint_config_hash(const std::string& path);

}  // namespace ctxmeta
