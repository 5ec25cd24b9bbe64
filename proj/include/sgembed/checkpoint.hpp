#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "sgembed/gcn.hpp"

namespace sgembed {

/// File layout:
///   16 bytes  magic "SGEMBED-CKPT-V1\n"
///    8 bytes  header length N, little-endian
///    N bytes  JSON header (config, vocabulary and its hash, tensor table,
///             batch-norm statistics table, free-form metadata)
///   payload   little-endian IEEE-754 doubles addressed by the header offsets
inline constexpr char kCheckpointMagic[] = "SGEMBED-CKPT-V1\n";
inline constexpr int kCheckpointVersion = 1;

using CheckpointMeta = std::map<std::string, std::string>;

/// Optional constraints checked on load.
struct CheckpointExpectations {
  const Vocabulary* vocab = nullptr;
  const ModelConfig* config = nullptr;
};

/// Writes atomically (temporary file, then rename).
void save_checkpoint(const GcnModel& model, const std::filesystem::path& path,
                     const CheckpointMeta& meta = {});

/// Throws CheckpointError(kCheckpointCorrupt) for truncated or malformed files
/// and CheckpointError(kCheckpointMismatch) for version, vocabulary or
/// configuration mismatches.
GcnModel load_checkpoint(const std::filesystem::path& path,
                         const CheckpointExpectations& expect = {},
                         CheckpointMeta* meta = nullptr);

}  // namespace sgembed
