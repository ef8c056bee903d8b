#pragma once

#include <stdexcept>
#include <string>

#include "detcal/network.hpp"

namespace detcal {

struct PersistError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : PersistError {
  using PersistError::PersistError;
};
struct VersionError : PersistError {
  using PersistError::PersistError;
};
struct ChecksumError : PersistError {
  using PersistError::PersistError;
};
struct TruncatedError : PersistError {
  using PersistError::PersistError;
};

/// Checkpoint format v1: one JSON header line (format tag, version,
/// architecture descriptor, payload length, FNV-1a checksum) followed by
/// the raw little-endian 64-bit parameter payload, layers in declaration
/// order, each weight matrix column-major then its bias.
std::string serialize_checkpoint(const ModelParameters& params);
ModelParameters deserialize_checkpoint(const std::string& bytes);

/// Atomic write via temp file + rename.
void save_checkpoint(const ModelParameters& params, const std::string& path);
ModelParameters load_checkpoint(const std::string& path);

void write_file_atomic(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

}  // namespace detcal
