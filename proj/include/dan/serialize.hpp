#pragma once

#include "dan/network.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>

namespace dan {

enum class ArchiveErrorCode {
  IoError,
  BadMagic,
  VersionMismatch,
  Truncated,
  Inconsistent,  // manifest and blob disagree
};

class ArchiveError : public std::runtime_error {
 public:
  ArchiveError(ArchiveErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  ArchiveErrorCode code() const { return code_; }

 private:
  ArchiveErrorCode code_;
};

/// Writes `path` (JSON manifest: architecture, task registry, alpha binding,
/// freeze flags) and `path`.bin (tensor blob: magic "DANW"). Round trip
/// preserves every tensor bit-exactly.
void save_model(const DanNetwork& net, const std::filesystem::path& path);

DanNetwork load_model(const std::filesystem::path& path);

}  // namespace dan
