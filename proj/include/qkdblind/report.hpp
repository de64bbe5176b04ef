#pragma once

// Artifact plumbing shared by the command-line front-end: exit codes and
// the provenance stamp every output carries.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "qkdblind/session.hpp"

namespace qkdblind {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 1;
inline constexpr int kExitAbortedQber = 2;
inline constexpr int kExitAttackDetected = 3;
inline constexpr int kExitBricked = 4;
inline constexpr int kExitFailedLowRate = 5;

int exit_code(Verdict v);

/// Comment lines for CSV artifacts ("config_hash=...", "seed=...").
std::vector<std::string> provenance_lines(const std::string& config_hash, std::uint64_t seed);

/// Copy of `artifact` with a "provenance" member holding hash and seed.
nlohmann::json stamp(nlohmann::json artifact, const std::string& config_hash, std::uint64_t seed);

/// Writes `content` to `path`, creating parent directories.
void write_text_file(const std::string& path, const std::string& content);

/// Indented JSON with a trailing newline.
std::string pretty(const nlohmann::json& j);

}  // namespace qkdblind
