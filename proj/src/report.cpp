#include "qkdblind/report.hpp"

#include <filesystem>
#include <fstream>

namespace qkdblind {

int exit_code(Verdict v) {
  switch (v) {
    case Verdict::key_ok: return kExitOk;
    case Verdict::aborted_qber: return kExitAbortedQber;
    case Verdict::attack_detected: return kExitAttackDetected;
    case Verdict::bricked: return kExitBricked;
    case Verdict::failed_low_rate: return kExitFailedLowRate;
  }
  return kExitConfigError;
}

std::vector<std::string> provenance_lines(const std::string& config_hash, std::uint64_t seed) {
  return {"config_hash=" + config_hash, "seed=" + std::to_string(seed)};
}

nlohmann::json stamp(nlohmann::json artifact, const std::string& config_hash, std::uint64_t seed) {
  artifact["provenance"] = {{"config_hash", config_hash}, {"seed", seed}};
  return artifact;
}

void write_text_file(const std::string& path, const std::string& content) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
    if (ec) throw ConfigError(p.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ConfigError(path + ": cannot open for writing");
  out << content;
  if (!out) throw ConfigError(path + ": write failed");
}

std::string pretty(const nlohmann::json& j) { return j.dump(2) + "\n"; }

}  // namespace qkdblind
