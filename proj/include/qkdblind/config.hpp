#pragma once

// JSON scenario files. Every dimensional key carries its unit as a suffix
// (energy_fJ, blinding_power_mW, v_bias_D0_V); unknown keys and keys missing
// their unit are rejected with the full field path.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qkdblind/attack.hpp"
#include "qkdblind/electrothermal.hpp"
#include "qkdblind/session.hpp"
#include "qkdblind/sweep.hpp"

namespace qkdblind {

struct Scenario {
  ScenarioConfig session;
  /// Threshold curves per efficiency level (single-point curves for inline sets).
  std::vector<ThresholdCurves> curves;
  std::array<CircuitParams, 2> circuits;
  std::vector<GainCurve> gains;
  /// Set when Eve's mixture was planned from the threshold data.
  std::optional<PlanOutcome> plan_outcome;
  nlohmann::json document;  // as parsed, seed override applied
  std::string config_hash;

  SweepContext sweep_context(std::uint64_t batch = 10000) const;
};

/// Relative paths inside the document resolve against `base_dir`.
Scenario parse_scenario(const nlohmann::json& doc, const std::string& base_dir = ".",
                        std::optional<std::uint64_t> seed_override = {});
Scenario load_scenario(const std::string& path, std::optional<std::uint64_t> seed_override = {});

/// 64-bit FNV-1a of the canonical (sorted-key, compact) dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& doc);

/// Circuit constants from a JSON object keyed like CircuitParams' fields
/// (v_bias_V, r_internal_ohm, ...); absent keys keep the values in `base`.
CircuitParams parse_circuit_params(const nlohmann::json& j, const std::string& path,
                                   CircuitParams base);

}  // namespace qkdblind
