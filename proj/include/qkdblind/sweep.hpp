#pragma once

// Parameter sweeps producing plot-ready tables: click probability versus
// trigger energy or timing, operating point and thresholds versus blinding
// power, and threshold shifts versus bias voltage.

#include <array>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qkdblind/detector.hpp"
#include "qkdblind/electrothermal.hpp"
#include "qkdblind/session.hpp"

namespace qkdblind {

enum class SweepAxis { trigger_energy, timing_offset, blinding_power, v_bias_level };

std::string to_string(SweepAxis a);
SweepAxis parse_sweep_axis(std::string_view text);

/// "start:stop:step" (inclusive of stop within half a step) or "a,b,c".
std::vector<double> parse_grid(std::string_view text);

/// Everything a sweep needs beyond the session configuration.
struct SweepContext {
  ScenarioConfig scenario;
  /// Threshold curves of each efficiency level, for the blinding-power axis.
  std::vector<ThresholdCurves> curves;
  std::array<CircuitParams, 2> circuits;
  std::vector<GainCurve> gains;  // one per detector
  /// Monte Carlo trials per grid point and detector/level cell.
  std::uint64_t batch = 10000;
};

struct SweepTable {
  std::vector<std::string> columns;
  /// Empty optional = value undefined at this point (written as a blank cell).
  std::vector<std::vector<std::optional<double>>> rows;

  std::size_t column(std::string_view name) const;
};

SweepTable run_sweep(const SweepContext& ctx, SweepAxis axis, const std::vector<double>& grid);

/// `header_comment` lines are written first, each prefixed with "# ".
void write_sweep_csv(std::ostream& out, const SweepTable& table,
                     const std::vector<std::string>& header_comment = {});

}  // namespace qkdblind
