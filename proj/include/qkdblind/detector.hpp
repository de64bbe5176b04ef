#pragma once

// Click model for Bob's two gated InGaAs APDs: Geiger-mode single-photon
// detection for honest traffic and threshold-driven classical clicks once
// the detectors are blinded into linear mode.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "qkdblind/error.hpp"
#include "qkdblind/rng.hpp"

namespace qkdblind {

class DetectorId {
 public:
  constexpr explicit DetectorId(int index) : index_(index) {
    if (index != 0 && index != 1) throw ParameterError("detector index must be 0 or 1");
  }

  constexpr int index() const { return index_; }
  constexpr DetectorId other() const { return DetectorId(1 - index_); }
  std::string name() const { return index_ == 0 ? "D0" : "D1"; }
  /// Accepts "D0"/"D1" (also "0"/"1").
  static DetectorId parse(std::string_view text);

  friend constexpr bool operator==(DetectorId, DetectorId) = default;

 private:
  int index_;
};

inline constexpr DetectorId kD0{0};
inline constexpr DetectorId kD1{1};
inline constexpr std::array<DetectorId, 2> kDetectors{kD0, kD1};

/// Gates blocked on both detectors after any registered click.
inline constexpr int kDeadtimeGates = 50;
/// Relative width of the no-gate click ramp above E_nogate_never.
inline constexpr double kDefaultTransitionWidth = 0.1;

/// Trigger energies (fJ) bounding one detector's click behaviour.
struct DetectorThresholds {
  double gate_never_fJ = 0.0;    // no click with gate at or below this energy
  double gate_always_fJ = 0.0;   // certain click with gate at or above this energy
  double nogate_never_fJ = 0.0;  // no click without gate at or below this energy
};

struct ThresholdSet {
  std::array<DetectorThresholds, 2> detectors{};
  double transition_width = kDefaultTransitionWidth;

  const DetectorThresholds& operator[](DetectorId d) const { return detectors[d.index()]; }
  DetectorThresholds& operator[](DetectorId d) { return detectors[d.index()]; }

  /// Throws ParameterError if any invariant is broken.
  void validate() const;
};

struct ThresholdPoint {
  double blinding_power_mW = 0.0;
  DetectorThresholds thresholds;
};

/// Per-detector thresholds as piecewise-linear functions of c.w. blinding
/// power. Every map is non-decreasing; evaluation outside the measured power
/// range is an error.
class ThresholdCurves {
 public:
  ThresholdCurves(std::array<std::vector<ThresholdPoint>, 2> points,
                  double transition_width = kDefaultTransitionWidth);

  ThresholdSet at(double blinding_power_mW) const;

  /// Power range covered by both detectors.
  double min_power_mW() const;
  double max_power_mW() const;
  bool covers(double blinding_power_mW) const;

  const std::vector<ThresholdPoint>& points(DetectorId d) const { return points_[d.index()]; }
  double transition_width() const { return transition_width_; }

  /// E_nogate_never > E_gate_always at every sample, hence everywhere.
  bool gate_separated() const;

 private:
  std::array<std::vector<ThresholdPoint>, 2> points_;
  double transition_width_;
};

/// Columns: detector,blinding_power_mW,e_gate_never_fJ,e_gate_always_fJ,e_nogate_never_fJ
ThresholdCurves load_threshold_curves_csv(std::istream& in, std::string_view source = "csv",
                                          double transition_width = kDefaultTransitionWidth);
ThresholdCurves load_threshold_curves_csv(const std::string& path,
                                          double transition_width = kDefaultTransitionWidth);
void write_threshold_curves_csv(std::ostream& out, const ThresholdCurves& curves);

struct TriggerPulse {
  double energy_fJ = 0.0;
  double timing_offset_ns = 0.0;  // relative to gate centre
  double width_ns = 0.7;
};

/// Fraction of a trigger's energy that acts with in-gate gain, as a function
/// of its offset from the gate centre: flat top, linear flanks.
struct TimingWindow {
  double plateau_ns = 1.3;
  double support_ns = 1.4;

  double factor(double offset_ns) const;
  void validate() const;
};

double effective_trigger_energy(const TriggerPulse& pulse, bool gate_applied,
                                const TimingWindow& window);

bool click_geiger(double efficiency, bool photon_present, CounterRng& rng);

/// Click probability of a blinded detector for energy arriving with (or
/// without) the gate. Linear ramps inside the transition bands.
double gate_click_probability(const DetectorThresholds& t, double energy_fJ);
double nogate_click_probability(const DetectorThresholds& t, double energy_fJ,
                                double transition_width);
double click_probability(const ThresholdSet& thresholds, DetectorId detector,
                         double energy_fJ, bool gate_applied);

/// Click probability of a blinded detector for a whole trigger pulse. With the
/// gate, the part of the pulse inside the timing window sees in-gate gain and
/// the pulse can still click through the out-of-gate path on its own.
double pulse_click_probability(const ThresholdSet& thresholds, DetectorId detector,
                               const TriggerPulse& pulse, bool gate_applied,
                               const TimingWindow& window);

bool click_blinded(const ThresholdSet& thresholds, DetectorId detector, double arriving_energy_fJ,
                   bool gate_applied, CounterRng& rng);

enum class DetectorMode : std::uint8_t { geiger, blinded };

struct DetectorSlotState {
  DetectorMode mode = DetectorMode::geiger;
  int deadtime_remaining = 0;
  int efficiency_level = 0;

  bool gate_available() const { return deadtime_remaining == 0; }
};

DetectorMode mode_for_power(double cw_power_mW, double blinding_threshold_mW);

/// Counts down an active deadtime, or restarts it after a click on either detector.
DetectorSlotState apply_deadtime(DetectorSlotState state, bool click_happened_either_detector,
                                 int deadtime_gates = kDeadtimeGates);

}  // namespace qkdblind
