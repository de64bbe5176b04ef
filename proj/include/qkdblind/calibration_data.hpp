#pragma once

// Built-in device data for the two Clavis2 detectors. Curve shapes are
// approximations; the anchor values (thresholds of 710/720 fJ,
// efficiencies, bias voltages, blinding onsets) are exact.

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "qkdblind/countermeasure.hpp"
#include "qkdblind/detector.hpp"
#include "qkdblind/electrothermal.hpp"

namespace qkdblind::builtin {

/// Measured blinding onsets (mW) of D0 and D1.
inline constexpr std::array<double, 2> kBlindingOnset_mW{0.0734, 0.0643};

/// Blinding power of the in-gate attack.
inline constexpr double kAttackPower_mW = 0.38;
/// Power of the original after-gate attack against the gate-suppression firmware.
inline constexpr double kAfterGatePower_mW = 1.08;

/// In-gate thresholds vs blinding power at the standard bias (approximate).
ThresholdCurves in_gate_curves();
/// Thresholds at 0.38 mW with the bias lowered to the reduced-efficiency setting (approximate).
ThresholdCurves reduced_bias_curves();
/// Original after-gate trigger vs the gate-suppression firmware at 1.08 mW.
ThresholdCurves after_gate_curves();

/// Names accepted by `threshold_curves`: in_gate, reduced_bias, after_gate.
std::vector<std::string> threshold_table_names();
ThresholdCurves threshold_curves(std::string_view name);

/// Timing windows at the standard and reduced bias: the reduced setting
/// keeps full clicks over a narrower span of trigger offsets.
TimingWindow standard_timing_window();
TimingWindow reduced_timing_window();

/// Efficiency/bias pairs of the two-level countermeasure.
EfficiencyLevel standard_level();
EfficiencyLevel reduced_level();

/// Trigger energies (fJ) used for the timing-shift attack at 0.38 mW.
inline constexpr std::array<double, 2> kTimingAttackEnergy_fJ{220.0, 190.0};

GainCurve gain_curve(DetectorId d);
/// Circuit constants with breakdown voltage and comparator constant already
/// calibrated against the measured blinding onsets and the in/after-gate pulse pair.
CircuitParams circuit_params(DetectorId d);

/// Charges (pC) read from the 0.56 mW oscillograms: gate alone, gate plus an
/// in-gate 0.32 pJ trigger, and the same trigger 5 ns after the gate.
inline constexpr double kGateChargePc = 1.053;
inline constexpr double kInGateTotalChargePc = 1.613;
inline constexpr double kAfterGateTotalChargePc = 1.467;
inline constexpr double kReferenceTriggerPj = 0.32;
inline constexpr double kReferencePower_mW = 0.56;

}  // namespace qkdblind::builtin
