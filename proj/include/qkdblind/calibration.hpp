#pragma once

// Fits the free electrothermal constants to the device anchors: breakdown
// voltage per detector from the measured blinding onset, and the comparator
// constant from the in-gate/after-gate oscillogram pair.

#include <array>

#include <json.hpp>

#include "qkdblind/electrothermal.hpp"

namespace qkdblind {

struct CalibrationTargets {
  std::array<double, 2> blinding_onset_mW{0.0734, 0.0643};
  double gate_charge_pC = 1.053;
  double in_gate_total_pC = 1.613;
  double after_gate_total_pC = 1.467;
  double trigger_pJ = 0.32;
  /// Operating point measured at this power: V_APD (V) and I_APD (mA).
  double reference_power_mW = 0.564;
  std::array<double, 2> v_apd_V{54.14, 53.484};
  std::array<double, 2> i_apd_mA{1.12, 1.224};
};

struct DetectorFit {
  CircuitParams params;
  double onset_model_mW = 0.0;
  double onset_residual_mW = 0.0;
  double gain_2V_below_breakdown = 0.0;  // A/W
  BlindingOperatingPoint reference_point;
  double v_apd_residual_V = 0.0;
  double i_apd_residual_mA = 0.0;
};

struct DeviceCalibration {
  KappaCalibration kappa;
  std::array<DetectorFit, 2> detectors;
};

DeviceCalibration calibrate_device(const std::array<GainCurve, 2>& gains,
                                   std::array<CircuitParams, 2> params,
                                   const CalibrationTargets& targets = {});

nlohmann::json to_json(const DeviceCalibration& c);

}  // namespace qkdblind
