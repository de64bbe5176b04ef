#pragma once

// Electrical and thermal model of a blinded APD: bias-circuit arithmetic,
// gain-vs-voltage characteristic, the self-consistent operating point under
// c.w. illumination, and trigger thresholds derived from it.
//
// Sign convention: v_bias_V and test-point voltages are signed (the supply is
// negative); APD voltages, breakdown voltages and gains use magnitudes.

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "qkdblind/detector.hpp"

namespace qkdblind {

struct CircuitParams {
  std::string label = "D0";
  double v_bias_V = -55.26;
  double v_br_ref_V = 57.7;  // breakdown magnitude at the reference temperature
  double v_gate_V = 3.0;
  double gate_duration_ns = 2.8;
  double v_th_mV = 70.0;
  double r_sense_ohm = 50.0;  // R1 + R2
  double r_load_ohm = 1000.0;  // R3
  double c_couple_pF = 1.0;
  double r_internal_ohm = 330.0;
  double theta_thermal_K_per_W = 190.0;
  double vbr_temp_coeff_V_per_K = 0.1;
  double kappa_mV_per_pC = 53.7;  // comparator peak per unit charge
  double gate_charge_pC = 1.053;  // extra charge the gate alone draws from a blinded APD

  /// Charge the comparator needs to fire (the current threshold I_th in
  /// charge-window form).
  double threshold_charge_pC() const { return v_th_mV / kappa_mV_per_pC; }
  void validate() const;
};

struct GainSample {
  double v_apd_V = 0.0;
  double gain_A_per_W = 0.0;
};

/// Responsivity versus APD voltage. Zero below punch-through, log-linear
/// between samples, flat beyond the outermost samples.
class GainCurve {
 public:
  explicit GainCurve(std::vector<GainSample> samples, double punch_through_V = 31.0);

  double operator()(double v_apd_V) const;
  double punch_through_V() const { return punch_through_V_; }
  const std::vector<GainSample>& samples() const { return samples_; }

 private:
  std::vector<GainSample> samples_;
  std::vector<double> log_gain_;
  double punch_through_V_;
};

/// Columns: v_apd_V,gain_A_per_W
GainCurve load_gain_curve_csv(std::istream& in, std::string_view source = "csv",
                              double punch_through_V = 31.0);
GainCurve load_gain_curve_csv(const std::string& path, double punch_through_V = 31.0);
void write_gain_curve_csv(std::ostream& out, const GainCurve& gain);

struct BlindingOperatingPoint {
  double p_blind_mW = 0.0;
  double v_apd_V = 0.0;       // magnitude at the APD terminals
  double v_internal_V = 0.0;  // after the internal series resistance
  double i_apd_mA = 0.0;
  double heat_mW = 0.0;
  double delta_vbr_V = 0.0;
  bool blinded = false;
  int iterations = 0;
};

double vapd_from_testpoint(double v_t2_V, const CircuitParams& params);
double testpoint_from_vapd(double v_apd_V, const CircuitParams& params);

double heat_dissipation(double v_apd_V, double i_apd_mA, double p_opt_mW);
double vbr_shift(double heat_mW, const CircuitParams& params);
/// Responsivity (A/W) from the charge a trigger pulse adds (pC per pJ).
double gain_from_charge(double delta_charge_pC, double trigger_energy_pJ);

struct SteadyStateOptions {
  double tolerance_V = 1e-6;
  int max_iterations = 10000;
};

/// Self-consistent bias point under c.w. power `p_blind_mW`:
///   I = G(V_int - dVbr) * P,  V_apd = |V_bias| - I (R_load + R_sense),
///   V_int = V_apd - I R_internal,  heat = V_apd I + P,  dVbr = heat theta k.
/// The gain curve is referenced to the cold breakdown voltage, so heating
/// shifts the operating point down the curve by dVbr.
BlindingOperatingPoint steady_state(const CircuitParams& params, const GainCurve& gain,
                                    double p_blind_mW, const SteadyStateOptions& opts = {});

/// Smallest c.w. power (mW) that keeps V_apd + V_gate below the heated
/// breakdown voltage. Bisection to `tolerance_mW`.
double blinding_threshold(const CircuitParams& params, const GainCurve& gain,
                          double bracket_hi_mW = 2.0, double tolerance_mW = 1e-4);

struct LinearModeGains {
  double out_of_gate_A_per_W = 0.0;
  double in_gate_A_per_W = 0.0;
};

LinearModeGains linear_mode_gains(const CircuitParams& params, const GainCurve& gain,
                                  const BlindingOperatingPoint& op);

/// Comparator peak (mV) for a trigger of `energy_pJ` at blinding power
/// `p_blind_mW`, in the gate (adds to the gate's own charge) or outside it.
double comparator_peak_mV(const CircuitParams& params, const GainCurve& gain, double p_blind_mW,
                          double energy_pJ, bool in_gate);

/// Thresholds for one detector at each grid power. Infinite entries mark a
/// detector with no photosensitivity at that operating point.
std::vector<ThresholdPoint> synthesize_detector_thresholds(const CircuitParams& params,
                                                           const GainCurve& gain,
                                                           const std::vector<double>& p_grid_mW,
                                                           double gate_band = kDefaultTransitionWidth);

ThresholdCurves synthesize_threshold_curves(const std::array<CircuitParams, 2>& params,
                                            const std::array<GainCurve, 2>& gains,
                                            const std::vector<double>& p_grid_mW,
                                            double gate_band = kDefaultTransitionWidth);

struct KappaCalibration {
  double kappa_mV_per_pC = 0.0;
  double lower_mV_per_pC = 0.0;  // in-gate total charge just reaches V_th
  double upper_mV_per_pC = 0.0;  // largest single pulse outside the gate just reaches V_th
  double in_gate_peak_mV = 0.0;
  double after_gate_peak_mV = 0.0;
  double gate_only_peak_mV = 0.0;
};

/// Geometric centre of the kappa interval in which the in-gate pulse pair
/// crosses V_th while the gate pulse and the after-gate trigger each stay below.
KappaCalibration calibrate_kappa(double v_th_mV, double gate_charge_pC,
                                 double in_gate_total_pC, double after_gate_trigger_pC);

/// Breakdown voltage that places the blinding onset at `target_p_blind_mW`.
double calibrate_breakdown(CircuitParams params, const GainCurve& gain, double target_p_blind_mW);

}  // namespace qkdblind
