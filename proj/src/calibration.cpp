#include "qkdblind/calibration.hpp"

namespace qkdblind {

DeviceCalibration calibrate_device(const std::array<GainCurve, 2>& gains,
                                   std::array<CircuitParams, 2> params,
                                   const CalibrationTargets& targets) {
  DeviceCalibration out;
  out.kappa = calibrate_kappa(params[0].v_th_mV, targets.gate_charge_pC, targets.in_gate_total_pC,
                              targets.after_gate_total_pC - targets.gate_charge_pC);
  for (auto d : kDetectors) {
    const auto i = static_cast<std::size_t>(d.index());
    auto& p = params[i];
    p.validate();
    p.kappa_mV_per_pC = out.kappa.kappa_mV_per_pC;
    p.gate_charge_pC = targets.gate_charge_pC;
    p.v_br_ref_V = calibrate_breakdown(p, gains[i], targets.blinding_onset_mW[i]);

    auto& fit = out.detectors[i];
    fit.params = p;
    fit.onset_model_mW = blinding_threshold(p, gains[i]);
    fit.onset_residual_mW = fit.onset_model_mW - targets.blinding_onset_mW[i];
    fit.gain_2V_below_breakdown = gains[i](p.v_br_ref_V - 2.0);
    fit.reference_point = steady_state(p, gains[i], targets.reference_power_mW);
    fit.v_apd_residual_V = fit.reference_point.v_apd_V - targets.v_apd_V[i];
    fit.i_apd_residual_mA = fit.reference_point.i_apd_mA - targets.i_apd_mA[i];
  }
  return out;
}

nlohmann::json to_json(const DeviceCalibration& c) {
  nlohmann::json j;
  j["kappa_mV_per_pC"] = c.kappa.kappa_mV_per_pC;
  j["kappa_interval_mV_per_pC"] = {c.kappa.lower_mV_per_pC, c.kappa.upper_mV_per_pC};
  j["reference_pulse_peaks_mV"] = {{"in_gate", c.kappa.in_gate_peak_mV},
                                   {"after_gate", c.kappa.after_gate_peak_mV},
                                   {"gate_only", c.kappa.gate_only_peak_mV}};
  for (auto d : kDetectors) {
    const auto& f = c.detectors[static_cast<std::size_t>(d.index())];
    const auto& p = f.params;
    j["detectors"][d.name()] = {
        {"circuit",
         {{"v_bias_V", p.v_bias_V},
          {"v_br_ref_V", p.v_br_ref_V},
          {"v_gate_V", p.v_gate_V},
          {"v_th_mV", p.v_th_mV},
          {"r_sense_ohm", p.r_sense_ohm},
          {"r_load_ohm", p.r_load_ohm},
          {"r_internal_ohm", p.r_internal_ohm},
          {"theta_thermal_K_per_W", p.theta_thermal_K_per_W},
          {"vbr_temp_coeff_V_per_K", p.vbr_temp_coeff_V_per_K},
          {"kappa_mV_per_pC", p.kappa_mV_per_pC},
          {"gate_charge_pC", p.gate_charge_pC}}},
        {"blinding_onset_mW", f.onset_model_mW},
        {"blinding_onset_residual_mW", f.onset_residual_mW},
        {"gain_2V_below_breakdown_A_per_W", f.gain_2V_below_breakdown},
        {"reference_point",
         {{"p_blind_mW", f.reference_point.p_blind_mW},
          {"v_apd_V", f.reference_point.v_apd_V},
          {"i_apd_mA", f.reference_point.i_apd_mA},
          {"heat_mW", f.reference_point.heat_mW},
          {"delta_vbr_V", f.reference_point.delta_vbr_V}}},
        {"v_apd_residual_V", f.v_apd_residual_V},
        {"i_apd_residual_mA", f.i_apd_residual_mA}};
  }
  return j;
}

}  // namespace qkdblind
