#include "qkdblind/electrothermal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>

#include "qkdblind/csv.hpp"

namespace qkdblind {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct CircuitEval {
  double v_apd = 0.0;
  double v_internal = 0.0;
  double heat = 0.0;
  double delta_vbr = 0.0;
  double photocurrent = 0.0;  // G(V_int - dVbr) * P
};

// Evaluates every quantity of the operating-point equations at trial current i_mA.
CircuitEval evaluate(const CircuitParams& p, const GainCurve& gain, double p_blind_mW,
                     double i_mA) {
  CircuitEval e;
  e.v_apd = std::abs(p.v_bias_V) - i_mA * (p.r_load_ohm + p.r_sense_ohm) * 1e-3;
  e.v_internal = e.v_apd - i_mA * p.r_internal_ohm * 1e-3;
  e.heat = heat_dissipation(e.v_apd, i_mA, p_blind_mW);
  e.delta_vbr = vbr_shift(e.heat, p);
  e.photocurrent = gain(e.v_internal - e.delta_vbr) * p_blind_mW;
  return e;
}

}  // namespace

void CircuitParams::validate() const {
  if (!(v_gate_V > 0.0)) throw ParameterError(label + ": v_gate_V must be positive");
  if (!(theta_thermal_K_per_W > 0.0)) throw ParameterError(label + ": theta_thermal must be positive");
  if (!(r_load_ohm > 0.0) || r_sense_ohm < 0.0 || r_internal_ohm < 0.0) {
    throw ParameterError(label + ": resistances must be non-negative, r_load positive");
  }
  if (!(r_load_ohm > r_sense_ohm)) throw ParameterError(label + ": r_load must dominate r_sense");
  if (!(kappa_mV_per_pC > 0.0) || !(v_th_mV > 0.0)) {
    throw ParameterError(label + ": comparator constants must be positive");
  }
  if (!(v_br_ref_V > 0.0)) throw ParameterError(label + ": v_br_ref_V must be positive");
}

GainCurve::GainCurve(std::vector<GainSample> samples, double punch_through_V)
    : samples_(std::move(samples)), punch_through_V_(punch_through_V) {
  if (samples_.empty()) throw ParameterError("gain curve has no samples");
  std::sort(samples_.begin(), samples_.end(),
            [](const auto& a, const auto& b) { return a.v_apd_V < b.v_apd_V; });
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    if (!(samples_[i].gain_A_per_W > 0.0)) {
      throw ParameterError("gain samples must be positive");
    }
    if (i > 0 && samples_[i].v_apd_V == samples_[i - 1].v_apd_V) {
      throw ParameterError("duplicate gain sample voltage");
    }
    if (i > 0 && samples_[i].gain_A_per_W < samples_[i - 1].gain_A_per_W) {
      throw ParameterError("gain must not decrease with voltage");
    }
    log_gain_.push_back(std::log(samples_[i].gain_A_per_W));
  }
}

double GainCurve::operator()(double v) const {
  if (v < punch_through_V_) return 0.0;
  if (v <= samples_.front().v_apd_V) return samples_.front().gain_A_per_W;
  if (v >= samples_.back().v_apd_V) return samples_.back().gain_A_per_W;
  const auto hi = std::upper_bound(samples_.begin(), samples_.end(), v,
                                   [](double x, const auto& s) { return x < s.v_apd_V; });
  const auto i = static_cast<std::size_t>(hi - samples_.begin());
  const double t = (v - samples_[i - 1].v_apd_V) / (samples_[i].v_apd_V - samples_[i - 1].v_apd_V);
  return std::exp(log_gain_[i - 1] + t * (log_gain_[i] - log_gain_[i - 1]));
}

GainCurve load_gain_curve_csv(std::istream& in, std::string_view source, double punch_through_V) {
  const auto table = CsvTable::parse(in, source);
  const auto c_v = table.column("v_apd_V");
  const auto c_g = table.column("gain_A_per_W");
  std::vector<GainSample> samples;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    samples.push_back({table.number(r, c_v), table.number(r, c_g)});
  }
  try {
    return GainCurve(std::move(samples), punch_through_V);
  } catch (const ParameterError& e) {
    throw ConfigError(std::string(source) + ": " + e.what());
  }
}

GainCurve load_gain_curve_csv(const std::string& path, double punch_through_V) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open");
  return load_gain_curve_csv(in, path, punch_through_V);
}

void write_gain_curve_csv(std::ostream& out, const GainCurve& gain) {
  out << "v_apd_V,gain_A_per_W\n";
  for (const auto& s : gain.samples()) {
    out << format_number(s.v_apd_V) << ',' << format_number(s.gain_A_per_W) << '\n';
  }
}

double vapd_from_testpoint(double v_t2_V, const CircuitParams& params) {
  return v_t2_V + (v_t2_V - params.v_bias_V) * params.r_sense_ohm / params.r_load_ohm;
}

double testpoint_from_vapd(double v_apd_V, const CircuitParams& params) {
  const double k = params.r_sense_ohm / params.r_load_ohm;
  return (v_apd_V + params.v_bias_V * k) / (1.0 + k);
}

double heat_dissipation(double v_apd_V, double i_apd_mA, double p_opt_mW) {
  return std::abs(v_apd_V) * std::abs(i_apd_mA) + std::abs(p_opt_mW);
}

double vbr_shift(double heat_mW, const CircuitParams& params) {
  if (heat_mW < 0.0) throw ParameterError("heat must be non-negative");
  return heat_mW * 1e-3 * params.theta_thermal_K_per_W * params.vbr_temp_coeff_V_per_K;
}

double gain_from_charge(double delta_charge_pC, double trigger_energy_pJ) {
  if (!(trigger_energy_pJ > 0.0)) throw ParameterError("trigger energy must be positive");
  return delta_charge_pC / trigger_energy_pJ;
}

BlindingOperatingPoint steady_state(const CircuitParams& params, const GainCurve& gain,
                                    double p_blind_mW, const SteadyStateOptions& opts) {
  if (!(p_blind_mW >= 0.0)) throw ParameterError("blinding power must be non-negative");
  const double r_total = (params.r_load_ohm + params.r_sense_ohm) * 1e-3;  // V per mA
  const double i_tol = opts.tolerance_V / r_total;

  // g(I) = I - photocurrent(I) increases monotonically: more current lowers
  // the APD voltage and heats the junction, both of which reduce the gain.
  // The bracket [lo, hi] keeps every damped step honest.
  double lo = 0.0;
  double hi = std::abs(params.v_bias_V) / r_total;
  double i = 0.0;
  double prev_i = 0.0;
  double prev_g = 0.0;
  bool have_prev = false;
  int iter = 0;
  bool converged = false;

  for (; iter < opts.max_iterations; ++iter) {
    const double g = i - evaluate(params, gain, p_blind_mW, i).photocurrent;
    if (g == 0.0) {
      converged = true;
      break;
    }
    (g < 0.0 ? lo : hi) = i;

    // Damping 1/(1 - f') from a secant estimate of the feedback slope.
    double damping = 1.0;
    if (have_prev && i != prev_i) {
      const double slope = (g - prev_g) / (i - prev_i);
      if (slope > 1.0) damping = 1.0 / slope;
    }
    double next = i - damping * g;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);

    prev_i = i;
    prev_g = g;
    have_prev = true;
    const double step = std::abs(next - i);
    i = next;
    if (step < i_tol || hi - lo < i_tol) {
      converged = true;
      ++iter;
      break;
    }
  }
  if (!converged) {
    throw NumericalError("steady_state did not converge within " +
                         std::to_string(opts.max_iterations) + " iterations (last I = " +
                         format_number(i) + " mA)");
  }

  const auto e = evaluate(params, gain, p_blind_mW, i);
  BlindingOperatingPoint op;
  op.p_blind_mW = p_blind_mW;
  op.i_apd_mA = i;
  op.v_apd_V = e.v_apd;
  op.v_internal_V = e.v_internal;
  op.heat_mW = e.heat;
  op.delta_vbr_V = e.delta_vbr;
  op.blinded = op.v_apd_V + params.v_gate_V < params.v_br_ref_V + op.delta_vbr_V;
  op.iterations = iter;
  return op;
}

double blinding_threshold(const CircuitParams& params, const GainCurve& gain,
                          double bracket_hi_mW, double tolerance_mW) {
  double lo = 0.0;
  double hi = bracket_hi_mW;
  if (steady_state(params, gain, lo).blinded || !steady_state(params, gain, hi).blinded) {
    throw ConfigError(params.label + ": blinding state does not change over [0, " +
                      format_number(bracket_hi_mW) + "] mW");
  }
  while (hi - lo > tolerance_mW) {
    const double mid = 0.5 * (lo + hi);
    (steady_state(params, gain, mid).blinded ? hi : lo) = mid;
  }
  return hi;
}

LinearModeGains linear_mode_gains(const CircuitParams& params, const GainCurve& gain,
                                  const BlindingOperatingPoint& op) {
  LinearModeGains g;
  g.out_of_gate_A_per_W = gain(op.v_internal_V - op.delta_vbr_V);
  g.in_gate_A_per_W = gain(op.v_internal_V + params.v_gate_V - op.delta_vbr_V);
  return g;
}

double comparator_peak_mV(const CircuitParams& params, const GainCurve& gain, double p_blind_mW,
                          double energy_pJ, bool in_gate) {
  const auto g = linear_mode_gains(params, gain, steady_state(params, gain, p_blind_mW));
  if (in_gate) return params.kappa_mV_per_pC * (params.gate_charge_pC + g.in_gate_A_per_W * energy_pJ);
  return params.kappa_mV_per_pC * g.out_of_gate_A_per_W * energy_pJ;
}

std::vector<ThresholdPoint> synthesize_detector_thresholds(const CircuitParams& params,
                                                           const GainCurve& gain,
                                                           const std::vector<double>& p_grid_mW,
                                                           double gate_band) {
  params.validate();
  const double q_th = params.threshold_charge_pC();
  if (q_th <= params.gate_charge_pC) {
    throw ParameterError(params.label + ": the gate alone would cross the comparator threshold");
  }
  std::vector<ThresholdPoint> out;
  for (double p : p_grid_mW) {
    const auto op = steady_state(params, gain, p);
    if (!op.blinded) {
      throw ParameterError(params.label + ": " + format_number(p) +
                           " mW is below the blinding threshold");
    }
    const auto g = linear_mode_gains(params, gain, op);
    // Energies in fJ: charge (pC) / gain (A/W) gives pJ.
    const double centre =
        g.in_gate_A_per_W > 0.0 ? (q_th - params.gate_charge_pC) / g.in_gate_A_per_W * 1e3 : kInf;
    ThresholdPoint pt;
    pt.blinding_power_mW = p;
    pt.thresholds.gate_never_fJ = centre * (1.0 - 0.5 * gate_band);
    pt.thresholds.gate_always_fJ = centre * (1.0 + 0.5 * gate_band);
    pt.thresholds.nogate_never_fJ =
        g.out_of_gate_A_per_W > 0.0 ? q_th / g.out_of_gate_A_per_W * 1e3 : kInf;
    out.push_back(pt);
  }
  return out;
}

ThresholdCurves synthesize_threshold_curves(const std::array<CircuitParams, 2>& params,
                                            const std::array<GainCurve, 2>& gains,
                                            const std::vector<double>& p_grid_mW,
                                            double gate_band) {
  if (p_grid_mW.empty()) throw ParameterError("empty power grid");
  return ThresholdCurves({synthesize_detector_thresholds(params[0], gains[0], p_grid_mW, gate_band),
                          synthesize_detector_thresholds(params[1], gains[1], p_grid_mW, gate_band)},
                         gate_band);
}

KappaCalibration calibrate_kappa(double v_th_mV, double gate_charge_pC, double in_gate_total_pC,
                                 double after_gate_trigger_pC) {
  if (!(v_th_mV > 0.0) || !(in_gate_total_pC > 0.0)) {
    throw ParameterError("kappa calibration needs positive threshold and charge");
  }
  KappaCalibration k;
  k.lower_mV_per_pC = v_th_mV / in_gate_total_pC;
  k.upper_mV_per_pC = v_th_mV / std::max(gate_charge_pC, after_gate_trigger_pC);
  if (!(k.lower_mV_per_pC < k.upper_mV_per_pC)) {
    throw ParameterError("charges do not bracket the comparator threshold");
  }
  k.kappa_mV_per_pC = std::sqrt(k.lower_mV_per_pC * k.upper_mV_per_pC);
  k.in_gate_peak_mV = k.kappa_mV_per_pC * in_gate_total_pC;
  k.after_gate_peak_mV = k.kappa_mV_per_pC * after_gate_trigger_pC;
  k.gate_only_peak_mV = k.kappa_mV_per_pC * gate_charge_pC;
  return k;
}

double calibrate_breakdown(CircuitParams params, const GainCurve& gain, double target_p_blind_mW) {
  if (!(target_p_blind_mW > 0.0)) throw ParameterError("target blinding power must be positive");
  double lo = std::abs(params.v_bias_V);
  double hi = std::abs(params.v_bias_V) + params.v_gate_V;
  // Raising the breakdown voltage makes blinding easier, so the onset power
  // falls monotonically across the bracket.
  for (int k = 0; k < 60; ++k) {
    params.v_br_ref_V = 0.5 * (lo + hi);
    double onset = kInf;
    if (steady_state(params, gain, 0.0).blinded) {
      onset = 0.0;
    } else if (steady_state(params, gain, 2.0).blinded) {
      onset = blinding_threshold(params, gain, 2.0, 1e-7);
    }
    (onset > target_p_blind_mW ? lo : hi) = params.v_br_ref_V;
  }
  return 0.5 * (lo + hi);
}

}  // namespace qkdblind
