#include "qkdblind/calibration_data.hpp"

namespace qkdblind::builtin {
namespace {

std::vector<ThresholdPoint> rows(const std::vector<double>& powers, const std::vector<double>& never,
                                 const std::vector<double>& always,
                                 const std::vector<double>& nogate) {
  std::vector<ThresholdPoint> out;
  for (std::size_t k = 0; k < powers.size(); ++k) {
    out.push_back({powers[k], {never[k], always[k], nogate[k]}});
  }
  return out;
}

}  // namespace

ThresholdCurves in_gate_curves() {
  const std::vector<double> p{0.1, 0.2, 0.38, 0.56, 0.8, 1.08};
  return ThresholdCurves({rows(p, {105, 128, 158, 180, 205, 230}, {120, 146, 180, 205, 232, 262},
                               {900, 1150, 1500, 1800, 2150, 2500}),
                          rows(p, {100, 124, 154, 176, 200, 224}, {112, 136, 166, 190, 216, 244},
                               {850, 1080, 1400, 1700, 2050, 2400})});
}

ThresholdCurves reduced_bias_curves() {
  return ThresholdCurves({std::vector<ThresholdPoint>{{kAttackPower_mW, {190, 214, 1600}}},
                          std::vector<ThresholdPoint>{{kAttackPower_mW, {170, 186, 1500}}}});
}

ThresholdCurves after_gate_curves() {
  // D0's out-of-gate threshold sits 10 fJ below the energy needed for a
  // certain in-gate click.
  return ThresholdCurves({std::vector<ThresholdPoint>{{kAfterGatePower_mW, {600, 720, 710}}},
                          std::vector<ThresholdPoint>{{kAfterGatePower_mW, {520, 610, 600}}}});
}

std::vector<std::string> threshold_table_names() { return {"in_gate", "reduced_bias", "after_gate"}; }

ThresholdCurves threshold_curves(std::string_view name) {
  if (name == "in_gate") return in_gate_curves();
  if (name == "reduced_bias") return reduced_bias_curves();
  if (name == "after_gate") return after_gate_curves();
  throw ConfigError("unknown built-in threshold table '" + std::string(name) + "'");
}

TimingWindow standard_timing_window() { return {1.3, 1.4}; }
TimingWindow reduced_timing_window() { return {0.8, 1.4}; }

EfficiencyLevel standard_level() { return {{0.226, 0.189}, {-55.26, -54.70}, 0.5}; }
EfficiencyLevel reduced_level() { return {{0.128, 0.097}, {-54.86, -54.40}, 0.5}; }

GainCurve gain_curve(DetectorId d) {
  if (d == kD0) {
    return GainCurve({{31, 0.719},  {33, 0.728},  {36, 0.749},   {40, 0.798},  {44, 0.896},
                      {47, 1.04},   {49, 1.2},    {50, 1.32},    {51, 1.49},   {52, 1.73},
                      {52.5, 1.89}, {53, 2.1},    {53.5, 2.38},  {54, 2.76},   {54.5, 3.31},
                      {55, 4.19},   {55.5, 5.81}, {55.8, 7.65},  {56.0, 9.75}, {56.2, 13.5},
                      {56.4, 22.3}, {56.6, 66.4}, {56.7, 140}});
  }
  return GainCurve({{31, 0.70},   {33, 0.80},   {36, 0.95},   {40, 1.21},   {44, 1.51},
                    {47, 1.9},    {49, 2.34},   {50, 2.66},   {51, 3.1},    {52, 3.74},
                    {52.5, 4.17}, {53, 4.74},   {53.5, 5.49}, {54, 6.54},   {54.5, 8.12},
                    {55, 10.4},   {55.5, 16.0}, {55.8, 22.8}, {56.0, 31.9}, {56.2, 52.9},
                    {56.4, 140}});
}

CircuitParams circuit_params(DetectorId d) {
  CircuitParams p;
  p.kappa_mV_per_pC = 53.71;
  p.gate_charge_pC = kGateChargePc;
  if (d == kD0) {
    p.label = "D0";
    p.v_bias_V = -55.26;
    p.r_internal_ohm = 330.0;
    p.v_br_ref_V = 57.717;
  } else {
    p.label = "D1";
    p.v_bias_V = -54.70;
    p.r_internal_ohm = 275.0;
    p.v_br_ref_V = 56.888;
  }
  return p;
}

}  // namespace qkdblind::builtin
