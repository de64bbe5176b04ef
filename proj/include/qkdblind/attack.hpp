#pragma once

// Eve's side: feasibility of faked-state control given measured thresholds,
// two-level attack planning by trigger energy or timing, and the mixture
// solver that reproduces an arbitrary set of decoy efficiencies.

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "qkdblind/detector.hpp"

namespace qkdblind {

enum class AttackMode { after_gate, in_gate };

std::string to_string(AttackMode m);
AttackMode parse_attack_mode(std::string_view text);

struct TriggerComponent {
  double energy_fJ = 0.0;
  double timing_offset_ns = 0.0;
  double probability = 0.0;
};

/// Blinding power plus, for each target detector, a mixture of trigger
/// pulses. Eve targets the detector whose index equals her measured bit;
/// probability left over after the mixture means "send no trigger".
struct AttackPlan {
  double blinding_power_mW = 0.38;
  AttackMode mode = AttackMode::in_gate;
  std::array<std::vector<TriggerComponent>, 2> mixture;
  double pulse_width_ns = 0.7;
  /// Half-width of the gate region an in-gate trigger may be placed in.
  double gate_half_width_ns = 1.4;

  const std::vector<TriggerComponent>& for_target(DetectorId d) const { return mixture[d.index()]; }
  double total_probability(DetectorId d) const;
  void validate() const;

  /// Same single trigger, always sent, aimed at whichever detector matches Eve's bit.
  static AttackPlan single_energy(double blinding_power_mW, double energy_fJ,
                                  AttackMode mode = AttackMode::in_gate,
                                  double timing_offset_ns = 0.0);
};

nlohmann::json to_json(const AttackPlan& plan);

struct EnergyInterval {
  double lo_fJ = 0.0;
  double hi_fJ = 0.0;

  bool empty() const { return !(lo_fJ < hi_fJ); }
  bool contains(double e) const { return !empty() && e >= lo_fJ && e <= hi_fJ; }
  double centre() const { return 0.5 * (lo_fJ + hi_fJ); }
  /// Half-width over centre: the precision Eve needs on her trigger energy.
  double relative_half_width() const { return empty() ? 0.0 : (hi_fJ - lo_fJ) / (hi_fJ + lo_fJ); }
};

struct Margin {
  std::string name;
  double slack_fJ = 0.0;   // positive when the inequality holds
  double relative = 0.0;   // slack over the larger side
};

struct FeasibilityReport {
  std::array<bool, 2> threshold_order{};   // E_nogate_never > E_gate_always > E_gate_never
  bool mismatch_silent = false;            // max E_gate_always / 2 < min E_gate_never
  std::array<bool, 2> mismatch_nogate_silent{};  // E_gate_always,i / 2 < E_nogate_never,i+1
  std::array<bool, 2> necessary{};         // E_nogate_never > E_gate_never
  bool strong_conditions_hold = false;
  bool necessary_condition_holds = false;
  std::array<EnergyInterval, 2> perfect_energy_range{};
  std::vector<Margin> margins;
  std::vector<std::string> diagnostics;
};

nlohmann::json to_json(const FeasibilityReport& report);

/// Threshold ordering and basis-mismatch conditions for both detectors.
FeasibilityReport check_strong_conditions(const ThresholdSet& t);

/// E_nogate_never > E_gate_never, for one target or (without one) both detectors.
bool check_necessary_condition(const ThresholdSet& t, std::optional<DetectorId> target = {});

/// Full analysis: strong, necessary, perfect ranges and margins.
FeasibilityReport analyze_feasibility(const ThresholdSet& t);

/// [E_gate_always,target, min(2 min_i E_gate_never,i, E_nogate_never,target,
/// 2 E_nogate_never,other)]; empty when the strong conditions fail.
EnergyInterval perfect_energy_range(const ThresholdSet& t, DetectorId target,
                                    std::string* diagnostic = nullptr);

/// Click probabilities sampled along one attack parameter (trigger energy or
/// timing offset) at Bob's lowest and highest efficiency setting.
struct LevelResponseCurve {
  std::vector<double> x;
  std::vector<double> p_low;
  std::vector<double> p_high;
};

struct TwoLevelResponse {
  std::array<LevelResponseCurve, 2> detectors;
  std::array<double, 2> eta_low{};
  std::array<double, 2> eta_high{};
  /// Trigger energy per detector for timing plans (ignored for energy plans).
  std::array<double, 2> fixed_energy_fJ{};
  /// Energy-plan candidates must stay below this (no-gate alarm, per detector).
  std::array<double, 2> alarm_energy_fJ{};
  /// Energy-plan candidates must stay below this so that half the energy
  /// on a basis mismatch never clicks either detector.
  double mismatch_limit_fJ = 0.0;
};

struct PlanOutcome {
  bool ok = false;
  AttackPlan plan;           // on failure: partial-control fallback (level-independent clicks)
  std::string diagnostic;
};

PlanOutcome plan_two_level_energy_attack(const TwoLevelResponse& response,
                                         double blinding_power_mW);
PlanOutcome plan_two_level_timing_attack(const TwoLevelResponse& response,
                                         double blinding_power_mW);

/// Response curves computed from threshold sets at the two bias levels.
TwoLevelResponse energy_response(const ThresholdSet& low, const ThresholdSet& high,
                                 const std::array<double, 2>& eta_low,
                                 const std::array<double, 2>& eta_high,
                                 const std::vector<double>& energy_grid_fJ);
TwoLevelResponse timing_response(const ThresholdSet& low, const TimingWindow& low_window,
                                 const ThresholdSet& high, const TimingWindow& high_window,
                                 const std::array<double, 2>& eta_low,
                                 const std::array<double, 2>& eta_high,
                                 const std::array<double, 2>& energy_fJ,
                                 const std::vector<double>& offset_grid_ns);

/// beta[k][i]: click probability under attack level k when Bob uses
/// efficiency level i. Rows ordered by decreasing energy, columns by
/// increasing efficiency.
class BetaMatrix {
 public:
  explicit BetaMatrix(std::vector<std::vector<double>> rows);

  std::size_t size() const { return rows_.size(); }
  double operator()(std::size_t k, std::size_t i) const { return rows_[k][i]; }
  const std::vector<std::vector<double>>& rows() const { return rows_; }

  /// Staircase: attack level k clicks exactly at efficiency levels i >= k.
  static BetaMatrix staircase(std::size_t n);

 private:
  std::vector<std::vector<double>> rows_;
};

struct DecoyMixtureSolution {
  enum class Status { exact, partial_control };
  Status status = Status::exact;
  std::vector<double> q;        // exact solution, or best feasible approximation
  std::vector<double> q_unconstrained;
  double residual = 0.0;        // ||beta^T q - eta||_2 for the returned q
  std::vector<std::string> violated_constraints;
  int rank = 0;
};

/// Solves sum_k q_k beta[k][i] = eta_i. Returns the exact mixture when it is
/// a valid probability assignment, otherwise the closest feasible mixture with
/// the violated constraints listed. Throws NumericalError for singular beta.
DecoyMixtureSolution solve_decoy_mixture(const BetaMatrix& beta, const std::vector<double>& etas);

}  // namespace qkdblind
