#pragma once

// Bob's defences: random gate suppression guarded by a lifetime alarm
// counter, and random detection-efficiency levels checked with the
// blinding-factor estimator.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qkdblind/detector.hpp"

namespace qkdblind {

enum class CountermeasureVariant { none, gate_suppression, two_level, n_level };

std::string to_string(CountermeasureVariant v);
CountermeasureVariant parse_countermeasure_variant(std::string_view text);

/// One selectable detector setting: per-detector efficiency and the bias
/// voltage that realises it.
struct EfficiencyLevel {
  std::array<double, 2> efficiency{0.226, 0.189};
  std::array<double, 2> v_bias_V{-55.26, -54.70};
  double selection_probability = 1.0;
};

struct CountermeasurePolicy {
  CountermeasureVariant variant = CountermeasureVariant::none;
  double p_suppress = 0.02;
  int alarm_limit = 15;
  /// Ascending in efficiency for each detector. One entry for none and
  /// gate_suppression.
  std::vector<EfficiencyLevel> levels{EfficiencyLevel{}};

  void validate() const;
  bool randomizes_efficiency() const { return levels.size() > 1; }
  std::size_t highest_level() const { return levels.size() - 1; }

  static CountermeasurePolicy unprotected(EfficiencyLevel level = {});
  static CountermeasurePolicy gate_suppression(double p_suppress = 0.02,
                                               EfficiencyLevel level = {});
  /// Two bias settings per detector with equal selection probability.
  static CountermeasurePolicy two_level(EfficiencyLevel low, EfficiencyLevel high);
};

struct AlarmState {
  int counter = 0;
  bool bricked = false;

  friend bool operator==(const AlarmState&, const AlarmState&) = default;
};

AlarmState register_no_gate_click(AlarmState alarm, int alarm_limit = 15);

/// The lifetime counter lives in a small JSON file; a missing file is a fresh device.
AlarmState load_alarm_state(const std::string& path);
void save_alarm_state(const std::string& path, const AlarmState& alarm);

struct GateSetting {
  bool applied = true;
  std::array<std::uint8_t, 2> level_index{0, 0};
  std::array<double, 2> bias_voltage_V{0.0, 0.0};
};

GateSetting draw_gate_setting(const CountermeasurePolicy& policy, std::uint64_t seed,
                              std::uint64_t slot);
std::vector<GateSetting> draw_gate_plan(const CountermeasurePolicy& policy, std::uint64_t n_slots,
                                        std::uint64_t seed);

struct LevelCounts {
  std::uint64_t slots = 0;
  std::uint64_t clicks = 0;

  double rate() const;
  LevelCounts& operator+=(const LevelCounts& o) {
    slots += o.slots;
    clicks += o.clicks;
    return *this;
  }
  friend bool operator==(const LevelCounts&, const LevelCounts&) = default;
};

/// Gated-slot and click tallies per detector and efficiency level.
class EfficiencyMonitor {
 public:
  explicit EfficiencyMonitor(std::size_t n_levels = 1);

  void record(DetectorId d, std::size_t level, bool clicked);
  const LevelCounts& counts(DetectorId d, std::size_t level) const;
  std::size_t n_levels() const { return counts_[0].size(); }
  void merge(const EfficiencyMonitor& other);

 private:
  std::array<std::vector<LevelCounts>, 2> counts_;
};

struct BlindingFactorEstimate {
  double factor = 0.0;
  double std_error = 0.0;  // binomial, propagated from both level rates
};

/// (eta_hi * rate_lo - eta_lo * rate_hi) / (eta_hi - eta_lo): zero whenever
/// the detection rate is proportional to efficiency.
BlindingFactorEstimate blinding_factor(const LevelCounts& hi, const LevelCounts& lo, double eta_hi,
                                       double eta_lo);

enum class FactorVerdict { clear, attack_detected };

std::string to_string(FactorVerdict v);

/// One-sided test: attack_detected iff factor > sigma_threshold * stderr.
FactorVerdict factor_alarm_test(const BlindingFactorEstimate& estimate,
                                double sigma_threshold = 5.0);
FactorVerdict factor_alarm_test(const LevelCounts& hi, const LevelCounts& lo, double eta_hi,
                                double eta_lo, double sigma_threshold = 5.0);

}  // namespace qkdblind
