#pragma once

// Slot-by-slot BB84 session between Alice and Bob's gated receiver, with an
// optional blinding eavesdropper. One session is a sequential state machine:
// deadtime and the lifetime alarm couple consecutive slots.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qkdblind/attack.hpp"
#include "qkdblind/countermeasure.hpp"
#include "qkdblind/detector.hpp"

namespace qkdblind {

struct EveConfig {
  AttackPlan plan;
  /// Probability that Eve's own measurement registers Alice's photon.
  double detection_probability = 1.0;
};

struct ScenarioConfig {
  std::uint64_t n_slots = 1'000'000;
  std::uint64_t seed = 1;
  /// Probability that Alice's photon reaches Bob's detectors in a slot.
  double channel_transmittance = 1.0;
  /// Honest-channel bit flip applied on a basis match.
  double bit_flip_probability = 0.0;
  double dark_count_probability = 0.0;

  CountermeasurePolicy countermeasure;
  /// Blinded-mode thresholds and in-gate timing window for each efficiency level.
  std::vector<ThresholdSet> thresholds{ThresholdSet{}};
  std::vector<TimingWindow> timing_windows{TimingWindow{}};
  /// C.w. power (mW) above which each detector leaves Geiger mode.
  std::array<double, 2> blinding_onset_mW{0.0734, 0.0643};

  std::optional<EveConfig> eve;

  bool deadtime_enabled = true;
  int deadtime_gates = kDeadtimeGates;
  /// Blinded clicks while deadtime holds the gate off are alarm events too.
  bool deadtime_clicks_count_toward_alarm = true;

  double qber_abort = 0.11;
  /// Sifted bits per slot below which the session fails without alarm.
  double min_sifted_rate = 0.0;
  double sigma_threshold = 5.0;

  bool record_trace = false;

  void validate() const;
};

struct SlotRecord {
  std::uint64_t slot = 0;
  std::uint8_t alice_bit = 0;
  std::uint8_t alice_basis = 0;
  std::uint8_t bob_basis = 0;
  bool eve_detected = false;
  std::uint8_t eve_basis = 0;
  std::uint8_t eve_bit = 0;
  std::int8_t trigger_component = -1;  // -1: nothing sent
  bool gate_applied = true;            // gate plan, before deadtime
  bool gated = true;                   // gate actually present
  std::array<std::uint8_t, 2> level{0, 0};
  std::array<bool, 2> click{};         // registered detections
  std::array<bool, 2> nogate_click{};  // clicks without a gate (alarm events)
  bool double_click = false;
  std::uint8_t bob_bit = 0;
};

struct SiftResult {
  std::uint64_t sifted = 0;
  std::uint64_t errors = 0;
  double qber = 0.0;
  std::uint64_t eve_informed = 0;      // sifted bits where Eve had measured
  std::uint64_t eve_bob_agreement = 0; // ... and her bit equals Bob's
};

/// Keeps detections where Alice's and Bob's bases agree.
SiftResult sift(const std::vector<SlotRecord>& records);

enum class Verdict { key_ok, aborted_qber, attack_detected, bricked, failed_low_rate };

std::string to_string(Verdict v);

struct FactorResult {
  DetectorId detector{0};
  BlindingFactorEstimate estimate;
  FactorVerdict verdict = FactorVerdict::clear;
};

struct SessionReport {
  std::uint64_t n_slots = 0;
  std::uint64_t slots_simulated = 0;
  std::uint64_t seed = 0;
  std::uint64_t raw_clicks = 0;
  std::uint64_t double_clicks = 0;
  SiftResult sift;
  double sifted_rate = 0.0;

  EfficiencyMonitor monitor{1};
  /// Gated slots where Eve aimed at the detector with her basis equal to Bob's.
  EfficiencyMonitor targeted{1};

  AlarmState alarm_start;
  AlarmState alarm_end;
  std::uint64_t alarm_from_suppressed = 0;
  std::uint64_t alarm_from_deadtime = 0;
  std::uint64_t suppressed_slots = 0;

  std::vector<FactorResult> factors;
  bool attacked = false;
  Verdict verdict = Verdict::key_ok;
  std::vector<std::string> notes;

  std::uint64_t alarm_increments() const {
    return static_cast<std::uint64_t>(alarm_end.counter - alarm_start.counter);
  }
  /// Eve knows every sifted bit and Bob still accepts the key.
  bool attack_succeeded() const;
};

struct SessionResult {
  SessionReport report;
  std::vector<SlotRecord> trace;  // every slot when record_trace, else only clicks
};

/// Runs one session from `alarm` (the device's lifetime counter). A bricked
/// device refuses to run and reports `bricked`.
SessionResult run_session(const ScenarioConfig& config, AlarmState alarm = {});

nlohmann::json to_json(const SessionReport& report);

void write_trace_csv(std::ostream& out, const std::vector<SlotRecord>& trace);

}  // namespace qkdblind
