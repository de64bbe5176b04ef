#include <doctest.h>

#include <cmath>
#include <sstream>

#include "qkdblind/calibration_data.hpp"
#include "qkdblind/session.hpp"
#include "support.hpp"

using namespace qkdblind;

namespace {

ScenarioConfig honest(std::uint64_t n, double t) {
  ScenarioConfig c;
  c.n_slots = n;
  c.seed = 17;
  c.channel_transmittance = t;
  c.countermeasure = CountermeasurePolicy::unprotected(builtin::standard_level());
  c.thresholds = {builtin::in_gate_curves().at(builtin::kAttackPower_mW)};
  return c;
}

ScenarioConfig attacked(std::uint64_t n, double energy_fJ) {
  auto c = honest(n, 1.0);
  c.eve = EveConfig{AttackPlan::single_energy(builtin::kAttackPower_mW, energy_fJ), 1.0};
  return c;
}

}  // namespace

TEST_CASE("honest detection rate without deadtime") {
  auto c = honest(400'000, 0.2);
  c.deadtime_enabled = false;
  const auto r = run_session(c).report;
  // One photon reaches the detector chosen by the basis/bit logic; each
  // detector fires with its own efficiency, so the mean is their average.
  const double p = 0.2 * 0.5 * (0.226 + 0.189);
  CHECK(test::binomially_close(r.raw_clicks, c.n_slots, p));
  CHECK(test::binomially_close(r.sift.sifted, c.n_slots, 0.5 * p));
  CHECK(r.sift.errors == 0);
  CHECK(r.double_clicks == 0);
  CHECK(r.verdict == Verdict::key_ok);
  CHECK_FALSE(r.attacked);
  CHECK(r.alarm_increments() == 0);
}

TEST_CASE("honest detection rate with deadtime") {
  auto c = honest(400'000, 0.2);
  const auto r = run_session(c).report;
  const double p = 0.2 * 0.5 * (0.226 + 0.189);
  // Every detection is followed by 50 ungated slots: renewal rate p / (1 + 50 p).
  const double rate = p / (1.0 + kDeadtimeGates * p);
  CHECK(test::binomially_close(r.raw_clicks, c.n_slots, rate, 4.0));
}

TEST_CASE("QBER tracks the channel bit flip probability") {
  auto c = honest(400'000, 0.5);
  c.deadtime_enabled = false;
  c.bit_flip_probability = 0.05;
  const auto r = run_session(c).report;
  CHECK(test::binomially_close(r.sift.errors, r.sift.sifted, 0.05));
  CHECK(r.verdict == Verdict::key_ok);

  c.bit_flip_probability = 0.2;
  CHECK(run_session(c).report.verdict == Verdict::aborted_qber);
}

TEST_CASE("sessions are deterministic in the seed") {
  auto c = honest(50'000, 0.3);
  c.record_trace = true;
  const auto a = run_session(c);
  const auto b = run_session(c);
  CHECK(to_json(a.report) == to_json(b.report));
  std::ostringstream sa, sb;
  write_trace_csv(sa, a.trace);
  write_trace_csv(sb, b.trace);
  CHECK(sa.str() == sb.str());
  c.seed = 18;
  CHECK(to_json(run_session(c).report) != to_json(a.report));
}

TEST_CASE("no two detections within the deadtime") {
  for (bool eve : {false, true}) {
    auto c = eve ? attacked(100'000, 252) : honest(100'000, 1.0);
    c.record_trace = true;
    const auto res = run_session(c);
    std::int64_t last = -1'000'000;
    std::uint64_t detections = 0;
    for (const auto& rec : res.trace) {
      if (rec.click[0] || rec.click[1]) {
        ++detections;
        CHECK(static_cast<std::int64_t>(rec.slot) - last > kDeadtimeGates);
        last = static_cast<std::int64_t>(rec.slot);
      } else if (static_cast<std::int64_t>(rec.slot) - last <= kDeadtimeGates) {
        CHECK_FALSE(rec.gated);
      }
    }
    CHECK(detections > 100);
  }
}

TEST_CASE("perfect faked-state control across the energy window") {
  const auto t = builtin::in_gate_curves().at(builtin::kAttackPower_mW);
  for (double e : {181.0, 220.0, 252.0, 300.0}) {
    auto c = attacked(200'000, e);
    const auto r = run_session(c).report;
    CHECK(r.sift.sifted > 0);
    CHECK(r.sift.errors == 0);
    CHECK(r.double_clicks == 0);
    CHECK(r.sift.eve_bob_agreement == r.sift.sifted);
    CHECK(r.alarm_increments() == 0);
    CHECK(r.verdict == Verdict::key_ok);
    CHECK(r.attack_succeeded());
    // Targeted gated slots click with certainty inside the window.
    for (auto d : kDetectors) CHECK(r.targeted.counts(d, 0).rate() == 1.0);
    CHECK(gate_click_probability(t[kD0], e) == 1.0);
  }
}

TEST_CASE("energy below the window leaves Bob's rate short") {
  auto c = attacked(100'000, 150);
  const auto r = run_session(c).report;
  CHECK(r.raw_clicks == 0);
  CHECK(r.verdict == Verdict::failed_low_rate);
}

TEST_CASE("an unblinded detector clicks on every gate") {
  auto c = attacked(20'000, 252);
  c.eve->plan.blinding_power_mW = 0.01;
  c.deadtime_enabled = false;
  const auto r = run_session(c).report;
  CHECK(r.double_clicks == r.raw_clicks);
  CHECK(r.raw_clicks == c.n_slots);
  CHECK(r.verdict == Verdict::aborted_qber);
}

TEST_CASE("suppressed gates expose clicks from an after-gate trigger") {
  auto c = attacked(1'000'000, 720);
  c.countermeasure = CountermeasurePolicy::gate_suppression(0.02, builtin::standard_level());
  c.thresholds = {builtin::after_gate_curves().at(builtin::kAfterGatePower_mW)};
  c.eve->plan = AttackPlan::single_energy(builtin::kAfterGatePower_mW, 720, AttackMode::after_gate);
  const auto r = run_session(c).report;
  CHECK(r.verdict == Verdict::bricked);
  CHECK(r.alarm_end.counter == 15);
  CHECK(r.alarm_from_suppressed + r.alarm_from_deadtime == 15);
  CHECK(r.slots_simulated < c.n_slots);

  c.deadtime_clicks_count_toward_alarm = false;
  const auto s = run_session(c).report;
  CHECK(s.verdict == Verdict::bricked);
  CHECK(s.alarm_from_suppressed == 15);
  CHECK(s.alarm_from_deadtime == 0);
}

TEST_CASE("a bricked receiver refuses to run") {
  const auto r = run_session(honest(1000, 0.1), AlarmState{15, true}).report;
  CHECK(r.verdict == Verdict::bricked);
  CHECK(r.slots_simulated == 0);
  CHECK(r.raw_clicks == 0);
}

TEST_CASE("sifting") {
  std::vector<SlotRecord> recs(4);
  recs[0].click = {true, false};
  recs[0].alice_bit = 0;
  recs[1].click = {false, true};
  recs[1].bob_bit = 1;
  recs[1].alice_bit = 0;
  recs[2].click = {true, false};
  recs[2].bob_basis = 1;
  const auto s = sift(recs);
  CHECK(s.sifted == 2);
  CHECK(s.errors == 1);
  CHECK(s.qber == 0.5);
}

TEST_CASE("config validation") {
  auto c = honest(10, 0.1);
  CHECK_NOTHROW(c.validate());
  c.channel_transmittance = 0.0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = honest(10, 0.1);
  c.thresholds.push_back(c.thresholds.front());
  CHECK_THROWS_AS(c.validate(), ParameterError);
}
