// Acceptance gate: one [PASS]/[FAIL] line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "qkdblind/attack.hpp"
#include "qkdblind/calibration_data.hpp"
#include "qkdblind/config.hpp"
#include "qkdblind/electrothermal.hpp"
#include "qkdblind/session.hpp"

using namespace qkdblind;

namespace {

const std::string kData = QKDBLIND_DATA_DIR;

// Tolerances and runtime budgets.
constexpr double kHeatTol = 0.005;
constexpr double kShiftTol = 0.01;
constexpr double kGainTol = 0.01;
constexpr double kOnsetTol = 0.20;
constexpr double kMixtureTol = 1e-9;
constexpr double kStaircaseTol = 1e-12;
constexpr double kRateSigmas = 3.0;
constexpr double kFactorSigmas = 5.0;
constexpr double kMinHalfWidth = 0.15;
constexpr double kEnergyRobustness = 0.21;
constexpr double kTimingRobustness_ns = 1.3;
constexpr double kBudget1_s = 1.0;
constexpr double kBudget2_s = 10.0;
constexpr double kBudget3_s = 30.0;
constexpr double kBudget4_s = 60.0;
constexpr double kBudget5_s = 120.0;
constexpr double kBudget6_s = 180.0;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

bool rel_close(double a, double b, double rel) { return std::abs(a - b) <= rel * std::abs(b); }

bool rate_close(const LevelCounts& c, double p, double sigmas) {
  const double sd = std::sqrt(p * (1.0 - p) / static_cast<double>(c.slots));
  return std::abs(c.rate() - p) <= sigmas * sd;
}

Outcome circuit_arithmetic() {
  Outcome o;
  const CircuitParams p;
  const double h0 = heat_dissipation(54.14, 1.12, 0.564);
  const double h1 = heat_dissipation(53.484, 1.224, 0.564);
  o.require(rel_close(h0, 61.2, kHeatTol), "heat 61.2 mW, got " + fmt(h0));
  o.require(rel_close(h1, 66.03, kHeatTol), "heat 66.03 mW, got " + fmt(h1));
  const double s0 = vbr_shift(61.2, p);
  const double s1 = vbr_shift(66.03, p);
  o.require(rel_close(s0, 1.16, kShiftTol), "shift 1.16 V, got " + fmt(s0));
  o.require(rel_close(s1, 1.25, kShiftTol), "shift 1.25 V, got " + fmt(s1));
  const double g0 = gain_from_charge(1.467 - 1.053, 0.32);
  const double g1 = gain_from_charge(1.613 - 1.053, 0.32);
  o.require(rel_close(g0, 1.3, kGainTol), "gain 1.3 A/W, got " + fmt(g0));
  o.require(rel_close(g1, 1.76, kGainTol), "gain 1.76 A/W, got " + fmt(g1));
  double worst = 0.0;
  for (double vt = -56.0; vt <= -30.0; vt += 0.013) {
    const double expect = vt + (vt - p.v_bias_V) * p.r_sense_ohm / p.r_load_ohm;
    worst = std::max(worst, std::abs(vapd_from_testpoint(vt, p) - expect) / std::abs(expect));
  }
  o.require(worst <= 4 * std::numeric_limits<double>::epsilon(), "test-point conversion off by " + fmt(worst));
  o.note("heat " + fmt(h0) + "/" + fmt(h1) + " mW, shift " + fmt(s0) + "/" + fmt(s1) + " V, gain " +
         fmt(g0) + "/" + fmt(g1) + " A/W");
  return o;
}

Outcome blinding_thresholds() {
  Outcome o;
  for (auto d : kDetectors) {
    const auto params = builtin::circuit_params(d);
    const auto gain = builtin::gain_curve(d);
    const double onset = blinding_threshold(params, gain);
    const double target = builtin::kBlindingOnset_mW[d.index()];
    o.require(rel_close(onset, target, kOnsetTol), d.name() + " onset " + fmt(onset) + " mW");
    double prev = std::numeric_limits<double>::infinity();
    bool monotone = true;
    for (int k = 0; k <= 110; ++k) {
      const double v = steady_state(params, gain, 0.01 * k).v_apd_V;
      monotone = monotone && v <= prev;
      prev = v;
    }
    o.require(monotone, d.name() + " v_apd not monotone over 0-1.1 mW");
    o.note(d.name() + " onset " + fmt(onset * 1000.0) + " uW (target " + fmt(target * 1000.0) + ")");
  }
  return o;
}

Outcome feasibility_math() {
  Outcome o;
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(1.0, 1000.0);
  int implication_failures = 0;
  int strong_sets = 0;
  for (int n = 0; n < 10000; ++n) {
    ThresholdSet t;
    for (auto d : kDetectors) {
      double a = u(gen), b = u(gen);
      if (a > b) std::swap(a, b);
      t[d] = {a, b, u(gen)};
    }
    const auto r = analyze_feasibility(t);
    const bool eq1 = r.threshold_order[0] && r.threshold_order[1];
    if (eq1 && r.mismatch_silent) {
      ++strong_sets;
      if (!(r.mismatch_nogate_silent[0] && r.mismatch_nogate_silent[1])) ++implication_failures;
      if (!r.necessary_condition_holds) ++implication_failures;
    }
  }
  o.require(implication_failures == 0, std::to_string(implication_failures) + " counterexamples");

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 5;
    std::vector<std::vector<double>> rows(n, std::vector<double>(n));
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t i = 0; i < n; ++i) rows[k][i] = i < k ? 0.2 * unit(gen) : 0.8 + 0.2 * unit(gen);
      std::sort(rows[k].begin(), rows[k].begin() + static_cast<long>(k));
      std::sort(rows[k].begin() + static_cast<long>(k), rows[k].end());
    }
    std::vector<double> q(n);
    double total = 0.0;
    for (auto& x : q) total += (x = 0.01 + unit(gen));
    for (auto& x : q) x *= 0.9 / total;
    std::vector<double> eta(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < n; ++k) eta[i] += q[k] * rows[k][i];
    }
    const auto sol = solve_decoy_mixture(BetaMatrix(rows), eta);
    if (sol.status != DecoyMixtureSolution::Status::exact) worst = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) worst = std::max(worst, std::abs(sol.q[k] - q[k]));
  }
  o.require(worst <= kMixtureTol, "planted mixture error " + fmt(worst));

  const std::vector<double> etas{0.03, 0.07, 0.12, 0.2, 0.31};
  const auto st = solve_decoy_mixture(BetaMatrix::staircase(etas.size()), etas);
  double stair = 0.0;
  for (std::size_t k = 0; k < etas.size(); ++k) {
    stair = std::max(stair, std::abs(st.q[k] - (k ? etas[k] - etas[k - 1] : etas[0])));
  }
  o.require(stair <= kStaircaseTol, "staircase error " + fmt(stair));
  o.note(std::to_string(strong_sets) + " strong sets, 0 counterexamples required; mixture error " +
         fmt(worst, 2) + ", staircase error " + fmt(stair, 2));
  return o;
}

Outcome original_attack_bricks() {
  Outcome o;
  auto sc = load_scenario(kData + "/scenarios/original_attack_bricks.json");
  const auto& t = sc.session.thresholds[0];
  o.require(t[kD0].gate_always_fJ == 720.0 && t[kD0].nogate_never_fJ == 710.0,
            "after-gate thresholds are not 720/710 fJ");
  // Count only clicks in suppressed gates so the 15 alarms are exactly those.
  sc.session.deadtime_clicks_count_toward_alarm = false;
  const auto r = run_session(sc.session).report;
  o.require(r.verdict == Verdict::bricked, "verdict " + to_string(r.verdict));
  o.require(r.alarm_from_suppressed == 15, "suppressed-slot clicks " + std::to_string(r.alarm_from_suppressed));
  o.require(r.slots_simulated <= 1'000'000, "ran past 1e6 slots");
  o.note("bricked at slot " + std::to_string(r.slots_simulated) + " after " +
         std::to_string(r.alarm_from_suppressed) + " suppressed-slot clicks");
  sc.session.deadtime_clicks_count_toward_alarm = true;
  const auto d = run_session(sc.session).report;
  o.require(d.verdict == Verdict::bricked, "default alarm accounting does not brick");
  o.note("with deadtime clicks counted: slot " + std::to_string(d.slots_simulated));
  return o;
}

bool attack_clean(const SessionReport& r) {
  return r.verdict == Verdict::key_ok && r.alarm_increments() == 0 && r.sift.sifted > 0 &&
         r.sift.errors == 0 && r.attack_succeeded();
}

Outcome modified_attack() {
  Outcome o;
  auto sc = load_scenario(kData + "/scenarios/modified_attack_vs_suppression.json");
  const auto r = run_session(sc.session).report;
  o.require(r.n_slots == 1'000'000, "session length");
  o.require(r.alarm_increments() == 0, "alarm " + std::to_string(r.alarm_increments()));
  o.require(r.sift.errors == 0, "QBER " + fmt(r.sift.qber));
  o.require(r.sift.sifted > 0, "no sifted key");
  o.require(attack_clean(r), "attack not successful");

  const auto range = perfect_energy_range(builtin::in_gate_curves().at(builtin::kAttackPower_mW), kD0);
  o.require(range.contains(252.0), "252 fJ outside the perfect range");
  o.require(range.relative_half_width() >= kMinHalfWidth,
            "relative half-width " + fmt(range.relative_half_width()));

  const double e0 = sc.session.eve->plan.for_target(kD0).front().energy_fJ;
  auto variant = sc.session;
  variant.n_slots = 200'000;
  for (double scale : {1.0 - kEnergyRobustness, 1.0 + kEnergyRobustness}) {
    variant.eve->plan = AttackPlan::single_energy(builtin::kAttackPower_mW, e0 * scale);
    o.require(attack_clean(run_session(variant).report), "energy x" + fmt(scale));
  }
  for (double offset : {-kTimingRobustness_ns, kTimingRobustness_ns}) {
    variant.eve->plan = AttackPlan::single_energy(builtin::kAttackPower_mW, e0, AttackMode::in_gate, offset);
    o.require(attack_clean(run_session(variant).report), "timing " + fmt(offset) + " ns");
  }
  o.note("sifted " + std::to_string(r.sift.sifted) + ", errors 0, alarm 0, range [" + fmt(range.lo_fJ) +
         ", " + fmt(range.hi_fJ) + "] fJ half-width " + fmt(range.relative_half_width(), 3));
  return o;
}

// Gated slots Eve aimed at `d` with Bob's basis matching hers, per efficiency level.
void check_targeted(Outcome& o, const SessionReport& r, const std::array<double, 2>& lo,
                    const std::array<double, 2>& hi, const std::string& label) {
  for (auto d : kDetectors) {
    const auto& c_lo = r.targeted.counts(d, 0);
    const auto& c_hi = r.targeted.counts(d, 1);
    o.require(rate_close(c_lo, lo[d.index()], kRateSigmas),
              label + " " + d.name() + " low rate " + fmt(c_lo.rate()) + " vs " + fmt(lo[d.index()]));
    o.require(rate_close(c_hi, hi[d.index()], kRateSigmas),
              label + " " + d.name() + " high rate " + fmt(c_hi.rate()) + " vs " + fmt(hi[d.index()]));
  }
}

void check_factors_clear(Outcome& o, const SessionReport& r, const std::string& label) {
  o.require(r.factors.size() == 2, label + ": factors missing");
  for (const auto& f : r.factors) {
    o.require(std::abs(f.estimate.factor) <= kFactorSigmas * f.estimate.std_error,
              label + " " + f.detector.name() + " factor " + fmt(f.estimate.factor));
  }
}

Outcome two_level_statistics() {
  Outcome o;
  // Honest.
  const auto honest = run_session(load_scenario(kData + "/scenarios/two_level_honest.json").session).report;
  check_factors_clear(o, honest, "honest");
  o.require(honest.verdict == Verdict::key_ok, "honest verdict " + to_string(honest.verdict));

  // Naive fixed energy: clicks independent of the level, R = q * 1/2 (basis) * 1/2 (target).
  const auto naive_sc = load_scenario(kData + "/scenarios/two_level_naive_attack.json");
  const double q = naive_sc.session.eve->plan.for_target(kD0).front().probability;
  const double rate = q * 0.25;
  const auto naive = run_session(naive_sc.session).report;
  o.require(naive.verdict == Verdict::attack_detected, "naive verdict " + to_string(naive.verdict));
  for (const auto& f : naive.factors) {
    o.require(f.estimate.factor > kFactorSigmas * f.estimate.std_error, "naive factor not detected");
    o.require(std::abs(f.estimate.factor - rate) <= kRateSigmas * f.estimate.std_error,
              "naive factor " + fmt(f.estimate.factor) + " vs R = " + fmt(rate));
  }

  // Mixture plan against levels (P0, P0/2): q = P0/2 for each trigger.
  auto sc = load_scenario(kData + "/scenarios/two_level_energy_attack.json").session;
  std::array<double, 2> p0{}, half{};
  for (auto d : kDetectors) {
    p0[d.index()] = builtin::standard_level().efficiency[d.index()];
    half[d.index()] = 0.5 * p0[d.index()];
  }
  sc.countermeasure.levels[0].efficiency = half;
  sc.countermeasure.levels[1].efficiency = p0;
  std::vector<double> grid;
  for (int k = 0; k <= 6000; ++k) grid.push_back(0.5 * k);
  const auto plan = plan_two_level_energy_attack(
      energy_response(sc.thresholds[0], sc.thresholds[1], half, p0, grid), builtin::kAttackPower_mW);
  o.require(plan.ok, "plan failed: " + plan.diagnostic);
  for (auto d : kDetectors) {
    for (const auto& c : plan.plan.for_target(d)) {
      o.require(std::abs(c.probability - half[d.index()]) < 1e-12, "q != P0/2");
    }
  }
  sc.eve->plan = plan.plan;
  const auto equal = run_session(sc).report;
  check_targeted(o, equal, half, p0, "P0/2 plan");
  check_factors_clear(o, equal, "P0/2 plan");
  o.require(equal.alarm_increments() == 0, "P0/2 plan alarm");
  o.require(equal.verdict == Verdict::key_ok, "P0/2 plan verdict " + to_string(equal.verdict));

  // Measured levels (22.6/12.8 and 18.9/9.7) with the matching plan.
  const auto measured_sc = load_scenario(kData + "/scenarios/two_level_energy_attack.json").session;
  const auto measured = run_session(measured_sc).report;
  check_targeted(o, measured, builtin::reduced_level().efficiency, builtin::standard_level().efficiency,
                 "measured-level plan");
  check_factors_clear(o, measured, "measured-level plan");
  o.require(measured.alarm_increments() == 0, "measured-level plan alarm");
  o.require(measured.verdict == Verdict::key_ok, "measured-level verdict " + to_string(measured.verdict));
  o.require(measured.attack_succeeded(), "measured-level plan did not leave Eve the full key");

  auto factor_text = [](const SessionReport& r) {
    std::string s;
    for (const auto& f : r.factors) {
      s += (s.empty() ? "" : ",") + f.detector.name() + " " + fmt(f.estimate.factor, 3) + "+-" +
           fmt(f.estimate.std_error, 2);
    }
    return s;
  };
  o.note("honest " + factor_text(honest) + "; naive " + factor_text(naive) + "; P0/2 plan " +
         factor_text(equal) + "; measured plan " + factor_text(measured));
  return o;
}

Outcome reproducibility() {
  Outcome o;
  auto sc = load_scenario(kData + "/scenarios/honest.json");
  const auto a = to_json(run_session(sc.session).report).dump(2);
  const auto b = to_json(run_session(sc.session).report).dump(2);
  o.require(a == b, "reports differ between runs");

  sc.session.record_trace = true;
  const auto res = run_session(sc.session);
  long long last = -1'000'000;
  std::uint64_t violations = 0;
  std::uint64_t clicks = 0;
  for (const auto& rec : res.trace) {
    if (!(rec.click[0] || rec.click[1])) continue;
    ++clicks;
    if (static_cast<long long>(rec.slot) - last <= kDeadtimeGates) ++violations;
    last = static_cast<long long>(rec.slot);
  }
  o.require(res.trace.size() == sc.session.n_slots, "trace incomplete");
  o.require(violations == 0, std::to_string(violations) + " clicks inside the deadtime");
  o.require(clicks > 0, "no clicks in the honest trace");
  o.note(std::to_string(a.size()) + "-byte reports identical; " + std::to_string(clicks) +
         " clicks, no deadtime violations");
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    const char* id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"AC1", "circuit arithmetic", kBudget1_s, circuit_arithmetic},
      {"AC2", "blinding thresholds", kBudget2_s, blinding_thresholds},
      {"AC3", "feasibility math", kBudget3_s, feasibility_math},
      {"AC4", "gate suppression bricks the after-gate attack", kBudget4_s, original_attack_bricks},
      {"AC5", "in-gate attack passes gate suppression", kBudget5_s, modified_attack},
      {"AC6", "two-level countermeasure statistics", kBudget6_s, two_level_statistics},
      {"AC7", "reproducibility and deadtime", kBudget6_s, reproducibility},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    o.require(seconds < c.budget_s, "runtime " + fmt(seconds) + " s over " + fmt(c.budget_s) + " s");
    std::printf("[%s] %s %s (%.2f s): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, seconds,
                o.detail.c_str());
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
