#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "qkdblind/attack.hpp"
#include "qkdblind/calibration_data.hpp"
#include "support.hpp"

using namespace qkdblind;

namespace {

ThresholdSet make_set(DetectorThresholds d0, DetectorThresholds d1) {
  ThresholdSet t;
  t[kD0] = d0;
  t[kD1] = d1;
  return t;
}

const Margin& margin(const FeasibilityReport& r, const std::string& name) {
  for (const auto& m : r.margins) {
    if (m.name == name) return m;
  }
  FAIL("no margin " << name);
  throw;
}

std::vector<double> grid(double start, double stop, double step) {
  std::vector<double> g;
  for (std::size_t k = 0; start + k * step <= stop + 1e-9; ++k) g.push_back(start + k * step);
  return g;
}

// Expected click probability of a plan aimed at `d` when Bob's thresholds are `t`.
double plan_rate(const AttackPlan& plan, const ThresholdSet& t, DetectorId d, const TimingWindow& w) {
  double rate = 0.0;
  for (const auto& c : plan.for_target(d)) {
    const TriggerPulse pulse{c.energy_fJ, c.timing_offset_ns, plan.pulse_width_ns};
    rate += c.probability * pulse_click_probability(t, d, pulse, true, w);
  }
  return rate;
}

}  // namespace

TEST_CASE("strong conditions on the in-gate thresholds at the attack power") {
  const auto t = builtin::in_gate_curves().at(builtin::kAttackPower_mW);
  const auto r = analyze_feasibility(t);
  CHECK(r.strong_conditions_hold);
  CHECK(r.necessary_condition_holds);
  CHECK(r.mismatch_nogate_silent[0]);
  CHECK(r.mismatch_nogate_silent[1]);
  CHECK(r.diagnostics.empty());

  // [E_always,D0, min(2 min E_never, E_nogate,D0, 2 E_nogate,D1)] evaluated by hand.
  const double lo = t[kD0].gate_always_fJ;
  const double hi = std::min({2.0 * std::min(t[kD0].gate_never_fJ, t[kD1].gate_never_fJ),
                              t[kD0].nogate_never_fJ, 2.0 * t[kD1].nogate_never_fJ});
  const auto range = r.perfect_energy_range[0];
  CHECK(range.lo_fJ == lo);
  CHECK(range.hi_fJ == hi);
  CHECK(range.lo_fJ == doctest::Approx(180));
  CHECK(range.hi_fJ == doctest::Approx(308));
  CHECK(range.contains(252.0));
  CHECK(range.relative_half_width() >= 0.15);
  CHECK(r.perfect_energy_range[1].contains(252.0));

  const auto j = to_json(r);
  CHECK(j.at("strong_conditions_hold").get<bool>());
}

TEST_CASE("strict inequalities at the boundary") {
  // E_nogate_never == E_gate_always breaks the ordering.
  auto t = make_set({100, 150, 150}, {100, 150, 400});
  CHECK_FALSE(check_strong_conditions(t).threshold_order[0]);
  CHECK_FALSE(check_strong_conditions(t).strong_conditions_hold);
  // Half the largest E_gate_always equal to min E_gate_never.
  t = make_set({100, 200, 900}, {120, 180, 900});
  const auto r = check_strong_conditions(t);
  CHECK(r.threshold_order[0]);
  CHECK(r.threshold_order[1]);
  CHECK_FALSE(r.mismatch_silent);
  CHECK_FALSE(r.strong_conditions_hold);
  CHECK(perfect_energy_range(t, kD0).empty());
  // Just inside.
  t = make_set({100.001, 200, 900}, {120, 180, 900});
  CHECK(check_strong_conditions(t).strong_conditions_hold);
}

TEST_CASE("implications between the conditions on random threshold sets") {
  std::mt19937_64 gen(20240611);
  std::uniform_real_distribution<double> u(1.0, 1000.0);
  int strong_count = 0;
  for (int n = 0; n < 10000; ++n) {
    std::array<DetectorThresholds, 2> d;
    for (auto& x : d) {
      double a = u(gen), b = u(gen);
      if (a > b) std::swap(a, b);
      x = {a, b, u(gen)};
    }
    const auto t = make_set(d[0], d[1]);
    const auto r = analyze_feasibility(t);
    if (r.threshold_order[0] && r.threshold_order[1] && r.mismatch_silent) {
      ++strong_count;
      CHECK(r.mismatch_nogate_silent[0]);
      CHECK(r.mismatch_nogate_silent[1]);
      CHECK(r.necessary_condition_holds);
      for (auto dd : kDetectors) {
        const auto range = r.perfect_energy_range[dd.index()];
        REQUIRE_FALSE(range.empty());
        // Every energy in the interval clicks the target with certainty, never
        // clicks it without gate, and half of it clicks nothing.
        for (double e : {range.lo_fJ, range.centre(), std::nextafter(range.hi_fJ, 0.0)}) {
          CHECK(gate_click_probability(t[dd], e) == 1.0);
          CHECK(nogate_click_probability(t[dd], e, 0.0) == 0.0);
          for (auto other : kDetectors) {
            CHECK(gate_click_probability(t[other], 0.5 * e) == 0.0);
            CHECK(nogate_click_probability(t[other], 0.5 * e, 0.0) == 0.0);
          }
        }
      }
    }
    CHECK(r.necessary_condition_holds == (r.necessary[0] && r.necessary[1]));
  }
  CHECK(strong_count > 50);
}

TEST_CASE("original after-gate trigger against the suppression firmware") {
  const auto t = builtin::after_gate_curves().at(builtin::kAfterGatePower_mW);
  const auto r = analyze_feasibility(t);
  CHECK(check_necessary_condition(t));
  CHECK(r.necessary_condition_holds);
  CHECK_FALSE(r.strong_conditions_hold);
  CHECK_FALSE(r.threshold_order[0]);
  CHECK(t[kD0].gate_always_fJ == 720);
  CHECK(t[kD0].nogate_never_fJ == 710);
  const auto& m = margin(r, "nogate_never_over_gate_always_D0");
  CHECK(m.slack_fJ == doctest::Approx(-10));
  CHECK(std::abs(std::abs(m.relative) - 0.015) <= 0.002);
  CHECK(r.perfect_energy_range[0].empty());
  CHECK_FALSE(r.diagnostics.empty());
}

TEST_CASE("degenerate thresholds give no attack window") {
  const auto t = make_set({200, 200, 200}, {200, 200, 200});
  const auto r = analyze_feasibility(t);
  CHECK_FALSE(r.strong_conditions_hold);
  CHECK_FALSE(r.necessary_condition_holds);
  CHECK(r.perfect_energy_range[0].empty());
  CHECK(r.perfect_energy_range[1].empty());
  CHECK(r.perfect_energy_range[0].relative_half_width() == 0.0);
}

TEST_CASE("two-level energy plan") {
  const auto low = builtin::reduced_bias_curves().at(builtin::kAttackPower_mW);
  const auto high = builtin::in_gate_curves().at(builtin::kAttackPower_mW);
  const auto lo_level = builtin::reduced_level();
  const auto hi_level = builtin::standard_level();
  const auto g = grid(0.0, 3000.0, 0.5);
  const auto response = energy_response(low, high, lo_level.efficiency, hi_level.efficiency, g);
  const auto out = plan_two_level_energy_attack(response, builtin::kAttackPower_mW);
  REQUIRE(out.ok);
  CHECK(out.diagnostic.empty());
  CHECK_NOTHROW(out.plan.validate());

  const double limit = 2.0 * std::min({low[kD0].gate_never_fJ, low[kD1].gate_never_fJ,
                                       high[kD0].gate_never_fJ, high[kD1].gate_never_fJ});
  for (auto d : kDetectors) {
    const auto& mix = out.plan.for_target(d);
    REQUIRE(mix.size() == 2);
    // Always-click run: above both E_gate_always, below the mismatch and alarm limits.
    const double a_lo = std::max(low[d].gate_always_fJ, high[d].gate_always_fJ);
    double a_hi = 0.0;
    for (double e : g) {
      if (e < limit && e < std::min(low[d].nogate_never_fJ, high[d].nogate_never_fJ)) a_hi = e;
    }
    CHECK(mix[0].energy_fJ == doctest::Approx(0.5 * (a_lo + a_hi)));
    // Partial run: certain at the high setting, silent at the low one.
    CHECK(mix[1].energy_fJ == doctest::Approx(0.5 * (high[d].gate_always_fJ + low[d].gate_never_fJ)));
    CHECK(mix[0].probability == doctest::Approx(lo_level.efficiency[d.index()]));
    CHECK(mix[1].probability ==
          doctest::Approx(hi_level.efficiency[d.index()] - lo_level.efficiency[d.index()]));

    CHECK(plan_rate(out.plan, low, d, TimingWindow{}) ==
          doctest::Approx(lo_level.efficiency[d.index()]).epsilon(1e-12));
    CHECK(plan_rate(out.plan, high, d, TimingWindow{}) ==
          doctest::Approx(hi_level.efficiency[d.index()]).epsilon(1e-12));
  }
  CHECK(out.plan.for_target(kD0)[0].energy_fJ == doctest::Approx(260.75));
  CHECK(out.plan.for_target(kD0)[1].energy_fJ == doctest::Approx(185));
}

TEST_CASE("two-level timing plan") {
  const auto low = builtin::reduced_bias_curves().at(builtin::kAttackPower_mW);
  const auto high = builtin::in_gate_curves().at(builtin::kAttackPower_mW);
  const auto lo_w = builtin::reduced_timing_window();
  const auto hi_w = builtin::standard_timing_window();
  const auto lo_level = builtin::reduced_level();
  const auto hi_level = builtin::standard_level();
  const auto response = timing_response(low, lo_w, high, hi_w, lo_level.efficiency, hi_level.efficiency,
                                        builtin::kTimingAttackEnergy_fJ, grid(-1.4, 1.4, 0.01));
  const auto out = plan_two_level_timing_attack(response, builtin::kAttackPower_mW);
  REQUIRE(out.ok);
  CHECK_NOTHROW(out.plan.validate());
  for (auto d : kDetectors) {
    const auto& mix = out.plan.for_target(d);
    REQUIRE(mix.size() == 2);
    CHECK(std::abs(mix[0].timing_offset_ns) < std::abs(mix[1].timing_offset_ns));
    CHECK(mix[0].energy_fJ == builtin::kTimingAttackEnergy_fJ[d.index()]);
    CHECK(plan_rate(out.plan, low, d, lo_w) ==
          doctest::Approx(lo_level.efficiency[d.index()]).epsilon(1e-12));
    CHECK(plan_rate(out.plan, high, d, hi_w) ==
          doctest::Approx(hi_level.efficiency[d.index()]).epsilon(1e-12));
  }
}

TEST_CASE("plan falls back to partial control when levels cannot be separated") {
  const auto t = builtin::in_gate_curves().at(builtin::kAttackPower_mW);
  const auto response = energy_response(t, t, builtin::reduced_level().efficiency,
                                        builtin::standard_level().efficiency, grid(0, 3000, 0.5));
  const auto out = plan_two_level_energy_attack(response, 0.38);
  CHECK_FALSE(out.ok);
  CHECK(out.diagnostic.find("partial control") != std::string::npos);
  for (auto d : kDetectors) {
    REQUIRE(out.plan.for_target(d).size() == 1);
    CHECK(out.plan.for_target(d)[0].probability == builtin::standard_level().efficiency[d.index()]);
  }
}

TEST_CASE("beta matrix validation") {
  CHECK_THROWS_AS(BetaMatrix({{1, 1}, {0}}), ParameterError);
  CHECK_THROWS_AS(BetaMatrix({{1, 0.5}, {0, 1}}), ParameterError);
  CHECK_THROWS_AS(BetaMatrix({{1.2, 1.2}, {0, 1}}), ParameterError);
  const auto s = BetaMatrix::staircase(4);
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t i = 0; i < 4; ++i) CHECK(s(k, i) == (i >= k ? 1.0 : 0.0));
  }
}

TEST_CASE("decoy mixture for a staircase response") {
  const std::vector<double> etas{0.05, 0.1, 0.15, 0.2};
  const auto sol = solve_decoy_mixture(BetaMatrix::staircase(4), etas);
  CHECK(sol.status == DecoyMixtureSolution::Status::exact);
  // Forward substitution: q_1 = eta_1, q_k = eta_k - eta_{k-1}.
  for (std::size_t k = 0; k < 4; ++k) {
    const double expect = k == 0 ? etas[0] : etas[k] - etas[k - 1];
    CHECK(std::abs(sol.q[k] - expect) < 1e-12);
  }
  CHECK(sol.residual < 1e-12);
  CHECK(sol.violated_constraints.empty());
}

TEST_CASE("two-level decoy mixture") {
  const auto sol = solve_decoy_mixture(BetaMatrix({{1, 1}, {0, 1}}), {0.128, 0.226});
  CHECK(sol.status == DecoyMixtureSolution::Status::exact);
  CHECK(sol.q[0] == doctest::Approx(0.128).epsilon(1e-12));
  CHECK(sol.q[1] == doctest::Approx(0.098).epsilon(1e-12));
}

TEST_CASE("random well-conditioned mixtures are recovered") {
  std::mt19937_64 gen(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = 5;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::vector<double>> rows(n, std::vector<double>(n));
    for (std::size_t k = 0; k < n; ++k) {
      std::vector<double> below, above;
      for (std::size_t i = 0; i < k; ++i) below.push_back(0.2 * u(gen));
      for (std::size_t i = k; i < n; ++i) above.push_back(0.8 + 0.2 * u(gen));
      std::sort(below.begin(), below.end());
      std::sort(above.begin(), above.end());
      std::copy(below.begin(), below.end(), rows[k].begin());
      std::copy(above.begin(), above.end(), rows[k].begin() + static_cast<long>(k));
    }
    std::vector<double> q_star(n);
    double total = 0.0;
    for (auto& q : q_star) total += (q = 0.01 + u(gen));
    for (auto& q : q_star) q *= 0.9 / total;
    std::vector<double> eta(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < n; ++k) eta[i] += q_star[k] * rows[k][i];
    }
    const auto sol = solve_decoy_mixture(BetaMatrix(rows), eta);
    REQUIRE(sol.status == DecoyMixtureSolution::Status::exact);
    for (std::size_t k = 0; k < n; ++k) CHECK(std::abs(sol.q[k] - q_star[k]) < 1e-9);
  }
}

TEST_CASE("singular response matrix") {
  CHECK_THROWS_AS(solve_decoy_mixture(BetaMatrix({{0.5, 1}, {0.5, 1}}), {0.1, 0.2}), NumericalError);
  CHECK_THROWS_AS(solve_decoy_mixture(BetaMatrix::staircase(2), {0.2, 0.1}), ParameterError);
}

TEST_CASE("infeasible targets give the closest achievable mixture") {
  const BetaMatrix beta({{1, 1}, {0.9, 1}});
  const std::vector<double> eta{0.128, 0.226};
  const auto sol = solve_decoy_mixture(beta, eta);
  CHECK(sol.status == DecoyMixtureSolution::Status::partial_control);
  REQUIRE_FALSE(sol.violated_constraints.empty());
  CHECK(sol.violated_constraints.front().rfind("q_1 = -", 0) == 0);
  CHECK(sol.q_unconstrained[0] == doctest::Approx(-0.754));
  CHECK(sol.q_unconstrained[1] == doctest::Approx(0.98));
  CHECK(sol.q[0] >= 0.0);
  CHECK(sol.q[1] >= 0.0);
  CHECK(sol.q[0] + sol.q[1] <= 1.0 + 1e-12);

  // Brute-force minimum over the feasible triangle.
  auto resid = [&](double a, double b) {
    const double r0 = a * 1.0 + b * 0.9 - eta[0];
    const double r1 = a * 1.0 + b * 1.0 - eta[1];
    return std::sqrt(r0 * r0 + r1 * r1);
  };
  double best = 1e9;
  const int m = 2000;
  for (int i = 0; i <= m; ++i) {
    for (int j = 0; i + j <= m; ++j) best = std::min(best, resid(double(i) / m, double(j) / m));
  }
  CHECK(sol.residual <= best + 1e-9);
  CHECK(sol.residual == doctest::Approx(resid(sol.q[0], sol.q[1])).epsilon(1e-12));
}

TEST_CASE("attack plan validation") {
  auto p = AttackPlan::single_energy(0.38, 252);
  CHECK_NOTHROW(p.validate());
  CHECK(p.total_probability(kD1) == 1.0);
  p.mixture[0].push_back({100, 0, 0.5});
  CHECK_THROWS_AS(p.validate(), ParameterError);
  p = AttackPlan::single_energy(0.38, 252, AttackMode::in_gate, 2.0);
  CHECK_THROWS_AS(p.validate(), ParameterError);
  CHECK(parse_attack_mode("after_gate") == AttackMode::after_gate);
  CHECK_THROWS(parse_attack_mode("sideways"));
}
