#include "qkdblind/attack.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "qkdblind/csv.hpp"

namespace qkdblind {
namespace {

constexpr double kProbabilityTol = 1e-12;

Margin make_margin(std::string name, double larger_side, double smaller_side) {
  Margin m;
  m.name = std::move(name);
  m.slack_fJ = larger_side - smaller_side;
  const double scale = std::max(std::abs(larger_side), std::abs(smaller_side));
  m.relative = scale > 0.0 ? m.slack_fJ / scale : 0.0;
  return m;
}

struct Run {
  std::size_t first = 0;
  std::size_t last = 0;
  std::size_t length() const { return last - first + 1; }
};

// Longest run of consecutive grid indices satisfying `pred`.
template <class Pred>
std::optional<Run> longest_run(std::size_t n, Pred pred) {
  std::optional<Run> best;
  std::optional<Run> cur;
  for (std::size_t i = 0; i < n; ++i) {
    if (pred(i)) {
      if (cur) {
        cur->last = i;
      } else {
        cur = Run{i, i};
      }
      if (!best || cur->length() > best->length()) best = cur;
    } else {
      cur.reset();
    }
  }
  return best;
}

void check_curve(const LevelResponseCurve& c, const std::string& who) {
  if (c.x.empty() || c.x.size() != c.p_low.size() || c.x.size() != c.p_high.size()) {
    throw ParameterError(who + ": response curve columns must be non-empty and equal length");
  }
}

// Projection onto {q >= 0, sum q <= 1}.
Eigen::VectorXd project_capped_simplex(const Eigen::VectorXd& v) {
  Eigen::VectorXd clipped = v.cwiseMax(0.0);
  if (clipped.sum() <= 1.0) return clipped;
  std::vector<double> sorted(v.data(), v.data() + v.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (std::size_t j = 0; j < sorted.size(); ++j) {
    cumulative += sorted[j];
    const double t = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (sorted[j] - t > 0.0) theta = t;
  }
  return (v.array() - theta).cwiseMax(0.0).matrix();
}

}  // namespace

std::string to_string(AttackMode m) { return m == AttackMode::in_gate ? "in_gate" : "after_gate"; }

AttackMode parse_attack_mode(std::string_view text) {
  if (text == "in_gate") return AttackMode::in_gate;
  if (text == "after_gate") return AttackMode::after_gate;
  throw ParameterError("unknown attack mode '" + std::string(text) + "'");
}

double AttackPlan::total_probability(DetectorId d) const {
  double total = 0.0;
  for (const auto& c : for_target(d)) total += c.probability;
  return total;
}

void AttackPlan::validate() const {
  if (!(blinding_power_mW >= 0.0)) throw ParameterError("blinding power must be non-negative");
  if (!(pulse_width_ns > 0.0)) throw ParameterError("trigger pulse width must be positive");
  for (auto d : kDetectors) {
    for (const auto& c : for_target(d)) {
      if (!(c.energy_fJ >= 0.0)) throw ParameterError(d.name() + ": negative trigger energy");
      if (!(c.probability >= 0.0)) throw ParameterError(d.name() + ": negative mixture probability");
      if (mode == AttackMode::in_gate && std::abs(c.timing_offset_ns) > gate_half_width_ns) {
        throw ParameterError(d.name() + ": in-gate trigger offset outside the gate");
      }
    }
    if (total_probability(d) > 1.0 + kProbabilityTol) {
      throw ParameterError(d.name() + ": mixture probabilities exceed 1");
    }
  }
}

AttackPlan AttackPlan::single_energy(double blinding_power_mW, double energy_fJ, AttackMode mode,
                                     double timing_offset_ns) {
  AttackPlan p;
  p.blinding_power_mW = blinding_power_mW;
  p.mode = mode;
  for (auto& m : p.mixture) m = {TriggerComponent{energy_fJ, timing_offset_ns, 1.0}};
  return p;
}

nlohmann::json to_json(const AttackPlan& plan) {
  nlohmann::json j;
  j["mode"] = to_string(plan.mode);
  j["blinding_power_mW"] = plan.blinding_power_mW;
  j["pulse_width_ns"] = plan.pulse_width_ns;
  for (auto d : kDetectors) {
    auto arr = nlohmann::json::array();
    for (const auto& c : plan.for_target(d)) {
      arr.push_back({{"energy_fJ", c.energy_fJ},
                     {"timing_offset_ns", c.timing_offset_ns},
                     {"probability", c.probability}});
    }
    j["mixture_" + d.name()] = arr;
  }
  return j;
}

FeasibilityReport check_strong_conditions(const ThresholdSet& t) {
  t.validate();
  FeasibilityReport r;
  double max_always = 0.0;
  double min_never = std::numeric_limits<double>::infinity();
  for (auto d : kDetectors) {
    const auto& x = t[d];
    r.threshold_order[d.index()] =
        x.nogate_never_fJ > x.gate_always_fJ && x.gate_always_fJ > x.gate_never_fJ;
    max_always = std::max(max_always, x.gate_always_fJ);
    min_never = std::min(min_never, x.gate_never_fJ);
    r.margins.push_back(make_margin("nogate_never_over_gate_always_" + d.name(), x.nogate_never_fJ,
                                    x.gate_always_fJ));
    r.margins.push_back(make_margin("gate_always_over_gate_never_" + d.name(), x.gate_always_fJ,
                                    x.gate_never_fJ));
  }
  r.mismatch_silent = 0.5 * max_always < min_never;
  r.margins.push_back(make_margin("mismatch_min_gate_never_over_half_max_gate_always", min_never,
                                  0.5 * max_always));
  for (auto d : kDetectors) {
    const double half = 0.5 * t[d].gate_always_fJ;
    const double other_nogate = t[d.other()].nogate_never_fJ;
    r.mismatch_nogate_silent[d.index()] = half < other_nogate;
    r.margins.push_back(make_margin("mismatch_nogate_" + d.other().name() + "_over_half_gate_always_" +
                                        d.name(),
                                    other_nogate, half));
  }
  r.strong_conditions_hold = r.threshold_order[0] && r.threshold_order[1] && r.mismatch_silent;
  if (r.strong_conditions_hold && !(r.mismatch_nogate_silent[0] && r.mismatch_nogate_silent[1])) {
    // Cannot happen: ordering plus the mismatch condition imply this one.
    r.diagnostics.push_back("internal inconsistency: strong conditions hold but the no-gate "
                            "mismatch condition fails");
  }
  for (auto d : kDetectors) {
    if (!r.threshold_order[d.index()]) {
      r.diagnostics.push_back(d.name() + ": violates E_nogate_never > E_gate_always > E_gate_never");
    }
  }
  if (!r.mismatch_silent) {
    r.diagnostics.push_back("basis mismatch: half of max E_gate_always is not below min E_gate_never");
  }
  return r;
}

bool check_necessary_condition(const ThresholdSet& t, std::optional<DetectorId> target) {
  t.validate();
  auto holds = [&](DetectorId d) { return t[d].nogate_never_fJ > t[d].gate_never_fJ; };
  if (target) return holds(*target);
  return holds(kD0) && holds(kD1);
}

EnergyInterval perfect_energy_range(const ThresholdSet& t, DetectorId target,
                                    std::string* diagnostic) {
  const auto strong = check_strong_conditions(t);
  if (!strong.strong_conditions_hold) {
    if (diagnostic) {
      *diagnostic = strong.diagnostics.empty() ? "strong conditions violated"
                                               : strong.diagnostics.front();
    }
    return {};
  }
  const double min_never = std::min(t[kD0].gate_never_fJ, t[kD1].gate_never_fJ);
  EnergyInterval r;
  r.lo_fJ = t[target].gate_always_fJ;
  r.hi_fJ = std::min({2.0 * min_never, t[target].nogate_never_fJ,
                      2.0 * t[target.other()].nogate_never_fJ});
  if (r.empty()) {
    if (diagnostic) *diagnostic = "perfect-attack interval is empty";
    return {};
  }
  return r;
}

FeasibilityReport analyze_feasibility(const ThresholdSet& t) {
  auto r = check_strong_conditions(t);
  for (auto d : kDetectors) {
    r.necessary[d.index()] = check_necessary_condition(t, d);
    r.margins.push_back(make_margin("nogate_never_over_gate_never_" + d.name(), t[d].nogate_never_fJ,
                                    t[d].gate_never_fJ));
    std::string diag;
    r.perfect_energy_range[d.index()] = perfect_energy_range(t, d, &diag);
    if (r.strong_conditions_hold && !diag.empty()) r.diagnostics.push_back(d.name() + ": " + diag);
  }
  r.necessary_condition_holds = r.necessary[0] && r.necessary[1];
  if (r.strong_conditions_hold && !r.necessary_condition_holds) {
    r.diagnostics.push_back("internal inconsistency: strong conditions hold without the necessary one");
  }
  return r;
}

nlohmann::json to_json(const FeasibilityReport& r) {
  nlohmann::json j;
  j["strong_conditions_hold"] = r.strong_conditions_hold;
  j["necessary_condition_holds"] = r.necessary_condition_holds;
  for (auto d : kDetectors) {
    const auto i = static_cast<std::size_t>(d.index());
    nlohmann::json dj;
    dj["threshold_order"] = r.threshold_order[i];
    dj["mismatch_nogate_silent"] = r.mismatch_nogate_silent[i];
    dj["necessary"] = r.necessary[i];
    const auto& range = r.perfect_energy_range[i];
    if (range.empty()) {
      dj["perfect_energy_range_fJ"] = nullptr;
    } else {
      dj["perfect_energy_range_fJ"] = {range.lo_fJ, range.hi_fJ};
      dj["perfect_energy_relative_half_width"] = range.relative_half_width();
    }
    j["detectors"][d.name()] = dj;
  }
  j["mismatch_silent"] = r.mismatch_silent;
  auto margins = nlohmann::json::object();
  for (const auto& m : r.margins) margins[m.name] = {{"slack_fJ", m.slack_fJ}, {"relative", m.relative}};
  j["margins"] = margins;
  j["diagnostics"] = r.diagnostics;
  return j;
}

TwoLevelResponse energy_response(const ThresholdSet& low, const ThresholdSet& high,
                                 const std::array<double, 2>& eta_low,
                                 const std::array<double, 2>& eta_high,
                                 const std::vector<double>& energy_grid_fJ) {
  TwoLevelResponse r;
  r.eta_low = eta_low;
  r.eta_high = eta_high;
  double min_never = std::numeric_limits<double>::infinity();
  for (auto d : kDetectors) {
    auto& c = r.detectors[d.index()];
    c.x = energy_grid_fJ;
    for (double e : energy_grid_fJ) {
      c.p_low.push_back(click_probability(low, d, e, true));
      c.p_high.push_back(click_probability(high, d, e, true));
    }
    r.alarm_energy_fJ[d.index()] = std::min(low[d].nogate_never_fJ, high[d].nogate_never_fJ);
    min_never = std::min({min_never, low[d].gate_never_fJ, high[d].gate_never_fJ});
  }
  r.mismatch_limit_fJ = 2.0 * min_never;
  return r;
}

TwoLevelResponse timing_response(const ThresholdSet& low, const TimingWindow& low_window,
                                 const ThresholdSet& high, const TimingWindow& high_window,
                                 const std::array<double, 2>& eta_low,
                                 const std::array<double, 2>& eta_high,
                                 const std::array<double, 2>& energy_fJ,
                                 const std::vector<double>& offset_grid_ns) {
  auto r = energy_response(low, high, eta_low, eta_high, {});
  r.fixed_energy_fJ = energy_fJ;
  for (auto d : kDetectors) {
    auto& c = r.detectors[d.index()];
    c.x = offset_grid_ns;
    for (double t : offset_grid_ns) {
      const TriggerPulse pulse{energy_fJ[d.index()], t};
      c.p_low.push_back(pulse_click_probability(low, d, pulse, true, low_window));
      c.p_high.push_back(pulse_click_probability(high, d, pulse, true, high_window));
    }
  }
  return r;
}

namespace {

enum class PlanAxis { energy, timing };

PlanOutcome plan_two_level(const TwoLevelResponse& response, double blinding_power_mW,
                           PlanAxis axis) {
  PlanOutcome out;
  out.ok = true;
  out.plan.blinding_power_mW = blinding_power_mW;
  out.plan.mode = AttackMode::in_gate;
  std::vector<std::string> problems;

  for (auto d : kDetectors) {
    const auto i = static_cast<std::size_t>(d.index());
    const auto& c = response.detectors[i];
    check_curve(c, d.name());
    const double eta_lo = response.eta_low[i];
    const double eta_hi = response.eta_high[i];
    if (!(eta_lo <= eta_hi)) throw ParameterError(d.name() + ": eta_low exceeds eta_high");

    auto safe = [&](std::size_t k) {
      const double e = axis == PlanAxis::energy ? c.x[k] : response.fixed_energy_fJ[i];
      return e < response.alarm_energy_fJ[i] && e < response.mismatch_limit_fJ;
    };
    const auto always = longest_run(c.x.size(), [&](std::size_t k) {
      return safe(k) && c.p_high[k] >= 1.0 && c.p_low[k] >= 1.0;
    });
    const auto partial = longest_run(c.x.size(), [&](std::size_t k) {
      return safe(k) && c.p_high[k] >= 1.0 && c.p_low[k] <= 0.0;
    });

    auto component = [&](const Run& run, double q) {
      const double x = 0.5 * (c.x[run.first] + c.x[run.last]);
      return axis == PlanAxis::energy ? TriggerComponent{x, 0.0, q}
                                      : TriggerComponent{response.fixed_energy_fJ[i], x, q};
    };

    auto& mix = out.plan.mixture[i];
    if (!always) {
      problems.push_back(d.name() + ": no setting clicks at both efficiency levels below the alarm");
      continue;
    }
    if (eta_lo == eta_hi) {
      mix = {component(*always, eta_hi)};
      continue;
    }
    if (!partial) {
      problems.push_back(d.name() + ": no setting separates the two efficiency levels");
      // Partial control: clicks independent of Bob's level at the high rate.
      mix = {component(*always, eta_hi)};
      continue;
    }
    mix = {component(*always, eta_lo), component(*partial, eta_hi - eta_lo)};
  }

  if (!problems.empty()) {
    out.ok = false;
    for (const auto& p : problems) {
      if (!out.diagnostic.empty()) out.diagnostic += "; ";
      out.diagnostic += p;
    }
    out.diagnostic += " (partial control only)";
  }
  return out;
}

}  // namespace

PlanOutcome plan_two_level_energy_attack(const TwoLevelResponse& response,
                                         double blinding_power_mW) {
  return plan_two_level(response, blinding_power_mW, PlanAxis::energy);
}

PlanOutcome plan_two_level_timing_attack(const TwoLevelResponse& response,
                                         double blinding_power_mW) {
  return plan_two_level(response, blinding_power_mW, PlanAxis::timing);
}

BetaMatrix::BetaMatrix(std::vector<std::vector<double>> rows) : rows_(std::move(rows)) {
  const auto n = rows_.size();
  if (n == 0) throw ParameterError("beta matrix is empty");
  for (std::size_t k = 0; k < n; ++k) {
    if (rows_[k].size() != n) throw ParameterError("beta matrix must be square");
    for (std::size_t i = 0; i < n; ++i) {
      const double b = rows_[k][i];
      if (!(b >= 0.0 && b <= 1.0)) throw ParameterError("beta entries must lie in [0, 1]");
      if (i > 0 && b < rows_[k][i - 1]) {
        throw ParameterError("beta rows must be non-decreasing in efficiency level");
      }
    }
  }
}

BetaMatrix BetaMatrix::staircase(std::size_t n) {
  std::vector<std::vector<double>> rows(n, std::vector<double>(n, 0.0));
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = k; i < n; ++i) rows[k][i] = 1.0;
  }
  return BetaMatrix(std::move(rows));
}

DecoyMixtureSolution solve_decoy_mixture(const BetaMatrix& beta, const std::vector<double>& etas) {
  const auto n = beta.size();
  if (etas.size() != n) throw ParameterError("need one efficiency per attack level");
  for (std::size_t i = 1; i < n; ++i) {
    if (!(etas[i] > etas[i - 1])) throw ParameterError("efficiencies must be ascending");
  }

  const auto ni = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd a(ni, ni);  // a(i, k) = beta[k][i]
  for (Eigen::Index i = 0; i < ni; ++i) {
    for (Eigen::Index k = 0; k < ni; ++k) {
      a(i, k) = beta(static_cast<std::size_t>(k), static_cast<std::size_t>(i));
    }
  }
  const Eigen::VectorXd eta = Eigen::Map<const Eigen::VectorXd>(etas.data(), ni);

  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  DecoyMixtureSolution s;
  s.rank = static_cast<int>(lu.rank());
  if (s.rank < static_cast<int>(n)) {
    throw NumericalError("beta matrix is singular (rank " + std::to_string(s.rank) + " of " +
                         std::to_string(n) + ")");
  }
  Eigen::VectorXd q = lu.solve(eta);
  q += lu.solve(eta - a * q);  // one refinement step
  s.q_unconstrained.assign(q.data(), q.data() + ni);

  for (Eigen::Index k = 0; k < ni; ++k) {
    if (q(k) < -kProbabilityTol) {
      s.violated_constraints.push_back("q_" + std::to_string(k + 1) + " = " + format_number(q(k)) +
                                       " < 0");
    } else if (q(k) > 1.0 + kProbabilityTol) {
      s.violated_constraints.push_back("q_" + std::to_string(k + 1) + " = " + format_number(q(k)) +
                                       " > 1");
    }
  }
  if (q.sum() > 1.0 + kProbabilityTol) {
    s.violated_constraints.push_back("sum q = " + format_number(q.sum()) + " > 1");
  }

  if (s.violated_constraints.empty()) {
    s.status = DecoyMixtureSolution::Status::exact;
    s.q = s.q_unconstrained;
    for (auto& v : s.q) v = std::max(v, 0.0);
    const Eigen::VectorXd qq = Eigen::Map<const Eigen::VectorXd>(s.q.data(), ni);
    s.residual = (a * qq - eta).norm();
    return s;
  }

  // Closest achievable mixture: projected gradient on ||a q - eta||^2 over
  // {q >= 0, sum q <= 1}.
  s.status = DecoyMixtureSolution::Status::partial_control;
  const Eigen::MatrixXd ata = a.transpose() * a;
  const double lipschitz = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(ata).eigenvalues().maxCoeff();
  const double step = 1.0 / lipschitz;
  Eigen::VectorXd x = project_capped_simplex(q);
  Eigen::VectorXd y = x;
  double momentum = 1.0;
  for (int it = 0; it < 200000; ++it) {
    const Eigen::VectorXd next = project_capped_simplex(y - step * (a.transpose() * (a * y - eta)));
    const double next_momentum = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
    y = next + ((momentum - 1.0) / next_momentum) * (next - x);
    const double change = (next - x).norm();
    x = next;
    momentum = next_momentum;
    if (change < 1e-15) break;
  }
  s.q.assign(x.data(), x.data() + ni);
  s.residual = (a * x - eta).norm();
  return s;
}

}  // namespace qkdblind
