#include "qkdblind/countermeasure.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "qkdblind/rng.hpp"

namespace qkdblind {

std::string to_string(CountermeasureVariant v) {
  switch (v) {
    case CountermeasureVariant::none: return "none";
    case CountermeasureVariant::gate_suppression: return "gate_suppression";
    case CountermeasureVariant::two_level: return "two_level";
    case CountermeasureVariant::n_level: return "n_level";
  }
  return "?";
}

CountermeasureVariant parse_countermeasure_variant(std::string_view text) {
  if (text == "none") return CountermeasureVariant::none;
  if (text == "gate_suppression") return CountermeasureVariant::gate_suppression;
  if (text == "two_level") return CountermeasureVariant::two_level;
  if (text == "n_level") return CountermeasureVariant::n_level;
  throw ParameterError("unknown countermeasure '" + std::string(text) + "'");
}

void CountermeasurePolicy::validate() const {
  if (levels.empty()) throw ParameterError("countermeasure needs at least one efficiency level");
  switch (variant) {
    case CountermeasureVariant::none:
      if (levels.size() != 1) throw ParameterError("variant none takes exactly one level");
      break;
    case CountermeasureVariant::gate_suppression:
      if (levels.size() != 1) throw ParameterError("gate_suppression takes exactly one level");
      if (!(p_suppress > 0.0 && p_suppress < 1.0)) {
        throw ParameterError("p_suppress must lie in (0, 1)");
      }
      break;
    case CountermeasureVariant::two_level:
      if (levels.size() != 2) throw ParameterError("two_level takes exactly two levels");
      break;
    case CountermeasureVariant::n_level:
      if (levels.size() < 2) throw ParameterError("n_level takes at least two levels");
      break;
  }
  if (alarm_limit < 1) throw ParameterError("alarm_limit must be at least 1");
  double total = 0.0;
  for (std::size_t k = 0; k < levels.size(); ++k) {
    const auto& lv = levels[k];
    if (!(lv.selection_probability >= 0.0)) {
      throw ParameterError("selection probabilities must be non-negative");
    }
    total += lv.selection_probability;
    for (auto d : kDetectors) {
      const double eta = lv.efficiency[d.index()];
      if (!(eta > 0.0 && eta <= 1.0)) {
        throw ParameterError("level " + std::to_string(k) + " " + d.name() +
                             ": efficiency must lie in (0, 1]");
      }
      if (k > 0 && !(eta > levels[k - 1].efficiency[d.index()])) {
        throw ParameterError(d.name() + ": efficiency levels must be strictly increasing");
      }
    }
  }
  if (std::abs(total - 1.0) > 1e-9) throw ParameterError("selection probabilities must sum to 1");
}

CountermeasurePolicy CountermeasurePolicy::unprotected(EfficiencyLevel level) {
  level.selection_probability = 1.0;
  CountermeasurePolicy p;
  p.variant = CountermeasureVariant::none;
  p.levels = {level};
  return p;
}

CountermeasurePolicy CountermeasurePolicy::gate_suppression(double p_suppress,
                                                            EfficiencyLevel level) {
  level.selection_probability = 1.0;
  CountermeasurePolicy p;
  p.variant = CountermeasureVariant::gate_suppression;
  p.p_suppress = p_suppress;
  p.levels = {level};
  return p;
}

CountermeasurePolicy CountermeasurePolicy::two_level(EfficiencyLevel low, EfficiencyLevel high) {
  low.selection_probability = 0.5;
  high.selection_probability = 0.5;
  CountermeasurePolicy p;
  p.variant = CountermeasureVariant::two_level;
  p.levels = {low, high};
  return p;
}

AlarmState register_no_gate_click(AlarmState alarm, int alarm_limit) {
  ++alarm.counter;
  if (alarm.counter >= alarm_limit) alarm.bricked = true;
  return alarm;
}

AlarmState load_alarm_state(const std::string& path) {
  if (!std::filesystem::exists(path)) return {};
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open alarm state");
  try {
    const auto j = nlohmann::json::parse(in);
    AlarmState a;
    a.counter = j.at("counter").get<int>();
    a.bricked = j.at("bricked").get<bool>();
    if (a.counter < 0) throw ConfigError(path + ": negative alarm counter");
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void save_alarm_state(const std::string& path, const AlarmState& alarm) {
  std::ofstream out(path);
  if (!out) throw ConfigError(path + ": cannot write alarm state");
  out << nlohmann::json{{"counter", alarm.counter}, {"bricked", alarm.bricked}}.dump(2) << '\n';
}

GateSetting draw_gate_setting(const CountermeasurePolicy& policy, std::uint64_t seed,
                              std::uint64_t slot) {
  CounterRng rng(seed, Stream::gate_plan, slot);
  GateSetting g;
  if (policy.variant == CountermeasureVariant::gate_suppression) {
    g.applied = !rng.bernoulli(policy.p_suppress);
  }
  for (auto d : kDetectors) {
    std::size_t level = 0;
    if (policy.levels.size() > 1) {
      const double u = rng.uniform();
      double cumulative = 0.0;
      level = policy.levels.size() - 1;
      for (std::size_t k = 0; k < policy.levels.size(); ++k) {
        cumulative += policy.levels[k].selection_probability;
        if (u < cumulative) {
          level = k;
          break;
        }
      }
    }
    g.level_index[d.index()] = static_cast<std::uint8_t>(level);
    g.bias_voltage_V[d.index()] = policy.levels[level].v_bias_V[d.index()];
  }
  return g;
}

std::vector<GateSetting> draw_gate_plan(const CountermeasurePolicy& policy, std::uint64_t n_slots,
                                        std::uint64_t seed) {
  policy.validate();
  std::vector<GateSetting> plan;
  plan.reserve(n_slots);
  for (std::uint64_t s = 0; s < n_slots; ++s) plan.push_back(draw_gate_setting(policy, seed, s));
  return plan;
}

double LevelCounts::rate() const {
  if (slots == 0) throw InsufficientDataError("no slots recorded at this efficiency level");
  return static_cast<double>(clicks) / static_cast<double>(slots);
}

EfficiencyMonitor::EfficiencyMonitor(std::size_t n_levels) {
  for (auto& c : counts_) c.assign(n_levels, {});
}

void EfficiencyMonitor::record(DetectorId d, std::size_t level, bool clicked) {
  auto& c = counts_[d.index()].at(level);
  ++c.slots;
  if (clicked) ++c.clicks;
}

const LevelCounts& EfficiencyMonitor::counts(DetectorId d, std::size_t level) const {
  return counts_[d.index()].at(level);
}

void EfficiencyMonitor::merge(const EfficiencyMonitor& other) {
  if (other.n_levels() != n_levels()) throw ParameterError("monitor level counts differ");
  for (auto d : kDetectors) {
    for (std::size_t k = 0; k < n_levels(); ++k) counts_[d.index()][k] += other.counts(d, k);
  }
}

BlindingFactorEstimate blinding_factor(const LevelCounts& hi, const LevelCounts& lo, double eta_hi,
                                       double eta_lo) {
  if (eta_hi == eta_lo) throw ParameterError("blinding factor undefined for equal efficiencies");
  if (hi.slots == 0 || lo.slots == 0) {
    throw InsufficientDataError("blinding factor needs slots at both efficiency levels");
  }
  const double r_hi = hi.rate();
  const double r_lo = lo.rate();
  const double d_eta = eta_hi - eta_lo;
  const double var_hi = r_hi * (1.0 - r_hi) / static_cast<double>(hi.slots);
  const double var_lo = r_lo * (1.0 - r_lo) / static_cast<double>(lo.slots);
  BlindingFactorEstimate e;
  e.factor = (eta_hi * r_lo - eta_lo * r_hi) / d_eta;
  e.std_error = std::sqrt(eta_hi * eta_hi * var_lo + eta_lo * eta_lo * var_hi) / std::abs(d_eta);
  return e;
}

std::string to_string(FactorVerdict v) {
  return v == FactorVerdict::clear ? "clear" : "attack_detected";
}

FactorVerdict factor_alarm_test(const BlindingFactorEstimate& e, double sigma_threshold) {
  return e.factor > sigma_threshold * e.std_error ? FactorVerdict::attack_detected
                                                : FactorVerdict::clear;
}

FactorVerdict factor_alarm_test(const LevelCounts& hi, const LevelCounts& lo, double eta_hi,
                                double eta_lo, double sigma_threshold) {
  return factor_alarm_test(blinding_factor(hi, lo, eta_hi, eta_lo), sigma_threshold);
}

}  // namespace qkdblind
