#include "qkdblind/config.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "qkdblind/calibration_data.hpp"
#include "qkdblind/csv.hpp"

namespace qkdblind {
namespace {

using nlohmann::json;

/// Typed access to one JSON object with a closed set of keys.
class Fields {
 public:
  Fields(const json& j, std::string path, std::vector<std::string> allowed)
      : j_(j), path_(std::move(path)), allowed_(std::move(allowed)) {
    if (!j_.is_object()) fail(path_, "expected an object");
    for (const auto& [key, value] : j_.items()) {
      if (std::find(allowed_.begin(), allowed_.end(), key) != allowed_.end()) continue;
      for (const auto& a : allowed_) {
        if (a.rfind(key + "_", 0) == 0 && a.size() > key.size() + 1 && unit_like(a.substr(key.size() + 1))) {
          fail(at(key), "missing unit suffix (expected '" + a + "')");
        }
      }
      fail(at(key), "unknown key");
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  std::string at(const std::string& key) const { return path_ + "." + key; }
  const json& raw(const std::string& key) const { return j_.at(key); }

  std::optional<double> number(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    const auto& v = j_.at(key);
    if (!v.is_number()) fail(at(key), "expected a number");
    return v.get<double>();
  }
  double number(const std::string& key, double fallback) const {
    return number(key).value_or(fallback);
  }
  std::uint64_t count(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_number_unsigned()) fail(at(key), "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }
  bool flag(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_boolean()) fail(at(key), "expected true or false");
    return v.get<bool>();
  }
  std::optional<std::string> text(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    const auto& v = j_.at(key);
    if (!v.is_string()) fail(at(key), "expected a string");
    return v.get<std::string>();
  }

  [[noreturn]] static void fail(const std::string& path, const std::string& message) {
    throw ConfigError(path + ": " + message);
  }

 private:
  static bool unit_like(const std::string& suffix) {
    static const std::vector<std::string> units{"fJ", "pJ", "mW", "uW", "V", "mV", "ns", "ohm",
                                                "pF", "pC", "K_per_W", "V_per_K", "mV_per_pC"};
    return std::find(units.begin(), units.end(), suffix) != units.end();
  }

  const json& j_;
  std::string path_;
  std::vector<std::string> allowed_;
};

std::string resolve(const std::string& base_dir, const std::string& file) {
  const std::filesystem::path p(file);
  return p.is_absolute() ? file : (std::filesystem::path(base_dir) / p).string();
}

// Rethrows domain errors from nested constructors with the field path attached.
template <class F>
auto with_path(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    if (what.rfind("scenario", 0) == 0) throw;
    throw ConfigError(path + ": " + what);
  } catch (const ParameterError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

DetectorThresholds parse_detector_thresholds(const json& j, const std::string& path) {
  Fields f(j, path, {"gate_never_fJ", "gate_always_fJ", "nogate_never_fJ"});
  DetectorThresholds t;
  for (const char* key : {"gate_never_fJ", "gate_always_fJ", "nogate_never_fJ"}) {
    if (!f.has(key)) Fields::fail(f.at(key), "required");
  }
  t.gate_never_fJ = *f.number("gate_never_fJ");
  t.gate_always_fJ = *f.number("gate_always_fJ");
  t.nogate_never_fJ = *f.number("nogate_never_fJ");
  return t;
}

TriggerComponent parse_component(const json& j, const std::string& path) {
  Fields f(j, path, {"energy_fJ", "timing_offset_ns", "probability"});
  if (!f.has("energy_fJ")) Fields::fail(f.at("energy_fJ"), "required");
  return {*f.number("energy_fJ"), f.number("timing_offset_ns", 0.0), f.number("probability", 1.0)};
}

struct LevelSpec {
  EfficiencyLevel level;
  ThresholdCurves curves;
  std::array<std::optional<DetectorThresholds>, 2> inline_thresholds{};
  TimingWindow window;
};

LevelSpec parse_level(const json& j, const std::string& path, const std::string& base_dir,
                      double transition_width) {
  Fields f(j, path,
           {"efficiency_D0", "efficiency_D1", "v_bias_D0_V", "v_bias_D1_V", "selection_probability",
            "thresholds_builtin", "thresholds_csv", "thresholds_fJ", "timing_plateau_ns",
            "timing_support_ns"});
  EfficiencyLevel lv;
  for (auto d : kDetectors) {
    const std::string key = "efficiency_" + d.name();
    if (!f.has(key)) Fields::fail(f.at(key), "required");
    lv.efficiency[d.index()] = *f.number(key);
    lv.v_bias_V[d.index()] = f.number("v_bias_" + d.name() + "_V", lv.v_bias_V[d.index()]);
  }
  lv.selection_probability = f.number("selection_probability", 0.0);

  const int sources = int{f.has("thresholds_builtin")} + int{f.has("thresholds_csv")} +
                      int{f.has("thresholds_fJ")};
  if (sources > 1) {
    Fields::fail(path, "give at most one of thresholds_builtin, thresholds_csv, thresholds_fJ");
  }
  std::optional<ThresholdCurves> curves;
  std::array<std::optional<DetectorThresholds>, 2> inline_t;
  if (auto csv = f.text("thresholds_csv")) {
    curves = with_path(f.at("thresholds_csv"), [&] {
      return load_threshold_curves_csv(resolve(base_dir, *csv), transition_width);
    });
  } else if (f.has("thresholds_fJ")) {
    const auto sub = f.at("thresholds_fJ");
    Fields t(f.raw("thresholds_fJ"), sub, {"D0", "D1"});
    for (auto d : kDetectors) {
      if (!t.has(d.name())) Fields::fail(t.at(d.name()), "required");
      inline_t[d.index()] = parse_detector_thresholds(t.raw(d.name()), t.at(d.name()));
    }
  } else {
    const auto name = f.text("thresholds_builtin").value_or("in_gate");
    curves = with_path(f.at("thresholds_builtin"), [&] {
      const auto c = builtin::threshold_curves(name);
      return ThresholdCurves({c.points(kD0), c.points(kD1)}, transition_width);
    });
  }

  TimingWindow w = builtin::standard_timing_window();
  w.plateau_ns = f.number("timing_plateau_ns", w.plateau_ns);
  w.support_ns = f.number("timing_support_ns", w.support_ns);
  with_path(path, [&] {
    w.validate();
    return 0;
  });

  // Inline sets become single-point curves once the evaluation power is known.
  return LevelSpec{lv, curves ? *curves : builtin::in_gate_curves(), inline_t, w};
}

std::vector<LevelSpec> default_levels(CountermeasureVariant variant, double transition_width) {
  auto with_width = [&](const ThresholdCurves& c) {
    return ThresholdCurves({c.points(kD0), c.points(kD1)}, transition_width);
  };
  if (variant == CountermeasureVariant::two_level) {
    return {LevelSpec{builtin::reduced_level(), with_width(builtin::reduced_bias_curves()), {},
                      builtin::reduced_timing_window()},
            LevelSpec{builtin::standard_level(), with_width(builtin::in_gate_curves()), {},
                      builtin::standard_timing_window()}};
  }
  if (variant == CountermeasureVariant::n_level) {
    throw ConfigError("scenario.countermeasure.levels: required for n_level");
  }
  auto lv = builtin::standard_level();
  lv.selection_probability = 1.0;
  return {LevelSpec{lv, with_width(builtin::in_gate_curves()), {}, builtin::standard_timing_window()}};
}

CountermeasurePolicy parse_countermeasure(const json* j, const std::string& base_dir,
                                          double transition_width, std::vector<LevelSpec>& levels,
                                          double& sigma) {
  CountermeasurePolicy p;
  const std::string path = "scenario.countermeasure";
  if (!j) {
    levels = default_levels(p.variant, transition_width);
    p.levels = {levels.front().level};
    return p;
  }
  Fields f(*j, path, {"variant", "p_suppress", "alarm_limit", "sigma_threshold", "levels"});
  if (auto v = f.text("variant")) {
    p.variant = with_path(f.at("variant"), [&] { return parse_countermeasure_variant(*v); });
  }
  p.p_suppress = f.number("p_suppress", p.p_suppress);
  p.alarm_limit = static_cast<int>(f.count("alarm_limit", static_cast<std::uint64_t>(p.alarm_limit)));
  sigma = f.number("sigma_threshold", sigma);
  if (f.has("levels")) {
    const auto& arr = f.raw("levels");
    if (!arr.is_array() || arr.empty()) Fields::fail(f.at("levels"), "expected a non-empty array");
    levels.clear();
    for (std::size_t k = 0; k < arr.size(); ++k) {
      levels.push_back(parse_level(arr[k], f.at("levels") + "[" + std::to_string(k) + "]", base_dir,
                                   transition_width));
    }
    const bool any_selection = std::any_of(levels.begin(), levels.end(), [](const LevelSpec& s) {
      return s.level.selection_probability > 0.0;
    });
    if (!any_selection) {
      for (auto& s : levels) s.level.selection_probability = 1.0 / static_cast<double>(levels.size());
    }
  } else {
    levels = default_levels(p.variant, transition_width);
  }
  p.levels.clear();
  for (const auto& s : levels) p.levels.push_back(s.level);
  with_path(path, [&] {
    p.validate();
    return 0;
  });
  return p;
}

std::vector<double> grid_field(const Fields& f, const std::string& key, const std::string& fallback) {
  const auto text = f.text(key).value_or(fallback);
  return with_path(f.at(key), [&] { return parse_grid(text); });
}

}  // namespace

CircuitParams parse_circuit_params(const json& j, const std::string& path, CircuitParams base) {
  Fields f(j, path,
           {"label", "v_bias_V", "v_br_ref_V", "v_gate_V", "gate_duration_ns", "v_th_mV",
            "r_sense_ohm", "r_load_ohm", "c_couple_pF", "r_internal_ohm", "theta_thermal_K_per_W",
            "vbr_temp_coeff_V_per_K", "kappa_mV_per_pC", "gate_charge_pC"});
  base.label = f.text("label").value_or(base.label);
  base.v_bias_V = f.number("v_bias_V", base.v_bias_V);
  base.v_br_ref_V = f.number("v_br_ref_V", base.v_br_ref_V);
  base.v_gate_V = f.number("v_gate_V", base.v_gate_V);
  base.gate_duration_ns = f.number("gate_duration_ns", base.gate_duration_ns);
  base.v_th_mV = f.number("v_th_mV", base.v_th_mV);
  base.r_sense_ohm = f.number("r_sense_ohm", base.r_sense_ohm);
  base.r_load_ohm = f.number("r_load_ohm", base.r_load_ohm);
  base.c_couple_pF = f.number("c_couple_pF", base.c_couple_pF);
  base.r_internal_ohm = f.number("r_internal_ohm", base.r_internal_ohm);
  base.theta_thermal_K_per_W = f.number("theta_thermal_K_per_W", base.theta_thermal_K_per_W);
  base.vbr_temp_coeff_V_per_K = f.number("vbr_temp_coeff_V_per_K", base.vbr_temp_coeff_V_per_K);
  base.kappa_mV_per_pC = f.number("kappa_mV_per_pC", base.kappa_mV_per_pC);
  base.gate_charge_pC = f.number("gate_charge_pC", base.gate_charge_pC);
  with_path(path, [&] {
    base.validate();
    return 0;
  });
  return base;
}

std::string config_hash(const json& doc) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : doc.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Scenario parse_scenario(const json& input, const std::string& base_dir,
                        std::optional<std::uint64_t> seed_override) {
  json doc = input;
  if (seed_override) {
    if (!doc.is_object()) Fields::fail("scenario", "expected an object");
    doc["seed"] = *seed_override;
  }
  Fields top(doc, "scenario",
             {"description", "n_slots", "seed", "channel", "countermeasure", "detectors", "session",
              "eve"});

  Scenario sc;
  auto& s = sc.session;
  s.n_slots = top.count("n_slots", s.n_slots);
  s.seed = top.count("seed", s.seed);
  top.text("description");  // free text, type-checked only

  if (top.has("channel")) {
    Fields f(top.raw("channel"), top.at("channel"),
             {"transmittance", "bit_flip_probability", "dark_count_probability"});
    s.channel_transmittance = f.number("transmittance", s.channel_transmittance);
    s.bit_flip_probability = f.number("bit_flip_probability", s.bit_flip_probability);
    s.dark_count_probability = f.number("dark_count_probability", s.dark_count_probability);
  }

  double transition_width = kDefaultTransitionWidth;
  sc.circuits = {builtin::circuit_params(kD0), builtin::circuit_params(kD1)};
  sc.gains = {builtin::gain_curve(kD0), builtin::gain_curve(kD1)};
  if (top.has("detectors")) {
    Fields f(top.raw("detectors"), top.at("detectors"),
             {"blinding_onset_D0_mW", "blinding_onset_D1_mW", "transition_width",
              "deadtime_enabled", "deadtime_gates", "deadtime_clicks_count_toward_alarm",
              "gain_csv_D0", "gain_csv_D1", "circuit_D0", "circuit_D1"});
    for (auto d : kDetectors) {
      s.blinding_onset_mW[d.index()] =
          f.number("blinding_onset_" + d.name() + "_mW", s.blinding_onset_mW[d.index()]);
      if (auto csv = f.text("gain_csv_" + d.name())) {
        sc.gains[d.index()] = with_path(f.at("gain_csv_" + d.name()),
                                        [&] { return load_gain_curve_csv(resolve(base_dir, *csv)); });
      }
      if (f.has("circuit_" + d.name())) {
        sc.circuits[d.index()] = parse_circuit_params(f.raw("circuit_" + d.name()),
                                                      f.at("circuit_" + d.name()),
                                                      sc.circuits[d.index()]);
      }
    }
    transition_width = f.number("transition_width", transition_width);
    s.deadtime_enabled = f.flag("deadtime_enabled", s.deadtime_enabled);
    s.deadtime_gates = static_cast<int>(f.count("deadtime_gates", static_cast<std::uint64_t>(s.deadtime_gates)));
    s.deadtime_clicks_count_toward_alarm =
        f.flag("deadtime_clicks_count_toward_alarm", s.deadtime_clicks_count_toward_alarm);
  }

  std::vector<LevelSpec> levels;
  s.countermeasure = parse_countermeasure(top.has("countermeasure") ? &top.raw("countermeasure") : nullptr,
                                          base_dir, transition_width, levels, s.sigma_threshold);

  if (top.has("session")) {
    Fields f(top.raw("session"), top.at("session"), {"qber_abort", "min_sifted_rate", "record_trace"});
    s.qber_abort = f.number("qber_abort", s.qber_abort);
    s.min_sifted_rate = f.number("min_sifted_rate", s.min_sifted_rate);
    s.record_trace = f.flag("record_trace", s.record_trace);
  }

  std::optional<Fields> eve_fields;
  double eval_power = builtin::kAttackPower_mW;
  if (top.has("eve")) {
    eve_fields.emplace(top.raw("eve"), top.at("eve"),
                       std::vector<std::string>{"blinding_power_mW", "mode", "detection_probability",
                                                "pulse_width_ns", "gate_half_width_ns", "trigger",
                                                "mixture_D0", "mixture_D1", "plan",
                                                "plan_energy_grid_fJ", "plan_offset_grid_ns",
                                                "timing_energy_D0_fJ", "timing_energy_D1_fJ"});
    eval_power = eve_fields->number("blinding_power_mW", builtin::kAttackPower_mW);
  }

  // Thresholds at the operating power.
  s.thresholds.clear();
  s.timing_windows.clear();
  for (std::size_t k = 0; k < levels.size(); ++k) {
    auto& spec = levels[k];
    const std::string path = "scenario.countermeasure.levels[" + std::to_string(k) + "]";
    if (spec.inline_thresholds[0]) {
      ThresholdSet t;
      t.detectors = {*spec.inline_thresholds[0], *spec.inline_thresholds[1]};
      t.transition_width = transition_width;
      with_path(path + ".thresholds_fJ", [&] {
        t.validate();
        return 0;
      });
      spec.curves = ThresholdCurves({std::vector<ThresholdPoint>{{eval_power, t.detectors[0]}},
                                     std::vector<ThresholdPoint>{{eval_power, t.detectors[1]}}},
                                    transition_width);
    }
    const double p = (eve_fields || spec.curves.covers(eval_power)) ? eval_power
                                                                    : spec.curves.min_power_mW();
    s.thresholds.push_back(with_path(path, [&] { return spec.curves.at(p); }));
    s.timing_windows.push_back(spec.window);
    sc.curves.push_back(spec.curves);
  }

  if (eve_fields) {
    const auto& f = *eve_fields;
    EveConfig eve;
    auto& plan = eve.plan;
    plan.blinding_power_mW = eval_power;
    if (auto m = f.text("mode")) plan.mode = with_path(f.at("mode"), [&] { return parse_attack_mode(*m); });
    eve.detection_probability = f.number("detection_probability", eve.detection_probability);
    plan.pulse_width_ns = f.number("pulse_width_ns", plan.pulse_width_ns);
    plan.gate_half_width_ns = f.number("gate_half_width_ns", plan.gate_half_width_ns);

    const int sources = int{f.has("trigger")} + int{f.has("mixture_D0") || f.has("mixture_D1")} +
                        int{f.has("plan")};
    if (sources != 1) {
      Fields::fail("scenario.eve", "give exactly one of trigger, mixture_D0/mixture_D1, plan");
    }
    if (f.has("trigger")) {
      const auto c = parse_component(f.raw("trigger"), f.at("trigger"));
      plan.mixture = {std::vector<TriggerComponent>{c}, std::vector<TriggerComponent>{c}};
    } else if (f.has("plan")) {
      const auto kind = *f.text("plan");
      if (levels.size() != 2) Fields::fail(f.at("plan"), "planning needs exactly two efficiency levels");
      const auto& lo = s.countermeasure.levels[0];
      const auto& hi = s.countermeasure.levels[1];
      TwoLevelResponse response;
      if (kind == "two_level_energy") {
        response = energy_response(s.thresholds[0], s.thresholds[1], lo.efficiency, hi.efficiency,
                                   grid_field(f, "plan_energy_grid_fJ", "0:3000:0.5"));
        sc.plan_outcome = plan_two_level_energy_attack(response, eval_power);
      } else if (kind == "two_level_timing") {
        std::array<double, 2> energy = builtin::kTimingAttackEnergy_fJ;
        for (auto d : kDetectors) {
          energy[d.index()] = f.number("timing_energy_" + d.name() + "_fJ", energy[d.index()]);
        }
        const double half = plan.gate_half_width_ns;
        response = timing_response(s.thresholds[0], s.timing_windows[0], s.thresholds[1],
                                   s.timing_windows[1], lo.efficiency, hi.efficiency, energy,
                                   grid_field(f, "plan_offset_grid_ns",
                                              format_number(-half) + ":" + format_number(half) + ":0.01"));
        sc.plan_outcome = plan_two_level_timing_attack(response, eval_power);
      } else {
        Fields::fail(f.at("plan"), "expected two_level_energy or two_level_timing");
      }
      const auto keep_mode = plan.mode;
      const auto width = plan.pulse_width_ns;
      const auto half = plan.gate_half_width_ns;
      plan = sc.plan_outcome->plan;
      plan.mode = keep_mode;
      plan.pulse_width_ns = width;
      plan.gate_half_width_ns = half;
    } else {
      for (auto d : kDetectors) {
        const std::string key = "mixture_" + d.name();
        if (!f.has(key)) Fields::fail(f.at(key), "required alongside the other detector's mixture");
        const auto& arr = f.raw(key);
        if (!arr.is_array()) Fields::fail(f.at(key), "expected an array");
        for (std::size_t k = 0; k < arr.size(); ++k) {
          plan.mixture[d.index()].push_back(
              parse_component(arr[k], f.at(key) + "[" + std::to_string(k) + "]"));
        }
      }
    }
    with_path("scenario.eve", [&] {
      plan.validate();
      return 0;
    });
    s.eve = eve;
  }

  with_path("scenario", [&] {
    s.validate();
    return 0;
  });
  sc.document = doc;
  sc.config_hash = config_hash(doc);
  return sc;
}

Scenario load_scenario(const std::string& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open scenario");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  const auto dir = std::filesystem::path(path).parent_path().string();
  return parse_scenario(doc, dir.empty() ? "." : dir, seed_override);
}

SweepContext Scenario::sweep_context(std::uint64_t batch) const {
  return SweepContext{session, curves, circuits, gains, batch};
}

}  // namespace qkdblind
