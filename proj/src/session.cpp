#include "qkdblind/session.hpp"

#include <ostream>

#include "qkdblind/csv.hpp"
#include "qkdblind/rng.hpp"

namespace qkdblind {
namespace {

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

// Index of the mixture component drawn by u, or -1 for "send nothing".
int pick_component(const std::vector<TriggerComponent>& mixture, double u) {
  double cumulative = 0.0;
  for (std::size_t k = 0; k < mixture.size(); ++k) {
    cumulative += mixture[k].probability;
    if (u < cumulative) return static_cast<int>(k);
  }
  return -1;
}

nlohmann::json monitor_json(const EfficiencyMonitor& m) {
  nlohmann::json j;
  for (auto d : kDetectors) {
    auto arr = nlohmann::json::array();
    for (std::size_t k = 0; k < m.n_levels(); ++k) {
      const auto& c = m.counts(d, k);
      nlohmann::json e{{"level", k}, {"slots", c.slots}, {"clicks", c.clicks}};
      e["rate"] = c.slots > 0 ? nlohmann::json(c.rate()) : nlohmann::json(nullptr);
      arr.push_back(e);
    }
    j[d.name()] = arr;
  }
  return j;
}

}  // namespace

void ScenarioConfig::validate() const {
  if (n_slots == 0) throw ParameterError("n_slots must be positive");
  if (!(channel_transmittance > 0.0 && channel_transmittance <= 1.0)) {
    throw ParameterError("channel transmittance must lie in (0, 1]");
  }
  if (!is_probability(bit_flip_probability)) throw ParameterError("bit flip probability outside [0, 1]");
  if (!is_probability(dark_count_probability)) {
    throw ParameterError("dark count probability outside [0, 1]");
  }
  countermeasure.validate();
  if (thresholds.size() != countermeasure.levels.size() ||
      timing_windows.size() != countermeasure.levels.size()) {
    throw ParameterError("need one threshold set and timing window per efficiency level");
  }
  for (const auto& t : thresholds) t.validate();
  for (const auto& w : timing_windows) w.validate();
  for (double p : blinding_onset_mW) {
    if (!(p > 0.0)) throw ParameterError("blinding onset power must be positive");
  }
  if (eve) {
    eve->plan.validate();
    if (!is_probability(eve->detection_probability)) {
      throw ParameterError("Eve's detection probability outside [0, 1]");
    }
  }
  if (deadtime_gates < 0) throw ParameterError("deadtime_gates must be non-negative");
  if (!is_probability(qber_abort)) throw ParameterError("qber_abort outside [0, 1]");
  if (!(min_sifted_rate >= 0.0)) throw ParameterError("min_sifted_rate must be non-negative");
  if (!(sigma_threshold > 0.0)) throw ParameterError("sigma_threshold must be positive");
}

SiftResult sift(const std::vector<SlotRecord>& records) {
  SiftResult r;
  for (const auto& rec : records) {
    if (!(rec.click[0] || rec.click[1])) continue;
    if (rec.alice_basis != rec.bob_basis) continue;
    ++r.sifted;
    if (rec.bob_bit != rec.alice_bit) ++r.errors;
    if (rec.eve_detected) {
      ++r.eve_informed;
      if (rec.eve_bit == rec.bob_bit) ++r.eve_bob_agreement;
    }
  }
  r.qber = r.sifted > 0 ? static_cast<double>(r.errors) / static_cast<double>(r.sifted) : 0.0;
  return r;
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::key_ok: return "key_ok";
    case Verdict::aborted_qber: return "aborted_qber";
    case Verdict::attack_detected: return "attack_detected";
    case Verdict::bricked: return "bricked";
    case Verdict::failed_low_rate: return "failed_low_rate";
  }
  return "?";
}

bool SessionReport::attack_succeeded() const {
  return attacked && verdict == Verdict::key_ok && sift.sifted > 0 &&
         sift.eve_bob_agreement == sift.sifted;
}

SessionResult run_session(const ScenarioConfig& cfg, AlarmState alarm) {
  cfg.validate();
  const auto n_levels = cfg.countermeasure.levels.size();
  SessionResult result;
  auto& r = result.report;
  r.n_slots = cfg.n_slots;
  r.seed = cfg.seed;
  r.monitor = EfficiencyMonitor(n_levels);
  r.targeted = EfficiencyMonitor(n_levels);
  r.alarm_start = alarm;
  r.alarm_end = alarm;
  r.attacked = cfg.eve.has_value();

  if (alarm.bricked) {
    r.verdict = Verdict::bricked;
    r.notes.push_back("receiver is bricked; session refused");
    return result;
  }

  std::array<bool, 2> blinded{};
  if (cfg.eve) {
    for (auto d : kDetectors) {
      blinded[d.index()] = mode_for_power(cfg.eve->plan.blinding_power_mW,
                                          cfg.blinding_onset_mW[d.index()]) == DetectorMode::blinded;
      if (!blinded[d.index()]) {
        r.notes.push_back(d.name() + " not blinded at this power; stays in Geiger mode");
      }
    }
  }

  DetectorSlotState deadtime_state;
  auto& trace = result.trace;
  for (std::uint64_t s = 0; s < cfg.n_slots; ++s) {
    const GateSetting gate = draw_gate_setting(cfg.countermeasure, cfg.seed, s);
    CounterRng rng(cfg.seed, Stream::slot, s);

    SlotRecord rec;
    rec.slot = s;
    rec.alice_bit = static_cast<std::uint8_t>(rng.bit());
    rec.alice_basis = static_cast<std::uint8_t>(rng.bit());
    rec.bob_basis = static_cast<std::uint8_t>(rng.bit());
    rec.gate_applied = gate.applied;
    rec.gated = gate.applied && deadtime_state.gate_available();
    rec.level = gate.level_index;
    if (!gate.applied) ++r.suppressed_slots;

    std::array<bool, 2> fired{};
    if (!cfg.eve) {
      const bool photon = rng.bernoulli(cfg.channel_transmittance);
      const bool flip = rng.bernoulli(cfg.bit_flip_probability);
      const int random_detector = rng.bit();
      const int target = rec.alice_basis == rec.bob_basis ? (rec.alice_bit ^ static_cast<int>(flip))
                                                          : random_detector;
      for (auto d : kDetectors) {
        const auto& level = cfg.countermeasure.levels[rec.level[d.index()]];
        const bool hit = click_geiger(level.efficiency[d.index()],
                                      rec.gated && photon && target == d.index(), rng);
        const bool dark = cfg.dark_count_probability > 0.0 && rec.gated &&
                          rng.bernoulli(cfg.dark_count_probability);
        fired[d.index()] = hit || dark;
      }
    } else {
      const auto& eve = *cfg.eve;
      rec.eve_detected = rng.bernoulli(eve.detection_probability);
      rec.eve_basis = static_cast<std::uint8_t>(rng.bit());
      const int guess = rng.bit();
      rec.eve_bit = static_cast<std::uint8_t>(rec.eve_basis == rec.alice_basis ? rec.alice_bit : guess);
      const double u_mix = rng.uniform();

      const DetectorId target(rec.eve_bit);
      const auto& mixture = eve.plan.for_target(target);
      std::array<double, 2> energy{};
      double offset = 0.0;
      if (rec.eve_detected) {
        const int k = pick_component(mixture, u_mix);
        rec.trigger_component = static_cast<std::int8_t>(k);
        if (k >= 0) {
          const auto& c = mixture[static_cast<std::size_t>(k)];
          offset = c.timing_offset_ns;
          if (rec.bob_basis == rec.eve_basis) {
            energy[target.index()] = c.energy_fJ;
          } else {
            energy = {0.5 * c.energy_fJ, 0.5 * c.energy_fJ};
          }
        }
      }
      for (auto d : kDetectors) {
        const auto i = d.index();
        const auto level = rec.level[i];
        double p = 0.0;
        if (!blinded[i]) {
          // Bright light on a detector still in Geiger mode clicks every gate.
          p = rec.gated && (energy[i] > 0.0 || eve.plan.blinding_power_mW > 0.0) ? 1.0 : 0.0;
        } else if (eve.plan.mode == AttackMode::in_gate) {
          p = pulse_click_probability(cfg.thresholds[level], d,
                                      TriggerPulse{energy[i], offset, eve.plan.pulse_width_ns},
                                      rec.gated, cfg.timing_windows[level]);
        } else {
          p = click_probability(cfg.thresholds[level], d, energy[i], rec.gated);
        }
        fired[i] = rng.uniform() < p;
      }
    }

    for (auto d : kDetectors) {
      const auto i = d.index();
      if (!fired[i]) continue;
      if (rec.gated) {
        rec.click[i] = true;
        continue;
      }
      const bool suppressed = !rec.gate_applied;
      if (!suppressed && !cfg.deadtime_clicks_count_toward_alarm) continue;
      rec.nogate_click[i] = true;
      ++(suppressed ? r.alarm_from_suppressed : r.alarm_from_deadtime);
      r.alarm_end = register_no_gate_click(r.alarm_end, cfg.countermeasure.alarm_limit);
    }

    const bool detection = rec.click[0] || rec.click[1];
    if (detection) {
      ++r.raw_clicks;
      rec.double_click = rec.click[0] && rec.click[1];
      if (rec.double_click) {
        ++r.double_clicks;
        rec.bob_bit = static_cast<std::uint8_t>(rng.bit());
      } else {
        rec.bob_bit = rec.click[1] ? 1 : 0;
      }
    }

    if (rec.gated) {
      for (auto d : kDetectors) r.monitor.record(d, rec.level[d.index()], rec.click[d.index()]);
      if (cfg.eve && rec.eve_detected && rec.bob_basis == rec.eve_basis) {
        const DetectorId t(rec.eve_bit);
        r.targeted.record(t, rec.level[t.index()], rec.click[t.index()]);
      }
    }

    if (cfg.deadtime_enabled) {
      deadtime_state = apply_deadtime(deadtime_state, detection, cfg.deadtime_gates);
    }
    if (cfg.record_trace || detection || rec.nogate_click[0] || rec.nogate_click[1]) {
      trace.push_back(rec);
    }
    r.slots_simulated = s + 1;
    if (r.alarm_end.bricked) {
      r.notes.push_back("alarm limit reached at slot " + std::to_string(s) + "; receiver bricked");
      break;
    }
  }

  r.sift = sift(trace);
  r.sifted_rate = static_cast<double>(r.sift.sifted) / static_cast<double>(r.slots_simulated);

  if (n_levels > 1) {
    const std::size_t top = n_levels - 1;
    for (auto d : kDetectors) {
      const auto& hi = r.monitor.counts(d, top);
      const auto& lo = r.monitor.counts(d, 0);
      if (hi.slots == 0 || lo.slots == 0) {
        r.notes.push_back(d.name() + ": no gated slots at an efficiency level; factor not computed");
        continue;
      }
      FactorResult f;
      f.detector = d;
      f.estimate = blinding_factor(hi, lo, cfg.countermeasure.levels[top].efficiency[d.index()],
                                   cfg.countermeasure.levels[0].efficiency[d.index()]);
      f.verdict = factor_alarm_test(f.estimate, cfg.sigma_threshold);
      r.factors.push_back(f);
    }
  }

  bool factor_alarm = false;
  for (const auto& f : r.factors) factor_alarm |= f.verdict == FactorVerdict::attack_detected;
  if (r.alarm_end.bricked) {
    r.verdict = Verdict::bricked;
  } else if (factor_alarm) {
    r.verdict = Verdict::attack_detected;
  } else if (r.sift.sifted > 0 && r.sift.qber > cfg.qber_abort) {
    r.verdict = Verdict::aborted_qber;
  } else if (r.sift.sifted == 0 || r.sifted_rate < cfg.min_sifted_rate) {
    r.verdict = Verdict::failed_low_rate;
  } else {
    r.verdict = Verdict::key_ok;
  }
  if (r.attack_succeeded()) {
    r.notes.push_back("attack succeeded: Eve holds every sifted bit and Bob accepted the key");
  }
  return result;
}

nlohmann::json to_json(const SessionReport& r) {
  nlohmann::json j;
  j["seed"] = r.seed;
  j["n_slots"] = r.n_slots;
  j["slots_simulated"] = r.slots_simulated;
  j["raw_clicks"] = r.raw_clicks;
  j["double_clicks"] = r.double_clicks;
  j["sifted"] = r.sift.sifted;
  j["sifted_errors"] = r.sift.errors;
  j["qber"] = r.sift.qber;
  j["sifted_rate"] = r.sifted_rate;
  j["rates"] = monitor_json(r.monitor);
  j["alarm"] = {{"counter_start", r.alarm_start.counter},
                {"counter_end", r.alarm_end.counter},
                {"increments", r.alarm_increments()},
                {"from_suppressed_gates", r.alarm_from_suppressed},
                {"from_deadtime", r.alarm_from_deadtime},
                {"bricked", r.alarm_end.bricked}};
  j["suppressed_slots"] = r.suppressed_slots;
  auto factors = nlohmann::json::array();
  for (const auto& f : r.factors) {
    factors.push_back({{"detector", f.detector.name()},
                       {"factor", f.estimate.factor},
                       {"std_error", f.estimate.std_error},
                       {"verdict", to_string(f.verdict)}});
  }
  j["blinding_factor"] = factors;
  j["attacked"] = r.attacked;
  if (r.attacked) {
    j["targeted_rates"] = monitor_json(r.targeted);
    j["eve"] = {{"informed_sifted_bits", r.sift.eve_informed},
                {"agreeing_sifted_bits", r.sift.eve_bob_agreement},
                {"attack_succeeded", r.attack_succeeded()}};
  }
  j["verdict"] = to_string(r.verdict);
  j["notes"] = r.notes;
  return j;
}

void write_trace_csv(std::ostream& out, const std::vector<SlotRecord>& trace) {
  out << "slot,alice_bit,alice_basis,bob_basis,eve_detected,eve_basis,eve_bit,trigger_component,"
         "gate_applied,gated,level_D0,level_D1,click_D0,click_D1,nogate_click_D0,nogate_click_D1,"
         "double_click,bob_bit\n";
  for (const auto& r : trace) {
    out << r.slot << ',' << int{r.alice_bit} << ',' << int{r.alice_basis} << ',' << int{r.bob_basis}
        << ',' << int{r.eve_detected} << ',' << int{r.eve_basis} << ',' << int{r.eve_bit} << ','
        << int{r.trigger_component} << ',' << int{r.gate_applied} << ',' << int{r.gated} << ','
        << int{r.level[0]} << ',' << int{r.level[1]} << ',' << int{r.click[0]} << ','
        << int{r.click[1]} << ',' << int{r.nogate_click[0]} << ',' << int{r.nogate_click[1]} << ','
        << int{r.double_click} << ',' << int{r.bob_bit} << '\n';
  }
}

}  // namespace qkdblind
