#include "qkdblind/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>

#include "qkdblind/csv.hpp"

namespace qkdblind {
namespace {

bool finite_positive(double v) { return v > 0.0 && !std::isnan(v); }

double lerp(double a, double b, double t) {
  if (std::isinf(a) || std::isinf(b)) return std::numeric_limits<double>::infinity();
  return a + (b - a) * t;
}

void validate_detector(const DetectorThresholds& t, const std::string& who) {
  if (!finite_positive(t.gate_never_fJ) || !finite_positive(t.gate_always_fJ) ||
      !finite_positive(t.nogate_never_fJ)) {
    throw ParameterError(who + ": thresholds must be strictly positive");
  }
  if (t.gate_never_fJ > t.gate_always_fJ) {
    throw ParameterError(who + ": e_gate_never exceeds e_gate_always");
  }
}

}  // namespace

DetectorId DetectorId::parse(std::string_view text) {
  if (text == "D0" || text == "d0" || text == "0") return kD0;
  if (text == "D1" || text == "d1" || text == "1") return kD1;
  throw ParameterError("unknown detector '" + std::string(text) + "'");
}

void ThresholdSet::validate() const {
  for (auto d : kDetectors) validate_detector((*this)[d], d.name());
  if (!(transition_width >= 0.0)) throw ParameterError("transition_width must be >= 0");
}

ThresholdCurves::ThresholdCurves(std::array<std::vector<ThresholdPoint>, 2> points,
                                 double transition_width)
    : points_(std::move(points)), transition_width_(transition_width) {
  if (!(transition_width_ >= 0.0)) throw ParameterError("transition_width must be >= 0");
  for (auto d : kDetectors) {
    auto& pts = points_[d.index()];
    if (pts.empty()) throw ParameterError(d.name() + ": no threshold samples");
    std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
      return a.blinding_power_mW < b.blinding_power_mW;
    });
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto who = d.name() + " @ " + format_number(pts[i].blinding_power_mW) + " mW";
      if (!(pts[i].blinding_power_mW >= 0.0)) throw ParameterError(who + ": negative power");
      validate_detector(pts[i].thresholds, who);
      if (i == 0) continue;
      const auto& lo = pts[i - 1];
      const auto& hi = pts[i];
      if (hi.blinding_power_mW == lo.blinding_power_mW) {
        throw ParameterError(who + ": duplicate power sample");
      }
      if (hi.thresholds.gate_never_fJ < lo.thresholds.gate_never_fJ ||
          hi.thresholds.gate_always_fJ < lo.thresholds.gate_always_fJ ||
          hi.thresholds.nogate_never_fJ < lo.thresholds.nogate_never_fJ) {
        throw ParameterError(who + ": thresholds decrease with blinding power");
      }
    }
  }
}

double ThresholdCurves::min_power_mW() const {
  return std::max(points_[0].front().blinding_power_mW, points_[1].front().blinding_power_mW);
}

double ThresholdCurves::max_power_mW() const {
  return std::min(points_[0].back().blinding_power_mW, points_[1].back().blinding_power_mW);
}

bool ThresholdCurves::covers(double p) const {
  return p >= min_power_mW() && p <= max_power_mW();
}

ThresholdSet ThresholdCurves::at(double p) const {
  if (!covers(p)) {
    throw ParameterError("blinding power " + format_number(p) + " mW outside calibrated range [" +
                         format_number(min_power_mW()) + ", " + format_number(max_power_mW()) +
                         "] mW");
  }
  ThresholdSet out;
  out.transition_width = transition_width_;
  for (auto d : kDetectors) {
    const auto& pts = points_[d.index()];
    auto hi = std::lower_bound(pts.begin(), pts.end(), p, [](const auto& pt, double v) {
      return pt.blinding_power_mW < v;
    });
    if (hi->blinding_power_mW == p || hi == pts.begin()) {
      out[d] = hi->thresholds;
      continue;
    }
    const auto lo = std::prev(hi);
    const double t = (p - lo->blinding_power_mW) / (hi->blinding_power_mW - lo->blinding_power_mW);
    out[d].gate_never_fJ = lerp(lo->thresholds.gate_never_fJ, hi->thresholds.gate_never_fJ, t);
    out[d].gate_always_fJ = lerp(lo->thresholds.gate_always_fJ, hi->thresholds.gate_always_fJ, t);
    out[d].nogate_never_fJ = lerp(lo->thresholds.nogate_never_fJ, hi->thresholds.nogate_never_fJ, t);
  }
  return out;
}

bool ThresholdCurves::gate_separated() const {
  for (const auto& pts : points_) {
    for (const auto& pt : pts) {
      if (!(pt.thresholds.nogate_never_fJ > pt.thresholds.gate_always_fJ)) return false;
    }
  }
  return true;
}

ThresholdCurves load_threshold_curves_csv(std::istream& in, std::string_view source,
                                          double transition_width) {
  const auto table = CsvTable::parse(in, source);
  const auto c_det = table.column("detector");
  const auto c_p = table.column("blinding_power_mW");
  const auto c_never = table.column("e_gate_never_fJ");
  const auto c_always = table.column("e_gate_always_fJ");
  const auto c_nogate = table.column("e_nogate_never_fJ");
  std::array<std::vector<ThresholdPoint>, 2> points;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    DetectorId d = kD0;
    try {
      d = DetectorId::parse(table.cell(r, c_det));
    } catch (const ParameterError& e) {
      throw ConfigError(std::string(source) + ": row " + std::to_string(r + 1) + ": " + e.what());
    }
    ThresholdPoint pt;
    pt.blinding_power_mW = table.number(r, c_p);
    pt.thresholds.gate_never_fJ = table.number(r, c_never);
    pt.thresholds.gate_always_fJ = table.number(r, c_always);
    pt.thresholds.nogate_never_fJ = table.number(r, c_nogate);
    points[d.index()].push_back(pt);
  }
  try {
    return ThresholdCurves(std::move(points), transition_width);
  } catch (const ParameterError& e) {
    throw ConfigError(std::string(source) + ": " + e.what());
  }
}

ThresholdCurves load_threshold_curves_csv(const std::string& path, double transition_width) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open");
  return load_threshold_curves_csv(in, path, transition_width);
}

void write_threshold_curves_csv(std::ostream& out, const ThresholdCurves& curves) {
  out << "detector,blinding_power_mW,e_gate_never_fJ,e_gate_always_fJ,e_nogate_never_fJ\n";
  for (auto d : kDetectors) {
    for (const auto& pt : curves.points(d)) {
      out << d.name() << ',' << format_number(pt.blinding_power_mW) << ','
          << format_number(pt.thresholds.gate_never_fJ) << ','
          << format_number(pt.thresholds.gate_always_fJ) << ','
          << format_number(pt.thresholds.nogate_never_fJ) << '\n';
    }
  }
}

double TimingWindow::factor(double offset_ns) const {
  const double t = std::abs(offset_ns);
  if (t <= plateau_ns) return 1.0;
  if (t >= support_ns) return 0.0;
  return (support_ns - t) / (support_ns - plateau_ns);
}

void TimingWindow::validate() const {
  if (!(plateau_ns >= 0.0) || !(support_ns >= plateau_ns)) {
    throw ParameterError("timing window needs 0 <= plateau_ns <= support_ns");
  }
}

double effective_trigger_energy(const TriggerPulse& pulse, bool gate_applied,
                                const TimingWindow& window) {
  if (!gate_applied) return pulse.energy_fJ;
  return pulse.energy_fJ * window.factor(pulse.timing_offset_ns);
}

bool click_geiger(double efficiency, bool photon_present, CounterRng& rng) {
  if (!(efficiency >= 0.0 && efficiency <= 1.0)) {
    throw ParameterError("detection efficiency must lie in [0, 1]");
  }
  if (!photon_present) return false;
  return rng.bernoulli(efficiency);
}

double gate_click_probability(const DetectorThresholds& t, double energy_fJ) {
  if (energy_fJ <= t.gate_never_fJ) return 0.0;
  if (energy_fJ >= t.gate_always_fJ) return 1.0;
  return (energy_fJ - t.gate_never_fJ) / (t.gate_always_fJ - t.gate_never_fJ);
}

double nogate_click_probability(const DetectorThresholds& t, double energy_fJ,
                                double transition_width) {
  if (energy_fJ <= t.nogate_never_fJ) return 0.0;
  const double band = t.nogate_never_fJ * transition_width;
  if (band <= 0.0) return 1.0;
  return std::min(1.0, (energy_fJ - t.nogate_never_fJ) / band);
}

double click_probability(const ThresholdSet& thresholds, DetectorId detector, double energy_fJ,
                         bool gate_applied) {
  const auto& t = thresholds[detector];
  return gate_applied ? gate_click_probability(t, energy_fJ)
                      : nogate_click_probability(t, energy_fJ, thresholds.transition_width);
}

double pulse_click_probability(const ThresholdSet& thresholds, DetectorId detector,
                               const TriggerPulse& pulse, bool gate_applied,
                               const TimingWindow& window) {
  const double outside =
      nogate_click_probability(thresholds[detector], pulse.energy_fJ, thresholds.transition_width);
  if (!gate_applied) return outside;
  const double inside = gate_click_probability(
      thresholds[detector], effective_trigger_energy(pulse, true, window));
  return std::max(inside, outside);
}

bool click_blinded(const ThresholdSet& thresholds, DetectorId detector, double arriving_energy_fJ,
                   bool gate_applied, CounterRng& rng) {
  const double p = click_probability(thresholds, detector, arriving_energy_fJ, gate_applied);
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return rng.bernoulli(p);
}

DetectorMode mode_for_power(double cw_power_mW, double blinding_threshold_mW) {
  return cw_power_mW >= blinding_threshold_mW ? DetectorMode::blinded : DetectorMode::geiger;
}

DetectorSlotState apply_deadtime(DetectorSlotState state, bool click_happened_either_detector,
                                 int deadtime_gates) {
  if (click_happened_either_detector) {
    state.deadtime_remaining = deadtime_gates;
  } else if (state.deadtime_remaining > 0) {
    --state.deadtime_remaining;
  }
  return state;
}

}  // namespace qkdblind
