#include "qkdblind/sweep.hpp"

#include <charconv>
#include <cmath>
#include <ostream>

#include "qkdblind/csv.hpp"
#include "qkdblind/rng.hpp"

namespace qkdblind {
namespace {

constexpr std::size_t kMaxGridPoints = 1'000'000;

double parse_double(std::string_view text) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ConfigError("grid: '" + std::string(text) + "' is not a number");
  }
  return v;
}

std::string cell(DetectorId d, std::size_t level, std::string_view what) {
  return d.name() + "_L" + std::to_string(level) + "_" + std::string(what);
}

double monte_carlo(double p, std::uint64_t seed, std::uint64_t index, std::uint64_t batch) {
  if (batch == 0) return p;
  CounterRng rng(seed, Stream::sweep, index);
  std::uint64_t clicks = 0;
  for (std::uint64_t k = 0; k < batch; ++k) clicks += rng.bernoulli(p) ? 1 : 0;
  return static_cast<double>(clicks) / static_cast<double>(batch);
}

double in_gate_probability(const ScenarioConfig& s, DetectorId d, std::size_t level,
                           const TriggerPulse& pulse, bool gate) {
  const bool after_gate = s.eve && s.eve->plan.mode == AttackMode::after_gate;
  if (after_gate) return click_probability(s.thresholds[level], d, pulse.energy_fJ, gate);
  return pulse_click_probability(s.thresholds[level], d, pulse, gate, s.timing_windows[level]);
}

SweepTable energy_sweep(const SweepContext& ctx, const std::vector<double>& grid) {
  const auto& s = ctx.scenario;
  SweepTable t;
  t.columns = {"trigger_energy_fJ"};
  for (auto d : kDetectors) {
    for (std::size_t k = 0; k < s.thresholds.size(); ++k) {
      t.columns.push_back(cell(d, k, "gate"));
      t.columns.push_back(cell(d, k, "gate_mc"));
      t.columns.push_back(cell(d, k, "nogate"));
    }
  }
  const double width = s.eve ? s.eve->plan.pulse_width_ns : TriggerPulse{}.width_ns;
  std::uint64_t index = 0;
  for (double e : grid) {
    if (!(e >= 0.0)) throw ParameterError("trigger energy grid must be non-negative");
    std::vector<std::optional<double>> row{e};
    for (auto d : kDetectors) {
      for (std::size_t k = 0; k < s.thresholds.size(); ++k) {
        const TriggerPulse pulse{e, 0.0, width};
        const double p = in_gate_probability(s, d, k, pulse, true);
        row.emplace_back(p);
        row.emplace_back(monte_carlo(p, s.seed, index++, ctx.batch));
        row.emplace_back(click_probability(s.thresholds[k], d, e, false));
      }
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

SweepTable timing_sweep(const SweepContext& ctx, const std::vector<double>& grid) {
  const auto& s = ctx.scenario;
  std::array<double, 2> energy{};
  for (auto d : kDetectors) {
    if (!s.eve || s.eve->plan.for_target(d).empty()) {
      throw ParameterError("timing sweep needs a trigger energy for " + d.name() + " in the attack plan");
    }
    energy[d.index()] = s.eve->plan.for_target(d).front().energy_fJ;
  }
  SweepTable t;
  t.columns = {"timing_offset_ns"};
  for (auto d : kDetectors) {
    for (std::size_t k = 0; k < s.thresholds.size(); ++k) {
      t.columns.push_back(cell(d, k, "gate"));
      t.columns.push_back(cell(d, k, "gate_mc"));
    }
  }
  std::uint64_t index = 0;
  for (double offset : grid) {
    std::vector<std::optional<double>> row{offset};
    for (auto d : kDetectors) {
      for (std::size_t k = 0; k < s.thresholds.size(); ++k) {
        const TriggerPulse pulse{energy[d.index()], offset, s.eve->plan.pulse_width_ns};
        const double p = in_gate_probability(s, d, k, pulse, true);
        row.emplace_back(p);
        row.emplace_back(monte_carlo(p, s.seed, index++, ctx.batch));
      }
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

void require_device_model(const SweepContext& ctx) {
  if (ctx.gains.size() != 2) throw ParameterError("sweep needs a gain curve for each detector");
}

SweepTable power_sweep(const SweepContext& ctx, const std::vector<double>& grid) {
  require_device_model(ctx);
  SweepTable t;
  t.columns = {"blinding_power_mW"};
  for (auto d : kDetectors) {
    for (const char* c : {"v_apd_V", "i_apd_mA", "delta_vbr_V", "blinded", "gate_never_fJ",
                          "gate_always_fJ", "nogate_never_fJ"}) {
      t.columns.push_back(d.name() + "_" + c);
    }
  }
  const ThresholdCurves* curves = ctx.curves.empty() ? nullptr : &ctx.curves.back();
  for (double p : grid) {
    if (!(p >= 0.0)) throw ParameterError("blinding power grid must be non-negative");
    std::vector<std::optional<double>> row{p};
    std::optional<ThresholdSet> thresholds;
    if (curves && curves->covers(p)) thresholds = curves->at(p);
    for (auto d : kDetectors) {
      const auto op = steady_state(ctx.circuits[d.index()], ctx.gains[d.index()], p);
      row.emplace_back(op.v_apd_V);
      row.emplace_back(op.i_apd_mA);
      row.emplace_back(op.delta_vbr_V);
      row.emplace_back(op.blinded ? 1.0 : 0.0);
      if (thresholds) {
        row.emplace_back((*thresholds)[d].gate_never_fJ);
        row.emplace_back((*thresholds)[d].gate_always_fJ);
        row.emplace_back((*thresholds)[d].nogate_never_fJ);
      } else {
        row.insert(row.end(), 3, std::nullopt);
      }
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

SweepTable bias_sweep(const SweepContext& ctx, const std::vector<double>& grid) {
  require_device_model(ctx);
  const double power = ctx.scenario.eve ? ctx.scenario.eve->plan.blinding_power_mW : 0.38;
  SweepTable t;
  t.columns = {"v_bias_V"};
  for (auto d : kDetectors) {
    for (const char* c : {"blinding_onset_mW", "v_apd_V", "gate_never_fJ", "gate_always_fJ",
                          "nogate_never_fJ"}) {
      t.columns.push_back(d.name() + "_" + c);
    }
  }
  for (double v : grid) {
    if (!(v < 0.0)) throw ParameterError("bias voltages are negative supply values");
    std::vector<std::optional<double>> row{v};
    for (auto d : kDetectors) {
      CircuitParams params = ctx.circuits[d.index()];
      params.v_bias_V = v;
      const auto& gain = ctx.gains[d.index()];
      try {
        row.emplace_back(blinding_threshold(params, gain));
      } catch (const ConfigError&) {
        row.emplace_back(std::nullopt);
      }
      row.emplace_back(steady_state(params, gain, power).v_apd_V);
      try {
        const auto pts = synthesize_detector_thresholds(params, gain, {power});
        for (double e : {pts.front().thresholds.gate_never_fJ, pts.front().thresholds.gate_always_fJ,
                         pts.front().thresholds.nogate_never_fJ}) {
          row.emplace_back(std::isfinite(e) ? std::optional<double>(e) : std::nullopt);
        }
      } catch (const ParameterError&) {
        row.insert(row.end(), 3, std::nullopt);
      }
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace

std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::trigger_energy: return "trigger_energy";
    case SweepAxis::timing_offset: return "timing_offset";
    case SweepAxis::blinding_power: return "blinding_power";
    case SweepAxis::v_bias_level: return "v_bias_level";
  }
  return "?";
}

SweepAxis parse_sweep_axis(std::string_view text) {
  for (auto a : {SweepAxis::trigger_energy, SweepAxis::timing_offset, SweepAxis::blinding_power,
                 SweepAxis::v_bias_level}) {
    if (text == to_string(a)) return a;
  }
  throw ConfigError("unknown sweep axis '" + std::string(text) + "'");
}

std::vector<double> parse_grid(std::string_view text) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
  std::vector<double> grid;
  if (text.find(':') != std::string_view::npos) {
    const auto a = text.find(':');
    const auto b = text.find(':', a + 1);
    if (b == std::string_view::npos || text.find(':', b + 1) != std::string_view::npos) {
      throw ConfigError("grid range must be start:stop:step");
    }
    const double start = parse_double(text.substr(0, a));
    const double stop = parse_double(text.substr(a + 1, b - a - 1));
    const double step = parse_double(text.substr(b + 1));
    if (!(step > 0.0)) throw ConfigError("grid step must be positive");
    if (stop < start) throw ConfigError("grid stop lies below start");
    const double count = std::floor((stop - start) / step + 0.5) + 1.0;
    if (count > static_cast<double>(kMaxGridPoints)) throw ConfigError("grid has too many points");
    for (std::size_t i = 0; i < static_cast<std::size_t>(count); ++i) {
      grid.push_back(start + static_cast<double>(i) * step);
    }
    return grid;
  }
  if (text.empty()) return grid;
  std::size_t pos = 0;
  for (;;) {
    const auto comma = text.find(',', pos);
    const auto item = text.substr(pos, comma == std::string_view::npos ? text.size() - pos : comma - pos);
    grid.push_back(parse_double(item));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return grid;
}

std::size_t SweepTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return i;
  }
  throw ParameterError("sweep table has no column '" + std::string(name) + "'");
}

SweepTable run_sweep(const SweepContext& ctx, SweepAxis axis, const std::vector<double>& grid) {
  if (grid.empty()) throw ParameterError("sweep grid is empty");
  ctx.scenario.validate();
  switch (axis) {
    case SweepAxis::trigger_energy: return energy_sweep(ctx, grid);
    case SweepAxis::timing_offset: return timing_sweep(ctx, grid);
    case SweepAxis::blinding_power: return power_sweep(ctx, grid);
    case SweepAxis::v_bias_level: return bias_sweep(ctx, grid);
  }
  throw ParameterError("unknown sweep axis");
}

void write_sweep_csv(std::ostream& out, const SweepTable& table,
                     const std::vector<std::string>& header_comment) {
  for (const auto& line : header_comment) out << "# " << line << '\n';
  for (std::size_t i = 0; i < table.columns.size(); ++i) {
    out << (i ? "," : "") << table.columns[i];
  }
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      if (row[i]) out << format_number(*row[i]);
    }
    out << '\n';
  }
}

}  // namespace qkdblind
