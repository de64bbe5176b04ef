// Command-line front-end: run sessions, check attack feasibility, sweep
// parameters and calibrate the electrothermal model.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "qkdblind/calibration.hpp"
#include "qkdblind/calibration_data.hpp"
#include "qkdblind/config.hpp"
#include "qkdblind/csv.hpp"
#include "qkdblind/report.hpp"

namespace {

using namespace qkdblind;

std::string default_out_dir() {
  const char* env = std::getenv("QKDBLIND_OUT");
  return env && *env ? env : "out";
}

std::string join(const std::string& dir, const std::string& file) {
  return (std::filesystem::path(dir) / file).string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct RunArgs {
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::string out = default_out_dir();
  bool trace = false;
  std::string state;
};

int cmd_run(const RunArgs& a) {
  auto sc = load_scenario(a.scenario, a.seed);
  sc.session.record_trace = a.trace;
  const AlarmState alarm = a.state.empty() ? AlarmState{} : load_alarm_state(a.state);
  const auto result = run_session(sc.session, alarm);
  const auto& r = result.report;

  auto j = to_json(r);
  if (sc.session.eve) j["attack_plan"] = to_json(sc.session.eve->plan);
  if (sc.plan_outcome) {
    j["attack_plan_complete"] = sc.plan_outcome->ok;
    if (!sc.plan_outcome->diagnostic.empty()) j["attack_plan_diagnostic"] = sc.plan_outcome->diagnostic;
  }
  write_text_file(join(a.out, "report.json"), pretty(stamp(j, sc.config_hash, sc.session.seed)));
  if (a.trace) {
    std::ostringstream csv;
    for (const auto& line : provenance_lines(sc.config_hash, sc.session.seed)) csv << "# " << line << '\n';
    write_trace_csv(csv, result.trace);
    write_text_file(join(a.out, "trace.csv"), csv.str());
  }
  if (!a.state.empty()) save_alarm_state(a.state, r.alarm_end);

  std::cout << "verdict=" << to_string(r.verdict) << " sifted=" << r.sift.sifted
            << " qber=" << format_number(r.sift.qber) << " alarm=" << r.alarm_end.counter
            << (r.alarm_end.bricked ? " (bricked)" : "");
  if (r.attack_succeeded()) std::cout << " attack_succeeded";
  std::cout << '\n';
  return exit_code(r.verdict);
}

struct CheckArgs {
  std::string thresholds;
  std::optional<double> power_mW;
  std::string out = default_out_dir();
};

int cmd_check(const CheckArgs& a) {
  const auto curves = load_threshold_curves_csv(a.thresholds);
  double power = a.power_mW.value_or(builtin::kAttackPower_mW);
  if (!a.power_mW && !curves.covers(power)) power = curves.min_power_mW();
  const auto set = curves.at(power);
  const auto report = analyze_feasibility(set);

  nlohmann::json j = to_json(report);
  j["blinding_power_mW"] = power;
  j["thresholds_csv"] = a.thresholds;
  const auto hash = config_hash({{"thresholds", read_file(a.thresholds)}, {"blinding_power_mW", power}});
  write_text_file(join(a.out, "feasibility.json"), pretty(stamp(j, hash, 0)));

  std::cout << "strong=" << (report.strong_conditions_hold ? "true" : "false")
            << " necessary=" << (report.necessary_condition_holds ? "true" : "false") << '\n';
  for (const auto& m : report.margins) {
    std::cout << "  " << m.name << ": slack " << format_number(m.slack_fJ) << " fJ ("
              << format_number(100.0 * m.relative) << "%)\n";
  }
  for (const auto& d : report.diagnostics) std::cout << "  violated: " << d << '\n';
  return kExitOk;
}

struct SweepArgs {
  std::string scenario;
  std::string axis;
  std::string grid;
  std::optional<std::uint64_t> seed;
  std::uint64_t batch = 10000;
  std::string out = default_out_dir();
};

int cmd_sweep(const SweepArgs& a) {
  const auto axis = parse_sweep_axis(a.axis);
  const auto grid = parse_grid(a.grid);
  if (grid.empty()) throw ConfigError("--grid: no points");
  const auto sc = load_scenario(a.scenario, a.seed);
  const auto table = run_sweep(sc.sweep_context(a.batch), axis, grid);
  std::ostringstream csv;
  write_sweep_csv(csv, table, provenance_lines(sc.config_hash, sc.session.seed));
  const auto path = join(a.out, "sweep_" + to_string(axis) + ".csv");
  write_text_file(path, csv.str());
  std::cout << "wrote " << table.rows.size() << " rows to " << path << '\n';
  return kExitOk;
}

struct CalibrateArgs {
  std::string gain_d0;
  std::string gain_d1;
  std::string circuit;
  std::string out = default_out_dir();
};

int cmd_calibrate(const CalibrateArgs& a) {
  std::array<GainCurve, 2> gains{
      a.gain_d0.empty() ? builtin::gain_curve(kD0) : load_gain_curve_csv(a.gain_d0),
      a.gain_d1.empty() ? builtin::gain_curve(kD1) : load_gain_curve_csv(a.gain_d1)};
  std::array<CircuitParams, 2> params{builtin::circuit_params(kD0), builtin::circuit_params(kD1)};
  nlohmann::json inputs{{"gain_D0", a.gain_d0.empty() ? "builtin" : read_file(a.gain_d0)},
                        {"gain_D1", a.gain_d1.empty() ? "builtin" : read_file(a.gain_d1)}};
  if (!a.circuit.empty()) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(read_file(a.circuit));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(a.circuit + ": " + e.what());
    }
    if (!doc.is_object()) throw ConfigError(a.circuit + ": expected an object");
    for (const auto& [key, value] : doc.items()) {
      if (key != "D0" && key != "D1") throw ConfigError("circuit." + key + ": unknown key");
    }
    for (auto d : kDetectors) {
      if (doc.contains(d.name())) {
        params[d.index()] = parse_circuit_params(doc[d.name()], "circuit." + d.name(), params[d.index()]);
      }
    }
    inputs["circuit"] = doc;
  }
  const auto cal = calibrate_device(gains, params);
  const auto path = join(a.out, "calibration.json");
  write_text_file(path, pretty(stamp(to_json(cal), config_hash(inputs), 0)));
  for (auto d : kDetectors) {
    const auto& f = cal.detectors[d.index()];
    std::cout << d.name() << ": v_br_ref=" << format_number(f.params.v_br_ref_V)
              << " V onset=" << format_number(f.onset_model_mW * 1e3)
              << " uW G(v_br-2V)=" << format_number(f.gain_2V_below_breakdown) << " A/W\n";
  }
  std::cout << "kappa=" << format_number(cal.kappa.kappa_mV_per_pC) << " mV/pC\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Detector-blinding attack and countermeasure simulator for gated-APD BB84"};
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Simulate one QKD session");
  run_cmd->add_option("--scenario", run.scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--seed", run.seed, "Override the scenario seed");
  run_cmd->add_option("--out", run.out, "Output directory (default $QKDBLIND_OUT or ./out)");
  run_cmd->add_flag("--trace", run.trace, "Also write the per-slot trace CSV");
  run_cmd->add_option("--state", run.state, "Lifetime alarm state file (read and updated)");

  CheckArgs check;
  auto* check_cmd = app.add_subcommand("check", "Evaluate attack feasibility for a threshold table");
  check_cmd->add_option("thresholds", check.thresholds, "Threshold CSV")->required()->check(CLI::ExistingFile);
  check_cmd->add_option("--power-mW", check.power_mW, "Blinding power to evaluate at");
  check_cmd->add_option("--out", check.out, "Output directory");

  SweepArgs sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "Tabulate click probabilities or operating points");
  sweep_cmd->add_option("--scenario", sweep.scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--axis", sweep.axis,
                        "trigger_energy | timing_offset | blinding_power | v_bias_level")->required();
  sweep_cmd->add_option("--grid", sweep.grid, "start:stop:step or a,b,c")->required();
  sweep_cmd->add_option("--seed", sweep.seed, "Override the scenario seed");
  sweep_cmd->add_option("--batch", sweep.batch, "Monte Carlo trials per point");
  sweep_cmd->add_option("--out", sweep.out, "Output directory");

  CalibrateArgs cal;
  auto* cal_cmd = app.add_subcommand("calibrate", "Fit breakdown voltages and comparator constant");
  cal_cmd->add_option("--gain-d0", cal.gain_d0, "D0 gain CSV (v_apd_V,gain_A_per_W)");
  cal_cmd->add_option("--gain-d1", cal.gain_d1, "D1 gain CSV");
  cal_cmd->add_option("--circuit", cal.circuit, "Circuit constants JSON keyed by D0/D1");
  cal_cmd->add_option("--out", cal.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfigError;
  }

  try {
    if (*run_cmd) return cmd_run(run);
    if (*check_cmd) return cmd_check(check);
    if (*sweep_cmd) return cmd_sweep(sweep);
    if (*cal_cmd) return cmd_calibrate(cal);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfigError;
  }
  return kExitConfigError;
}
