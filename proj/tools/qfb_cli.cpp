// qfb: command-line front end.
//
//   qfb run      --config run.cfg  [--out rec.csv] [--format csv|jsonl]
//   qfb sweep    --config sweep.cfg [--workers N]
//   qfb baseline --config run.cfg
//   qfb oracle   --config run.cfg --kind markov|dde|rabi|robustness
//
// Exit codes: 0 success, 1 other failure, 2 configuration error,
// 3 numerical guard tripped.

#include "qfb/qfb.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitGuard = 3;

struct CommonOptions {
  std::string config;
  std::string out;
  std::string format = "csv";
  std::size_t workers = 1;
  std::optional<double> dt;
  std::optional<std::size_t> bond_max;
  std::optional<double> svd_threshold;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "Configuration file ('-' reads stdin)")->required();
  cmd->add_option("--out", o.out, "Output path (default stdout)");
  cmd->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"csv", "jsonl"}));
  cmd->add_option("--dt", o.dt, "Override the time step")->check(CLI::PositiveNumber);
  cmd->add_option("--bond-max", o.bond_max, "Override the maximum bond dimension")->check(CLI::PositiveNumber);
  cmd->add_option("--svd-threshold", o.svd_threshold, "Override the relative singular-value threshold");
}

std::variant<qfb::RunConfig, qfb::SweepSpec> load(const CommonOptions& o) {
  qfb::ConfigOverrides ov{o.dt, o.bond_max, o.svd_threshold};
  if (o.config == "-") return qfb::parse_config(std::cin, ov);
  return qfb::parse_config_file(o.config, ov);
}

qfb::RunConfig load_single(const CommonOptions& o, const char* command) {
  auto parsed = load(o);
  if (auto* run = std::get_if<qfb::RunConfig>(&parsed)) return *run;
  throw qfb::ConfigError(std::string(command) + ": configuration defines a sweep; use 'qfb sweep'");
}

qfb::OutputFormat format_of(const CommonOptions& o) {
  return o.format == "jsonl" ? qfb::OutputFormat::jsonl : qfb::OutputFormat::csv;
}

void write_records(const std::vector<qfb::OutputRecord>& recs, const CommonOptions& o) {
  if (o.out.empty() || o.out == "-")
    qfb::emit(recs, format_of(o), std::cout);
  else
    qfb::emit(recs, format_of(o), o.out);
}

int status_code(const std::vector<qfb::OutputRecord>& recs) {
  int code = 0;
  for (const auto& r : recs) {
    if (r.status == "ok") continue;
    std::cerr << "point " << r.index << ": " << r.status << ": " << r.message << '\n';
    if (r.status == "numerical_guard") code = kExitGuard;
    else if (code == 0) code = kExitFailure;
  }
  return code;
}

std::unique_ptr<std::ostream> open_out(const std::string& path) {
  auto os = std::make_unique<std::ofstream>(path, std::ios::binary);
  if (!*os) throw std::runtime_error("cannot open output file '" + path + "' for writing");
  return os;
}

int cmd_run(const CommonOptions& o, const std::string& dump_operators) {
  const qfb::RunConfig cfg = load_single(o, "run");
  if (!dump_operators.empty()) {
    auto os = open_out(dump_operators);
    qfb::write_step_operators(*os, qfb::build_step_operators(cfg.physical, cfg.numerical));
  }
  qfb::Trajectory traj;
  const auto rec = qfb::run_single(cfg, cfg.outputs.population_series ? &traj : nullptr);
  write_records({rec}, o);
  if (cfg.outputs.population_series && rec.status == "ok") {
    if (o.out.empty() || o.out == "-") {
      std::cerr << "population series not written: needs --out\n";
    } else {
      auto os = open_out(o.out + ".series.csv");
      qfb::write_population_series(*os, traj);
    }
  }
  return status_code({rec});
}

int cmd_sweep(const CommonOptions& o) {
  auto parsed = load(o);
  std::vector<qfb::OutputRecord> recs;
  if (auto* spec = std::get_if<qfb::SweepSpec>(&parsed))
    recs = qfb::run_sweep(*spec, o.workers);
  else
    recs = {qfb::run_single(std::get<qfb::RunConfig>(parsed))};
  write_records(recs, o);
  return status_code(recs);
}

int cmd_baseline(const CommonOptions& o) {
  qfb::RunConfig cfg = load_single(o, "baseline");
  cfg.physical = qfb::baseline_physical(cfg.physical);
  cfg.baseline_mode = qfb::BaselineMode::none;
  cfg.outputs.normalized = false;
  const auto rec = qfb::run_single(cfg);
  write_records({rec}, o);
  return status_code({rec});
}

int cmd_oracle(const CommonOptions& o, const std::string& kind, std::optional<double> t_max, std::optional<double> step,
               std::optional<double> omega0) {
  const qfb::RunConfig cfg = load_single(o, "oracle");
  const auto& ph = cfg.physical;
  std::unique_ptr<std::ostream> file;
  std::ostream* os = &std::cout;
  if (!o.out.empty() && o.out != "-") {
    file = open_out(o.out);
    os = file.get();
  }
  using qfb::format_real;
  if (kind == "markov") {
    const auto dist = qfb::markov_counting_distribution(ph.pulse_area, ph.pulse_width, ph.gamma, 4);
    *os << "n,p\n";
    for (std::size_t n = 0; n < dist.size(); ++n) *os << n << ',' << format_real(dist[n]) << '\n';
  } else if (kind == "dde") {
    if (!(ph.tau > 0.0)) throw qfb::ConfigError("oracle dde: tau must be positive");
    const double tm = t_max.value_or(cfg.numerical.t_end.value_or(4.0 * ph.tau));
    const auto sol = qfb::dde_integrate(ph.gamma, ph.tau, ph.phi, tm, step.value_or(ph.tau / 200.0));
    *os << "t,population,markovian\n";
    for (std::size_t j = 0; j < sol.times.size(); ++j)
      *os << format_real(sol.times[j]) << ',' << format_real(sol.population[j]) << ','
          << format_real(std::exp(-2.0 * ph.gamma * sol.times[j])) << '\n';
  } else if (kind == "rabi") {
    *os << "pulse_area,final_population\n"
        << format_real(ph.pulse_area) << ',' << format_real(qfb::rabi_final_population(ph.pulse_area)) << '\n';
  } else if (kind == "robustness") {
    if (!omega0) throw qfb::ConfigError("oracle robustness: --omega0 is required");
    *os << "omega0,delta_length_m\n" << format_real(*omega0) << ',' << format_real(qfb::phase_robustness(*omega0)) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pulsed two-level emitter with delayed coherent feedback: photon statistics"};
  app.require_subcommand(1);

  CommonOptions run_o, sweep_o, base_o, oracle_o;
  std::string dump_operators;
  auto* run = app.add_subcommand("run", "Simulate one configuration");
  add_common(run, run_o);
  run->add_option("--dump-operators", dump_operators, "Write the step operators u0, u1, u2 in coordinate format");

  auto* sweep = app.add_subcommand("sweep", "Run a parameter sweep");
  add_common(sweep, sweep_o);
  sweep->add_option("--workers", sweep_o.workers, "Worker threads")->check(CLI::PositiveNumber);

  auto* baseline = app.add_subcommand("baseline", "Simulate the no-feedback reference of a configuration");
  add_common(baseline, base_o);

  std::string kind;
  std::optional<double> t_max, step, omega0;
  auto* oracle = app.add_subcommand("oracle", "Evaluate an independent reference");
  add_common(oracle, oracle_o);
  oracle->add_option("--kind", kind, "Reference to evaluate")
      ->required()
      ->check(CLI::IsMember({"markov", "dde", "rabi", "robustness"}));
  oracle->add_option("--t-max", t_max, "dde: end time (default t_end or 4 tau)");
  oracle->add_option("--step", step, "dde: integration step (default tau / 200)");
  oracle->add_option("--omega0", omega0, "robustness: emitter angular frequency in rad/s");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_o, dump_operators);
    if (*sweep) return cmd_sweep(sweep_o);
    if (*baseline) return cmd_baseline(base_o);
    if (*oracle) return cmd_oracle(oracle_o, kind, t_max, step, omega0);
  } catch (const qfb::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const qfb::NumericalGuardError& e) {
    std::cerr << "numerical guard: " << e.what() << '\n';
    return kExitGuard;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
