#pragma once
// Single runs, parameter sweeps and their CSV / JSON-lines records.

#include "qfb/config.hpp"
#include "qfb/evolve.hpp"
#include "qfb/observables.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace qfb {

struct OutputRecord {
  std::size_t index = 0;
  std::string status = "ok";  // ok | invalid | numerical_guard | error
  std::string message;
  PhysicalParams physical;
  NumericalParams numerical;  // t_start / t_end always resolved
  int q = 0;
  int n_steps = 0;
  std::optional<CorrelationSet> correlations;
  std::optional<PhotonStats> stats;
  std::optional<PhotonStats> baseline;
  NormalizedStats normalized;
  double final_population = std::numeric_limits<double>::quiet_NaN();
  double norm = std::numeric_limits<double>::quiet_NaN();
  double discarded_weight = std::numeric_limits<double>::quiet_NaN();
  std::size_t max_bond = 0;
  double wall_time_s = 0.0;  // JSON-lines only; CSV stays deterministic
};

/// Parameters of the no-feedback reference run paired with `phys`.
inline PhysicalParams baseline_physical(const PhysicalParams& phys) {
  PhysicalParams b = phys;
  b.feedback_enabled = false;
  b.tau = 0.0;
  b.phi = 0.0;
  return b;
}

/// Run one simulation and fill the record's numerical fields.
inline OutputRecord simulate_record(const PhysicalParams& phys, const NumericalParams& num,
                                    Trajectory* keep_trajectory = nullptr) {
  OutputRecord rec;
  rec.physical = phys;
  rec.numerical = num;
  Trajectory traj = run_simulation(phys, num);
  rec.numerical.t_start = traj.grid.t_start;
  rec.numerical.t_end = traj.grid.t_end;
  rec.q = traj.grid.q;
  rec.n_steps = traj.grid.n_steps;
  rec.correlations = factorial_moments(traj.final_state, 3);
  rec.stats = photon_probabilities(*rec.correlations);
  rec.final_population = traj.population.empty() ? 0.0 : traj.population.back();
  rec.norm = traj.final_state.global_norm;
  rec.discarded_weight = traj.final_state.cumulative_discarded_weight;
  rec.max_bond = traj.max_bond;
  if (keep_trajectory) *keep_trajectory = std::move(traj);
  return rec;
}

inline PhotonStats compute_baseline(const RunConfig& cfg) {
  return *simulate_record(baseline_physical(cfg.physical), cfg.numerical).stats;
}

namespace detail {

inline bool needs_auto_baseline(const RunConfig& cfg) {
  return cfg.outputs.normalized && cfg.baseline_mode == BaselineMode::automatic;
}

inline void attach_baseline(OutputRecord& rec, const RunConfig& cfg, const std::optional<PhotonStats>& computed) {
  if (cfg.baseline_mode == BaselineMode::provided) rec.baseline = cfg.provided_baseline;
  if (cfg.baseline_mode == BaselineMode::automatic) rec.baseline = computed;
  if (cfg.outputs.normalized && rec.baseline && rec.stats)
    rec.normalized = normalize_against_baseline(*rec.stats, *rec.baseline);
}

inline void record_failure(OutputRecord& rec, const std::exception& e) {
  if (dynamic_cast<const NumericalGuardError*>(&e))
    rec.status = "numerical_guard";
  else if (dynamic_cast<const std::invalid_argument*>(&e) || dynamic_cast<const ConfigError*>(&e))
    rec.status = "invalid";
  else
    rec.status = "error";
  rec.message = e.what();
}

// Run f(i) for i in [0, n) on up to `workers` threads.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& f) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) f(i);
    });
  for (auto& t : pool) t.join();
}

using BaselineKey = std::tuple<double, double, double, double, int, int, double, std::size_t, std::optional<double>,
                               std::optional<double>>;

inline BaselineKey baseline_key(const RunConfig& c) {
  const auto& p = c.physical;
  const auto& n = c.numerical;
  return {p.pulse_area, p.pulse_width, p.gamma, n.dt, n.bin_photon_cutoff, n.expansion_order,
          n.truncation.singular_value_threshold, n.truncation.max_bond_dimension, n.t_start, n.t_end};
}

}  // namespace detail

/// Execute a point whose baseline (if any) is already known. Failures are
/// recorded in the record rather than thrown.
inline OutputRecord run_point(const RunConfig& cfg, std::size_t index, const std::optional<PhotonStats>& baseline,
                              const std::string& baseline_error = {}, Trajectory* keep_trajectory = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  OutputRecord rec;
  try {
    rec = simulate_record(cfg.physical, cfg.numerical, keep_trajectory);
    detail::attach_baseline(rec, cfg, baseline);
    if (!baseline_error.empty()) {
      rec.status = "error";
      rec.message = "baseline failed: " + baseline_error;
    }
  } catch (const std::exception& e) {
    rec.physical = cfg.physical;
    rec.numerical = cfg.numerical;
    detail::record_failure(rec, e);
  }
  rec.index = index;
  rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

/// One configuration, baseline resolved per cfg.baseline_mode.
inline OutputRecord run_single(const RunConfig& cfg, Trajectory* keep_trajectory = nullptr) {
  std::optional<PhotonStats> baseline;
  std::string baseline_error;
  if (detail::needs_auto_baseline(cfg)) {
    try {
      baseline = compute_baseline(cfg);
    } catch (const std::exception& e) {
      baseline_error = e.what();
    }
  }
  return run_point(cfg, 0, baseline, baseline_error, keep_trajectory);
}

/// All grid points of `spec`, sorted by grid index. One baseline is computed
/// per distinct (pulse, gamma, numerics) combination and shared.
inline std::vector<OutputRecord> run_sweep(const SweepSpec& spec, std::size_t workers = 1) {
  const std::size_t n = spec.size();
  std::vector<RunConfig> points;
  points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) points.push_back(spec.point(i));

  std::map<detail::BaselineKey, std::size_t> key_slot;
  std::vector<std::size_t> representative;
  std::vector<std::size_t> slot_of(n, SIZE_MAX);
  for (std::size_t i = 0; i < n; ++i) {
    if (!detail::needs_auto_baseline(points[i])) continue;
    const auto [it, inserted] = key_slot.try_emplace(detail::baseline_key(points[i]), representative.size());
    if (inserted) representative.push_back(i);
    slot_of[i] = it->second;
  }
  std::vector<std::optional<PhotonStats>> baselines(representative.size());
  std::vector<std::string> baseline_errors(representative.size());
  detail::parallel_for(representative.size(), workers, [&](std::size_t s) {
    try {
      baselines[s] = compute_baseline(points[representative[s]]);
    } catch (const std::exception& e) {
      baseline_errors[s] = e.what();
    }
  });

  std::vector<OutputRecord> records(n);
  detail::parallel_for(n, workers, [&](std::size_t i) {
    const std::size_t s = slot_of[i];
    records[i] = s == SIZE_MAX ? run_point(points[i], i, std::nullopt)
                               : run_point(points[i], i, baselines[s], baseline_errors[s]);
  });
  return records;
}

// ---------------------------------------------------------------------------
// Output

enum class OutputFormat { csv, jsonl };

/// Fixed CSV column order. Undefined values are written as empty fields.
inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols = {
      "index", "status", "gamma", "tau", "phi", "pulse_area", "pulse_width", "feedback", "dt",
      "bin_photon_cutoff", "expansion_order", "svd_threshold", "bond_max", "t_start", "t_end", "q", "n_steps",
      "c1", "c2", "c3", "p0", "p1", "p2", "p3", "r", "base_p0", "base_p1", "base_p2", "base_p3", "base_r",
      "pbar0", "pbar1", "pbar2", "pbar3", "r_over_r_nofeedback", "closure_defect", "final_population", "norm",
      "discarded_weight", "max_bond", "message"};
  return cols;
}

inline std::string format_real(double v) {
  if (!std::isfinite(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.13g", v);
  return buf;
}

inline std::string format_real(const std::optional<double>& v) { return v ? format_real(*v) : ""; }

namespace detail {

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += (c == '\n' || c == '\r') ? ' ' : c;
  }
  return out + "\"";
}

// Column name -> value as an optional double (nullopt = undefined).
inline std::map<std::string, std::optional<double>> numeric_fields(const OutputRecord& r) {
  std::map<std::string, std::optional<double>> f;
  auto opt = [](double v) -> std::optional<double> {
    if (std::isfinite(v)) return v;
    return std::nullopt;
  };
  const auto& p = r.physical;
  const auto& n = r.numerical;
  f["index"] = static_cast<double>(r.index);
  f["gamma"] = p.gamma;
  f["tau"] = p.tau;
  f["phi"] = p.phi;
  f["pulse_area"] = p.pulse_area;
  f["pulse_width"] = p.pulse_width;
  f["feedback"] = p.feedback_enabled ? 1.0 : 0.0;
  f["dt"] = n.dt;
  f["bin_photon_cutoff"] = n.bin_photon_cutoff;
  f["expansion_order"] = n.expansion_order;
  f["svd_threshold"] = n.truncation.singular_value_threshold;
  f["bond_max"] = static_cast<double>(n.truncation.max_bond_dimension);
  f["t_start"] = n.t_start;
  f["t_end"] = n.t_end;
  const bool ran = r.stats.has_value();
  f["q"] = ran ? std::optional<double>(r.q) : std::nullopt;
  f["n_steps"] = ran ? std::optional<double>(r.n_steps) : std::nullopt;
  if (r.correlations) {
    f["c1"] = r.correlations->c1;
    f["c2"] = r.correlations->c2;
    f["c3"] = r.correlations->c3;
  }
  if (r.stats) {
    for (int i = 0; i < 4; ++i) f["p" + std::to_string(i)] = r.stats->p[static_cast<std::size_t>(i)];
    f["r"] = opt(r.stats->ratio_r);
    f["closure_defect"] = opt(r.stats->closure_defect);
  }
  if (r.baseline) {
    for (int i = 0; i < 4; ++i) f["base_p" + std::to_string(i)] = r.baseline->p[static_cast<std::size_t>(i)];
    f["base_r"] = opt(r.baseline->ratio_r);
  }
  for (int i = 0; i < 4; ++i) f["pbar" + std::to_string(i)] = r.normalized.pbar[static_cast<std::size_t>(i)];
  f["r_over_r_nofeedback"] = r.normalized.ratio;
  f["final_population"] = opt(r.final_population);
  f["norm"] = opt(r.norm);
  f["discarded_weight"] = opt(r.discarded_weight);
  f["max_bond"] = ran ? std::optional<double>(static_cast<double>(r.max_bond)) : std::nullopt;
  return f;
}

}  // namespace detail

inline void write_csv_header(std::ostream& os) {
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
}

inline void write_csv_row(std::ostream& os, const OutputRecord& r) {
  const auto fields = detail::numeric_fields(r);
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (i) os << ',';
    const auto& c = cols[i];
    if (c == "status") os << r.status;
    else if (c == "message") os << detail::csv_escape(r.message);
    else if (c == "feedback") os << (r.physical.feedback_enabled ? "true" : "false");
    else if (auto it = fields.find(c); it != fields.end()) os << format_real(it->second);
  }
  os << '\n';
}

inline nlohmann::json to_json(const OutputRecord& r) {
  nlohmann::json j = nlohmann::json::object();
  const auto fields = detail::numeric_fields(r);
  for (const auto& c : csv_columns()) {
    if (c == "status" || c == "message") j[c] = c == "status" ? r.status : r.message;
    else if (c == "feedback") j[c] = r.physical.feedback_enabled;
    else if (auto it = fields.find(c); it != fields.end() && it->second) j[c] = *it->second;
    else j[c] = nullptr;
  }
  j["wall_time_s"] = r.wall_time_s;
  return j;
}

inline void emit(const std::vector<OutputRecord>& records, OutputFormat format, std::ostream& os) {
  if (format == OutputFormat::csv) {
    write_csv_header(os);
    for (const auto& r : records) write_csv_row(os, r);
  } else {
    for (const auto& r : records) os << to_json(r).dump() << '\n';
  }
}

inline void emit(const std::vector<OutputRecord>& records, OutputFormat format, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open output file '" + path + "' for writing");
  emit(records, format, os);
  os.flush();
  if (!os) throw std::runtime_error("write failed for output file '" + path + "'");
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

}  // namespace detail

/// Parse CSV produced by emit() back into records.
inline std::vector<OutputRecord> read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("read_csv: missing header");
  const auto header = detail::split_csv_line(line);
  if (header != csv_columns()) throw std::runtime_error("read_csv: unexpected header");
  std::vector<OutputRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) throw std::runtime_error("read_csv: wrong field count");
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size(); ++i) row[header[i]] = cells[i];
    auto num = [&](const std::string& k) -> std::optional<double> {
      const auto& s = row.at(k);
      if (s.empty()) return std::nullopt;
      return std::stod(s);
    };
    auto need = [&](const std::string& k) {
      const auto v = num(k);
      if (!v) throw std::runtime_error("read_csv: missing value for '" + k + "'");
      return *v;
    };
    OutputRecord r;
    r.index = static_cast<std::size_t>(need("index"));
    r.status = row.at("status");
    r.message = row.at("message");
    r.physical.gamma = need("gamma");
    r.physical.tau = need("tau");
    r.physical.phi = need("phi");
    r.physical.pulse_area = need("pulse_area");
    r.physical.pulse_width = need("pulse_width");
    r.physical.feedback_enabled = row.at("feedback") == "true";
    r.numerical.dt = need("dt");
    r.numerical.bin_photon_cutoff = static_cast<int>(need("bin_photon_cutoff"));
    r.numerical.expansion_order = static_cast<int>(need("expansion_order"));
    r.numerical.truncation.singular_value_threshold = need("svd_threshold");
    r.numerical.truncation.max_bond_dimension = static_cast<std::size_t>(need("bond_max"));
    r.numerical.t_start = num("t_start");
    r.numerical.t_end = num("t_end");
    r.q = static_cast<int>(num("q").value_or(0));
    r.n_steps = static_cast<int>(num("n_steps").value_or(0));
    if (num("c1")) r.correlations = CorrelationSet{need("c1"), need("c2"), need("c3"), std::nullopt};
    if (num("p0")) {
      PhotonStats s;
      for (int i = 0; i < 4; ++i) s.p[static_cast<std::size_t>(i)] = need("p" + std::to_string(i));
      if (auto v = num("r")) {
        s.ratio_r = *v;
        s.ratio_defined = true;
      }
      if (auto v = num("closure_defect")) s.closure_defect = *v;
      r.stats = s;
    }
    if (num("base_p0")) {
      PhotonStats s;
      for (int i = 0; i < 4; ++i) s.p[static_cast<std::size_t>(i)] = need("base_p" + std::to_string(i));
      if (auto v = num("base_r")) {
        s.ratio_r = *v;
        s.ratio_defined = true;
      }
      r.baseline = s;
    }
    for (int i = 0; i < 4; ++i) r.normalized.pbar[static_cast<std::size_t>(i)] = num("pbar" + std::to_string(i));
    r.normalized.ratio = num("r_over_r_nofeedback");
    r.final_population = num("final_population").value_or(std::numeric_limits<double>::quiet_NaN());
    r.norm = num("norm").value_or(std::numeric_limits<double>::quiet_NaN());
    r.discarded_weight = num("discarded_weight").value_or(std::numeric_limits<double>::quiet_NaN());
    r.max_bond = static_cast<std::size_t>(num("max_bond").value_or(0));
    out.push_back(std::move(r));
  }
  return out;
}

/// Population time series of one run: t, population, norm, discarded weight.
inline void write_population_series(std::ostream& os, const Trajectory& traj) {
  os << "t,population,norm,discarded_weight\n";
  for (std::size_t k = 0; k < traj.times.size(); ++k)
    os << format_real(traj.times[k]) << ',' << format_real(traj.population[k]) << ',' << format_real(traj.norm[k])
       << ',' << format_real(traj.discarded_weight[k]) << '\n';
}

}  // namespace qfb
