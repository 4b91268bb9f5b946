#pragma once
// Flat "key = value" run and sweep configuration.
//
// Times are in the same unit as 1/gamma (gamma defaults to 1, so times are
// read as multiples of 1/gamma). Angles accept multiples of pi: "pi",
// "2pi", "2*pi", "-pi/4", "3pi/4", "2π". Lines starting with '#' and text
// after '#' are comments. Unknown keys are rejected.
//
// Run keys:
//   gamma tau phi pulse_area pulse_width | pulse_fwhm feedback
//   dt bin_photon_cutoff t_start t_end expansion_order svd_threshold bond_max
//   start_excited
//   outputs        comma list of population_series, correlations,
//                  probabilities, normalized (default: all but population_series)
//   baseline_mode  auto | provided | none (default auto)
//   baseline_p0 .. baseline_p3   required with baseline_mode = provided
// Sweep keys (N = 1 or 2):
//   axisN = tau | phi | pulse_area
//   axisN_values = comma list          or
//   axisN_min, axisN_max, axisN_count, axisN_scale = linear | geometric
//   points_per_decade  default count for geometric axes (24)

#include "qfb/evolve.hpp"
#include "qfb/model.hpp"
#include "qfb/observables.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace qfb {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class BaselineMode { automatic, provided, none };

struct OutputSelection {
  bool population_series = false;
  bool correlations = true;
  bool probabilities = true;
  bool normalized = true;
};

struct RunConfig {
  PhysicalParams physical;
  NumericalParams numerical;
  OutputSelection outputs;
  BaselineMode baseline_mode = BaselineMode::automatic;
  std::optional<PhotonStats> provided_baseline;
};

enum class SweepAxisKind { tau, phi, pulse_area };

struct SweepAxis {
  SweepAxisKind kind = SweepAxisKind::tau;
  std::vector<double> values;
};

struct SweepSpec {
  SweepAxis axis1;
  std::optional<SweepAxis> axis2;
  RunConfig fixed;

  std::size_t size() const { return axis1.values.size() * (axis2 ? axis2->values.size() : 1); }

  /// Configuration of grid point `index`; axis2 varies fastest.
  RunConfig point(std::size_t index) const;
};

struct ConfigOverrides {
  std::optional<double> dt;
  std::optional<std::size_t> bond_max;
  std::optional<double> svd_threshold;
};

inline const char* axis_name(SweepAxisKind k) {
  switch (k) {
    case SweepAxisKind::tau: return "tau";
    case SweepAxisKind::phi: return "phi";
    case SweepAxisKind::pulse_area: return "pulse_area";
  }
  return "?";
}

inline void set_axis_value(RunConfig& cfg, SweepAxisKind kind, double v) {
  switch (kind) {
    case SweepAxisKind::tau: cfg.physical.tau = v; break;
    case SweepAxisKind::phi: cfg.physical.phi = wrap_phase(v); break;
    case SweepAxisKind::pulse_area: cfg.physical.pulse_area = v; break;
  }
}

inline RunConfig SweepSpec::point(std::size_t index) const {
  RunConfig cfg = fixed;
  const std::size_t inner = axis2 ? axis2->values.size() : 1;
  set_axis_value(cfg, axis1.kind, axis1.values.at(index / inner));
  if (axis2) set_axis_value(cfg, axis2->kind, axis2->values.at(index % inner));
  return cfg;
}

namespace detail {

inline std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

inline double parse_plain(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("trailing characters");
  return v;
}

}  // namespace detail

/// Number with an optional pi multiplier: "0.5", "pi", "-2*pi", "3pi/4".
inline double parse_real(std::string text) {
  std::string s;
  for (std::size_t i = 0; i < text.size();) {
    if (text.compare(i, 2, "\xCF\x80") == 0) {  // UTF-8 pi
      s += "pi";
      i += 2;
    } else {
      if (!std::isspace(static_cast<unsigned char>(text[i]))) s += text[i];
      ++i;
    }
  }
  if (s.empty()) throw std::invalid_argument("empty value");
  const auto pos = s.find("pi");
  if (pos == std::string::npos) return detail::parse_plain(s);
  std::string coef = s.substr(0, pos);
  std::string rest = s.substr(pos + 2);
  if (!coef.empty() && coef.back() == '*') coef.pop_back();
  double c = 1.0;
  if (coef == "-")
    c = -1.0;
  else if (coef == "+" || coef.empty())
    c = 1.0;
  else
    c = detail::parse_plain(coef);
  double den = 1.0;
  if (!rest.empty()) {
    if (rest.front() != '/') throw std::invalid_argument("expected '/' after pi");
    den = detail::parse_plain(rest.substr(1));
  }
  return c * std::numbers::pi / den;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw std::invalid_argument("expected a boolean");
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = detail::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// Validate a run configuration as a simulation would (grid included).
inline void validate(const RunConfig& cfg) {
  make_grid(cfg.physical, cfg.numerical);
  if (cfg.outputs.normalized && cfg.baseline_mode == BaselineMode::none)
    throw std::invalid_argument("normalized output requested but baseline_mode = none");
  if (cfg.baseline_mode == BaselineMode::provided && !cfg.provided_baseline)
    throw std::invalid_argument("baseline_mode = provided needs baseline_p0 .. baseline_p3");
}

inline void apply_overrides(RunConfig& cfg, const ConfigOverrides& o) {
  if (o.dt) cfg.numerical.dt = *o.dt;
  if (o.bond_max) cfg.numerical.truncation.max_bond_dimension = *o.bond_max;
  if (o.svd_threshold) cfg.numerical.truncation.singular_value_threshold = *o.svd_threshold;
}

/// Parse a configuration; returns a SweepSpec when an axis1 key is present.
inline std::variant<RunConfig, SweepSpec> parse_config(std::istream& in, const ConfigOverrides& overrides = {}) {
  struct Entry {
    std::string value;
    int line;
  };
  std::map<std::string, Entry> entries;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": missing key");
    if (entries.count(key))
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    entries[key] = {value, line_no};
  }

  static const std::vector<std::string> known = {
      "gamma", "tau", "phi", "pulse_area", "pulse_width", "pulse_fwhm", "feedback", "dt", "bin_photon_cutoff",
      "t_start", "t_end", "expansion_order", "svd_threshold", "bond_max", "start_excited", "outputs",
      "baseline_mode", "baseline_p0", "baseline_p1", "baseline_p2", "baseline_p3", "points_per_decade",
      "axis1", "axis1_values", "axis1_min", "axis1_max", "axis1_count", "axis1_scale",
      "axis2", "axis2_values", "axis2_min", "axis2_max", "axis2_count", "axis2_scale"};
  for (const auto& [key, e] : entries)
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("line " + std::to_string(e.line) + ": unknown key '" + key + "'");

  auto fail = [&](const std::string& key, const std::string& why) -> ConfigError {
    const auto it = entries.find(key);
    const std::string where = it != entries.end() ? "line " + std::to_string(it->second.line) + ": " : "";
    return ConfigError(where + "key '" + key + "': " + why);
  };
  auto real = [&](const std::string& key) -> std::optional<double> {
    const auto it = entries.find(key);
    if (it == entries.end()) return std::nullopt;
    try {
      return parse_real(it->second.value);
    } catch (const std::exception&) {
      throw fail(key, "cannot parse '" + it->second.value + "' as a number");
    }
  };
  auto integer = [&](const std::string& key) -> std::optional<long> {
    const auto v = real(key);
    if (!v) return std::nullopt;
    if (std::floor(*v) != *v) throw fail(key, "expected an integer");
    return static_cast<long>(*v);
  };
  auto boolean = [&](const std::string& key) -> std::optional<bool> {
    const auto it = entries.find(key);
    if (it == entries.end()) return std::nullopt;
    try {
      return parse_bool(it->second.value);
    } catch (const std::exception&) {
      throw fail(key, "expected true or false");
    }
  };
  auto text = [&](const std::string& key) -> std::optional<std::string> {
    const auto it = entries.find(key);
    if (it == entries.end()) return std::nullopt;
    return it->second.value;
  };

  RunConfig cfg;
  auto& ph = cfg.physical;
  auto& nm = cfg.numerical;
  if (auto v = real("gamma")) ph.gamma = *v;
  if (auto v = real("tau")) ph.tau = *v;
  if (auto v = real("phi")) ph.phi = wrap_phase(*v);
  if (auto v = real("pulse_area")) ph.pulse_area = *v;
  if (entries.count("pulse_width") && entries.count("pulse_fwhm"))
    throw fail("pulse_fwhm", "give either pulse_width or pulse_fwhm, not both");
  if (auto v = real("pulse_width")) ph.pulse_width = *v;
  // Field envelope exp(-t^2/nu^2) has intensity FWHM nu * sqrt(2 ln 2).
  if (auto v = real("pulse_fwhm")) ph.pulse_width = *v / std::sqrt(2.0 * std::numbers::ln2);
  if (auto v = boolean("feedback")) ph.feedback_enabled = *v;
  if (auto v = real("dt")) nm.dt = *v;
  if (auto v = integer("bin_photon_cutoff")) nm.bin_photon_cutoff = static_cast<int>(*v);
  if (auto v = real("t_start")) nm.t_start = *v;
  if (auto v = real("t_end")) nm.t_end = *v;
  if (auto v = integer("expansion_order")) nm.expansion_order = static_cast<int>(*v);
  if (auto v = real("svd_threshold")) nm.truncation.singular_value_threshold = *v;
  if (auto v = integer("bond_max")) {
    if (*v < 1) throw fail("bond_max", "must be >= 1");
    nm.truncation.max_bond_dimension = static_cast<std::size_t>(*v);
  }
  if (auto v = boolean("start_excited")) nm.start_excited = *v;

  if (auto v = text("outputs")) {
    cfg.outputs = OutputSelection{false, false, false, false};
    for (const auto& item : split_list(*v)) {
      if (item == "population_series") cfg.outputs.population_series = true;
      else if (item == "correlations") cfg.outputs.correlations = true;
      else if (item == "probabilities") cfg.outputs.probabilities = true;
      else if (item == "normalized") cfg.outputs.normalized = true;
      else throw fail("outputs", "unknown output '" + item + "'");
    }
  }
  if (auto v = text("baseline_mode")) {
    if (*v == "auto") cfg.baseline_mode = BaselineMode::automatic;
    else if (*v == "provided") cfg.baseline_mode = BaselineMode::provided;
    else if (*v == "none") cfg.baseline_mode = BaselineMode::none;
    else throw fail("baseline_mode", "expected auto, provided or none");
  }
  if (!entries.count("outputs") && cfg.baseline_mode == BaselineMode::none) cfg.outputs.normalized = false;
  const bool any_base = entries.count("baseline_p0") || entries.count("baseline_p1") || entries.count("baseline_p2") ||
                        entries.count("baseline_p3");
  if (any_base) {
    if (cfg.baseline_mode != BaselineMode::provided)
      throw fail("baseline_mode", "baseline_pN keys need baseline_mode = provided");
    PhotonStats base;
    for (int n = 0; n < 4; ++n) {
      const std::string key = "baseline_p" + std::to_string(n);
      auto v = real(key);
      if (!v) throw ConfigError("key '" + key + "': missing (all of baseline_p0 .. baseline_p3 are required)");
      base.p[static_cast<std::size_t>(n)] = *v;
    }
    if (base.p[1] > 1e-9) {
      base.ratio_r = base.p[2] / base.p[1];
      base.ratio_defined = true;
    }
    cfg.provided_baseline = base;
  }
  apply_overrides(cfg, overrides);

  auto read_axis = [&](const std::string& prefix) -> std::optional<SweepAxis> {
    auto name = text(prefix);
    const bool has_parts = entries.count(prefix + "_values") || entries.count(prefix + "_min") ||
                           entries.count(prefix + "_max") || entries.count(prefix + "_count") ||
                           entries.count(prefix + "_scale");
    if (!name) {
      if (has_parts) throw fail(prefix + (entries.count(prefix + "_values") ? "_values" : "_min"), "no '" + prefix + "' given");
      return std::nullopt;
    }
    SweepAxis axis;
    if (*name == "tau") axis.kind = SweepAxisKind::tau;
    else if (*name == "phi") axis.kind = SweepAxisKind::phi;
    else if (*name == "pulse_area") axis.kind = SweepAxisKind::pulse_area;
    else throw fail(prefix, "expected tau, phi or pulse_area");
    if (auto vals = text(prefix + "_values")) {
      if (entries.count(prefix + "_min") || entries.count(prefix + "_max") || entries.count(prefix + "_count"))
        throw fail(prefix + "_values", "give either a value list or min/max/count");
      for (const auto& item : split_list(*vals)) {
        try {
          axis.values.push_back(parse_real(item));
        } catch (const std::exception&) {
          throw fail(prefix + "_values", "cannot parse '" + item + "'");
        }
      }
      if (axis.values.empty()) throw fail(prefix + "_values", "empty list");
      return axis;
    }
    auto lo = real(prefix + "_min");
    auto hi = real(prefix + "_max");
    if (!lo || !hi) throw fail(prefix, "needs " + prefix + "_values or both " + prefix + "_min and " + prefix + "_max");
    if (*hi < *lo) throw fail(prefix + "_max", "must not be below " + prefix + "_min");
    const std::string scale = text(prefix + "_scale").value_or(axis.kind == SweepAxisKind::tau ? "geometric" : "linear");
    if (scale != "linear" && scale != "geometric") throw fail(prefix + "_scale", "expected linear or geometric");
    std::optional<long> count = integer(prefix + "_count");
    if (scale == "geometric") {
      if (!(*lo > 0.0)) throw fail(prefix + "_min", "geometric axes need a positive minimum");
      if (!count) {
        const double per_decade = real("points_per_decade").value_or(24.0);
        count = static_cast<long>(std::lround(per_decade * std::log10(*hi / *lo))) + 1;
      }
    }
    if (!count) throw fail(prefix, "linear axes need " + prefix + "_count");
    if (*count < 1) throw fail(prefix + "_count", "must be >= 1");
    for (long i = 0; i < *count; ++i) {
      const double f = *count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(*count - 1);
      axis.values.push_back(scale == "linear" ? *lo + f * (*hi - *lo) : *lo * std::pow(*hi / *lo, f));
    }
    return axis;
  };
  auto axis1 = read_axis("axis1");
  auto axis2 = read_axis("axis2");
  if (axis2 && !axis1) throw fail("axis2", "axis2 needs axis1");

  auto check = [&](const RunConfig& c, const std::string& where) {
    try {
      validate(c);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where + e.what());
    }
  };
  if (!axis1) {
    check(cfg, "");
    return cfg;
  }
  if (axis2 && axis2->kind == axis1->kind) throw fail("axis2", "axes must be distinct");
  SweepSpec spec{*axis1, axis2, cfg};
  for (std::size_t i = 0; i < spec.size(); ++i) check(spec.point(i), "grid point " + std::to_string(i) + ": ");
  return spec;
}

inline std::variant<RunConfig, SweepSpec> parse_config_file(const std::string& path, const ConfigOverrides& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in, overrides);
}

inline std::variant<RunConfig, SweepSpec> parse_config_text(const std::string& text, const ConfigOverrides& overrides = {}) {
  std::istringstream in(text);
  return parse_config(in, overrides);
}

}  // namespace qfb
