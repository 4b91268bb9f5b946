#pragma once
// Independent references that do not touch the MPS machinery.

#include "qfb/model.hpp"
#include "qfb/observables.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace qfb {

/// Feedback-modified spontaneous emission on [tau, 2 tau] as printed in the
/// literature form:
///   e^{-2 G t} + e^{-G(2t - tau)} G(t - tau) [2 cos(phi) + G(t - tau) e^{G tau}].
/// Its cross-term sign is opposite to direct integration of the amplitude
/// equation; see piecewise_feedback_population.
inline double analytic_feedback_population(double t, double gamma, double tau, double phi) {
  if (t < tau || t > 2.0 * tau) throw std::invalid_argument("analytic_feedback_population: t must lie in [tau, 2 tau]");
  const double x = gamma * (t - tau);
  return std::exp(-2.0 * gamma * t) + std::exp(-gamma * (2.0 * t - tau)) * x * (2.0 * std::cos(phi) + x * std::exp(gamma * tau));
}

/// Direct integration of c' = -G c - G e^{i phi} c(t - tau) from c(0) = 1
/// over [tau, 2 tau]: |e^{-G t} - G (t - tau) e^{-G (t - tau)} e^{i phi}|^2.
inline double piecewise_feedback_population(double t, double gamma, double tau, double phi) {
  if (t < tau || t > 2.0 * tau) throw std::invalid_argument("piecewise_feedback_population: t must lie in [tau, 2 tau]");
  const std::complex<double> c =
      std::exp(-gamma * t) - gamma * (t - tau) * std::exp(-gamma * (t - tau)) * std::polar(1.0, phi);
  return std::norm(c);
}

struct DdeSolution {
  std::vector<double> times;
  std::vector<std::complex<double>> amplitude;
  std::vector<double> population;
  double dt = 0.0;

  /// Population at an arbitrary time by cubic Hermite interpolation.
  double population_at(double t) const;
  std::complex<double> amplitude_at(double t) const;

  std::vector<std::complex<double>> slope_right;  // one-sided derivatives at grid points
  std::vector<std::complex<double>> slope_left;
};

inline std::complex<double> DdeSolution::amplitude_at(double t) const {
  if (t <= times.front()) return amplitude.front();
  if (t >= times.back()) return amplitude.back();
  const auto j = static_cast<std::size_t>(std::floor((t - times.front()) / dt));
  const std::size_t i = std::min(j, times.size() - 2);
  const double h = dt;
  const double s = (t - times[i]) / h;
  const double h00 = (1 + 2 * s) * (1 - s) * (1 - s), h10 = s * (1 - s) * (1 - s);
  const double h01 = s * s * (3 - 2 * s), h11 = s * s * (s - 1);
  return h00 * amplitude[i] + h10 * h * slope_right[i] + h01 * amplitude[i + 1] + h11 * h * slope_left[i + 1];
}

inline double DdeSolution::population_at(double t) const { return std::norm(amplitude_at(t)); }

/// Single-excitation amplitude equation of the emitter in front of a mirror,
///   c'(t) = -G c(t) - G e^{i phi} c(t - tau) theta(t - tau),  c(0) = 1,
/// integrated with classical RK4. The step is shrunk so tau is an exact
/// multiple of it; delayed values between grid points come from cubic
/// Hermite interpolation with one-sided slopes at the kinks. tau may be
/// +infinity (no feedback within the window).
inline DdeSolution dde_integrate(double gamma, double tau, double phi, double t_max, double dt) {
  if (!(gamma > 0.0) || !(tau > 0.0) || !(t_max > 0.0) || !(dt > 0.0))
    throw std::invalid_argument("dde_integrate: gamma, tau, t_max and dt must be positive");
  const bool finite_delay = std::isfinite(tau);
  if (finite_delay && dt > tau / 50.0 * (1.0 + 1e-12)) throw std::invalid_argument("dde_integrate: dt must be <= tau / 50");
  std::size_t per_delay = 0;
  double h = dt;
  if (finite_delay) {
    per_delay = static_cast<std::size_t>(std::ceil(tau / dt - 1e-9));
    h = tau / static_cast<double>(per_delay);
  }
  const auto n = static_cast<std::size_t>(std::ceil(t_max / h - 1e-9));
  const std::complex<double> kick = -gamma * std::polar(1.0, phi);

  DdeSolution sol;
  sol.dt = h;
  sol.times.resize(n + 1);
  sol.amplitude.resize(n + 1);
  sol.slope_right.resize(n + 1);
  sol.slope_left.resize(n + 1);
  for (std::size_t j = 0; j <= n; ++j) sol.times[j] = j * h;
  sol.amplitude[0] = 1.0;

  auto active = [&](std::size_t j) { return finite_delay && j >= per_delay; };
  auto delayed_mid = [&](std::size_t i) {
    // Hermite midpoint on [t_i, t_{i+1}] of the stored history.
    return 0.5 * (sol.amplitude[i] + sol.amplitude[i + 1]) + (h / 8.0) * (sol.slope_right[i] - sol.slope_left[i + 1]);
  };
  auto rhs = [&](std::complex<double> c, std::complex<double> cd, bool on) {
    return -gamma * c + (on ? kick * cd : std::complex<double>(0.0));
  };

  sol.slope_right[0] = rhs(sol.amplitude[0], 0.0, active(0));
  sol.slope_left[0] = sol.slope_right[0];
  for (std::size_t j = 0; j < n; ++j) {
    const bool on = active(j);
    std::complex<double> d0 = 0.0, dm = 0.0, d1 = 0.0;
    if (on) {
      const std::size_t i = j - per_delay;
      d0 = sol.amplitude[i];
      dm = delayed_mid(i);
      d1 = sol.amplitude[i + 1];
    }
    const auto c = sol.amplitude[j];
    const auto k1 = rhs(c, d0, on);
    const auto k2 = rhs(c + 0.5 * h * k1, dm, on);
    const auto k3 = rhs(c + 0.5 * h * k2, dm, on);
    const auto k4 = rhs(c + h * k3, d1, on);
    sol.amplitude[j + 1] = c + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    // Left slope uses this step's delayed branch; right slope the next one.
    sol.slope_left[j + 1] = rhs(sol.amplitude[j + 1], d1, on);
    const bool next_on = active(j + 1);
    const std::complex<double> next_delay = next_on ? sol.amplitude[j + 1 - per_delay] : 0.0;
    sol.slope_right[j + 1] = rhs(sol.amplitude[j + 1], next_delay, next_on);
  }
  sol.population.resize(n + 1);
  for (std::size_t j = 0; j <= n; ++j) sol.population[j] = std::norm(sol.amplitude[j]);
  return sol;
}

/// Exclusive photon-counting hierarchy for the driven emitter without
/// feedback (population decay rate 2 gamma). rho^(n) evolves under the
/// no-jump Liouvillian and is fed by jumps out of rho^(n-1); the last class
/// collects n >= n_cut. Returns p(0..n_cut).
inline std::vector<double> markov_counting_distribution(double pulse_area, double pulse_width, double gamma, int n_cut) {
  if (n_cut < 3) throw std::invalid_argument("markov_counting_distribution: n_cut must be >= 3");
  if (!(gamma > 0.0) || !(pulse_width > 0.0)) throw std::invalid_argument("markov_counting_distribution: bad parameters");
  using M2 = Eigen::Matrix2cd;
  const double rate = 2.0 * gamma;
  M2 lower;
  lower << 0.0, 1.0, 0.0, 0.0;  // basis (g, e): sigma_- |e> = |g>
  const M2 raise = lower.adjoint();
  M2 sx;
  sx << 0.0, 1.0, 1.0, 0.0;
  const M2 decay = -0.5 * rate * raise * lower;

  PhysicalParams drive;
  drive.pulse_area = pulse_area;
  drive.pulse_width = pulse_width;
  const auto classes = static_cast<std::size_t>(n_cut + 1);
  std::vector<M2> rho(classes, M2::Zero());
  rho[0](0, 0) = 1.0;

  auto deriv = [&](double t, const std::vector<M2>& r) {
    const M2 h_eff = pulse_envelope(t, drive) * sx + std::complex<double>(0.0, 1.0) * decay;
    const M2 gen = std::complex<double>(0.0, -1.0) * h_eff;  // rho' = gen rho + rho gen^dag + jumps
    std::vector<M2> out(classes);
    for (std::size_t n = 0; n < classes; ++n) {
      out[n] = gen * r[n] + r[n] * gen.adjoint();
      if (n > 0) out[n] += rate * lower * r[n - 1] * raise;
    }
    out[classes - 1] += rate * lower * r[classes - 1] * raise;
    return out;
  };
  auto rk4 = [&](double t, double h) {
    auto axpy = [&](const std::vector<M2>& a, const std::vector<M2>& b, double s) {
      std::vector<M2> o(classes);
      for (std::size_t n = 0; n < classes; ++n) o[n] = a[n] + s * b[n];
      return o;
    };
    const auto k1 = deriv(t, rho);
    const auto k2 = deriv(t + 0.5 * h, axpy(rho, k1, 0.5 * h));
    const auto k3 = deriv(t + 0.5 * h, axpy(rho, k2, 0.5 * h));
    const auto k4 = deriv(t + h, axpy(rho, k3, h));
    for (std::size_t n = 0; n < classes; ++n) rho[n] += (h / 6.0) * (k1[n] + 2.0 * k2[n] + 2.0 * k3[n] + k4[n]);
  };

  // Fine steps through the pulse, then coarser ones for the free decay.
  const double pulse_end = 6.0 * pulse_width;
  double t = -6.0 * pulse_width;
  const double fine = std::min(pulse_width / 100.0, 0.01 / gamma);
  const auto n_fine = static_cast<long>(std::ceil((pulse_end - t) / fine));
  const double hf = (pulse_end - t) / static_cast<double>(n_fine);
  for (long i = 0; i < n_fine; ++i, t += hf) rk4(t, hf);
  const double coarse = 0.005 / gamma;
  for (int guard = 0; guard < 1'000'000; ++guard) {
    double excited = 0.0;
    for (const auto& r : rho) excited += r(1, 1).real();
    if (excited < 1e-15) break;
    rk4(t, coarse);
    t += coarse;
  }
  std::vector<double> p(classes);
  for (std::size_t n = 0; n < classes; ++n) p[n] = rho[n].trace().real();
  return p;
}

/// Counting-hierarchy statistics truncated to p(0..3); the classes are cut
/// at n_cut (4 by default, p(4) lumps every higher count).
inline PhotonStats markov_counting_pn(double pulse_area, double pulse_width, double gamma, int n_cut = 4) {
  const auto dist = markov_counting_distribution(pulse_area, pulse_width, gamma, n_cut);
  PhotonStats s;
  for (std::size_t n = 0; n < 4; ++n) s.p[n] = dist[n];
  if (s.p[1] > 1e-9) {
    s.ratio_r = s.p[2] / s.p[1];
    s.ratio_defined = true;
  }
  double total = 0.0;
  for (double v : dist) total += v;
  s.closure_defect = std::abs(total - 1.0);
  return s;
}

/// Excited population after an isolated pulse of area A with no decay.
inline double rabi_final_population(double pulse_area) {
  const double s = std::sin(0.5 * pulse_area);
  return s * s;
}

inline constexpr double kSpeedOfLight = 299'792'458.0;

/// Mirror displacement over which the feedback phase phi = 2 omega0 L / c0
/// sweeps the destructive window [-pi/2, pi/2]: pi c0 / (2 omega0).
inline double phase_robustness(double omega0, double c0 = kSpeedOfLight) {
  if (!(omega0 > 0.0)) throw std::invalid_argument("phase_robustness: omega0 must be positive");
  return std::numbers::pi * c0 / (2.0 * omega0);
}

}  // namespace qfb
