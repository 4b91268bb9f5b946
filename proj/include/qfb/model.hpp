#pragma once
// Emitter + mirror model: parameters, the Gaussian drive and the per-step
// evolution operators on the three-body basis |i_S, i_n, i_tau>.
//
// Basis ordering: i_S slowest, i_tau fastest,
//   index(i_S, i_n, i_tau) = (i_S * (n_max + 1) + i_n) * (n_max + 1) + i_tau.

#include "qfb/mps_core.hpp"

#include <Eigen/Sparse>

#include <cmath>
#include <numbers>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>

namespace qfb {

using SparseMatrix = Eigen::SparseMatrix<cplx>;

inline double wrap_phase(double phi) {
  const double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(phi, two_pi);
  if (w < 0.0) w += two_pi;
  if (w >= two_pi) w = 0.0;
  return w;
}

struct PhysicalParams {
  double gamma = 1.0;        // decay constant; population decays as exp(-2 gamma t)
  double tau = 0.0;          // mirror round-trip delay
  double phi = 0.0;          // feedback phase in [0, 2 pi)
  double pulse_area = 0.0;
  double pulse_width = 1.0;  // nu, Gaussian 1/e half-width of the field envelope
  bool feedback_enabled = true;

  void validate() const {
    if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
    if (!(tau >= 0.0)) throw std::invalid_argument("tau must be non-negative");
    if (!(pulse_width > 0.0)) throw std::invalid_argument("pulse_width must be positive");
    if (!(phi >= 0.0 && phi < 2.0 * std::numbers::pi)) throw std::invalid_argument("phi must be stored in [0, 2 pi)");
  }
};

struct NumericalParams {
  double dt = 0.004;
  int bin_photon_cutoff = 2;
  std::optional<double> t_start;  // default: -max(tau, 5 nu), or 0 with start_excited
  std::optional<double> t_end;    // default: 10 / gamma
  int expansion_order = 2;
  TruncationPolicy truncation{};
  /// Test hook: start with the emitter excited instead of driving it.
  bool start_excited = false;
};

/// Delay in steps, round(tau / dt).
inline int delay_steps(const PhysicalParams& phys, double dt) {
  return static_cast<int>(std::lround(phys.tau / dt));
}

inline void validate(const PhysicalParams& phys, const NumericalParams& num) {
  phys.validate();
  num.truncation.validate();
  if (!(num.dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (num.expansion_order != 1 && num.expansion_order != 2)
    throw std::invalid_argument("expansion_order must be 1 or 2");
  if (num.bin_photon_cutoff < 1) throw std::invalid_argument("bin_photon_cutoff must be >= 1");
  if (num.expansion_order == 2 && num.bin_photon_cutoff < 2)
    throw std::invalid_argument("bin_photon_cutoff must be >= 2 for the second-order expansion");
  constexpr double slack = 1.0 + 1e-9;
  if (phys.pulse_area != 0.0 && num.dt > slack * phys.pulse_width / 20.0)
    throw std::invalid_argument("dt must resolve the pulse: dt <= pulse_width / 20");
  if (num.dt > slack * 0.01 / phys.gamma) throw std::invalid_argument("dt must resolve the decay: dt <= 0.01 / gamma");
  if (phys.feedback_enabled && delay_steps(phys, num.dt) < 1)
    throw std::invalid_argument("feedback needs tau >= dt / 2 (at least one delay step)");
}

/// Gaussian drive Omega(t) = (A / 2) exp(-t^2 / nu^2) / (nu sqrt(pi)); its
/// integral is A / 2 so an isolated pulse leaves sin^2(A / 2) excitation.
inline double pulse_envelope(double t, const PhysicalParams& phys) {
  const double nu = phys.pulse_width;
  return 0.5 * phys.pulse_area * std::exp(-(t * t) / (nu * nu)) / (nu * std::sqrt(std::numbers::pi));
}

inline std::size_t basis_index(std::size_t i_s, std::size_t i_n, std::size_t i_tau, std::size_t n_max) {
  const std::size_t d = n_max + 1;
  return (i_s * d + i_n) * d + i_tau;
}

inline std::size_t step_dimension(std::size_t n_max) { return 2 * (n_max + 1) * (n_max + 1); }

/// sigma_x on the emitter, identity on both bins.
inline SparseMatrix build_m_tls(std::size_t n_max) {
  if (n_max < 1) throw std::invalid_argument("build_m_tls: n_max must be >= 1");
  const std::size_t d = n_max + 1;
  const auto dim = static_cast<Eigen::Index>(step_dimension(n_max));
  std::vector<Eigen::Triplet<cplx>> trip;
  for (std::size_t n = 0; n < d; ++n)
    for (std::size_t t = 0; t < d; ++t) {
      const auto g = static_cast<Eigen::Index>(basis_index(0, n, t, n_max));
      const auto e = static_cast<Eigen::Index>(basis_index(1, n, t, n_max));
      trip.emplace_back(e, g, 1.0);
      trip.emplace_back(g, e, 1.0);
    }
  SparseMatrix m(dim, dim);
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

/// Per-channel coupling amplitudes (current bin, delayed bin) for one step.
/// With feedback each channel carries sqrt(gamma dt); without it the single
/// current-bin channel carries sqrt(2 gamma dt). Either way the bare
/// population decays as exp(-2 gamma t).
inline std::pair<double, double> channel_amplitudes(const PhysicalParams& phys, double dt) {
  if (phys.feedback_enabled) {
    const double a = std::sqrt(phys.gamma * dt);
    return {a, a};
  }
  return {std::sqrt(2.0 * phys.gamma * dt), 0.0};
}

/// Anti-Hermitian emitter-waveguide generator. Absorption from the delayed
/// bin carries exp(-i phi); emission into it the conjugate phase.
inline SparseMatrix build_m_fb(const PhysicalParams& phys, double dt, std::size_t n_max) {
  if (!(dt > 0.0)) throw std::invalid_argument("build_m_fb: dt must be positive");
  const std::size_t d = n_max + 1;
  const auto dim = static_cast<Eigen::Index>(step_dimension(n_max));
  const auto [a_now, a_delay] = channel_amplitudes(phys, dt);
  const cplx phase = std::polar(1.0, -phys.phi);
  std::vector<Eigen::Triplet<cplx>> trip;
  for (std::size_t n = 0; n < d; ++n)
    for (std::size_t t = 0; t < d; ++t) {
      const auto ground = static_cast<Eigen::Index>(basis_index(0, n, t, n_max));
      if (n >= 1) {
        // |0, n, t> <-> |1, n-1, t>
        const auto excited = static_cast<Eigen::Index>(basis_index(1, n - 1, t, n_max));
        const double amp = a_now * std::sqrt(static_cast<double>(n));
        trip.emplace_back(excited, ground, amp);
        trip.emplace_back(ground, excited, -amp);
      }
      if (t >= 1 && a_delay != 0.0) {
        const auto excited = static_cast<Eigen::Index>(basis_index(1, n, t - 1, n_max));
        const double amp = a_delay * std::sqrt(static_cast<double>(t));
        trip.emplace_back(excited, ground, amp * phase);
        trip.emplace_back(ground, excited, -amp * std::conj(phase));
      }
    }
  SparseMatrix m(dim, dim);
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

/// U(t) = u0 + Omega(t) u1 + Omega(t)^2 u2, the truncated exponential of
/// -i Omega dt M_TLS + M_fb. Immutable once built.
struct StepOperators {
  SparseMatrix u0;
  SparseMatrix u1;
  SparseMatrix u2;
  std::size_t n_max = 0;
  double dt = 0.0;

  Eigen::Index dim() const { return u0.rows(); }
};

inline StepOperators build_step_operators(const PhysicalParams& phys, const NumericalParams& num) {
  const auto n_max = static_cast<std::size_t>(num.bin_photon_cutoff);
  const SparseMatrix m = build_m_fb(phys, num.dt, n_max);
  const SparseMatrix t = cplx(0.0, -num.dt) * build_m_tls(n_max);
  SparseMatrix id(m.rows(), m.cols());
  id.setIdentity();

  const SparseMatrix m2 = m * m;
  StepOperators ops;
  ops.n_max = n_max;
  ops.dt = num.dt;
  const SparseMatrix tm_mt = SparseMatrix(t * m) + SparseMatrix(m * t);
  if (num.expansion_order == 1) {
    ops.u0 = id + m + 0.5 * m2;
    ops.u1 = t + 0.5 * tm_mt;
  } else {
    const SparseMatrix m3 = m2 * m;
    const SparseMatrix m4 = m3 * m;
    ops.u0 = id + m + 0.5 * m2 + (1.0 / 6.0) * m3 + (1.0 / 24.0) * m4;
    const SparseMatrix third = SparseMatrix(t * m2) + SparseMatrix(m * t * m) + SparseMatrix(m2 * t);
    ops.u1 = t + 0.5 * tm_mt + (1.0 / 6.0) * third;
  }
  ops.u2 = 0.5 * SparseMatrix(t * t);
  ops.u0.prune(cplx(0.0, 0.0));
  ops.u1.prune(cplx(0.0, 0.0));
  ops.u2.prune(cplx(0.0, 0.0));
  return ops;
}

/// Dense gate for the step evaluated at time t (the envelope is sampled once).
inline Matrix assemble_u(const StepOperators& ops, double t, const PhysicalParams& phys) {
  const double omega = pulse_envelope(t, phys);
  Matrix u = Matrix(ops.u0);
  if (omega != 0.0) u += omega * Matrix(ops.u1) + (omega * omega) * Matrix(ops.u2);
  return u;
}

/// Coordinate-list dump: one "row col re im" line per stored entry.
inline void write_coo(std::ostream& os, const SparseMatrix& m) {
  const auto old_precision = os.precision(17);
  for (Eigen::Index k = 0; k < m.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(m, k); it; ++it)
      os << it.row() << ' ' << it.col() << ' ' << it.value().real() << ' ' << it.value().imag() << '\n';
  os.precision(old_precision);
}

inline void write_step_operators(std::ostream& os, const StepOperators& ops) {
  os << "# basis |i_S, i_n, i_tau>, i_S slowest; n_max = " << ops.n_max << ", dim = " << ops.dim() << '\n';
  os << "# u0\n";
  write_coo(os, ops.u0);
  os << "# u1\n";
  write_coo(os, ops.u1);
  os << "# u2\n";
  write_coo(os, ops.u2);
}

}  // namespace qfb
