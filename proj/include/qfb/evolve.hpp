#pragma once
// Time stepping of the emitter through the waveguide bins.
//
// Chain layout: [q delay-line bins | emitted bins ... | S | future bins].
// Bins stay in chronological order in storage. At step k the bin emitted q
// steps earlier is carried next to the emitter by q - 1 swaps, the gate acts
// on (delayed, S, current), the emitter is swapped past the current bin and
// the delayed bin is carried back home. Between steps the orthogonality
// center rests on the next delayed bin, so each step costs 2(q - 1) + 1
// swaps and three QR moves.

#include "qfb/mps_core.hpp"
#include "qfb/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace qfb {

/// A numerical guard tripped (e.g. photon-number cutoff overflow).
class NumericalGuardError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SimulationGrid {
  double dt = 0.0;
  double t_start = 0.0;
  double t_end = 0.0;
  int q = 0;  // delay in steps; 0 when feedback is disabled
  int n_steps = 0;

  double bin_time(int k) const { return t_start + k * dt; }
};

inline SimulationGrid make_grid(const PhysicalParams& phys, const NumericalParams& num) {
  validate(phys, num);
  SimulationGrid g;
  g.dt = num.dt;
  g.q = phys.feedback_enabled ? delay_steps(phys, num.dt) : 0;
  const double lead = std::max(phys.feedback_enabled ? phys.tau : 0.0, 5.0 * phys.pulse_width);
  g.t_start = num.t_start.value_or(num.start_excited ? 0.0 : -lead);
  g.t_end = num.t_end.value_or(10.0 / phys.gamma);
  if (!(g.t_end > g.t_start)) throw std::invalid_argument("t_end must exceed t_start");
  if (!num.start_excited && phys.pulse_area != 0.0 && g.t_start > -5.0 * phys.pulse_width * (1.0 - 1e-12))
    throw std::invalid_argument("t_start must precede the pulse by at least 5 pulse widths");
  g.n_steps = static_cast<int>(std::lround((g.t_end - g.t_start) / g.dt));
  if (g.n_steps < 1) throw std::invalid_argument("simulation window shorter than one step");
  return g;
}

struct Trajectory {
  SimulationGrid grid;
  std::vector<double> times;  // t_{k+1}: end of each step
  std::vector<double> population;
  std::vector<double> norm;
  std::vector<double> discarded_weight;
  double max_cutoff_weight = 0.0;  // largest weight seen on the top bin Fock level
  std::size_t max_bond = 1;
  TimeBinState final_state;
};

struct StepReport {
  double population = 0.0;
  double cutoff_weight = 0.0;
};

namespace detail {

// Reorder a three-body operator from model order (S, n, tau) to chain order
// (tau, S, n).
inline SparseMatrix to_chain_order(const SparseMatrix& m, std::size_t n_max) {
  const std::size_t d = n_max + 1;
  auto chain_index = [d](std::size_t i) {
    const std::size_t t = i % d, n = (i / d) % d, s = i / (d * d);
    return static_cast<Eigen::Index>((t * 2 + s) * d + n);
  };
  std::vector<Eigen::Triplet<cplx>> trip;
  for (Eigen::Index k = 0; k < m.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(m, k); it; ++it)
      trip.emplace_back(chain_index(static_cast<std::size_t>(it.row())), chain_index(static_cast<std::size_t>(it.col())),
                        it.value());
  SparseMatrix out(m.rows(), m.cols());
  out.setFromTriplets(trip.begin(), trip.end());
  return out;
}

// Restrict a three-body operator to the delayed-bin vacuum block; exact when
// the delayed channel is switched off.
inline SparseMatrix drop_delay_leg(const SparseMatrix& m, std::size_t n_max) {
  const std::size_t d = n_max + 1;
  const auto dim = static_cast<Eigen::Index>(2 * d);
  std::vector<Eigen::Triplet<cplx>> trip;
  for (Eigen::Index k = 0; k < m.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(m, k); it; ++it) {
      const auto r = static_cast<std::size_t>(it.row()), c = static_cast<std::size_t>(it.col());
      if (r % d == 0 && c % d == 0)
        trip.emplace_back(static_cast<Eigen::Index>(r / d), static_cast<Eigen::Index>(c / d), it.value());
    }
  SparseMatrix out(dim, dim);
  out.setFromTriplets(trip.begin(), trip.end());
  return out;
}

inline Matrix projector(std::size_t dim, std::size_t level) {
  const auto d = static_cast<Eigen::Index>(dim);
  Matrix p = Matrix::Zero(d, d);
  p(static_cast<Eigen::Index>(level), static_cast<Eigen::Index>(level)) = 1.0;
  return p;
}

}  // namespace detail

/// Step operators rearranged for the chain: (tau, S, n) with feedback,
/// (S, n) without.
inline StepOperators chain_step_operators(const StepOperators& ops, bool feedback_enabled) {
  StepOperators out = ops;
  auto convert = [&](const SparseMatrix& m) {
    return feedback_enabled ? detail::to_chain_order(m, ops.n_max) : detail::drop_delay_leg(m, ops.n_max);
  };
  out.u0 = convert(ops.u0);
  out.u1 = convert(ops.u1);
  out.u2 = convert(ops.u2);
  return out;
}

/// Advance the state by one step. `chain_ops` must come from
/// chain_step_operators. With feedback the center must sit on the delayed
/// bin (position k) on entry and ends on position k + 1; without feedback it
/// rides with the emitter.
inline StepReport step(TimeBinState& state, int k, const StepOperators& chain_ops, const SimulationGrid& grid,
                       const PhysicalParams& phys, const TruncationPolicy& policy) {
  const Matrix gate = assemble_u(chain_ops, grid.bin_time(k) + 0.5 * grid.dt, phys);
  const std::size_t bin_dim = chain_ops.n_max + 1;
  const Matrix top = detail::projector(bin_dim, chain_ops.n_max);
  const Matrix excited = detail::projector(2, 1);
  StepReport report;

  if (grid.q == 0) {
    const std::size_t p = state.system_position;
    if (state.orthogonality_center != p) throw PreconditionError("step: center must sit on the emitter");
    apply_gate(state, gate, p, policy, p);
    swap_adjacent(state, p, policy);
    report.population = expectation_local(state, excited, p + 1).real();
    report.cutoff_weight = expectation_local(state, top, p).real();
    return report;
  }

  const auto q = static_cast<std::size_t>(grid.q);
  const auto home = static_cast<std::size_t>(k);
  const std::size_t p = home + q;
  if (state.system_position != p) throw PreconditionError("step: emitter position inconsistent with step index");
  if (state.orthogonality_center != home) throw PreconditionError("step: center must sit on the delayed bin");

  for (std::size_t i = home; i + 1 < p; ++i) swap_adjacent(state, i, policy);
  apply_gate(state, gate, p - 1, policy, p);
  swap_adjacent(state, p, policy);
  report.population = expectation_local(state, excited, p + 1).real();
  move_center(state, p - 1);
  report.cutoff_weight =
      std::max(expectation_local(state, top, p - 1).real(), expectation_local(state, top, p).real());
  for (std::size_t i = p - 1; i-- > home;) swap_adjacent(state, i, policy);
  move_center(state, home + 1);
  return report;
}

/// Deterministic evolution over the whole grid. Throws NumericalGuardError
/// when more than 1e-4 weight reaches the top Fock level of any bin.
inline Trajectory run_simulation(const PhysicalParams& phys, const NumericalParams& num) {
  Trajectory traj;
  traj.grid = make_grid(phys, num);
  const SimulationGrid& g = traj.grid;
  const StepOperators chain_ops = chain_step_operators(build_step_operators(phys, num), phys.feedback_enabled);
  const int bin_dim = num.bin_photon_cutoff + 1;

  // Without feedback the single history slot is never touched.
  TimeBinState state = init_vacuum(std::max(g.q, 1), g.n_steps, bin_dim);
  if (num.start_excited) state.chain[state.system_position] = SiteTensor::basis_state(2, 1, kSystemLabel);
  if (g.q > 0) move_center(state, 0);

  traj.times.reserve(static_cast<std::size_t>(g.n_steps));
  traj.population.reserve(static_cast<std::size_t>(g.n_steps));
  traj.norm.reserve(static_cast<std::size_t>(g.n_steps));
  traj.discarded_weight.reserve(static_cast<std::size_t>(g.n_steps));
  constexpr double kCutoffGuard = 1e-4;
  for (int k = 0; k < g.n_steps; ++k) {
    const StepReport rep = step(state, k, chain_ops, g, phys, num.truncation);
    traj.times.push_back(g.bin_time(k + 1));
    traj.population.push_back(rep.population);
    traj.norm.push_back(state.global_norm);
    traj.discarded_weight.push_back(state.cumulative_discarded_weight);
    traj.max_cutoff_weight = std::max(traj.max_cutoff_weight, rep.cutoff_weight);
    traj.max_bond = std::max(traj.max_bond, state.max_bond_dimension());
    if (rep.cutoff_weight > kCutoffGuard)
      throw NumericalGuardError("photon-number cutoff overflow: weight " + std::to_string(rep.cutoff_weight) +
                                " on the top Fock level at step " + std::to_string(k) +
                                "; increase bin_photon_cutoff (currently " + std::to_string(num.bin_photon_cutoff) +
                                ")");
  }
  move_center(state, state.system_position);
  traj.final_state = std::move(state);
  return traj;
}

}  // namespace qfb
