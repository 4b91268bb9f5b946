#pragma once
// Time-bin matrix product state: chain storage, canonical form, truncated
// SVD splits, adjacent swaps, gate application and expectation values.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>

#include <lapacke.h>
#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace qfb {

using cplx = std::complex<double>;
using Matrix = Eigen::MatrixXcd;

/// Raised when an operation is called on a state that is not in the gauge
/// the operation requires (e.g. a swap away from the orthogonality center).
class PreconditionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct TruncationPolicy {
  /// Singular values below threshold * (largest singular value) are dropped.
  double singular_value_threshold = 1e-7;
  std::size_t max_bond_dimension = 64;
  bool accumulate_discarded_weight = true;

  void validate() const {
    if (!(singular_value_threshold >= 0.0 && singular_value_threshold < 1.0))
      throw std::invalid_argument("singular_value_threshold must lie in [0, 1)");
    if (max_bond_dimension < 1)
      throw std::invalid_argument("max_bond_dimension must be >= 1");
  }

  static TruncationPolicy exact() {
    return {0.0, std::numeric_limits<std::size_t>::max(), true};
  }
};

/// Label carried by the emitter site; bins carry their time-step index.
inline constexpr int kSystemLabel = std::numeric_limits<int>::min();

/// One site of the chain. slices[s] is the (left x right) matrix for
/// physical index s.
struct SiteTensor {
  std::vector<Matrix> slices;
  int label = 0;

  std::size_t phys_dim() const { return slices.size(); }
  std::size_t left_dim() const { return slices.empty() ? 0 : static_cast<std::size_t>(slices[0].rows()); }
  std::size_t right_dim() const { return slices.empty() ? 0 : static_cast<std::size_t>(slices[0].cols()); }
  bool is_system() const { return label == kSystemLabel; }

  static SiteTensor basis_state(std::size_t dim, std::size_t level, int label) {
    SiteTensor t;
    t.label = label;
    t.slices.assign(dim, Matrix::Zero(1, 1));
    t.slices[level](0, 0) = 1.0;
    return t;
  }
};

struct TimeBinState {
  std::vector<SiteTensor> chain;
  std::size_t system_position = 0;
  std::size_t orthogonality_center = 0;
  double cumulative_discarded_weight = 0.0;
  double global_norm = 1.0;

  std::size_t size() const { return chain.size(); }

  std::size_t bond_dimension(std::size_t left_site) const { return chain.at(left_site).right_dim(); }

  std::size_t max_bond_dimension() const {
    std::size_t m = 1;
    for (const auto& s : chain) m = std::max(m, s.right_dim());
    return m;
  }

  std::optional<std::size_t> position_of(int label) const {
    for (std::size_t i = 0; i < chain.size(); ++i)
      if (chain[i].label == label) return i;
    return std::nullopt;
  }
};

namespace detail {

struct SvdSplit {
  Matrix u;
  Eigen::VectorXd s;
  Matrix vh;
  double discarded = 0.0;
};

// Full thin SVD m = u diag(s) vh via LAPACK's divide and conquer driver,
// falling back to one-sided Jacobi if it does not converge.
inline void thin_svd(const Matrix& m, Matrix& u, Eigen::VectorXd& s, Matrix& vh) {
  const Eigen::Index rows = m.rows(), cols = m.cols(), k = std::min(rows, cols);
  Matrix a = m;
  u.resize(rows, k);
  s.resize(k);
  vh.resize(k, cols);
  auto lc = [](cplx* p) { return reinterpret_cast<lapack_complex_double*>(p); };
  const lapack_int info =
      LAPACKE_zgesdd(LAPACK_COL_MAJOR, 'S', static_cast<lapack_int>(rows), static_cast<lapack_int>(cols), lc(a.data()),
                     static_cast<lapack_int>(rows), s.data(), lc(u.data()), static_cast<lapack_int>(rows), lc(vh.data()),
                     static_cast<lapack_int>(k));
  if (info == 0) return;
  if (info < 0) throw std::runtime_error("thin_svd: invalid argument " + std::to_string(-info) + " to zgesdd");
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  u = svd.matrixU();
  s = svd.singularValues();
  vh = svd.matrixV().adjoint();
}

inline SvdSplit truncated_svd(const Matrix& m, const TruncationPolicy& policy) {
  Matrix u, vh;
  Eigen::VectorXd s;
  thin_svd(m, u, s, vh);
  const Eigen::Index n = s.size();
  const double cut = n > 0 ? policy.singular_value_threshold * s(0) : 0.0;
  const auto max_keep = static_cast<Eigen::Index>(
      std::min<std::size_t>(policy.max_bond_dimension, static_cast<std::size_t>(std::numeric_limits<Eigen::Index>::max())));
  Eigen::Index keep = 0;
  while (keep < n && keep < max_keep && s(keep) > cut && s(keep) > 0.0) ++keep;
  keep = std::max<Eigen::Index>(keep, 1);
  SvdSplit out;
  out.discarded = n > keep ? s.tail(n - keep).squaredNorm() : 0.0;
  out.u = u.leftCols(keep);
  out.s = s.head(keep);
  out.vh = vh.topRows(keep);
  return out;
}

inline double center_norm(const SiteTensor& t) {
  double acc = 0.0;
  for (const auto& m : t.slices) acc += m.squaredNorm();
  return std::sqrt(acc);
}

inline void record_discarded(TimeBinState& state, double w, const TruncationPolicy& policy) {
  if (policy.accumulate_discarded_weight) state.cumulative_discarded_weight += w;
}

inline void refresh_norm(TimeBinState& state) {
  state.global_norm = center_norm(state.chain[state.orthogonality_center]);
}

// Move the center one site to the right with a thin QR (no truncation).
inline void shift_center_right(TimeBinState& state) {
  const std::size_t i = state.orthogonality_center;
  auto& a = state.chain[i].slices;
  auto& b = state.chain[i + 1].slices;
  const Eigen::Index l = a[0].rows(), r = a[0].cols();
  const auto d = static_cast<Eigen::Index>(a.size());
  Matrix stacked(d * l, r);
  for (Eigen::Index s = 0; s < d; ++s) stacked.middleRows(s * l, l) = a[s];
  Eigen::HouseholderQR<Matrix> qr(stacked);
  const Eigen::Index k = std::min(d * l, r);
  Matrix q = qr.householderQ() * Matrix::Identity(d * l, k);
  Matrix rr = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  for (Eigen::Index s = 0; s < d; ++s) a[s] = q.middleRows(s * l, l);
  for (auto& m : b) m = rr * m;
  state.orthogonality_center = i + 1;
}

inline void shift_center_left(TimeBinState& state) {
  const std::size_t i = state.orthogonality_center;
  auto& a = state.chain[i].slices;
  auto& b = state.chain[i - 1].slices;
  const Eigen::Index l = a[0].rows(), r = a[0].cols();
  const auto d = static_cast<Eigen::Index>(a.size());
  Matrix wide(l, d * r);
  for (Eigen::Index s = 0; s < d; ++s) wide.middleCols(s * r, r) = a[s];
  Matrix tall = wide.adjoint();
  Eigen::HouseholderQR<Matrix> qr(tall);
  const Eigen::Index k = std::min(d * r, l);
  Matrix q = qr.householderQ() * Matrix::Identity(d * r, k);
  Matrix rr = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  Matrix rdag = rr.adjoint();  // l x k
  for (Eigen::Index s = 0; s < d; ++s) a[s] = q.middleRows(s * r, r).adjoint();
  for (auto& m : b) m = m * rdag;
  state.orthogonality_center = i - 1;
}

// Product of the slices of `count` adjacent sites; composite physical index
// with the first site slowest.
inline std::vector<Matrix> merge_sites(const TimeBinState& state, std::size_t first, std::size_t count) {
  std::vector<Matrix> theta = state.chain[first].slices;
  for (std::size_t i = 1; i < count; ++i) {
    const auto& next = state.chain[first + i].slices;
    std::vector<Matrix> out;
    out.reserve(theta.size() * next.size());
    for (const auto& t : theta)
      for (const auto& n : next) out.push_back(t * n);
    theta = std::move(out);
  }
  return theta;
}

// Split a composite block back onto sites [first, first + dims.size()) by
// right-to-left SVDs. The center ends on `first`.
inline double split_block(TimeBinState& state, std::size_t first, const std::vector<std::size_t>& dims,
                          std::vector<Matrix> theta, const TruncationPolicy& policy) {
  double discarded = 0.0;
  for (std::size_t site = dims.size() - 1; site >= 1; --site) {
    const auto d_last = static_cast<Eigen::Index>(dims[site]);
    const auto rest = static_cast<Eigen::Index>(theta.size()) / d_last;
    const Eigen::Index l = theta[0].rows(), r = theta[0].cols();
    Matrix mat(rest * l, d_last * r);
    for (Eigen::Index a = 0; a < rest; ++a)
      for (Eigen::Index b = 0; b < d_last; ++b) mat.block(a * l, b * r, l, r) = theta[a * d_last + b];
    auto svd = truncated_svd(mat, policy);
    discarded += svd.discarded;
    auto& target = state.chain[first + site].slices;
    target.resize(static_cast<std::size_t>(d_last));
    for (Eigen::Index b = 0; b < d_last; ++b) target[b] = svd.vh.middleCols(b * r, r);
    Matrix us = svd.u * svd.s.asDiagonal();
    std::vector<Matrix> next(static_cast<std::size_t>(rest));
    for (Eigen::Index a = 0; a < rest; ++a) next[a] = us.middleRows(a * l, l);
    theta = std::move(next);
  }
  state.chain[first].slices = std::move(theta);
  state.orthogonality_center = first;
  return discarded;
}

}  // namespace detail

/// Vacuum product state: `num_history_bins` delay-line bins, the emitter in
/// its ground level, then `num_future_bins` bins. Bin labels run from
/// -num_history_bins to num_future_bins - 1; the center sits on the emitter.
inline TimeBinState init_vacuum(int num_history_bins, int num_future_bins, int bin_dim) {
  if (num_history_bins < 1 || num_future_bins < 1 || bin_dim < 1)
    throw std::invalid_argument("init_vacuum: all dimensions must be positive");
  TimeBinState st;
  st.chain.reserve(static_cast<std::size_t>(num_history_bins + num_future_bins + 1));
  for (int j = -num_history_bins; j < 0; ++j)
    st.chain.push_back(SiteTensor::basis_state(static_cast<std::size_t>(bin_dim), 0, j));
  st.system_position = st.chain.size();
  st.chain.push_back(SiteTensor::basis_state(2, 0, kSystemLabel));
  for (int j = 0; j < num_future_bins; ++j)
    st.chain.push_back(SiteTensor::basis_state(static_cast<std::size_t>(bin_dim), 0, j));
  st.orthogonality_center = st.system_position;
  return st;
}

inline void move_center(TimeBinState& state, std::size_t target) {
  if (target >= state.size()) throw std::invalid_argument("move_center: target outside chain");
  while (state.orthogonality_center < target) detail::shift_center_right(state);
  while (state.orthogonality_center > target) detail::shift_center_left(state);
  detail::refresh_norm(state);
}

/// Exchange the physical content of sites left_site and left_site + 1. The
/// center must be on one of the two and ends on the other, so a bin can be
/// carried along the chain by repeated swaps. Returns the discarded weight.
inline double swap_adjacent(TimeBinState& state, std::size_t left_site, const TruncationPolicy& policy) {
  if (left_site + 1 >= state.size()) throw std::invalid_argument("swap_adjacent: pair outside chain");
  const std::size_t c = state.orthogonality_center;
  if (c != left_site && c != left_site + 1)
    throw PreconditionError("swap_adjacent: orthogonality center must be on the swapped pair");

  const auto& a = state.chain[left_site].slices;
  const auto& b = state.chain[left_site + 1].slices;
  const auto da = static_cast<Eigen::Index>(a.size());
  const auto db = static_cast<Eigen::Index>(b.size());
  const Eigen::Index l = a[0].rows(), r = b[0].cols();
  // rows: (new left physical = old right index, left bond); cols: (old left index, right bond)
  Matrix mat(db * l, da * r);
  for (Eigen::Index sa = 0; sa < da; ++sa)
    for (Eigen::Index sb = 0; sb < db; ++sb) mat.block(sb * l, sa * r, l, r) = a[sa] * b[sb];

  auto svd = detail::truncated_svd(mat, policy);
  const bool center_goes_right = (c == left_site);
  Matrix left_factor = svd.u;
  Matrix right_factor = svd.vh;
  if (center_goes_right)
    right_factor = svd.s.asDiagonal() * svd.vh;
  else
    left_factor = svd.u * svd.s.asDiagonal();

  SiteTensor new_left, new_right;
  new_left.label = state.chain[left_site + 1].label;
  new_right.label = state.chain[left_site].label;
  new_left.slices.resize(static_cast<std::size_t>(db));
  new_right.slices.resize(static_cast<std::size_t>(da));
  for (Eigen::Index sb = 0; sb < db; ++sb) new_left.slices[sb] = left_factor.middleRows(sb * l, l);
  for (Eigen::Index sa = 0; sa < da; ++sa) new_right.slices[sa] = right_factor.middleCols(sa * r, r);

  state.chain[left_site] = std::move(new_left);
  state.chain[left_site + 1] = std::move(new_right);
  if (state.system_position == left_site)
    state.system_position = left_site + 1;
  else if (state.system_position == left_site + 1)
    state.system_position = left_site;
  state.orthogonality_center = center_goes_right ? left_site + 1 : left_site;
  detail::record_discarded(state, svd.discarded, policy);
  detail::refresh_norm(state);
  return svd.discarded;
}

/// Multiply the state by `gate` acting on the adjacent sites starting at
/// first_site. The gate's composite index runs over the targeted physical
/// indices with the first site slowest. Returns the discarded weight.
inline double apply_gate(TimeBinState& state, const Matrix& gate, std::size_t first_site, const TruncationPolicy& policy,
                         std::optional<std::size_t> center_after = std::nullopt) {
  std::size_t span = 0;
  std::size_t total = 1;
  std::vector<std::size_t> dims;
  while (total < static_cast<std::size_t>(gate.rows()) && first_site + span < state.size()) {
    dims.push_back(state.chain[first_site + span].phys_dim());
    total *= dims.back();
    ++span;
  }
  if (gate.rows() != gate.cols() || total != static_cast<std::size_t>(gate.rows()) || span < 1)
    throw std::invalid_argument("apply_gate: gate dimension does not match the targeted sites");
  const std::size_t c = state.orthogonality_center;
  if (c < first_site || c >= first_site + span)
    throw PreconditionError("apply_gate: orthogonality center must lie inside the gate block");

  auto theta = detail::merge_sites(state, first_site, span);
  const Eigen::Index l = theta[0].rows(), r = theta[0].cols();
  std::vector<Matrix> out(theta.size(), Matrix::Zero(l, r));
  for (Eigen::Index t = 0; t < gate.rows(); ++t)
    for (Eigen::Index s = 0; s < gate.cols(); ++s) {
      const cplx g = gate(t, s);
      if (g != cplx(0.0, 0.0)) out[t] += g * theta[s];
    }

  double discarded = 0.0;
  if (span == 1) {
    state.chain[first_site].slices = std::move(out);
  } else {
    discarded = detail::split_block(state, first_site, dims, std::move(out), policy);
  }
  state.orthogonality_center = first_site;
  detail::record_discarded(state, discarded, policy);
  const std::size_t target = center_after.value_or(first_site);
  if (target < first_site || target >= first_site + span)
    throw std::invalid_argument("apply_gate: center_after outside the gate block");
  move_center(state, target);
  return discarded;
}

namespace detail {

inline Matrix transfer_left(const Matrix& env, const SiteTensor& site, const Matrix* op) {
  const auto& a = site.slices;
  const Eigen::Index r = a[0].cols();
  Matrix out = Matrix::Zero(r, r);
  const auto d = static_cast<Eigen::Index>(a.size());
  if (op == nullptr) {
    for (Eigen::Index s = 0; s < d; ++s) out.noalias() += a[s].adjoint() * env * a[s];
    return out;
  }
  for (Eigen::Index s = 0; s < d; ++s) {
    Matrix ea = env * a[s];
    for (Eigen::Index sp = 0; sp < d; ++sp) {
      const cplx o = (*op)(sp, s);
      if (o != cplx(0.0, 0.0)) out.noalias() += o * (a[sp].adjoint() * ea);
    }
  }
  return out;
}

inline Matrix transfer_right(const Matrix& env, const SiteTensor& site, const Matrix* op) {
  const auto& a = site.slices;
  const Eigen::Index l = a[0].rows();
  Matrix out = Matrix::Zero(l, l);
  const auto d = static_cast<Eigen::Index>(a.size());
  if (op == nullptr) {
    for (Eigen::Index s = 0; s < d; ++s) out.noalias() += a[s].conjugate() * env * a[s].transpose();
    return out;
  }
  for (Eigen::Index s = 0; s < d; ++s) {
    Matrix ea = env * a[s].transpose();
    for (Eigen::Index sp = 0; sp < d; ++sp) {
      const cplx o = (*op)(sp, s);
      if (o != cplx(0.0, 0.0)) out.noalias() += o * (a[sp].conjugate() * ea);
    }
  }
  return out;
}

}  // namespace detail

/// <psi|op_site|psi> / <psi|psi>, contracted outward from the center so the
/// cost is linear in the distance between `site` and the center.
inline cplx expectation_local(const TimeBinState& state, const Matrix& op, std::size_t site) {
  if (site >= state.size()) throw std::invalid_argument("expectation_local: site outside chain");
  const auto d = static_cast<Eigen::Index>(state.chain[site].phys_dim());
  if (op.rows() != d || op.cols() != d)
    throw std::invalid_argument("expectation_local: operator does not match the physical dimension");
  const std::size_t c = state.orthogonality_center;
  const double norm_sq = std::pow(detail::center_norm(state.chain[c]), 2);
  if (norm_sq == 0.0) throw std::domain_error("expectation_local: state has zero norm");
  if (site >= c) {
    const auto l = static_cast<Eigen::Index>(state.chain[c].left_dim());
    Matrix env = Matrix::Identity(l, l);
    for (std::size_t i = c; i < site; ++i) env = detail::transfer_left(env, state.chain[i], nullptr);
    env = detail::transfer_left(env, state.chain[site], &op);
    return env.trace() / norm_sq;
  }
  const auto r = static_cast<Eigen::Index>(state.chain[c].right_dim());
  Matrix env = Matrix::Identity(r, r);
  for (std::size_t i = c; i > site; --i) env = detail::transfer_right(env, state.chain[i], nullptr);
  env = detail::transfer_right(env, state.chain[site], &op);
  return env.trace() / norm_sq;
}

/// One MPO site: ops[a * right + b] is the (phys x phys) operator between
/// MPO bonds a and b.
struct MpoSite {
  std::size_t left = 1;
  std::size_t right = 1;
  std::size_t phys = 1;
  std::vector<Matrix> ops;

  const Matrix& at(std::size_t a, std::size_t b) const { return ops[a * right + b]; }
  Matrix& at(std::size_t a, std::size_t b) { return ops[a * right + b]; }

  static MpoSite zeros(std::size_t left, std::size_t right, std::size_t phys) {
    MpoSite w;
    w.left = left;
    w.right = right;
    w.phys = phys;
    const auto p = static_cast<Eigen::Index>(phys);
    w.ops.assign(left * right, Matrix::Zero(p, p));
    return w;
  }
  static MpoSite identity(std::size_t bond, std::size_t phys) {
    auto w = zeros(bond, bond, phys);
    const auto p = static_cast<Eigen::Index>(phys);
    for (std::size_t a = 0; a < bond; ++a) w.at(a, a) = Matrix::Identity(p, p);
    return w;
  }
};

using Mpo = std::vector<MpoSite>;

/// <psi|MPO|psi> without normalization, swept left to right. The first MPO
/// site must have left bond 1 and the last right bond 1.
inline cplx expectation_mpo(const TimeBinState& state, const Mpo& mpo) {
  if (mpo.size() != state.size()) throw std::invalid_argument("expectation_mpo: MPO length differs from chain length");
  if (mpo.front().left != 1 || mpo.back().right != 1)
    throw std::invalid_argument("expectation_mpo: MPO boundary bonds must be 1");
  for (std::size_t i = 0; i < mpo.size(); ++i) {
    if (mpo[i].phys != state.chain[i].phys_dim())
      throw std::invalid_argument("expectation_mpo: physical dimension mismatch at site " + std::to_string(i));
    if (i + 1 < mpo.size() && mpo[i].right != mpo[i + 1].left)
      throw std::invalid_argument("expectation_mpo: MPO bond mismatch at site " + std::to_string(i));
  }
  const auto l0 = static_cast<Eigen::Index>(state.chain.front().left_dim());
  std::vector<Matrix> env(1, Matrix::Identity(l0, l0));
  for (std::size_t i = 0; i < mpo.size(); ++i) {
    const auto& w = mpo[i];
    const auto& a = state.chain[i].slices;
    const Eigen::Index r = a[0].cols();
    const auto d = static_cast<Eigen::Index>(a.size());
    std::vector<Matrix> next(w.right, Matrix::Zero(r, r));
    for (std::size_t ia = 0; ia < w.left; ++ia) {
      if (env[ia].isZero(0.0)) continue;
      std::vector<Matrix> ea(static_cast<std::size_t>(d));
      for (Eigen::Index s = 0; s < d; ++s) ea[s] = env[ia] * a[s];
      for (std::size_t ib = 0; ib < w.right; ++ib) {
        const Matrix& op = w.at(ia, ib);
        for (Eigen::Index s = 0; s < d; ++s)
          for (Eigen::Index sp = 0; sp < d; ++sp) {
            const cplx o = op(sp, s);
            if (o != cplx(0.0, 0.0)) next[ib].noalias() += o * (a[sp].adjoint() * ea[s]);
          }
      }
    }
    env = std::move(next);
  }
  return env[0].trace();
}

/// <psi|psi> by full contraction; does not rely on the canonical form.
inline double norm_squared(const TimeBinState& state) {
  const auto l0 = static_cast<Eigen::Index>(state.chain.front().left_dim());
  Matrix env = Matrix::Identity(l0, l0);
  for (const auto& site : state.chain) env = detail::transfer_left(env, site, nullptr);
  return env.trace().real();
}

/// Largest deviation from isometry of site i: left-orthonormality
/// (sum_s A^dag A = 1) when `left` is set, right-orthonormality otherwise.
inline double isometry_defect(const SiteTensor& site, bool left) {
  const auto& a = site.slices;
  if (left) {
    Matrix acc = Matrix::Zero(a[0].cols(), a[0].cols());
    for (const auto& m : a) acc += m.adjoint() * m;
    return (acc - Matrix::Identity(acc.rows(), acc.cols())).cwiseAbs().maxCoeff();
  }
  Matrix acc = Matrix::Zero(a[0].rows(), a[0].rows());
  for (const auto& m : a) acc += m * m.adjoint();
  return (acc - Matrix::Identity(acc.rows(), acc.cols())).cwiseAbs().maxCoeff();
}

}  // namespace qfb
