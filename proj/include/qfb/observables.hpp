#pragma once
// Photon counting statistics of the emitted field: factorial moments
// C_m = <:I^m:>, the closed p(0..3) system and baseline normalization.

#include "qfb/mps_core.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace qfb {

struct CorrelationSet {
  double c1 = 0.0;
  double c2 = 0.0;
  double c3 = 0.0;
  /// Probability that every bin in range is empty, when evaluated.
  std::optional<double> vacuum_probability;
};

struct PhotonStats {
  std::array<double, 4> p{};  // p(0) .. p(3)
  double ratio_r = std::numeric_limits<double>::quiet_NaN();
  bool ratio_defined = false;
  /// Some p(n) fell below -1e-6.
  bool closure_violation = false;
  /// |p_vac + p(1) + p(2) + p(3) - 1| with p_vac measured directly; NaN if
  /// the vacuum probability was not evaluated.
  double closure_defect = std::numeric_limits<double>::quiet_NaN();
};

struct NormalizedStats {
  std::array<std::optional<double>, 4> pbar{};
  std::optional<double> ratio;  // r / r_nofeedback
};

/// Half-open range of chain positions. Emitter sites inside it are skipped.
struct BinRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  static BinRange whole(const TimeBinState& s) { return {0, s.size()}; }
  std::size_t size() const { return end - begin; }
};

namespace detail {

inline double falling_factorial(double n, int m) {
  double v = 1.0;
  for (int i = 0; i < m; ++i) v *= (n - i);
  return v;
}

inline Matrix diag_op(std::size_t dim, auto&& f) {
  const auto d = static_cast<Eigen::Index>(dim);
  Matrix m = Matrix::Zero(d, d);
  for (Eigen::Index n = 0; n < d; ++n) m(n, n) = f(static_cast<double>(n));
  return m;
}

inline void check_range(const TimeBinState& state, const BinRange& range) {
  if (range.begin > range.end || range.end > state.size())
    throw std::invalid_argument("bin range outside chain");
}

// Upper-triangular polynomial MPO of bond `order + 1`: the bond index counts
// how many powers have been placed so far. weight(n, j) is the factor for
// placing j powers on a bin holding n photons.
inline Mpo degree_tracking_mpo(const TimeBinState& state, int order, const BinRange& range, auto&& weight) {
  const auto bond = static_cast<std::size_t>(order + 1);
  Mpo mpo;
  mpo.reserve(state.size());
  for (std::size_t i = 0; i < state.size(); ++i) {
    const auto& site = state.chain[i];
    const std::size_t d = site.phys_dim();
    MpoSite w = MpoSite::identity(bond, d);
    if (!site.is_system() && i >= range.begin && i < range.end) {
      for (std::size_t a = 0; a < bond; ++a)
        for (std::size_t b = a + 1; b < bond; ++b)
          w.at(a, b) = diag_op(d, [&](double n) { return weight(n, static_cast<int>(b - a)); });
    }
    mpo.push_back(std::move(w));
  }
  // Boundaries: start in degree 0, end in degree `order`.
  auto& first = mpo.front();
  MpoSite head = MpoSite::zeros(1, bond, first.phys);
  for (std::size_t b = 0; b < bond; ++b) head.at(0, b) = first.at(0, b);
  first = std::move(head);
  auto& last = mpo.back();
  MpoSite tail = MpoSite::zeros(last.left, 1, last.phys);
  for (std::size_t a = 0; a < last.left; ++a) tail.at(a, 0) = last.at(a, bond - 1);
  last = std::move(tail);
  return mpo;
}

inline double factorial(int m) {
  double f = 1.0;
  for (int i = 2; i <= m; ++i) f *= i;
  return f;
}

}  // namespace detail

/// MPO of the falling factorial I(I-1)...(I-m+1)/m! of the total photon
/// number I over `range`, built from the product generating function
/// prod_k (1 + x)^{n_k}.
inline Mpo binomial_number_mpo(const TimeBinState& state, int m, const BinRange& range) {
  return detail::degree_tracking_mpo(state, m, range, [](double n, int j) {
    return detail::falling_factorial(n, j) / detail::factorial(j);
  });
}

/// MPO of I^m / m! (multinomial expansion of the power of a sum).
inline Mpo number_power_mpo(const TimeBinState& state, int m, const BinRange& range) {
  return detail::degree_tracking_mpo(state, m, range,
                                     [](double n, int j) { return std::pow(n, j) / detail::factorial(j); });
}

/// Product of vacuum projectors over the bins in `range`.
inline Mpo vacuum_projector_mpo(const TimeBinState& state, const BinRange& range) {
  Mpo mpo;
  for (std::size_t i = 0; i < state.size(); ++i) {
    const auto& site = state.chain[i];
    MpoSite w = MpoSite::identity(1, site.phys_dim());
    if (!site.is_system() && i >= range.begin && i < range.end) {
      w.at(0, 0).setZero();
      w.at(0, 0)(0, 0) = 1.0;
    }
    mpo.push_back(std::move(w));
  }
  return mpo;
}

/// C_1..C_max_order as <I(I-1)...(I-m+1)> via bond <= 4 MPO sweeps.
inline CorrelationSet factorial_moments(const TimeBinState& state, int max_order = 3,
                                        std::optional<BinRange> range = std::nullopt) {
  if (max_order < 1 || max_order > 3) throw std::invalid_argument("factorial_moments: max_order must be 1..3");
  const BinRange r = range.value_or(BinRange::whole(state));
  detail::check_range(state, r);
  CorrelationSet out;
  std::array<double*, 3> slots{&out.c1, &out.c2, &out.c3};
  for (int m = 1; m <= max_order; ++m)
    *slots[m - 1] = detail::factorial(m) * expectation_mpo(state, binomial_number_mpo(state, m, r)).real();
  out.vacuum_probability = expectation_mpo(state, vacuum_projector_mpo(state, r)).real();
  return out;
}

/// Direct time-ordered evaluation of the normal-ordered sums, e.g.
/// C_2 = sum_k sum_l <dB+_k dB+_l dB_l dB_k>. With `use_symmetry` only
/// ordered index tuples are visited and weighted by their multiplicity;
/// otherwise every tuple is contracted individually (small ranges only).
/// The innermost ordered sum is carried by a suffix environment, so the
/// ordered path costs O(N^2) contractions; order 3 still refuses ranges
/// above 400 bins.
inline CorrelationSet nested_sum_correlations(const TimeBinState& state, int max_order = 3,
                                             std::optional<BinRange> range = std::nullopt, bool use_symmetry = true) {
  if (max_order < 1 || max_order > 3) throw std::invalid_argument("nested_sum_correlations: max_order must be 1..3");
  const BinRange rg = range.value_or(BinRange::whole(state));
  detail::check_range(state, rg);
  std::size_t n_bins = 0;
  for (std::size_t i = rg.begin; i < rg.end; ++i) n_bins += state.chain[i].is_system() ? 0 : 1;
  if (max_order == 3 && n_bins > 400)
    throw std::length_error("nested_sum_correlations: " + std::to_string(n_bins) +
                            " bins exceed the order-3 limit of 400; restrict the bin range or use factorial_moments");
  if (!use_symmetry && n_bins > 60)
    throw std::length_error("nested_sum_correlations: unordered evaluation is limited to 60 bins");

  const std::size_t len = state.size();
  const auto& chain = state.chain;
  auto op_n = [&](std::size_t i, int m) {
    return detail::diag_op(chain[i].phys_dim(), [m](double n) { return detail::falling_factorial(n, m); });
  };
  auto is_bin = [&](std::size_t i) { return !chain[i].is_system(); };

  // Right environments R[j] of sites j..len-1 with identity operators.
  std::vector<Matrix> right(len + 1);
  const auto r_last = static_cast<Eigen::Index>(chain.back().right_dim());
  right[len] = Matrix::Identity(r_last, r_last);
  for (std::size_t j = len; j-- > rg.begin;) right[j] = detail::transfer_right(right[j + 1], chain[j], nullptr);
  // Left environment up to rg.begin.
  const auto l0 = static_cast<Eigen::Index>(chain.front().left_dim());
  Matrix left = Matrix::Identity(l0, l0);
  for (std::size_t j = 0; j < rg.begin; ++j) left = detail::transfer_left(left, chain[j], nullptr);

  auto close = [&](const Matrix& env_after, std::size_t site) {
    return (env_after.cwiseProduct(right[site + 1])).sum().real();
  };

  CorrelationSet out;
  if (use_symmetry) {
    // suffix[j]: sum over bins m >= j in range of the right environment with
    // n inserted at m; closes the innermost sum of C3.
    std::vector<Matrix> suffix(len + 1);
    if (max_order == 3) {
      suffix[rg.end] = Matrix::Zero(right[rg.end].rows(), right[rg.end].cols());
      for (std::size_t m = rg.end; m-- > rg.begin;) {
        suffix[m] = detail::transfer_right(suffix[m + 1], chain[m], nullptr);
        if (is_bin(m)) {
          const Matrix n1 = op_n(m, 1);
          suffix[m] += detail::transfer_right(right[m + 1], chain[m], &n1);
        }
      }
    }

    Matrix env = left;
    for (std::size_t k = rg.begin; k < rg.end; ++k) {
      if (!is_bin(k)) {
        env = detail::transfer_left(env, chain[k], nullptr);
        continue;
      }
      const Matrix n1 = op_n(k, 1), n2 = op_n(k, 2), n3 = op_n(k, 3);
      Matrix e1 = detail::transfer_left(env, chain[k], &n1);
      out.c1 += close(e1, k);
      if (max_order >= 2) {
        Matrix e2 = detail::transfer_left(env, chain[k], &n2);
        out.c2 += close(e2, k);
        if (max_order >= 3) out.c3 += close(detail::transfer_left(env, chain[k], &n3), k);
        for (std::size_t l = k + 1; l < rg.end; ++l) {
          if (!is_bin(l)) {
            e1 = detail::transfer_left(e1, chain[l], nullptr);
            if (max_order >= 3) e2 = detail::transfer_left(e2, chain[l], nullptr);
            continue;
          }
          const Matrix m1 = op_n(l, 1);
          const Matrix g = detail::transfer_left(e1, chain[l], &m1);
          out.c2 += 2.0 * close(g, l);
          if (max_order >= 3) {
            const Matrix m2 = op_n(l, 2);
            out.c3 += 3.0 * close(detail::transfer_left(e2, chain[l], &m1), l);
            out.c3 += 3.0 * close(detail::transfer_left(e1, chain[l], &m2), l);
            out.c3 += 6.0 * g.cwiseProduct(suffix[l + 1]).sum().real();
            e2 = detail::transfer_left(e2, chain[l], nullptr);
          }
          e1 = detail::transfer_left(e1, chain[l], nullptr);
        }
      }
      env = detail::transfer_left(env, chain[k], nullptr);
    }
  } else {
    // Every tuple separately; repeated bins get their normal-ordered product.
    std::vector<std::size_t> bins;
    for (std::size_t i = rg.begin; i < rg.end; ++i)
      if (is_bin(i)) bins.push_back(i);
    auto correlator = [&](std::vector<std::size_t> sites) {
      std::vector<int> count(len, 0);
      for (auto s : sites) ++count[s];
      Matrix e = left;
      for (std::size_t j = rg.begin; j < rg.end; ++j) {
        if (count[j] == 0) {
          e = detail::transfer_left(e, chain[j], nullptr);
        } else {
          const Matrix o = op_n(j, count[j]);
          e = detail::transfer_left(e, chain[j], &o);
        }
      }
      return (e.cwiseProduct(right[rg.end])).sum().real();
    };
    for (auto k : bins) {
      out.c1 += correlator({k});
      if (max_order < 2) continue;
      for (auto l : bins) {
        out.c2 += correlator({l, k});
        if (max_order < 3) continue;
        for (auto m : bins) out.c3 += correlator({m, l, k});
      }
    }
  }
  return out;
}

/// Closed system assuming p(4) = 0:
/// p1 = C1 - C2 + C3/2, p2 = (C2 - C3)/2, p3 = C3/6, p0 = 1 - p1 - p2 - p3.
inline PhotonStats photon_probabilities(const CorrelationSet& corr) {
  PhotonStats s;
  s.p[1] = corr.c1 - corr.c2 + 0.5 * corr.c3;
  s.p[2] = 0.5 * (corr.c2 - corr.c3);
  s.p[3] = corr.c3 / 6.0;
  s.p[0] = 1.0 - s.p[1] - s.p[2] - s.p[3];
  for (double v : s.p) s.closure_violation = s.closure_violation || v < -1e-6;
  if (s.p[1] > 1e-9) {
    s.ratio_r = s.p[2] / s.p[1];
    s.ratio_defined = true;
  }
  if (corr.vacuum_probability)
    s.closure_defect = std::abs(*corr.vacuum_probability + s.p[1] + s.p[2] + s.p[3] - 1.0);
  return s;
}

/// pbar(n) = p(n) / p_baseline(n); entries with a vanishing baseline
/// (<= 1e-9) are left empty.
inline NormalizedStats normalize_against_baseline(const PhotonStats& fb, const PhotonStats& base) {
  NormalizedStats out;
  for (std::size_t n = 0; n < 4; ++n)
    if (base.p[n] > 1e-9) out.pbar[n] = fb.p[n] / base.p[n];
  if (fb.ratio_defined && base.ratio_defined && base.ratio_r > 1e-9) out.ratio = fb.ratio_r / base.ratio_r;
  return out;
}

}  // namespace qfb
