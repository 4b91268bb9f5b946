#include "qfb/mps_core.hpp"
#include "support/dense_oracle.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace qfb;
using namespace qfb::testing;

namespace {

Matrix number_op(std::size_t d) {
  Matrix n = Matrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < d; ++i) n(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = double(i);
  return n;
}

Matrix excited_projector() {
  Matrix p = Matrix::Zero(2, 2);
  p(1, 1) = 1.0;
  return p;
}

Matrix random_hermitian(Eigen::Index d, std::mt19937& rng) {
  Matrix a = random_matrix(d, d, rng);
  return a + a.adjoint();
}

void expect_canonical(const TimeBinState& s, double tol = 1e-10) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i < s.orthogonality_center) EXPECT_LT(isometry_defect(s.chain[i], true), tol) << "site " << i;
    if (i > s.orthogonality_center) EXPECT_LT(isometry_defect(s.chain[i], false), tol) << "site " << i;
  }
}

double dense_distance(const Vector& a, const Vector& b) { return (a - b).cwiseAbs().maxCoeff(); }

// Randomized chain shapes: up to 6 sites, d in {2, 3}.
std::vector<std::size_t> random_dims(std::mt19937& rng, std::size_t min_sites = 2) {
  std::uniform_int_distribution<std::size_t> len(min_sites, 6), dim(2, 3);
  std::vector<std::size_t> d(len(rng));
  for (auto& x : d) x = dim(rng);
  return d;
}

}  // namespace

TEST(TruncationPolicy, ValidatesRanges) {
  EXPECT_NO_THROW(TruncationPolicy{}.validate());
  EXPECT_THROW((TruncationPolicy{1.0, 4, true}.validate()), std::invalid_argument);
  EXPECT_THROW((TruncationPolicy{-0.1, 4, true}.validate()), std::invalid_argument);
  EXPECT_THROW((TruncationPolicy{1e-7, 0, true}.validate()), std::invalid_argument);
}

TEST(InitVacuum, ChainLayoutAndBonds) {
  const auto s = init_vacuum(3, 5, 3);
  ASSERT_EQ(s.size(), 9u);
  EXPECT_EQ(s.system_position, 3u);
  EXPECT_EQ(s.orthogonality_center, 3u);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(s.chain[i].right_dim(), 1u);
  EXPECT_NEAR(expectation_local(s, excited_projector(), s.system_position).real(), 0.0, 1e-15);
  EXPECT_EQ(s.chain[0].label, -3);
  EXPECT_EQ(s.chain[4].label, 0);
  EXPECT_TRUE(s.chain[3].is_system());
}

TEST(InitVacuum, NormAndDiscardedWeight) {
  for (int q : {1, 2, 7}) {
    const auto s = init_vacuum(q, 4, 2);
    EXPECT_DOUBLE_EQ(s.global_norm, 1.0);
    EXPECT_DOUBLE_EQ(s.cumulative_discarded_weight, 0.0);
    EXPECT_NEAR(norm_squared(s), 1.0, 1e-15);
  }
}

TEST(InitVacuum, SmallestHilbertSpace) {
  const auto s = init_vacuum(1, 1, 2);
  EXPECT_EQ(total_dim(phys_dims(s)), 8u);
  const Vector v = to_dense(s);
  EXPECT_NEAR(std::abs(v(0)), 1.0, 1e-15);
  EXPECT_NEAR(v.squaredNorm(), 1.0, 1e-15);
}

TEST(InitVacuum, RejectsNonPositiveDimensions) {
  EXPECT_THROW(init_vacuum(0, 3, 2), std::invalid_argument);
  EXPECT_THROW(init_vacuum(2, 0, 2), std::invalid_argument);
  EXPECT_THROW(init_vacuum(2, 3, 0), std::invalid_argument);
}

TEST(MoveCenter, RoundTripKeepsLocalExpectations) {
  std::mt19937 rng(11);
  auto s = random_state({2, 3, 2, 3, 2}, 4, 0, rng);
  const Matrix n3 = number_op(3);
  std::vector<cplx> before;
  for (std::size_t i = 0; i < s.size(); ++i)
    before.push_back(expectation_local(s, s.chain[i].phys_dim() == 3 ? n3 : excited_projector(), i));
  move_center(s, s.size() - 1);
  expect_canonical(s);
  move_center(s, 0);
  expect_canonical(s);
  for (std::size_t i = 0; i < s.size(); ++i)
    EXPECT_LT(std::abs(expectation_local(s, s.chain[i].phys_dim() == 3 ? n3 : excited_projector(), i) - before[i]),
              1e-12);
}

TEST(MoveCenter, ProductStateBondsStayOne) {
  auto s = init_vacuum(2, 4, 3);
  move_center(s, 0);
  move_center(s, s.size() - 1);
  for (const auto& t : s.chain) {
    EXPECT_EQ(t.left_dim(), 1u);
    EXPECT_EQ(t.right_dim(), 1u);
  }
}

TEST(MoveCenter, DenseReconstructionUnchanged) {
  std::mt19937 rng(3);
  auto s = random_state({2, 2, 2}, 2, 1, rng);
  const Vector v0 = to_dense(s);
  for (std::size_t target : {0u, 2u, 1u}) {
    move_center(s, target);
    EXPECT_LT(dense_distance(to_dense(s), v0), 1e-12);
  }
}

TEST(MoveCenter, OutOfRangeTarget) {
  auto s = init_vacuum(1, 2, 2);
  EXPECT_THROW(move_center(s, s.size()), std::invalid_argument);
}

TEST(MoveCenter, GaugeInvarianceUnderRandomSequences) {
  std::mt19937 rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const auto dims = random_dims(rng);
    auto s = random_state(dims, 3, 0, rng);
    const std::size_t site = rng() % dims.size();
    const Matrix op = random_hermitian(static_cast<Eigen::Index>(dims[site]), rng);
    const cplx ref = expectation_local(s, op, site);
    for (int k = 0; k < 6; ++k) {
      move_center(s, rng() % dims.size());
      EXPECT_LT(std::abs(expectation_local(s, op, site) - ref), 1e-10);
    }
  }
}

TEST(SwapAdjacent, InvolutionAtZeroThreshold) {
  std::mt19937 rng(5);
  auto s = random_state({2, 3, 3, 2}, 3, 1, rng);
  const Vector v0 = to_dense(s);
  const auto exact = TruncationPolicy::exact();
  swap_adjacent(s, 1, exact);
  swap_adjacent(s, 1, exact);
  EXPECT_LT(dense_distance(to_dense(s), v0), 1e-12);
  EXPECT_EQ(s.chain[1].label, 1);
  EXPECT_EQ(s.chain[2].label, 2);
}

TEST(SwapAdjacent, ProductStateHasNoDiscardedWeight) {
  auto s = init_vacuum(2, 2, 3);
  move_center(s, 1);
  const double w = swap_adjacent(s, 1, TruncationPolicy{});
  EXPECT_EQ(w, 0.0);
  EXPECT_EQ(s.cumulative_discarded_weight, 0.0);
  EXPECT_EQ(s.system_position, 1u);
  EXPECT_TRUE(s.chain[1].is_system());
  EXPECT_EQ(s.chain[2].label, -1);
  EXPECT_EQ(s.chain[1].right_dim(), 1u);
}

TEST(SwapAdjacent, FourSiteDensePermutation) {
  std::mt19937 rng(17);
  auto s = random_state({2, 2, 2, 2}, 4, 2, rng);
  const Vector v0 = to_dense(s);
  const auto dims = phys_dims(s);
  swap_adjacent(s, 2, TruncationPolicy::exact());
  EXPECT_LT(dense_distance(to_dense(s), swap_dense(v0, dims, 2)), 1e-10);
  EXPECT_EQ(s.orthogonality_center, 3u);
}

TEST(SwapAdjacent, CenterMustBeOnPair) {
  auto s = init_vacuum(2, 3, 2);
  EXPECT_THROW(swap_adjacent(s, 0, TruncationPolicy{}), PreconditionError);
  EXPECT_THROW(swap_adjacent(s, s.size() - 1, TruncationPolicy{}), std::invalid_argument);
}

TEST(SwapAdjacent, RandomizedDenseOracle) {
  std::mt19937 rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    const auto dims = random_dims(rng);
    const std::size_t i = rng() % (dims.size() - 1);
    const std::size_t c = i + (rng() % 2);
    auto s = random_state(dims, 1 + rng() % 5, c, rng);
    const Vector v0 = to_dense(s);
    const std::size_t sys = s.system_position;
    swap_adjacent(s, i, TruncationPolicy::exact());
    EXPECT_LT(dense_distance(to_dense(s), swap_dense(v0, dims, i)), 1e-10);
    EXPECT_EQ(s.orthogonality_center, c == i ? i + 1 : i);
    if (sys == i) EXPECT_EQ(s.system_position, i + 1);
    if (sys == i + 1) EXPECT_EQ(s.system_position, i);
    expect_canonical(s);
  }
}

TEST(ApplyGate, IdentityLeavesStateUnchanged) {
  std::mt19937 rng(8);
  auto s = random_state({3, 2, 3}, 3, 1, rng);
  const Vector v0 = to_dense(s);
  const double w = apply_gate(s, Matrix::Identity(18, 18), 0, TruncationPolicy::exact(), 1);
  EXPECT_EQ(w, 0.0);
  EXPECT_LT(dense_distance(to_dense(s), v0), 1e-12);
}

TEST(ApplyGate, UnitaryPreservesNorm) {
  std::mt19937 rng(21);
  auto s = random_state({3, 2, 3, 2}, 4, 2, rng);
  Matrix h = random_hermitian(18, rng);
  const Matrix u = (cplx(0, 1) * h).exp();
  apply_gate(s, u, 0, TruncationPolicy::exact(), 1);
  EXPECT_NEAR(norm_squared(s), 1.0, 1e-10);
  EXPECT_NEAR(s.global_norm, 1.0, 1e-10);
}

TEST(ApplyGate, ThreeSiteDenseOracle) {
  std::mt19937 rng(31);
  auto s = random_state({3, 2, 3}, 1, 0, rng);
  const Vector v0 = to_dense(s);
  const Matrix u = random_unitary(18, rng);
  apply_gate(s, u, 0, TruncationPolicy::exact());
  EXPECT_LT(dense_distance(to_dense(s), apply_dense(v0, phys_dims(s), u, 0)), 1e-10);
}

TEST(ApplyGate, RandomizedDenseOracle) {
  std::mt19937 rng(77);
  for (int trial = 0; trial < 40; ++trial) {
    const auto dims = random_dims(rng, 3);
    const std::size_t span = 1 + rng() % 3;
    const std::size_t first = rng() % (dims.size() - span + 1);
    const std::size_t center = first + rng() % span;
    const std::size_t after = first + rng() % span;
    auto s = random_state(dims, 1 + rng() % 4, center, rng);
    const Vector v0 = to_dense(s);
    std::size_t block = 1;
    for (std::size_t k = 0; k < span; ++k) block *= dims[first + k];
    // Non-unitary gates are allowed (the stepper's truncated expansion is one).
    const Matrix g = random_matrix(static_cast<Eigen::Index>(block), static_cast<Eigen::Index>(block), rng);
    apply_gate(s, g, first, TruncationPolicy::exact(), after);
    EXPECT_LT(dense_distance(to_dense(s), apply_dense(v0, dims, g, first)), 1e-10 * (1.0 + g.norm()));
    EXPECT_EQ(s.orthogonality_center, after);
    expect_canonical(s);
  }
}

TEST(ApplyGate, DimensionMismatchAndCenterPlacement) {
  auto s = init_vacuum(1, 2, 3);
  EXPECT_THROW(apply_gate(s, Matrix::Identity(5, 5), 1, TruncationPolicy{}), std::invalid_argument);
  EXPECT_THROW(apply_gate(s, Matrix::Identity(9, 9), 2, TruncationPolicy{}), PreconditionError);
  EXPECT_THROW(apply_gate(s, Matrix::Identity(6, 6), 1, TruncationPolicy{}, 3), std::invalid_argument);
}

TEST(Truncation, NormLossBoundedByDiscardedWeight) {
  std::mt19937 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = random_state({3, 3, 3, 3, 3, 3}, 9, 2, rng);
    const TruncationPolicy tight{0.2, 3, true};
    const double before = norm_squared(s);
    swap_adjacent(s, 2, tight);
    apply_gate(s, random_unitary(9, rng), 2, tight);
    const double after = norm_squared(s);
    EXPECT_LE(before - after, s.cumulative_discarded_weight + 1e-9);
    EXPECT_GE(before - after, -1e-9);
    EXPECT_NEAR(s.global_norm * s.global_norm, after, 1e-10);
    EXPECT_LE(s.global_norm, 1.0 + 1e-12);
  }
}

TEST(Truncation, BondCapRespected) {
  std::mt19937 rng(42);
  auto s = random_state({3, 3, 3, 3}, 9, 1, rng);
  swap_adjacent(s, 1, TruncationPolicy{0.0, 2, true});
  EXPECT_LE(s.chain[1].right_dim(), 2u);
  EXPECT_GT(s.cumulative_discarded_weight, 0.0);
}

TEST(ExpectationLocal, Basics) {
  auto s = init_vacuum(2, 3, 3);
  EXPECT_NEAR(expectation_local(s, number_op(3), 0).real(), 0.0, 1e-15);
  s.chain[s.system_position] = SiteTensor::basis_state(2, 1, kSystemLabel);
  EXPECT_NEAR(expectation_local(s, excited_projector(), s.system_position).real(), 1.0, 1e-15);
  EXPECT_THROW(expectation_local(s, number_op(3), s.system_position), std::invalid_argument);
}

TEST(ExpectationLocal, DenseOracleFromEveryCenter) {
  std::mt19937 rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    const auto dims = random_dims(rng);
    auto s = random_state(dims, 1 + rng() % 4, 0, rng);
    const Vector v = to_dense(s);
    for (std::size_t c = 0; c < dims.size(); ++c) {
      move_center(s, c);
      for (std::size_t site = 0; site < dims.size(); ++site) {
        const Matrix op = random_matrix(static_cast<Eigen::Index>(dims[site]), static_cast<Eigen::Index>(dims[site]), rng);
        EXPECT_LT(std::abs(expectation_local(s, op, site) - expectation_dense(v, dims, op, site)), 1e-12);
      }
    }
  }
}

TEST(ExpectationMpo, TotalNumberAndIdentity) {
  auto s = init_vacuum(1, 3, 3);
  Mpo number;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::size_t d = s.chain[i].phys_dim();
    const auto p = static_cast<Eigen::Index>(d);
    auto w = MpoSite::zeros(i == 0 ? 1 : 2, i + 1 == s.size() ? 1 : 2, d);
    const Matrix n = s.chain[i].is_system() ? Matrix::Zero(p, p) : number_op(d);
    if (i == 0) {
      w.at(0, 0) = n;
      w.at(0, 1) = Matrix::Identity(p, p);
    } else if (i + 1 == s.size()) {
      w.at(0, 0) = Matrix::Identity(p, p);
      w.at(1, 0) = n;
    } else {
      w.at(0, 0) = Matrix::Identity(p, p);
      w.at(1, 0) = n;
      w.at(1, 1) = Matrix::Identity(p, p);
    }
    number.push_back(w);
  }
  EXPECT_NEAR(std::abs(expectation_mpo(s, number)), 0.0, 1e-15);

  std::mt19937 rng(6);
  auto r = random_state({2, 3, 3}, 3, 1, rng);
  for (auto& m : r.chain[1].slices) m *= 0.7;
  Mpo id;
  for (const auto& t : r.chain) id.push_back(MpoSite::identity(1, t.phys_dim()));
  EXPECT_NEAR(expectation_mpo(r, id).real(), norm_squared(r), 1e-12);
  EXPECT_NEAR(norm_squared(r), 0.49, 1e-12);
}

TEST(ExpectationMpo, SquaredNumberOnSinglePhoton) {
  // Four bins, one of them holding a photon: <I^2> = 1.
  TimeBinState s = init_vacuum(1, 3, 2);
  s.chain[2] = SiteTensor::basis_state(2, 1, 0);
  // Degree-tracking MPO for I^2 = sum_{kl} n_k n_l: bond (0, 1, 2) counts factors.
  Mpo m;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::size_t d = s.chain[i].phys_dim();
    const auto p = static_cast<Eigen::Index>(d);
    auto w = MpoSite::zeros(3, 3, d);
    const Matrix n = s.chain[i].is_system() ? Matrix::Zero(p, p) : number_op(d);
    for (std::size_t a = 0; a < 3; ++a) w.at(a, a) = Matrix::Identity(p, p);
    w.at(0, 1) = 2.0 * n;
    w.at(1, 2) = n;
    w.at(0, 2) = n * n;
    if (i == 0) {
      auto head = MpoSite::zeros(1, 3, d);
      for (std::size_t b = 0; b < 3; ++b) head.at(0, b) = w.at(0, b);
      w = head;
    } else if (i + 1 == s.size()) {
      auto tail = MpoSite::zeros(3, 1, d);
      for (std::size_t a = 0; a < 3; ++a) tail.at(a, 0) = w.at(a, 2);
      w = tail;
    }
    m.push_back(w);
  }
  EXPECT_NEAR(expectation_mpo(s, m).real(), 1.0, 1e-14);
}

TEST(ExpectationMpo, RandomDenseOracle) {
  std::mt19937 rng(123);
  for (int trial = 0; trial < 15; ++trial) {
    const auto dims = random_dims(rng);
    auto s = random_state(dims, 1 + rng() % 4, rng() % dims.size(), rng);
    const std::size_t b = 1 + rng() % 3;
    Mpo mpo;
    for (std::size_t i = 0; i < dims.size(); ++i) {
      auto w = MpoSite::zeros(i == 0 ? 1 : b, i + 1 == dims.size() ? 1 : b, dims[i]);
      for (auto& op : w.ops) op = random_matrix(static_cast<Eigen::Index>(dims[i]), static_cast<Eigen::Index>(dims[i]), rng);
      mpo.push_back(w);
    }
    const Vector v = to_dense(s);
    const cplx ref = v.dot(mpo_dense(mpo) * v);
    EXPECT_LT(std::abs(expectation_mpo(s, mpo) - ref), 1e-10 * (1.0 + std::abs(ref)));
  }
}

TEST(ExpectationMpo, AlignmentChecked) {
  auto s = init_vacuum(1, 2, 2);
  Mpo short_mpo(2, MpoSite::identity(1, 2));
  EXPECT_THROW(expectation_mpo(s, short_mpo), std::invalid_argument);
  Mpo wrong_phys(s.size(), MpoSite::identity(1, 3));
  EXPECT_THROW(expectation_mpo(s, wrong_phys), std::invalid_argument);
}
