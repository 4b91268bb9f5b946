#include "qfb/model.hpp"

#include <gtest/gtest.h>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <numbers>
#include <sstream>

using namespace qfb;

namespace {

constexpr double kPi = std::numbers::pi;

Matrix dense(const SparseMatrix& m) { return Matrix(m); }

double op_norm(const Matrix& m) { return Eigen::JacobiSVD<Matrix>(m).singularValues()(0); }

PhysicalParams feedback_params(double phi = 0.0) {
  PhysicalParams p;
  p.tau = 0.5;
  p.phi = phi;
  return p;
}

NumericalParams numerics(double dt, int order = 2, int cutoff = 2) {
  NumericalParams n;
  n.dt = dt;
  n.expansion_order = order;
  n.bin_photon_cutoff = cutoff;
  return n;
}

}  // namespace

TEST(PhysicalParams, Invariants) {
  PhysicalParams p;
  EXPECT_NO_THROW(p.validate());
  p.gamma = 0.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = {};
  p.tau = -0.1;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = {};
  p.pulse_width = 0.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = {};
  p.phi = 2.0 * kPi;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(PhysicalParams, WrapPhase) {
  EXPECT_NEAR(wrap_phase(-kPi / 4), 7 * kPi / 4, 1e-15);
  EXPECT_NEAR(wrap_phase(2 * kPi), 0.0, 1e-15);
  EXPECT_NEAR(wrap_phase(5 * kPi), kPi, 1e-12);
  EXPECT_LT(wrap_phase(std::nextafter(2 * kPi, 0.0)), 2 * kPi);
}

TEST(NumericalParams, ResolutionAndDelayChecks) {
  PhysicalParams p = feedback_params();
  p.pulse_area = kPi;
  p.pulse_width = 0.1;
  EXPECT_NO_THROW(validate(p, numerics(0.005)));
  EXPECT_THROW(validate(p, numerics(0.006)), std::invalid_argument);  // dt > nu / 20
  p.pulse_width = 1.0;
  EXPECT_THROW(validate(p, numerics(0.02)), std::invalid_argument);  // dt > 0.01 / gamma
  EXPECT_THROW(validate(p, numerics(0.005, 2, 1)), std::invalid_argument);
  EXPECT_NO_THROW(validate(p, numerics(0.005, 1, 1)));
  EXPECT_THROW(validate(p, numerics(0.005, 3)), std::invalid_argument);
  p.tau = 0.002;
  EXPECT_THROW(validate(p, numerics(0.005)), std::invalid_argument);  // q = 0 with feedback on
  p.feedback_enabled = false;
  EXPECT_NO_THROW(validate(p, numerics(0.005)));
}

TEST(NumericalParams, DelayStepsRounding) {
  PhysicalParams p = feedback_params();
  for (double tau : {0.06, 0.05, 0.5, 0.0123, 1.0}) {
    p.tau = tau;
    for (double dt : {0.004, 0.002, 0.001}) {
      const int q = delay_steps(p, dt);
      EXPECT_LE(std::abs(q * dt - tau), dt / 2 + 1e-15);
    }
  }
}

TEST(PulseEnvelope, PeakValue) {
  PhysicalParams p;
  p.pulse_area = kPi;
  p.pulse_width = 1.0;
  EXPECT_NEAR(pulse_envelope(0.0, p), 0.886226925452758, 1e-12);
}

TEST(PulseEnvelope, ZeroArea) {
  PhysicalParams p;
  for (double t : {-1.0, 0.0, 0.3}) EXPECT_EQ(pulse_envelope(t, p), 0.0);
}

TEST(PulseEnvelope, IntegralIsHalfTheArea) {
  PhysicalParams p;
  p.pulse_area = 2 * kPi;
  p.pulse_width = 0.3;
  // Composite Simpson over +-12 nu.
  const int n = 20000;
  const double a = -12 * p.pulse_width, b = 12 * p.pulse_width, h = (b - a) / n;
  double acc = pulse_envelope(a, p) + pulse_envelope(b, p);
  for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * pulse_envelope(a + i * h, p);
  EXPECT_NEAR(2.0 * acc * h / 3.0, p.pulse_area, 1e-8);
}

TEST(BuildMTls, StructureForSmallestCutoff) {
  const Matrix m = dense(build_m_tls(1));
  ASSERT_EQ(m.rows(), 8);
  EXPECT_EQ(build_m_tls(1).nonZeros(), 8);
  EXPECT_EQ(build_m_tls(3).nonZeros(), 2 * 16);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t t = 0; t < 2; ++t) {
      const auto g = static_cast<Eigen::Index>(basis_index(0, n, t, 1));
      const auto e = static_cast<Eigen::Index>(basis_index(1, n, t, 1));
      EXPECT_EQ(m(e, g), cplx(1.0));
      EXPECT_EQ(m(g, e), cplx(1.0));
    }
  EXPECT_LT((m - m.adjoint()).norm(), 1e-15);
  EXPECT_LT((m * m - Matrix::Identity(8, 8)).norm(), 1e-15);
  EXPECT_EQ(m.trace(), cplx(0.0));
  EXPECT_THROW(build_m_tls(0), std::invalid_argument);
}

TEST(BuildMFb, AntiHermitianForAllParameters) {
  for (double phi : {0.0, 0.3, kPi / 2, kPi, 5.0})
    for (double gamma : {0.5, 1.0, 3.0})
      for (std::size_t n_max : {1u, 2u, 3u})
        for (bool fb : {true, false}) {
          PhysicalParams p = feedback_params(phi);
          p.gamma = gamma;
          p.feedback_enabled = fb;
          const Matrix m = dense(build_m_fb(p, 0.003, n_max));
          EXPECT_LT((m + m.adjoint()).cwiseAbs().maxCoeff(), 1e-16);
        }
}

TEST(BuildMFb, ExponentialIsUnitary) {
  const Matrix m = dense(build_m_fb(feedback_params(1.1), 0.004, 2));
  const Matrix u = m.exp();
  EXPECT_LT((u.adjoint() * u - Matrix::Identity(u.rows(), u.cols())).norm(), 1e-12);
}

TEST(BuildMFb, ChannelAmplitudes) {
  const double dt = 0.004;
  PhysicalParams p = feedback_params(0.0);
  const Matrix m = dense(build_m_fb(p, dt, 1));
  const auto g10 = static_cast<Eigen::Index>(basis_index(0, 1, 0, 1));
  const auto g01 = static_cast<Eigen::Index>(basis_index(0, 0, 1, 1));
  const auto e00 = static_cast<Eigen::Index>(basis_index(1, 0, 0, 1));
  // Each channel carries sqrt(gamma dt) so that the bare decay rate is 2 gamma.
  EXPECT_NEAR(std::abs(m(g10, e00)), std::sqrt(dt), 1e-15);
  EXPECT_NEAR(std::abs(m(g01, e00)), std::sqrt(dt), 1e-15);
  p.feedback_enabled = false;
  const Matrix m0 = dense(build_m_fb(p, dt, 1));
  EXPECT_NEAR(std::abs(m0(g10, e00)), std::sqrt(2 * dt), 1e-15);
  EXPECT_EQ(std::abs(m0(g01, e00)), 0.0);
}

TEST(BuildMFb, PhaseOnDelayedChannel) {
  const double phi = 0.7;
  const Matrix m = dense(build_m_fb(feedback_params(phi), 0.004, 1));
  const auto g01 = static_cast<Eigen::Index>(basis_index(0, 0, 1, 1));
  const auto e00 = static_cast<Eigen::Index>(basis_index(1, 0, 0, 1));
  EXPECT_NEAR(std::arg(m(e00, g01)), -phi, 1e-14);
  EXPECT_NEAR(std::arg(-m(g01, e00)), phi, 1e-14);
}

TEST(StepOperators, ZeroCouplingGivesIdentity) {
  PhysicalParams p = feedback_params();
  p.gamma = 0.0;  // operator construction itself does not validate
  const auto ops = build_step_operators(p, numerics(0.004));
  const Matrix u0 = dense(ops.u0);
  EXPECT_EQ((u0 - Matrix::Identity(u0.rows(), u0.cols())).cwiseAbs().maxCoeff(), 0.0);
}

TEST(StepOperators, DimensionsAndU2OnSystemOnly) {
  const auto ops = build_step_operators(feedback_params(), numerics(0.004));
  EXPECT_EQ(ops.dim(), static_cast<Eigen::Index>(step_dimension(2)));
  EXPECT_EQ(ops.dim(), 18);
  // u2 = (-i dt)^2 sigma_x^2 / 2 is proportional to the identity.
  const Matrix u2 = dense(ops.u2);
  EXPECT_LT((u2 + 0.5 * 0.004 * 0.004 * Matrix::Identity(18, 18)).norm(), 1e-18);
}

TEST(StepOperators, UndrivenUnitarityDefect) {
  for (double dt : {0.008, 0.004, 0.002, 0.001}) {
    const auto ops = build_step_operators(feedback_params(0.4), numerics(dt));
    const Matrix u0 = dense(ops.u0);
    const double defect = op_norm(u0.adjoint() * u0 - Matrix::Identity(u0.rows(), u0.cols()));
    EXPECT_LE(defect, 10.0 * std::pow(dt, 2.5)) << "dt = " << dt;
  }
}

TEST(StepOperators, MatchesDenseExponentialWithOrderAbove2p3) {
  // Drive strength fixed so that Omega dt <= 0.1 on the whole ladder.
  for (std::size_t n_max : {1u, 2u}) {
    const double omega = 12.0;
    std::vector<double> dts, errs;
    for (int k = 7; k <= 12; ++k) {
      const double dt = std::ldexp(1.0, -k);
      PhysicalParams p = feedback_params(0.9);
      p.pulse_area = 2 * kPi;
      NumericalParams n = numerics(dt, 2, static_cast<int>(n_max));
      const auto ops = build_step_operators(p, n);
      const Matrix u = dense(ops.u0) + omega * dense(ops.u1) + omega * omega * dense(ops.u2);
      const Matrix gen = cplx(0.0, -omega * dt) * dense(build_m_tls(n_max)) + dense(build_m_fb(p, dt, n_max));
      const double err = op_norm(u - gen.exp());
      EXPECT_LE(omega * dt, 0.1 + 1e-12);
      dts.push_back(dt);
      errs.push_back(err);
    }
    // Least-squares slope of log(err) vs log(dt).
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double m = static_cast<double>(dts.size());
    for (std::size_t i = 0; i < dts.size(); ++i) {
      const double x = std::log(dts[i]), y = std::log(errs[i]);
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    EXPECT_GE(slope, 2.3) << "n_max = " << n_max;
  }
}

TEST(StepOperators, FirstOrderKeepsTermsThroughSecondPower) {
  const double dt = 0.002;
  PhysicalParams p = feedback_params(0.2);
  const auto ops = build_step_operators(p, numerics(dt, 1, 1));
  const Matrix m = dense(build_m_fb(p, dt, 1));
  const Matrix t = cplx(0.0, -dt) * dense(build_m_tls(1));
  const Matrix id = Matrix::Identity(m.rows(), m.cols());
  EXPECT_LT((dense(ops.u0) - (id + m + 0.5 * m * m)).norm(), 1e-15);
  EXPECT_LT((dense(ops.u1) - (t + 0.5 * (t * m + m * t))).norm(), 1e-15);
  EXPECT_LT((dense(ops.u2) - 0.5 * t * t).norm(), 1e-18);
}

TEST(AssembleU, ZeroDriveAndPolynomialIdentity) {
  PhysicalParams p = feedback_params();
  p.pulse_area = 2 * kPi;
  p.pulse_width = 0.1;
  const auto ops = build_step_operators(p, numerics(0.004));
  EXPECT_EQ((assemble_u(ops, 50.0, p) - dense(ops.u0)).norm(), 0.0);
  const double omega = pulse_envelope(0.01, p);
  PhysicalParams doubled = p;
  doubled.pulse_area *= 2;
  const Matrix diff = assemble_u(ops, 0.01, doubled) - assemble_u(ops, 0.01, p);
  const Matrix expected = omega * dense(ops.u1) + 3 * omega * omega * dense(ops.u2);
  EXPECT_LT((diff - expected).norm(), 1e-12);
}

TEST(WriteCoo, RoundTripsEntries) {
  const auto ops = build_step_operators(feedback_params(0.5), numerics(0.004));
  std::ostringstream os;
  write_step_operators(os, ops);
  std::istringstream is(os.str());
  std::string line;
  int section = -1;
  std::array<Matrix, 3> read;
  for (auto& r : read) r = Matrix::Zero(ops.dim(), ops.dim());
  while (std::getline(is, line)) {
    if (line.rfind("# u", 0) == 0) {
      section = line[3] - '0';
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    long r, c;
    double re, im;
    ls >> r >> c >> re >> im;
    read[static_cast<std::size_t>(section)](r, c) = cplx(re, im);
  }
  EXPECT_EQ((read[0] - dense(ops.u0)).norm(), 0.0);
  EXPECT_EQ((read[1] - dense(ops.u1)).norm(), 0.0);
  EXPECT_EQ((read[2] - dense(ops.u2)).norm(), 0.0);
}
