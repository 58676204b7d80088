#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "so3est/fpf.hpp"
#include "so3est/gain_galerkin.hpp"
#include "so3est/rng.hpp"
#include "so3est/sim.hpp"
#include "so3est/so3.hpp"

using namespace so3est;

namespace {

ParticleEnsemble make_ensemble(int n, double spread, RngStream& rng,
                               const Quatd& center = Quatd::identity()) {
  std::vector<Quatd> qs;
  qs.reserve(size_t(n));
  for (int i = 0; i < n; ++i) {
    qs.push_back(center * exp_axis_angle<double>(
                              (spread * rng.gaussian3()).eval()));
  }
  return ParticleEnsemble(std::move(qs));
}

Eigen::MatrixXd h_values(const ParticleEnsemble& e,
                         const LinearSensorModel& model) {
  Eigen::MatrixXd h(e.size(), 6);
  for (int i = 0; i < e.size(); ++i) h.row(i) = model.eval(e[i]);
  return h;
}

}  // namespace

TEST_CASE("basis function values") {
  RngStream rng(1);
  for (int it = 0; it < 20; ++it) {
    Eigen::Vector4d v = Eigen::Vector4d::NullaryExpr(
        [&](Eigen::Index) { return rng.gaussian(); });
    v.normalize();
    const Quatd q(v);
    CHECK(eval_basis(q, 0) == doctest::Approx(2 * q.x() * q.w()));
    CHECK(eval_basis(q, 1) == doctest::Approx(2 * q.y() * q.w()));
    CHECK(eval_basis(q, 2) == doctest::Approx(2 * q.z() * q.w()));
    CHECK(eval_basis(q, 3) == doctest::Approx(2 * q.w() * q.w() - 1));
  }
}

TEST_CASE("tabulated Lie derivatives at the identity") {
  const Quatd id = Quatd::identity();
  CHECK(eval_lie_derivative(id, 0, 0) == doctest::Approx(1.0));  // q0^2 - q1^2
  CHECK(eval_lie_derivative(id, 3, 0) == doctest::Approx(0.0));  // -2 q1 q0
}

TEST_CASE("tabulated Lie derivatives match finite differences") {
  RngStream rng(2);
  const double t = 1e-6;
  double worst = 0.0;
  for (int it = 0; it < 100; ++it) {
    Eigen::Vector4d v = Eigen::Vector4d::NullaryExpr(
        [&](Eigen::Index) { return rng.gaussian(); });
    v.normalize();
    const Quatd q(v);
    for (int l = 0; l < kGalerkinBasisSize; ++l) {
      for (int n = 0; n < 3; ++n) {
        Eigen::Vector3d e = Eigen::Vector3d::Zero();
        e[n] = t;
        const double fp = eval_basis(q * exp_axis_angle<double>(e), l);
        const double fm =
            eval_basis(q * exp_axis_angle<double>((-e).eval()), l);
        const double fd = (fp - fm) / (2 * t);
        worst = std::max(worst,
                         std::abs(fd - eval_lie_derivative(q, l, n)));
      }
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("assemble: A is symmetric PSD and matches a naive double loop") {
  RngStream rng(3);
  LinearSensorModel model;
  const ParticleEnsemble e = make_ensemble(60, 0.6, rng);
  const Eigen::MatrixXd h = h_values(e, model);
  const Eigen::VectorXd hhat = h_hat(h);
  const GalerkinSystem sys = assemble(e, h, hhat);

  CHECK((sys.A - sys.A.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(sys.A);
  CHECK(es.eigenvalues()[0] > -1e-12);

  // independent summation oracle
  Eigen::Matrix4d a_ref = Eigen::Matrix4d::Zero();
  Eigen::Matrix<double, 4, 6> b_ref = Eigen::Matrix<double, 4, 6>::Zero();
  for (int i = 0; i < e.size(); ++i) {
    for (int k = 0; k < 4; ++k) {
      for (int l = 0; l < 4; ++l) {
        for (int n = 0; n < 3; ++n) {
          a_ref(k, l) += eval_lie_derivative(e[i], l, n) *
                         eval_lie_derivative(e[i], k, n);
        }
      }
      for (int j = 0; j < 6; ++j) {
        b_ref(k, j) += (h(i, j) - hhat[j]) * eval_basis(e[i], k);
      }
    }
  }
  a_ref /= e.size();
  b_ref /= e.size();
  CHECK((sys.A - a_ref).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((sys.b - b_ref).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("assemble at a collapsed ensemble has the hand-computed Gram") {
  // two identical particles at the identity: stacks are e1, e2, e3, 0
  std::vector<Quatd> qs{Quatd::identity(), Quatd::identity()};
  const ParticleEnsemble e{std::move(qs)};
  LinearSensorModel model;
  const Eigen::MatrixXd h = h_values(e, model);
  const GalerkinSystem sys = assemble(e, h, h_hat(h));
  Eigen::Matrix4d expect = Eigen::Matrix4d::Identity();
  expect(3, 3) = 0.0;
  CHECK((sys.A - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("constant h gives zero b and zero gains") {
  RngStream rng(4);
  const ParticleEnsemble e = make_ensemble(40, 0.4, rng);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(e.size(), 6);
  h.col(2).setConstant(0.7);
  GalerkinGainSolver solver;
  std::vector<GainMatrix> gains;
  solver.solve(e, h, h_hat(h), gains);
  for (const auto& g : gains) CHECK(g.cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("solved system has a tiny residual and satisfies the weak form") {
  RngStream rng(5);
  LinearSensorModel model;
  const ParticleEnsemble e = make_ensemble(200, 0.5, rng);
  const Eigen::MatrixXd h = h_values(e, model);
  const Eigen::VectorXd hhat = h_hat(h);
  GalerkinGainSolver solver;
  const GalerkinSystem sys = solver.solve_system(e, h, hhat);
  CHECK_FALSE(sys.degenerate);
  CHECK((sys.A * sys.kappa - sys.b).cwiseAbs().maxCoeff() < 1e-10);

  // weak-form identity, evaluated from the expanded per-particle gains:
  // (1/N) sum_i <grad phi, grad psi_k>(q_i) = b_k for every channel
  std::vector<GainMatrix> gains;
  solver.solve(e, h, hhat, gains);
  for (int j = 0; j < 6; ++j) {
    for (int k = 0; k < 4; ++k) {
      double lhs = 0.0;
      for (int i = 0; i < e.size(); ++i) {
        for (int n = 0; n < 3; ++n) {
          lhs += gains[size_t(i)](n, j) * eval_lie_derivative(e[i], k, n);
        }
      }
      lhs /= e.size();
      CHECK(std::abs(lhs - sys.b(k, j)) < 1e-10);
    }
  }
}

TEST_CASE("gain is linear in h and invariant to constant shifts") {
  RngStream rng(6);
  LinearSensorModel model;
  const ParticleEnsemble e = make_ensemble(50, 0.5, rng);
  const Eigen::MatrixXd h = h_values(e, model);
  GalerkinGainSolver solver;
  std::vector<GainMatrix> g1, g2, g3;
  solver.solve(e, h, h_hat(h), g1);

  const Eigen::MatrixXd h2 = 2.0 * h;
  solver.solve(e, h2, h_hat(h2), g2);
  const Eigen::MatrixXd hs = h.array() + 3.25;
  solver.solve(e, hs, h_hat(hs), g3);
  for (int i = 0; i < e.size(); ++i) {
    CHECK((g2[size_t(i)] - 2.0 * g1[size_t(i)]).cwiseAbs().maxCoeff() <
          1e-12);
    CHECK((g3[size_t(i)] - g1[size_t(i)]).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("ensemble collapse falls back to the pseudo-inverse") {
  std::vector<Quatd> qs(10, exp_axis_angle<double>(
                                Eigen::Vector3d(0.4, -0.2, 0.1)));
  const ParticleEnsemble e{std::move(qs)};
  LinearSensorModel model;
  Eigen::MatrixXd h = h_values(e, model);
  // identical particles: A has rank <= 3 and b = 0; the solve must still
  // return finite gains and flag the degeneracy
  GalerkinGainSolver solver;
  std::vector<GainMatrix> gains;
  solver.solve(e, h, h_hat(h), gains);
  CHECK(solver.degenerate_count() > 0);
  for (const auto& g : gains) CHECK(g.allFinite());
}

TEST_CASE("concentrated ensemble yields nearly uniform gains") {
  RngStream rng(7);
  LinearSensorModel model;
  // all particles within 5 degrees of the identity (rejection-sampled)
  std::vector<Quatd> qs;
  while (qs.size() < 300) {
    const Eigen::Vector3d v = deg2rad(1.5) * rng.gaussian3();
    if (v.norm() <= deg2rad(4.0)) qs.push_back(exp_axis_angle<double>(v));
  }
  const ParticleEnsemble e{std::move(qs)};
  const Eigen::MatrixXd h = h_values(e, model);
  GalerkinGainSolver solver;
  std::vector<GainMatrix> gains;
  solver.solve(e, h, h_hat(h), gains);
  GainMatrix mean = GainMatrix::Zero(3, 6);
  for (const auto& g : gains) mean += g;
  mean /= e.size();
  const double scale = mean.norm();
  double worst = 0.0;
  for (const auto& g : gains) worst = std::max(worst, (g - mean).norm());
  CHECK(worst / scale < 0.10);
}
