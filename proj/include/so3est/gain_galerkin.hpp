#pragma once

// Galerkin gain solver.
//
// The gain potential is expanded over the fixed basis
//   psi_1 = 2 q1 q0,  psi_2 = 2 q2 q0,  psi_3 = 2 q3 q0,  psi_4 = 2 q0^2 - 1,
// whose Lie derivatives E_n . psi_l have the closed forms tabulated below.
// The weak-form system A kappa = b is assembled from ensemble averages
//   [A]_kl = (1/N) sum_i sum_n (E_n psi_l)(q_i) (E_n psi_k)(q_i)
//   b_k    = (1/N) sum_i (h_j(q_i) - h_hat_j) psi_k(q_i)      (per channel j)
// and the per-particle gain is k_n = sum_l kappa_l (E_n psi_l)(q_i).

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <vector>

#include "so3est/common.hpp"
#include "so3est/fpf.hpp"
#include "so3est/so3.hpp"

namespace so3est {

inline constexpr int kGalerkinBasisSize = 4;

/// psi_l(q), l in 0..3.
inline double eval_basis(const Quatd& q, int l) {
  const double q0 = q.w(), q1 = q.x(), q2 = q.y(), q3 = q.z();
  switch (l) {
    case 0: return 2 * q1 * q0;
    case 1: return 2 * q2 * q0;
    case 2: return 2 * q3 * q0;
    case 3: return 2 * q0 * q0 - 1;
    default: throw ConfigError("eval_basis: l out of range");
  }
}

/// (E_n . psi_l)(q), closed form; n in 0..2, l in 0..3.
inline double eval_lie_derivative(const Quatd& q, int l, int n) {
  const double q0 = q.w(), q1 = q.x(), q2 = q.y(), q3 = q.z();
  static_assert(kGalerkinBasisSize == 4);
  switch (l * 3 + n) {
    case 0: return q0 * q0 - q1 * q1;
    case 1: return -q1 * q2 - q3 * q0;
    case 2: return -q1 * q3 + q2 * q0;
    case 3: return -q1 * q2 + q3 * q0;
    case 4: return q0 * q0 - q2 * q2;
    case 5: return -q2 * q3 - q1 * q0;
    case 6: return -q1 * q3 - q2 * q0;
    case 7: return -q2 * q3 + q1 * q0;
    case 8: return q0 * q0 - q3 * q3;
    case 9: return -2 * q1 * q0;
    case 10: return -2 * q2 * q0;
    case 11: return -2 * q3 * q0;
    default: throw ConfigError("eval_lie_derivative: index out of range");
  }
}

/// Stack of basis Lie derivatives at one particle: row n, column l.
inline Eigen::Matrix<double, 3, 4> lie_derivative_stack(const Quatd& q) {
  Eigen::Matrix<double, 3, 4> g;
  for (int l = 0; l < 4; ++l)
    for (int n = 0; n < 3; ++n) g(n, l) = eval_lie_derivative(q, l, n);
  return g;
}

struct GalerkinSystem {
  Eigen::Matrix4d A = Eigen::Matrix4d::Zero();
  Eigen::Matrix<double, 4, Eigen::Dynamic> b;      // one column per channel
  Eigen::Matrix<double, 4, Eigen::Dynamic> kappa;  // solution, same shape
  bool degenerate = false;  // condition number above threshold; pinv was used
};

/// Assembles A (shared) and b (per measurement channel).
inline GalerkinSystem assemble(const ParticleEnsemble& ensemble,
                               const Eigen::MatrixXd& h_vals,
                               const Eigen::VectorXd& hhat) {
  const int n = ensemble.size();
  const int m = static_cast<int>(h_vals.cols());
  GalerkinSystem sys;
  sys.b = Eigen::Matrix<double, 4, Eigen::Dynamic>::Zero(4, m);
  for (int i = 0; i < n; ++i) {
    const Eigen::Matrix<double, 3, 4> g = lie_derivative_stack(ensemble[i]);
    sys.A += g.transpose() * g;
    Eigen::Vector4d psi;
    for (int l = 0; l < 4; ++l) psi[l] = eval_basis(ensemble[i], l);
    sys.b += psi * (h_vals.row(i) - hhat.transpose());
  }
  sys.A /= n;
  sys.b /= n;
  return sys;
}

class GalerkinGainSolver final : public GainSolver {
 public:
  explicit GalerkinGainSolver(double condition_limit = 1e12)
      : condition_limit_(condition_limit) {}

  void solve(const ParticleEnsemble& ensemble, const Eigen::MatrixXd& h_vals,
             const Eigen::VectorXd& hhat,
             std::vector<GainMatrix>& gains) override {
    GalerkinSystem sys = solve_system(ensemble, h_vals, hhat);
    const int n = ensemble.size();
    gains.resize(size_t(n));
    for (int i = 0; i < n; ++i) {
      gains[size_t(i)].noalias() =
          lie_derivative_stack(ensemble[i]) * sys.kappa;
    }
  }

  /// Assembly plus the kappa solve, exposed for the oracle checks.
  GalerkinSystem solve_system(const ParticleEnsemble& ensemble,
                              const Eigen::MatrixXd& h_vals,
                              const Eigen::VectorXd& hhat) {
    GalerkinSystem sys = assemble(ensemble, h_vals, hhat);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(sys.A);
    const Eigen::Vector4d ev = es.eigenvalues();
    const double emax = ev[3];
    // A is a Gram matrix: eigenvalues are >= 0 up to rounding. An ensemble
    // collapse drives the spectrum toward rank <= 3; fall back to the
    // truncated pseudo-inverse instead of amplifying the dead directions.
    sys.degenerate = !(ev[0] > emax / condition_limit_);
    if (sys.degenerate) ++degenerate_count_;
    Eigen::Vector4d inv = Eigen::Vector4d::Zero();
    for (int k = 0; k < 4; ++k) {
      if (ev[k] > emax / condition_limit_) inv[k] = 1.0 / ev[k];
    }
    sys.kappa = es.eigenvectors() * inv.asDiagonal() *
                es.eigenvectors().transpose() * sys.b;
    return sys;
  }

  long degenerate_count() const { return degenerate_count_; }

 private:
  double condition_limit_;
  long degenerate_count_ = 0;
};

}  // namespace so3est
