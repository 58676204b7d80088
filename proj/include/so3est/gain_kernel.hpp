#pragma once

// Kernel (diffusion-map) gain solver.
//
// A Gaussian kernel on rotation matrices,
//   g(R1, R2) = (4 pi eps)^{-3/2} exp(-|R1 - R2|_F^2 / 4 eps),
// is symmetrized into k(R1,R2) = g / sqrt(g_hat(R1) g_hat(R2)) and
// row-normalized into the stochastic matrix T. The potential solves the
// fixed-point equation  Phi = T Phi + eps H  by successive approximation
// (warm-started across filter steps), and the per-particle gain follows from
// the trace-weighted matrices S_n.
//
// Two gain forms are provided:
//  * gradient (default): weight Tr(R_i E_n R_j^T) and +eps E_n.h term. This
//    is the derivative of the kernel interpolant of Phi and matches central
//    finite differences to rounding (see the oracle tests).
//  * direct: weight Tr(R_i E_n R_j) and -eps E_n.h term. Kept behind a
//    config switch for comparison; it fails the finite-difference oracle.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <vector>

#include "so3est/common.hpp"
#include "so3est/fpf.hpp"
#include "so3est/sim.hpp"
#include "so3est/so3.hpp"

namespace so3est {

enum class KernelGainForm { kGradient, kDirect };

/// Gaussian kernel between two rotations (Frobenius distance).
inline double gaussian_kernel(const Eigen::Matrix3d& r1,
                              const Eigen::Matrix3d& r2, double eps) {
  if (eps <= 0.0) throw ConfigError("gaussian_kernel: eps must be positive");
  const double d2 = (r1 - r2).squaredNorm();
  return std::pow(4.0 * kPi * eps, -1.5) * std::exp(-d2 / (4.0 * eps));
}

struct KernelOperator {
  double eps = 1.0;
  KernelGainForm form = KernelGainForm::kGradient;
  Eigen::MatrixXd k;                  // symmetrized kernel k^(eps,N)
  Eigen::MatrixXd T;                  // N x N row-stochastic
  std::array<Eigen::MatrixXd, 3> S;   // trace-weighted T
  std::array<Eigen::VectorXd, 3> S1;  // row sums S_n 1
  Eigen::MatrixXd H;                  // N x m, h - h_hat per channel
};

/// Builds T, S_n and H for the current ensemble snapshot.
inline KernelOperator build_operator(const ParticleEnsemble& ensemble,
                                     const Eigen::MatrixXd& h_vals,
                                     const Eigen::VectorXd& hhat, double eps,
                                     KernelGainForm form =
                                         KernelGainForm::kGradient) {
  const int n = ensemble.size();
  if (n < 2) throw ConfigError("build_operator: need at least 2 particles");
  if (eps <= 0.0) throw ConfigError("build_operator: eps must be positive");

  std::vector<Eigen::Matrix3d> rot(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) rot[size_t(i)] = quat_to_rotation(ensemble[i]);

  KernelOperator op;
  op.eps = eps;
  op.form = form;

  Eigen::MatrixXd g(n, n);
  double max_offdiag = 0.0;
  for (int i = 0; i < n; ++i) {
    g(i, i) = gaussian_kernel(rot[size_t(i)], rot[size_t(i)], eps);
    for (int j = i + 1; j < n; ++j) {
      const double v = gaussian_kernel(rot[size_t(i)], rot[size_t(j)], eps);
      g(i, j) = g(j, i) = v;
      max_offdiag = std::max(max_offdiag, v);
    }
  }
  if (n > 1 && max_offdiag == 0.0) {
    throw NumericalError(
        "build_operator: bandwidth degeneracy (all off-diagonal kernel "
        "values underflowed; ensemble too spread for eps)");
  }

  const Eigen::VectorXd d = (g.rowwise().mean()).cwiseSqrt();
  op.k = g.array() / (d * d.transpose()).array();
  op.T = op.k.array().colwise() / op.k.rowwise().sum().array();

  // Trace weights. gradient: w_n(i,j) = Tr(R_i E_n R_j^T) = Tr(E_n R_j^T R_i),
  // the axial part of C = R_j^T R_i (antisymmetric in i<->j).
  // direct: w_n(i,j) = Tr(R_i E_n R_j) = Tr(E_n R_j R_i).
  for (auto& s : op.S) s.resize(n, n);
  auto axial = [](const Eigen::Matrix3d& c) {
    return Eigen::Vector3d(c(1, 2) - c(2, 1), c(2, 0) - c(0, 2),
                           c(0, 1) - c(1, 0));
  };
  if (form == KernelGainForm::kGradient) {
    for (int i = 0; i < n; ++i) {
      for (int d3 = 0; d3 < 3; ++d3) op.S[size_t(d3)](i, i) = 0.0;
      for (int j = i + 1; j < n; ++j) {
        const Eigen::Vector3d w =
            axial(rot[size_t(j)].transpose() * rot[size_t(i)]);
        for (int d3 = 0; d3 < 3; ++d3) {
          op.S[size_t(d3)](i, j) = op.T(i, j) * w[d3];
          op.S[size_t(d3)](j, i) = op.T(j, i) * -w[d3];
        }
      }
    }
  } else {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const Eigen::Vector3d w = axial(rot[size_t(j)] * rot[size_t(i)]);
        for (int d3 = 0; d3 < 3; ++d3)
          op.S[size_t(d3)](i, j) = op.T(i, j) * w[d3];
      }
    }
  }
  for (int d3 = 0; d3 < 3; ++d3)
    op.S1[size_t(d3)] = op.S[size_t(d3)].rowwise().sum();

  op.H = h_vals.rowwise() - hhat.transpose();
  return op;
}

/// K Picard iterations Phi <- T Phi + eps H from the warm start (zero when
/// absent). When residual_tol > 0 the iteration stops early once the
/// mean-centered infinity-norm residual falls below it.
///
/// T is row- but not column-stochastic, so eps H generally has a component
/// along the left Perron vector and the iteration's constant mode drifts
/// linearly; only the centered part converges. The gain is exactly invariant
/// under Phi -> Phi + c 1, so the drift is harmless, and both the stopping
/// rule and any comparison against a direct solve must ignore that mode.
inline Eigen::MatrixXd fixed_point_solve(const KernelOperator& op,
                                         int iterations,
                                         const Eigen::MatrixXd* warm = nullptr,
                                         double residual_tol = 0.0) {
  if (iterations < 1) throw ConfigError("fixed_point_solve: need K >= 1");
  const Eigen::MatrixXd rhs = op.eps * op.H;
  Eigen::MatrixXd phi =
      (warm != nullptr && warm->rows() == op.H.rows() &&
       warm->cols() == op.H.cols())
          ? *warm
          : Eigen::MatrixXd::Zero(op.H.rows(), op.H.cols());
  for (int k = 0; k < iterations; ++k) {
    phi = (op.T * phi + rhs).eval();
    if (!phi.allFinite()) {
      throw NumericalError("fixed_point_solve: non-finite iterate");
    }
    if (residual_tol > 0.0) {
      Eigen::MatrixXd res = phi - op.T * phi - rhs;
      res.rowwise() -= res.colwise().mean();
      if (res.cwiseAbs().maxCoeff() < residual_tol) break;
    }
  }
  return phi;
}

/// Per-particle gain from the solved potential:
///   k_n(q_i) = s_h * eps * (E_n.h)(q_i)
///            + (1/2eps) [ (S_n Phi)_i - (S_n 1)_i (T Phi)_i ]
/// with s_h = +1 for the gradient form and -1 for the direct form.
inline void gain_from_phi(const KernelOperator& op, const Eigen::MatrixXd& phi,
                          const ParticleEnsemble& ensemble,
                          const LinearSensorModel& model,
                          std::vector<GainMatrix>& gains) {
  const int n = ensemble.size();
  const int m = static_cast<int>(phi.cols());
  const double s_h = (op.form == KernelGainForm::kGradient) ? 1.0 : -1.0;
  const Eigen::MatrixXd t_phi = op.T * phi;
  std::array<Eigen::MatrixXd, 3> s_phi;
  for (int d3 = 0; d3 < 3; ++d3) s_phi[size_t(d3)] = op.S[size_t(d3)] * phi;

  gains.resize(size_t(n));
  for (int i = 0; i < n; ++i) {
    GainMatrix& k = gains[size_t(i)];
    k = s_h * op.eps * model.lie_derivative(ensemble[i]);
    for (int d3 = 0; d3 < 3; ++d3) {
      k.row(d3) += (s_phi[size_t(d3)].row(i) -
                    op.S1[size_t(d3)][i] * t_phi.row(i)) /
                   (2.0 * op.eps);
    }
    if (!k.allFinite() || k.cols() != m) {
      throw NumericalError("gain_from_phi: non-finite gain");
    }
  }
}

class KernelGainSolver final : public GainSolver {
 public:
  KernelGainSolver(LinearSensorModel model, double eps = 1.0,
                   int iterations = 10,
                   KernelGainForm form = KernelGainForm::kGradient,
                   double residual_tol = 0.0)
      : model_(model),
        eps_(eps),
        iterations_(iterations),
        form_(form),
        residual_tol_(residual_tol) {}

  void solve(const ParticleEnsemble& ensemble, const Eigen::MatrixXd& h_vals,
             const Eigen::VectorXd& hhat,
             std::vector<GainMatrix>& gains) override {
    const KernelOperator op =
        build_operator(ensemble, h_vals, hhat, eps_, form_);
    warm_ = fixed_point_solve(op, iterations_,
                              warm_.size() > 0 ? &warm_ : nullptr,
                              residual_tol_);
    // keep the warm buffer bounded over long runs: the constant mode drifts
    // and carries no gain information
    warm_.rowwise() -= warm_.colwise().mean();
    gain_from_phi(op, warm_, ensemble, model_, gains);
  }

  void reset() override { warm_.resize(0, 0); }

  const Eigen::MatrixXd& warm_start() const { return warm_; }

 private:
  LinearSensorModel model_;
  double eps_;
  int iterations_;
  KernelGainForm form_;
  double residual_tol_;
  Eigen::MatrixXd warm_;  // solution of the previous step, per channel
};

}  // namespace so3est
