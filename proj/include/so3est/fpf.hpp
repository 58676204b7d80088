#pragma once

// Feedback particle filter engine on SO(3).
//
// Per particle i and measurement increment dZ over a step dt:
//   dI_i  = dZ - 1/2 (h(q_i) + h_hat) dt          (modified innovation)
//   dnu_i = omega dt + Sigma_B^{1/2} sqrt(dt) xi_i + K(q_i) dI_i
//   q_i  <- q_i (x) [cos(|dnu|/2) ; dnu/|dnu| sin(|dnu|/2)]
// with the gain K supplied by a pluggable solver. There are no importance
// weights and no resampling. A step may be split into N_f uniform
// sub-intervals, apportioning dZ as dZ/N_f and re-solving the gain at the
// start of each sub-interval.

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "so3est/common.hpp"
#include "so3est/rng.hpp"
#include "so3est/sim.hpp"
#include "so3est/so3.hpp"

namespace so3est {

class ParticleEnsemble {
 public:
  ParticleEnsemble() = default;
  explicit ParticleEnsemble(std::vector<Quatd> particles)
      : particles_(std::move(particles)) {
    if (particles_.size() < 2) {
      throw ConfigError("ParticleEnsemble: need at least 2 particles");
    }
  }

  int size() const { return static_cast<int>(particles_.size()); }
  const Quatd& operator[](int i) const { return particles_[size_t(i)]; }
  Quatd& operator[](int i) { return particles_[size_t(i)]; }
  const std::vector<Quatd>& particles() const { return particles_; }

  double max_norm_error() const {
    double e = 0.0;
    for (const Quatd& q : particles_) e = std::max(e, std::abs(q.norm() - 1.0));
    return e;
  }

 private:
  std::vector<Quatd> particles_;
};

/// Per-particle gain coordinates; column j holds grad(phi_j) at that particle.
using GainMatrix = Eigen::Matrix<double, 3, Eigen::Dynamic>;

/// Maps an ensemble snapshot and its h values to per-particle gains.
/// Implementations keep no state besides documented warm starts.
class GainSolver {
 public:
  virtual ~GainSolver() = default;

  virtual void solve(const ParticleEnsemble& ensemble,
                     const Eigen::MatrixXd& h_vals,
                     const Eigen::VectorXd& h_hat,
                     std::vector<GainMatrix>& gains) = 0;

  /// Drops warm-start state (new run).
  virtual void reset() {}
};

/// Returns identically zero gains; the filter then reduces to propagation.
class ZeroGainSolver final : public GainSolver {
 public:
  void solve(const ParticleEnsemble& ensemble, const Eigen::MatrixXd& h_vals,
             const Eigen::VectorXd&, std::vector<GainMatrix>& gains) override {
    gains.assign(size_t(ensemble.size()),
                 GainMatrix::Zero(3, h_vals.cols()));
  }
};

/// Column-wise empirical mean of per-particle h values.
inline Eigen::VectorXd h_hat(const Eigen::MatrixXd& h_vals) {
  return h_vals.colwise().mean().transpose();
}

/// Modified innovation dI = dZ - 1/2 (h_i + h_hat) dt.
inline Eigen::VectorXd innovation(const Eigen::VectorXd& dz,
                                  const Eigen::VectorXd& h_i,
                                  const Eigen::VectorXd& hhat, double dt) {
  return dz - 0.5 * (h_i + hhat) * dt;
}

/// Exact unit-norm increment q (x) exp([dnu]).
inline Quatd quat_increment(const Quatd& q, const Eigen::Vector3d& dnu) {
  return q * exp_axis_angle<double>(dnu);
}

struct FpfStepParams {
  Eigen::Vector3d omega = Eigen::Vector3d::Zero();
  double dt = 0.01;
  Eigen::Matrix3d sigma_b_root = Eigen::Matrix3d::Zero();
  int n_f = 1;
};

/// Advances the ensemble through one measurement step of length dt,
/// with dZ apportioned uniformly over n_f sub-intervals and the gain
/// re-solved at each sub-interval. Throws NumericalError (with the particle
/// index) if a non-finite increment appears.
inline void fpf_step(ParticleEnsemble& ensemble, const Eigen::VectorXd& dz,
                     const FpfStepParams& p, const LinearSensorModel& model,
                     GainSolver& solver, RngStream& rng) {
  if (p.n_f < 1) throw ConfigError("fpf_step: N_f must be >= 1");
  const int n = ensemble.size();
  const int m = static_cast<int>(dz.size());
  const double sub_dt = p.dt / p.n_f;
  const Eigen::VectorXd sub_dz = dz / p.n_f;
  const double noise_scale = std::sqrt(sub_dt);

  Eigen::MatrixXd h_vals(n, m);
  std::vector<GainMatrix> gains;
  for (int s = 0; s < p.n_f; ++s) {
    for (int i = 0; i < n; ++i) h_vals.row(i) = model.eval(ensemble[i]);
    const Eigen::VectorXd hhat = h_hat(h_vals);
    solver.solve(ensemble, h_vals, hhat, gains);
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd di =
          innovation(sub_dz, h_vals.row(i).transpose(), hhat, sub_dt);
      const Eigen::Vector3d dnu = p.omega * sub_dt +
                                  p.sigma_b_root * (noise_scale * rng.gaussian3()) +
                                  gains[size_t(i)] * di;
      if (!dnu.allFinite()) {
        throw NumericalError("fpf_step: non-finite increment at particle " +
                             std::to_string(i));
      }
      ensemble[i] = quat_increment(ensemble[i], dnu);
    }
  }
}

/// Ensemble estimate: principal-eigenvector quaternion mean.
inline Quatd estimate(const ParticleEnsemble& ensemble) {
  return quat_average(ensemble.particles());
}

}  // namespace so3est
