#pragma once

// Ground-truth rigid-body simulator and sensor models.
//
// Process:      dq = 1/2 q (x) (omega dt + dB),   Cov(dB) = Sigma_B dt
// Accelerometer dZ_g = R^T r_g dt + dW_g,         Cov(dW) = Sigma_W dt
// Magnetometer  dZ_b = R^T r_b dt + dW_b          (same Sigma_W per sensor)
//
// The geometric state update places the noise increment inside the group
// exponential (Stratonovich-consistent), the same rule the particle filter
// uses for its particles.

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "so3est/common.hpp"
#include "so3est/rng.hpp"
#include "so3est/so3.hpp"

namespace so3est {

using Vector6d = Eigen::Matrix<double, 6, 1>;

/// Benchmark angular-velocity profile (rad/s).
inline Eigen::Vector3d angular_velocity(double t) {
  return {std::sin(2.0 * kPi * t / 15.0),
          -std::sin(2.0 * kPi * t / 18.0 + kPi / 20.0),
          std::cos(2.0 * kPi * t / 17.0)};
}

/// Stacked noise-free sensor value (R^T r_g ; R^T r_b).
inline Vector6d h_eval(const Quatd& q, const Eigen::Vector3d& r_g,
                       const Eigen::Vector3d& r_b) {
  const Eigen::Matrix3d Rt = quat_to_rotation(q).transpose();
  Vector6d h;
  h.head<3>() = Rt * r_g;
  h.tail<3>() = Rt * r_b;
  return h;
}

enum class TruthInit { kSampleFromPrior, kFixed };

/// Full scenario description. Covariances are stored as covariances (rad^2,
/// (rad/s)^2); configuration surfaces accept standard deviations in degrees.
struct ScenarioConfig {
  double horizon = 2.0;  // s
  double dt = 0.01;      // s

  Eigen::Matrix3d sigma_b =
      Eigen::Matrix3d::Identity() * std::pow(deg2rad(5.0), 2);
  Eigen::Matrix3d sigma_w =
      Eigen::Matrix3d::Identity() * std::pow(deg2rad(10.0), 2);
  Eigen::Matrix3d sigma0 =
      Eigen::Matrix3d::Identity() * std::pow(deg2rad(30.0), 2);

  Eigen::Vector3d r_g{0.0, 0.0, -1.0};
  Eigen::Vector3d r_b{1.0 / std::sqrt(2.0), 0.0, 1.0 / std::sqrt(2.0)};

  TruthInit truth_init = TruthInit::kSampleFromPrior;
  Quatd fixed_truth = Quatd::identity();

  // Sub-interval schedule: the first `nf_initial_steps` measurement updates
  // are split into N_f uniform sub-intervals (per filter family).
  int nf_initial_steps = 3;
  int nf_fpf_g = 100;
  int nf_other = 30;

  int steps() const { return static_cast<int>(std::llround(horizon / dt)); }

  void validate() const {
    if (dt <= 0.0) throw ConfigError("ScenarioConfig: dt must be positive");
    if (horizon < dt) throw ConfigError("ScenarioConfig: horizon < dt");
    if (std::abs(r_g.norm() - 1.0) > 1e-12 ||
        std::abs(r_b.norm() - 1.0) > 1e-12) {
      throw ConfigError("ScenarioConfig: reference vectors must be unit");
    }
    psd_sqrt(sigma_b);
    psd_sqrt(sigma_w);
    psd_sqrt(sigma0);  // throws ConfigError if not symmetric PSD
    if (nf_fpf_g < 1 || nf_other < 1 || nf_initial_steps < 0) {
      throw ConfigError("ScenarioConfig: invalid N_f schedule");
    }
  }

  /// Moderate initial error and sensor noise; truth drawn from the prior.
  static ScenarioConfig scenario_a() { return ScenarioConfig{}; }

  /// Large initial error and sensor noise; truth fixed at 180 degrees about
  /// the (3,1,4) axis. The Galerkin variant is excluded by default here.
  static ScenarioConfig scenario_b() {
    ScenarioConfig c;
    c.sigma0 = Eigen::Matrix3d::Identity() * std::pow(deg2rad(60.0), 2);
    c.sigma_w = Eigen::Matrix3d::Identity() * std::pow(deg2rad(30.0), 2);
    c.truth_init = TruthInit::kFixed;
    Eigen::Vector3d axis(3.0, 1.0, 4.0);
    axis.normalize();
    c.fixed_truth = exp_axis_angle<double>(kPi * axis);
    c.nf_other = 20;
    return c;
  }
};

/// One geometric truth step: q (x) exp([omega dt + Sigma_B^{1/2} sqrt(dt) xi]).
inline Quatd propagate_truth(const Quatd& q, double t, double dt,
                             const Eigen::Matrix3d& sigma_b, RngStream& rng) {
  const Eigen::Vector3d w = angular_velocity(t);
  const Eigen::Vector3d dv =
      w * dt + psd_sqrt(sigma_b) * (std::sqrt(dt) * rng.gaussian3());
  return q * exp_axis_angle<double>(dv);
}

/// Same step with the covariance square root precomputed by the caller.
inline Quatd propagate_truth_sqrt(const Quatd& q, const Eigen::Vector3d& omega,
                                  double dt, const Eigen::Matrix3d& sigma_b_root,
                                  RngStream& rng) {
  const Eigen::Vector3d dv =
      omega * dt + sigma_b_root * (std::sqrt(dt) * rng.gaussian3());
  return q * exp_axis_angle<double>(dv);
}

/// Measurement increment over dt:
/// dZ = h(q) dt + blockdiag(Sigma_W, Sigma_W)^{1/2} sqrt(dt) xi.
inline Vector6d measure(const Quatd& q_true, double dt,
                        const Eigen::Matrix3d& sigma_w,
                        const Eigen::Vector3d& r_g, const Eigen::Vector3d& r_b,
                        RngStream& rng) {
  const Eigen::Matrix3d root = psd_sqrt(sigma_w);
  Vector6d dz = h_eval(q_true, r_g, r_b) * dt;
  const double s = std::sqrt(dt);
  dz.head<3>() += root * (s * rng.gaussian3());
  dz.tail<3>() += root * (s * rng.gaussian3());
  return dz;
}

/// Sensor model handed to the particle filter. `channel_scale` premultiplies
/// both h and the measurement stream; with 1/sigma_w it whitens the
/// measurement noise to unit intensity.
struct LinearSensorModel {
  Eigen::Vector3d r_g{0.0, 0.0, -1.0};
  Eigen::Vector3d r_b{1.0 / std::sqrt(2.0), 0.0, 1.0 / std::sqrt(2.0)};
  double channel_scale = 1.0;

  static constexpr int kChannels = 6;

  Vector6d eval(const Quatd& q) const {
    return channel_scale * h_eval(q, r_g, r_b);
  }

  /// Lie derivatives of every channel: row n holds E_n . h, i.e. the
  /// per-block value [-E_n (R^T r)]_c for c = 0..2.
  Eigen::Matrix<double, 3, 6> lie_derivative(const Quatd& q) const {
    const Eigen::Matrix3d Rt = quat_to_rotation(q).transpose();
    const Eigen::Vector3d vg = Rt * r_g, vb = Rt * r_b;
    Eigen::Matrix<double, 3, 6> out;
    for (int n = 0; n < 3; ++n) {
      Eigen::Vector3d e = Eigen::Vector3d::Zero();
      e[n] = 1.0;
      out.block<1, 3>(n, 0) = vg.cross(e).transpose();
      out.block<1, 3>(n, 3) = vb.cross(e).transpose();
    }
    return channel_scale * out;
  }
};

}  // namespace so3est
