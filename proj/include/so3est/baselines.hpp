#pragma once

// Discrete-time IEKF, MEKF and UKF attitude filters for linear vector
// observations h(R) = R^T r.
//
// The printed gain expressions assume unit measurement noise; the actual
// sensor covariance is folded in by whitening the innovation and Jacobian
// with sqrt(dt)/sigma before applying them, which leaves the expressions
// intact for the isotropic sensors used here.
//
// The IEKF defines its innovation in the inertial frame (left-multiplicative
// error), the MEKF and UKF in the body frame (right-multiplicative error).
// The MEKF/UKF error state is the Rodrigues coordinate scaled so it matches
// the rotation vector to first order (p = 4 qV/(1+q0)); the printed Jacobian
// H = [R^T r]_x is the rotation-vector linearization, so the scaled
// coordinate keeps update and composition consistent.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <vector>

#include "so3est/common.hpp"
#include "so3est/so3.hpp"

namespace so3est {

/// Unscaled modified Rodrigues parameter -> quaternion:
/// q = ((1-|a|^2)/(1+|a|^2), 2a/(1+|a|^2)).
inline Quatd mrp_to_quat(const Eigen::Vector3d& a) {
  const double n2 = a.squaredNorm();
  const double s = 1.0 / (1.0 + n2);
  return Quatd((1.0 - n2) * s, 2.0 * a[0] * s, 2.0 * a[1] * s, 2.0 * a[2] * s);
}

inline Eigen::Matrix3d mrp_to_rotation(const Eigen::Vector3d& a) {
  return quat_to_rotation(mrp_to_quat(a));
}

/// Inverse map a = qV/(1+q0), switching to the shadow set (sign flip) when
/// q0 < 0 so that |a| <= 1 and the q0 = -1 wrap is avoided.
inline Eigen::Vector3d mrp_from_quat(const Quatd& q) {
  const Quatd qq = (q.w() < 0.0) ? -q : q;
  return qq.vec() / (1.0 + qq.w());
}

namespace detail {
// 4-scaled Rodrigues coordinate used as the MEKF/UKF error state.
inline Quatd error_to_quat(const Eigen::Vector3d& p) {
  return mrp_to_quat(p / 4.0);
}
inline Eigen::Matrix3d psd_repair(const Eigen::Matrix3d& m) {
  const Eigen::Matrix3d sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(sym);
  const Eigen::Vector3d ev = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}
}  // namespace detail

struct GaussianFilterState {
  Quatd q = Quatd::identity();
  Eigen::Matrix3d cov = Eigen::Matrix3d::Identity();

  Eigen::Matrix3d rotation() const { return quat_to_rotation(q); }
  double orthogonality_error() const {
    const Eigen::Matrix3d r = rotation();
    return (r * r.transpose() - Eigen::Matrix3d::Identity())
        .cwiseAbs()
        .maxCoeff();
  }
};

/// Reference direction plus isotropic per-axis noise standard deviation
/// (continuous-time intensity; the covariance is noise_std^2 I).
struct SensorSpec {
  Eigen::Vector3d r;
  double noise_std = 1.0;
};

namespace detail {
inline void check_finite(const GaussianFilterState& s, const char* who) {
  if (!s.q.coeffs().allFinite() || !s.cov.allFinite()) {
    throw NumericalError(std::string(who) + ": filter state diverged");
  }
}
}  // namespace detail

class IekfFilter {
 public:
  IekfFilter(GaussianFilterState init, Eigen::Matrix3d process_noise,
             std::vector<SensorSpec> sensors)
      : state_(std::move(init)),
        qc_(std::move(process_noise)),
        sensors_(std::move(sensors)) {}

  /// One measurement step, split into n_f uniform sub-intervals; the sensors
  /// are applied sequentially within each sub-interval.
  void step(const Eigen::Vector3d& omega, double dt,
            const std::vector<Eigen::Vector3d>& ys, int n_f = 1) {
    const double sub_dt = dt / n_f;
    for (int s = 0; s < n_f; ++s) {
      propagate(omega, sub_dt);
      for (size_t k = 0; k < sensors_.size(); ++k) {
        update(sensors_[k], ys[k], sub_dt);
      }
    }
    detail::check_finite(state_, "IekfFilter");
  }

  void propagate(const Eigen::Vector3d& omega, double dt) {
    state_.q = state_.q * exp_axis_angle<double>(omega * dt);
    state_.cov += dt * qc_;
  }

  void update(const SensorSpec& sensor, const Eigen::Vector3d& y, double dt) {
    const double alpha = std::sqrt(dt) / sensor.noise_std;
    const Eigen::Matrix3d rot = state_.rotation();
    const Eigen::Vector3d innov = alpha * (rot * y - sensor.r);
    const Eigen::Matrix3d h = alpha * skew(sensor.r);
    const Eigen::Matrix3d s =
        h * state_.cov * h.transpose() + Eigen::Matrix3d::Identity();
    const Eigen::Matrix3d gain = state_.cov * h.transpose() * s.inverse();
    const Eigen::Vector3d eta = gain * innov;
    state_.q = exp_axis_angle<double>(eta) * state_.q;  // inertial-frame error
    state_.cov = detail::psd_repair(
        (Eigen::Matrix3d::Identity() - gain * h) * state_.cov);
  }

  const GaussianFilterState& state() const { return state_; }
  GaussianFilterState& state() { return state_; }

 private:
  GaussianFilterState state_;
  Eigen::Matrix3d qc_;
  std::vector<SensorSpec> sensors_;
};

class MekfFilter {
 public:
  MekfFilter(GaussianFilterState init, Eigen::Matrix3d process_noise,
             std::vector<SensorSpec> sensors)
      : state_(std::move(init)),
        qc_(std::move(process_noise)),
        sensors_(std::move(sensors)) {}

  void step(const Eigen::Vector3d& omega, double dt,
            const std::vector<Eigen::Vector3d>& ys, int n_f = 1) {
    const double sub_dt = dt / n_f;
    for (int s = 0; s < n_f; ++s) {
      propagate(omega, sub_dt);
      for (size_t k = 0; k < sensors_.size(); ++k) {
        update(sensors_[k], ys[k], sub_dt);
      }
    }
    detail::check_finite(state_, "MekfFilter");
  }

  void propagate(const Eigen::Vector3d& omega, double dt) {
    state_.q = state_.q * exp_axis_angle<double>(omega * dt);
    const Eigen::Matrix3d lam =
        Eigen::Matrix3d::Identity() - skew((omega * dt).eval());
    state_.cov = lam * state_.cov * lam.transpose() + dt * qc_;
  }

  void update(const SensorSpec& sensor, const Eigen::Vector3d& y, double dt) {
    const double alpha = std::sqrt(dt) / sensor.noise_std;
    const Eigen::Vector3d hb = state_.rotation().transpose() * sensor.r;
    const Eigen::Vector3d innov = alpha * (y - hb);  // body-frame error
    const Eigen::Matrix3d h = alpha * skew(hb);
    const Eigen::Matrix3d s =
        h * state_.cov * h.transpose() + Eigen::Matrix3d::Identity();
    const Eigen::Matrix3d gain = state_.cov * h.transpose() * s.inverse();
    const Eigen::Vector3d p = gain * innov;
    state_.q = state_.q * detail::error_to_quat(p);
    state_.cov = detail::psd_repair(
        (Eigen::Matrix3d::Identity() - gain * h) * state_.cov);
  }

  const GaussianFilterState& state() const { return state_; }
  GaussianFilterState& state() { return state_; }

 private:
  GaussianFilterState state_;
  Eigen::Matrix3d qc_;
  std::vector<SensorSpec> sensors_;
};

/// UKF on the same body-frame error coordinate as the MEKF; canonical
/// unscented transform (2n+1 points at sqrt(n + kappa) with kappa = 0).
class UkfFilter {
 public:
  UkfFilter(GaussianFilterState init, Eigen::Matrix3d process_noise,
            std::vector<SensorSpec> sensors)
      : state_(std::move(init)),
        qc_(std::move(process_noise)),
        sensors_(std::move(sensors)) {}

  void step(const Eigen::Vector3d& omega, double dt,
            const std::vector<Eigen::Vector3d>& ys, int n_f = 1) {
    const double sub_dt = dt / n_f;
    for (int s = 0; s < n_f; ++s) {
      state_.q = state_.q * exp_axis_angle<double>(omega * sub_dt);
      state_.cov += sub_dt * qc_;
      for (size_t k = 0; k < sensors_.size(); ++k) {
        update(sensors_[k], ys[k], sub_dt);
      }
    }
    detail::check_finite(state_, "UkfFilter");
  }

  void update(const SensorSpec& sensor, const Eigen::Vector3d& y, double dt) {
    const double alpha = std::sqrt(dt) / sensor.noise_std;
    const Eigen::Matrix3d p = cov_sqrt_input();

    // 2n+1 sigma points at +-sqrt(3) sigma; the center carries zero weight.
    std::array<Eigen::Vector3d, 7> pts;
    pts[0].setZero();
    const Eigen::Matrix3d root = matrix_sqrt(3.0 * p);
    for (int c = 0; c < 3; ++c) {
      pts[size_t(1 + 2 * c)] = root.col(c);
      pts[size_t(2 + 2 * c)] = -root.col(c);
    }
    constexpr double kW = 1.0 / 6.0;

    std::array<Eigen::Vector3d, 7> ysig;
    Eigen::Vector3d ybar = Eigen::Vector3d::Zero();
    for (size_t i = 0; i < 7; ++i) {
      const Quatd qs = state_.q * detail::error_to_quat(pts[i]);
      ysig[i] = alpha * (quat_to_rotation(qs).transpose() * sensor.r);
      if (i > 0) ybar += kW * ysig[i];
    }
    Eigen::Matrix3d syy = Eigen::Matrix3d::Identity();
    Eigen::Matrix3d pxy = Eigen::Matrix3d::Zero();
    for (size_t i = 1; i < 7; ++i) {
      const Eigen::Vector3d dy = ysig[i] - ybar;
      syy += kW * dy * dy.transpose();
      pxy += kW * pts[i] * dy.transpose();
    }
    const Eigen::Matrix3d gain = pxy * syy.inverse();
    const Eigen::Vector3d phat = gain * (alpha * y - ybar);
    state_.q = state_.q * detail::error_to_quat(phat);
    state_.cov = detail::psd_repair(p - gain * syy * gain.transpose());
  }

  const GaussianFilterState& state() const { return state_; }
  GaussianFilterState& state() { return state_; }
  long cholesky_repairs() const { return cholesky_repairs_; }

 private:
  Eigen::Matrix3d cov_sqrt_input() {
    Eigen::Matrix3d sym = 0.5 * (state_.cov + state_.cov.transpose());
    Eigen::LLT<Eigen::Matrix3d> llt(sym);
    if (llt.info() != Eigen::Success) {
      ++cholesky_repairs_;
      sym = detail::psd_repair(sym);
    }
    return sym;
  }

  static Eigen::Matrix3d matrix_sqrt(const Eigen::Matrix3d& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(m);
    const Eigen::Vector3d ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  }

  GaussianFilterState state_;
  Eigen::Matrix3d qc_;
  std::vector<SensorSpec> sensors_;
  long cholesky_repairs_ = 0;
};

}  // namespace so3est
