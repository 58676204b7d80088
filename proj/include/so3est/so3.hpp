#pragma once

// Quaternion and SO(3) primitives: group operations, exponential map,
// conversions, Lie-algebra basis actions, concentrated-Gaussian sampling and
// quaternion averaging.
//
// Conventions used throughout the library:
//  * quaternions are scalar-first (q0, q1, q2, q3), Hamilton product;
//  * rotation matrices map body coordinates to inertial coordinates;
//  * skew(v) u = v x u, and the so(3) basis is E_n = skew(e_n);
//  * the derivative of f along E_n is d/dt f(q * exp(t e_n)) at t = 0
//    (right translation), matching the tangent basis { R E_n }.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <span>
#include <vector>

#include "so3est/common.hpp"
#include "so3est/rng.hpp"

namespace so3est {

template <typename Scalar>
class UnitQuaternion {
 public:
  using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
  using Vec4 = Eigen::Matrix<Scalar, 4, 1>;

  UnitQuaternion() : c_(Scalar(1), Scalar(0), Scalar(0), Scalar(0)) {}
  UnitQuaternion(Scalar w, Scalar x, Scalar y, Scalar z) : c_(w, x, y, z) {}
  explicit UnitQuaternion(const Vec4& wxyz) : c_(wxyz) {}

  static UnitQuaternion identity() { return UnitQuaternion(); }

  Scalar w() const { return c_[0]; }
  Scalar x() const { return c_[1]; }
  Scalar y() const { return c_[2]; }
  Scalar z() const { return c_[3]; }

  const Vec4& coeffs() const { return c_; }
  Vec3 vec() const { return c_.template tail<3>(); }

  Scalar norm() const { return c_.norm(); }
  Scalar dot(const UnitQuaternion& o) const { return c_.dot(o.c_); }

  /// For a unit quaternion the conjugate is the group inverse.
  UnitQuaternion conjugate() const {
    return UnitQuaternion(c_[0], -c_[1], -c_[2], -c_[3]);
  }
  UnitQuaternion inverse() const { return conjugate(); }

  UnitQuaternion operator-() const { return UnitQuaternion(Vec4(-c_)); }

  UnitQuaternion normalized() const {
    return UnitQuaternion(Vec4(c_ / c_.norm()));
  }

  void normalize() { c_ /= c_.norm(); }

  /// Renormalizes only when the norm has drifted beyond `tol`.
  void renormalize(Scalar tol = Scalar(1e-9)) {
    using std::abs;
    const Scalar n2 = c_.squaredNorm();
    if (abs(n2 - Scalar(1)) > Scalar(2) * tol) c_ /= std::sqrt(n2);
  }

 private:
  Vec4 c_;  // (q0, q1, q2, q3)
};

using Quatd = UnitQuaternion<double>;
using Quatf = UnitQuaternion<float>;

/// Hamilton product p (x) q, scalar/vector form:
/// (p0 q0 - pV.qV ; p0 qV + q0 pV + pV x qV).
template <typename S>
UnitQuaternion<S> quat_multiply(const UnitQuaternion<S>& p,
                                const UnitQuaternion<S>& q) {
  using Vec3 = typename UnitQuaternion<S>::Vec3;
  const Vec3 pv = p.vec(), qv = q.vec();
  const S w = p.w() * q.w() - pv.dot(qv);
  const Vec3 v = p.w() * qv + q.w() * pv + pv.cross(qv);
  UnitQuaternion<S> out(w, v[0], v[1], v[2]);
  out.renormalize();
  return out;
}

template <typename S>
UnitQuaternion<S> operator*(const UnitQuaternion<S>& p,
                            const UnitQuaternion<S>& q) {
  return quat_multiply(p, q);
}

/// Rotation matrix of a unit quaternion (body -> inertial).
template <typename S>
Eigen::Matrix<S, 3, 3> quat_to_rotation(const UnitQuaternion<S>& q) {
  const S q0 = q.w(), q1 = q.x(), q2 = q.y(), q3 = q.z();
  Eigen::Matrix<S, 3, 3> R;
  R << 2 * q0 * q0 + 2 * q1 * q1 - 1, 2 * (q1 * q2 - q0 * q3),
      2 * (q1 * q3 + q0 * q2),                                      //
      2 * (q1 * q2 + q0 * q3), 2 * q0 * q0 + 2 * q2 * q2 - 1,
      2 * (q2 * q3 - q0 * q1),                                      //
      2 * (q1 * q3 - q0 * q2), 2 * (q2 * q3 + q0 * q1),
      2 * q0 * q0 + 2 * q3 * q3 - 1;
  return R;
}

/// skew(v), defined so that skew(v) u = v x u.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 3, 3> skew(
    const Eigen::MatrixBase<Derived>& v) {
  using S = typename Derived::Scalar;
  Eigen::Matrix<S, 3, 3> m;
  m << S(0), -v[2], v[1],  //
      v[2], S(0), -v[0],   //
      -v[1], v[0], S(0);
  return m;
}

/// Basis generator E_n = skew(e_n), n in {0, 1, 2}.
template <typename S = double>
Eigen::Matrix<S, 3, 3> lie_basis(int n) {
  Eigen::Matrix<S, 3, 1> e = Eigen::Matrix<S, 3, 1>::Zero();
  e[n] = S(1);
  return skew(e);
}

/// exp([v]) as a unit quaternion: angle |v| about axis v/|v|.
/// Uses the series limit (1, v/2) near zero so the map is smooth there.
template <typename S>
UnitQuaternion<S> exp_axis_angle(const Eigen::Matrix<S, 3, 1>& v) {
  const S theta = v.norm();
  if (theta < S(1e-8)) {
    UnitQuaternion<S> q(S(1), v[0] / 2, v[1] / 2, v[2] / 2);
    q.normalize();
    return q;
  }
  const S half = theta / 2;
  const S s = std::sin(half) / theta;
  return UnitQuaternion<S>(std::cos(half), s * v[0], s * v[1], s * v[2]);
}

/// Geodesic rotation angle between q and the estimate qhat:
/// 2 acos(|dq0|) with dq = qhat^-1 (x) q. Sign-invariant, range [0, pi].
template <typename S>
S rotation_angle_error(const UnitQuaternion<S>& q,
                       const UnitQuaternion<S>& qhat) {
  // scalar part of qhat^-1 (x) q equals the 4-vector dot product
  const S d = std::abs(qhat.dot(q));
  return 2 * std::acos(std::min(S(1), d));
}

/// Empirical mean on the quaternion sphere: the unit principal eigenvector of
/// Q = (1/N) sum q_i q_i^T, sign-normalized so q0 >= 0 (tie: q1 >= 0).
/// Sign flips of individual members leave the result unchanged.
inline Quatd quat_average(std::span<const Quatd> qs) {
  if (qs.empty()) throw ConfigError("quat_average: empty ensemble");
  Eigen::Matrix4d Q = Eigen::Matrix4d::Zero();
  for (const Quatd& q : qs) Q += q.coeffs() * q.coeffs().transpose();
  Q /= static_cast<double>(qs.size());

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(Q);
  const Eigen::Vector4d evals = es.eigenvalues();  // ascending
  if (evals[3] - evals[2] < 1e-12) {
    throw NumericalError(
        "quat_average: ambiguous mean (largest eigenvalue is degenerate)");
  }
  Eigen::Vector4d m = es.eigenvectors().col(3);
  if (m[0] < 0 || (m[0] == 0 && m[1] < 0)) m = -m;
  return Quatd(m).normalized();
}

inline Quatd quat_average(const std::vector<Quatd>& qs) {
  return quat_average(std::span<const Quatd>(qs));
}

/// Symmetric PSD square root. Eigenvalues below -tol raise ConfigError;
/// small negative values from rounding are clamped to zero.
inline Eigen::Matrix3d psd_sqrt(const Eigen::Matrix3d& m, double tol = 1e-12) {
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9) {
    throw ConfigError("psd_sqrt: matrix is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(m);
  Eigen::Vector3d ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  for (int i = 0; i < 3; ++i) {
    if (ev[i] < -tol * scale) {
      throw ConfigError("psd_sqrt: matrix is not positive semidefinite");
    }
    ev[i] = std::sqrt(std::max(ev[i], 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

/// Samples from the concentrated Gaussian N(mean, Sigma0):
/// mean (x) exp([v]) with v ~ N(0, Sigma0) in the Lie algebra.
inline std::vector<Quatd> sample_concentrated_gaussian(
    const Quatd& mean, const Eigen::Matrix3d& sigma0, int n, RngStream& rng) {
  const Eigen::Matrix3d root = psd_sqrt(sigma0);
  std::vector<Quatd> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d v = root * rng.gaussian3();
    out.push_back(mean * exp_axis_angle<double>(v));
  }
  return out;
}

}  // namespace so3est
