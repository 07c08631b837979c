#pragma once

#include <Eigen/Core>
#include <array>

namespace gs2pose {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat36 = Eigen::Matrix<double, 3, 6>;

/// se(3) tangent vector, ordered [rho; phi] (translation first).
struct Twist {
  Vec3 rho = Vec3::Zero();
  Vec3 phi = Vec3::Zero();

  Twist() = default;
  Twist(const Vec3& rho_, const Vec3& phi_) : rho(rho_), phi(phi_) {}
  explicit Twist(const Vec6& v) : rho(v.head<3>()), phi(v.tail<3>()) {}

  Vec6 vec() const {
    Vec6 v;
    v << rho, phi;
    return v;
  }
};

/// Rigid transform {R, t}; maps object-frame points into the camera frame
/// when used as T_m_c.
struct RigidTransform {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  RigidTransform() = default;
  RigidTransform(const Mat3& R_, const Vec3& t_) : R(R_), t(t_) {}

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return R * p + t; }
  Vec3 operator*(const Vec3& p) const { return apply(p); }

  RigidTransform compose(const RigidTransform& other) const {
    return {R * other.R, R * other.t + t};
  }
  RigidTransform operator*(const RigidTransform& other) const {
    return compose(other);
  }

  RigidTransform inverse() const {
    Mat3 Rt = R.transpose();
    return {Rt, -(Rt * t)};
  }

  Mat4 matrix() const {
    Mat4 M = Mat4::Identity();
    M.topLeftCorner<3, 3>() = R;
    M.topRightCorner<3, 1>() = t;
    return M;
  }
  static RigidTransform fromMatrix(const Mat4& M) {
    return {M.topLeftCorner<3, 3>(), M.topRightCorner<3, 1>()};
  }

  /// RtR = I and det(R) = 1, both within tol.
  bool isValid(double tol = 1e-9) const;
};

/// Skew-symmetric matrix such that hat3(v) * w = v x w.
Mat3 hat3(const Vec3& v);

/// SO(3) exponential (Rodrigues).
Mat3 exp_so3(const Vec3& phi);

/// Left Jacobian V of SO(3): t = V(phi) * rho in the SE(3) exponential.
Mat3 so3_left_jacobian(const Vec3& phi);

RigidTransform exp_se3(const Twist& tau);

/// Inverse of exp_se3. Requires a valid rotation; the angle-pi case is
/// resolved by axis extraction from R + I.
Twist log_se3(const RigidTransform& T);

/// d(exp(tau) * p_c)/d tau at tau = 0, columns ordered [rho | phi]:
/// [I3 | -hat3(p_c)].
Mat36 jac_point_left(const Vec3& p_c);

/// d(T * exp(tau) * p_m)/d tau at tau = 0: R * [I3 | -hat3(p_m)].
Mat36 jac_point_right(const RigidTransform& T, const Vec3& p_m);

/// Per-coordinate derivatives of R under a left perturbation Exp(phi)*R:
/// element j is dR/dphi_j = hat3(e_j) * R. Column c of element j equals
/// column j of -hat3(R(:,c)).
std::array<Mat3, 3> jac_rot_left(const Mat3& R);

/// Per-coordinate derivatives of R under a right perturbation R*Exp(phi):
/// element j is dR/dphi_j = R * hat3(e_j).
std::array<Mat3, 3> jac_rot_right(const Mat3& R);

}  // namespace gs2pose
