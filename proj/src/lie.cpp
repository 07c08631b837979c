#include "gs2pose/lie.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace gs2pose {

namespace {
// Below this angle, Rodrigues and V switch to 2nd-order Taylor series.
constexpr double kSmallAngle = 1e-8;
}  // namespace

bool RigidTransform::isValid(double tol) const {
  if (!R.allFinite() || !t.allFinite()) return false;
  if (((R.transpose() * R) - Mat3::Identity()).cwiseAbs().maxCoeff() > tol)
    return false;
  return std::abs(R.determinant() - 1.0) <= tol;
}

Mat3 hat3(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(),
       v.z(), 0, -v.x(),
      -v.y(), v.x(), 0;
  return m;
}

Mat3 exp_so3(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 W = hat3(phi);
  if (theta < kSmallAngle) {
    return Mat3::Identity() + W + 0.5 * W * W;
  }
  const double s = std::sin(theta) / theta;
  const double c = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + s * W + c * W * W;
}

Mat3 so3_left_jacobian(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 W = hat3(phi);
  if (theta < kSmallAngle) {
    return Mat3::Identity() + 0.5 * W + (1.0 / 6.0) * W * W;
  }
  const double t2 = theta * theta;
  const double a = (1.0 - std::cos(theta)) / t2;
  const double b = (theta - std::sin(theta)) / (t2 * theta);
  return Mat3::Identity() + a * W + b * W * W;
}

RigidTransform exp_se3(const Twist& tau) {
  return {exp_so3(tau.phi), so3_left_jacobian(tau.phi) * tau.rho};
}

namespace {

Vec3 log_so3(const Mat3& R) {
  const double tr = R.trace();
  const double cos_theta = std::clamp(0.5 * (tr - 1.0), -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  if (theta < kSmallAngle) {
    // phi ~ vee(R - R^T)/2 to first order
    return 0.5 * Vec3(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  }
  if (M_PI - theta > 1e-6) {
    const double k = theta / (2.0 * std::sin(theta));
    return k * Vec3(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  }
  // Near pi the sine formula degenerates; extract the axis from R + I,
  // whose columns are all parallel to it. Take the largest diagonal.
  const Mat3 A = R + Mat3::Identity();
  int j = 0;
  A.diagonal().maxCoeff(&j);
  Vec3 axis = A.col(j).normalized();
  // Fix the sign so that exp reproduces R (off-diagonal antisymmetric part).
  Vec3 w = Vec3(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  if (axis.dot(w) < 0) axis = -axis;
  return theta * axis;
}

}  // namespace

Twist log_se3(const RigidTransform& T) {
  if (!T.isValid(1e-6)) {
    throw std::invalid_argument("log_se3: input is not a valid rigid transform");
  }
  const Vec3 phi = log_so3(T.R);
  const Mat3 V = so3_left_jacobian(phi);
  return {V.inverse() * T.t, phi};
}

Mat36 jac_point_left(const Vec3& p_c) {
  Mat36 J;
  J.leftCols<3>() = Mat3::Identity();
  J.rightCols<3>() = -hat3(p_c);
  return J;
}

Mat36 jac_point_right(const RigidTransform& T, const Vec3& p_m) {
  Mat36 J;
  J.leftCols<3>() = T.R;
  J.rightCols<3>() = -T.R * hat3(p_m);
  return J;
}

std::array<Mat3, 3> jac_rot_left(const Mat3& R) {
  std::array<Mat3, 3> d;
  for (int j = 0; j < 3; ++j) {
    d[j] = hat3(Vec3::Unit(j)) * R;
  }
  return d;
}

std::array<Mat3, 3> jac_rot_right(const Mat3& R) {
  std::array<Mat3, 3> d;
  for (int j = 0; j < 3; ++j) {
    d[j] = R * hat3(Vec3::Unit(j));
  }
  return d;
}

}  // namespace gs2pose
