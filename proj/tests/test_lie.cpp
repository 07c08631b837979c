#include <doctest.h>

#include <random>

#include "gs2pose/lie.hpp"
#include "test_utils.hpp"

using namespace gs2pose;
using namespace gs2pose::testutil;

namespace {

// Central finite differences of f: R^6 -> R^3 at tau = 0.
template <typename F>
Mat36 fd_jacobian6(F&& f, double step = 1e-5) {
  Mat36 J;
  for (int k = 0; k < 6; ++k) {
    Vec6 d = Vec6::Zero();
    d(k) = step;
    const Vec3 hi = f(Twist(d));
    d(k) = -step;
    const Vec3 lo = f(Twist(d));
    J.col(k) = (hi - lo) / (2.0 * step);
  }
  return J;
}

double rel_err(const Eigen::MatrixXd& got, const Eigen::MatrixXd& want) {
  const double denom = std::max(want.cwiseAbs().maxCoeff(), 1e-12);
  return (got - want).cwiseAbs().maxCoeff() / denom;
}

}  // namespace

TEST_CASE("hat3 basics") {
  CHECK(hat3(Vec3::Zero()).isZero(0.0));

  Mat3 expect;
  expect << 0, -3, 2, 3, 0, -1, -2, 1, 0;
  CHECK((hat3(Vec3(1, 2, 3)) - expect).cwiseAbs().maxCoeff() == 0.0);

  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const Vec3 v = random_vec3(rng, 10.0);
    const Vec3 w = random_vec3(rng, 10.0);
    CHECK((hat3(v) * w - v.cross(w)).norm() < 1e-12);
    CHECK((hat3(v) * v).norm() < 1e-12);
    CHECK((hat3(v) + hat3(v).transpose()).isZero(0.0));
  }
}

TEST_CASE("exp_se3 closed forms") {
  const RigidTransform I = exp_se3(Twist{});
  CHECK(I.R.isIdentity(0.0));
  CHECK(I.t.isZero(0.0));

  // 90 degree z-rotation
  const RigidTransform T = exp_se3({Vec3::Zero(), Vec3(0, 0, M_PI / 2)});
  Mat3 expect;
  expect << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  CHECK((T.R - expect).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(T.t.isZero(0.0));
}

TEST_CASE("log_se3 basics") {
  CHECK(log_se3(RigidTransform::identity()).vec().isZero(0.0));

  const Twist tw = log_se3({Mat3::Identity(), Vec3(1, 0, 0)});
  CHECK((tw.rho - Vec3(1, 0, 0)).norm() == 0.0);
  CHECK(tw.phi.isZero(0.0));

  CHECK_THROWS(log_se3({2.0 * Mat3::Identity(), Vec3::Zero()}));
}

TEST_CASE("exp/log roundtrip over 1000 random twists") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const Twist tau = random_twist(rng, 2.0, 3.0);
    const Twist back = log_se3(exp_se3(tau));
    CHECK((back.vec() - tau.vec()).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("log near angle pi") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const Vec3 axis = random_unit(rng);
    for (double angle : {M_PI - 1e-9, M_PI - 1e-12}) {
      const RigidTransform T = exp_se3({Vec3(0.1, -0.2, 0.3), angle * axis});
      const RigidTransform back = exp_se3(log_se3(T));
      CHECK((back.R - T.R).cwiseAbs().maxCoeff() < 1e-6);
      CHECK((back.t - T.t).norm() < 1e-6);
    }
  }
}

TEST_CASE("jac_point_left closed form and FD oracle") {
  Mat36 J = jac_point_left(Vec3(1, 2, 3));
  CHECK(J.leftCols<3>().isIdentity(0.0));
  CHECK((J.rightCols<3>() + hat3(Vec3(1, 2, 3))).isZero(0.0));
  CHECK(jac_point_left(Vec3::Zero()).rightCols<3>().isZero(0.0));

  std::mt19937_64 rng(4);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 p = random_vec3(rng, 2.0);
    const Mat36 fd =
        fd_jacobian6([&](const Twist& t) { return exp_se3(t) * p; });
    CHECK(rel_err(jac_point_left(p), fd) < 1e-6);
  }
}

TEST_CASE("jac_point_right closed form and FD oracle") {
  std::mt19937_64 rng(5);

  // right equals left at the identity
  const Vec3 p(1, 2, 3);
  CHECK(rel_err(jac_point_right(RigidTransform::identity(), p),
                jac_point_left(p)) == 0.0);

  for (int i = 0; i < 1000; ++i) {
    const RigidTransform T = random_transform(rng);
    const Vec3 pm = random_vec3(rng, 2.0);
    const Mat36 fd =
        fd_jacobian6([&](const Twist& t) { return T * (exp_se3(t) * pm); });
    CHECK(rel_err(jac_point_right(T, pm), fd) < 1e-6);
  }

  // zero point: rotation block vanishes
  const RigidTransform T = random_transform(rng);
  const Mat36 J = jac_point_right(T, Vec3::Zero());
  CHECK((J.leftCols<3>() - T.R).isZero(0.0));
  CHECK(J.rightCols<3>().isZero(0.0));
}

TEST_CASE("jac_rot_left FD oracle") {
  // at identity: column j of dR/dphi_j structure matches -hat3 columns
  const auto dI = jac_rot_left(Mat3::Identity());
  for (int j = 0; j < 3; ++j) {
    for (int c = 0; c < 3; ++c) {
      const Vec3 expect = -hat3(Vec3(Mat3::Identity().col(c))).col(j);
      CHECK((dI[j].col(c) - expect).norm() < 1e-15);
    }
  }

  std::mt19937_64 rng(6);
  const double step = 1e-5;
  for (int i = 0; i < 1000; ++i) {
    const Mat3 R = random_transform(rng).R;
    const auto d = jac_rot_left(R);
    for (int j = 0; j < 3; ++j) {
      const Mat3 fd = (exp_so3(step * Vec3::Unit(j)) * R -
                       exp_so3(-step * Vec3::Unit(j)) * R) /
                      (2.0 * step);
      CHECK(rel_err(d[j], fd) < 1e-6);
    }
  }

  // first-order column change under phi = (0,0,delta)
  const Mat3 R = random_transform(rng).R;
  const double delta = 1e-7;
  const Mat3 Rp = exp_so3(Vec3(0, 0, delta)) * R;
  for (int c = 0; c < 3; ++c) {
    const Vec3 expect = delta * Vec3::UnitZ().cross(Vec3(R.col(c)));
    CHECK((Rp.col(c) - R.col(c) - expect).norm() < 1e-12);
  }
}

TEST_CASE("jac_rot_right FD oracle") {
  const auto l = jac_rot_left(Mat3::Identity());
  const auto r = jac_rot_right(Mat3::Identity());
  for (int j = 0; j < 3; ++j) CHECK(rel_err(r[j], l[j]) == 0.0);

  std::mt19937_64 rng(7);
  const double step = 1e-5;
  for (int i = 0; i < 1000; ++i) {
    const Mat3 R = random_transform(rng).R;
    const auto d = jac_rot_right(R);
    for (int j = 0; j < 3; ++j) {
      const Mat3 fd = (R * exp_so3(step * Vec3::Unit(j)) -
                       R * exp_so3(-step * Vec3::Unit(j))) /
                      (2.0 * step);
      CHECK(rel_err(d[j], fd) < 1e-6);
    }
  }

  // zero contraction
  const Mat3 R = random_transform(rng).R;
  const auto d = jac_rot_right(R);
  Mat3 change = Mat3::Zero();
  for (int j = 0; j < 3; ++j) change += 0.0 * d[j];
  CHECK(change.isZero(0.0));
}

TEST_CASE("left perturbation preserves point norms for pure rotation") {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 200; ++i) {
    const Twist tau{Vec3::Zero(), random_twist(rng).phi};
    const Vec3 p = random_vec3(rng, 3.0);
    CHECK(std::abs((exp_se3(tau) * p).norm() - p.norm()) < 1e-12);
  }
}

TEST_CASE("right perturbation leaves stored object points unchanged") {
  std::mt19937_64 rng(9);
  const Vec3 p_m = random_vec3(rng);
  const std::vector<Vec3> stored{p_m};
  const RigidTransform T = random_transform(rng);
  const RigidTransform T2 = T * exp_se3(random_twist(rng));
  // the stored object-frame coordinates never move; only the composed map does
  CHECK((stored[0] - p_m).norm() == 0.0);
  CHECK((T2 * p_m - T * p_m).norm() > 0.0);
}

TEST_CASE("pose json conventions") {
  // 4x4 row-major roundtrip through the matrix form
  std::mt19937_64 rng(10);
  const RigidTransform T = random_transform(rng);
  const RigidTransform back = RigidTransform::fromMatrix(T.matrix());
  CHECK((back.R - T.R).isZero(0.0));
  CHECK((back.t - T.t).isZero(0.0));
}
