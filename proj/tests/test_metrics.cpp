#include <doctest.h>

#include <random>

#include "gs2pose/metrics.hpp"
#include "test_utils.hpp"

using namespace gs2pose;
using namespace gs2pose::testutil;

namespace {

PointCloud random_cloud(std::mt19937_64& rng, int n, double scale = 0.1) {
  PointCloud c;
  c.frame_tag = FrameTag::Object;
  for (int i = 0; i < n; ++i) c.points.push_back(random_vec3(rng, scale));
  return c;
}

}  // namespace

TEST_CASE("add matches the brute-force mean distance") {
  std::mt19937_64 rng(70);
  const PointCloud cloud = random_cloud(rng, 200);
  const RigidTransform T_gt = random_transform(rng, 0.5);
  const RigidTransform T_est = random_transform(rng, 0.5);

  double want = 0.0;
  for (const Vec3& p : cloud.points) want += (T_gt * p - T_est * p).norm();
  want /= cloud.size();
  CHECK(add(cloud, T_gt, T_est) == doctest::Approx(want).epsilon(1e-12));

  // identical poses -> zero
  CHECK(add(cloud, T_gt, T_gt) == 0.0);
  // pure translation offset -> exactly the offset norm
  RigidTransform shifted = T_gt;
  shifted.t += Vec3(0.01, -0.02, 0.005);
  CHECK(add(cloud, T_gt, shifted) ==
        doctest::Approx(Vec3(0.01, -0.02, 0.005).norm()).epsilon(1e-12));

  CHECK_THROWS(add(PointCloud{}, T_gt, T_est));
}

TEST_CASE("add_s matches brute force and lower-bounds add") {
  std::mt19937_64 rng(71);
  const PointCloud cloud = random_cloud(rng, 150);
  const RigidTransform T_gt = random_transform(rng, 0.5);
  const RigidTransform T_est = random_transform(rng, 0.5);

  double want = 0.0;
  for (const Vec3& p : cloud.points) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& q : cloud.points)
      best = std::min(best, (T_gt * p - T_est * q).norm());
    want += best;
  }
  want /= cloud.size();
  CHECK(add_s(cloud, T_gt, T_est) == doctest::Approx(want).epsilon(1e-10));
  CHECK(add_s(cloud, T_gt, T_est) <= add(cloud, T_gt, T_est) + 1e-12);
}

TEST_CASE("add_s forgives symmetry that add penalizes") {
  // a ring of points is invariant under rotation about its axis
  PointCloud ring;
  ring.frame_tag = FrameTag::Object;
  const int n = 360;
  for (int i = 0; i < n; ++i) {
    const double a = 2.0 * M_PI * i / n;
    ring.points.push_back(Vec3(0.1 * std::cos(a), 0.1 * std::sin(a), 0.0));
  }
  const RigidTransform T_gt = RigidTransform::identity();
  // rotate by exactly one sample step about the symmetry axis
  const RigidTransform T_est =
      exp_se3({Vec3::Zero(), Vec3(0, 0, 2.0 * M_PI / n)});
  CHECK(add_s(ring, T_gt, T_est) < 1e-9);
  CHECK(add(ring, T_gt, T_est) > 1e-4);
}

TEST_CASE("pose_errors geodesic angle and translation") {
  std::mt19937_64 rng(72);
  for (double deg : {0.0, 1.0, 10.0, 90.0, 179.0}) {
    const Vec3 axis = random_unit(rng);
    const RigidTransform T_gt = random_transform(rng, 0.3);
    const RigidTransform T_est =
        T_gt * exp_se3({Vec3::Zero(), deg * M_PI / 180.0 * axis});
    const PoseError e = pose_errors(T_gt, T_est);
    CHECK(e.rotation_deg == doctest::Approx(deg).epsilon(1e-9));
  }

  const RigidTransform T_gt = random_transform(rng, 0.3);
  RigidTransform T_est = T_gt;
  T_est.t += Vec3(0.003, 0.004, 0.0);
  const PoseError e = pose_errors(T_gt, T_est);
  CHECK(e.translation_m == doctest::Approx(0.005).epsilon(1e-12));
  CHECK(e.rotation_deg == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("pose_errors with a cloud also fills add fields") {
  std::mt19937_64 rng(73);
  const PointCloud cloud = random_cloud(rng, 100);
  const RigidTransform T_gt = random_transform(rng, 0.3);
  const RigidTransform T_est = random_transform(rng, 0.3);
  const PoseError e = pose_errors(cloud, T_gt, T_est);
  CHECK(e.add == doctest::Approx(add(cloud, T_gt, T_est)).epsilon(1e-12));
  CHECK(e.add_s == doctest::Approx(add_s(cloud, T_gt, T_est)).epsilon(1e-12));
  CHECK(e.rotation_deg == pose_errors(T_gt, T_est).rotation_deg);
}

TEST_CASE("success_report rates and strict thresholds") {
  const double diameter = 0.2;
  const double gate = 0.1 * diameter;  // same expression as the implementation
  std::vector<PoseError> errors;
  errors.push_back({1.0, 0.005, 0.001, 0.001});   // all good
  errors.push_back({10.0, 0.005, 0.001, 0.001});  // rotation fails
  errors.push_back({1.0, 0.02, 0.001, 0.001});    // translation fails
  errors.push_back({1.0, 0.005, 0.05, 0.001});    // add fails, add_s good
  // exactly at every threshold: strict comparison fails all
  errors.push_back({5.0, 0.01, gate, gate});

  const SuccessReport r = success_report(errors, diameter);
  CHECK(r.count == 5);
  CHECK(r.add_rate == doctest::Approx(3.0 / 5.0));
  CHECK(r.add_s_rate == doctest::Approx(4.0 / 5.0));
  CHECK(r.rot_rate == doctest::Approx(3.0 / 5.0));
  CHECK(r.rot_trans_rate == doctest::Approx(2.0 / 5.0));

  // histogram: 1-degree bins 0..180
  REQUIRE(r.angle_histogram.size() == 181);
  CHECK(r.angle_histogram[1] == 3);   // the three 1.0-degree entries
  CHECK(r.angle_histogram[5] == 1);
  CHECK(r.angle_histogram[10] == 1);
}
