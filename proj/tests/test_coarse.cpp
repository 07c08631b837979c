#include <doctest.h>

#include <random>

#include "gs2pose/coarse.hpp"
#include "gs2pose/metrics.hpp"
#include "gs2pose/render.hpp"
#include "test_utils.hpp"

using namespace gs2pose;
using namespace gs2pose::testutil;

namespace {

struct PnpScene {
  std::vector<Correspondence2D3D> corrs;
  CameraIntrinsics K;
  RigidTransform T_gt;
};

PnpScene pnp_scene(uint64_t seed, int n, bool planar = false) {
  PnpScene s;
  s.K = test_camera(256);
  std::mt19937_64 rng(seed);
  s.T_gt = RigidTransform{exp_so3(0.4 * random_unit(rng)),
                          Vec3(0.01, -0.02, 0.45)};
  std::uniform_real_distribution<double> u(-0.08, 0.08);
  for (int i = 0; i < n; ++i) {
    Vec3 p(u(rng), u(rng), planar ? 0.0 : u(rng));
    s.corrs.push_back({s.K.project(s.T_gt * p), p});
  }
  return s;
}

}  // namespace

TEST_CASE("nocs decode inverts the aabb encoding") {
  const CameraIntrinsics K = test_camera(64);
  Aabb box;
  box.min = Vec3(-0.1, -0.05, -0.08);
  box.max = Vec3(0.1, 0.15, 0.02);

  std::mt19937_64 rng(80);
  std::uniform_real_distribution<double> u01(0.1, 0.9);
  Frame nocs = Frame::zeros(64, 64);
  std::vector<Vec3> truth(static_cast<std::size_t>(64) * 64, Vec3::Zero());
  int valid = 0;
  for (int v = 10; v < 30; ++v) {
    for (int uu = 10; uu < 30; ++uu) {
      const std::size_t i = static_cast<std::size_t>(v) * 64 + uu;
      const Vec3 code(u01(rng), u01(rng), u01(rng));
      for (int ch = 0; ch < 3; ++ch) nocs.rgb[3 * i + ch] = code[ch];
      nocs.mask[i] = 1;
      truth[i] = box.min + code.cwiseProduct(box.extent());
      ++valid;
    }
  }
  // a few masked-but-dark pixels that the brightness gate must drop
  for (int uu = 40; uu < 46; ++uu) {
    const std::size_t i = static_cast<std::size_t>(40) * 64 + uu;
    for (int ch = 0; ch < 3; ++ch) nocs.rgb[3 * i + ch] = 0.02;
    nocs.mask[i] = 1;
  }

  const auto corrs = nocs_to_correspondences(nocs, box, 0.05);
  CHECK(static_cast<int>(corrs.size()) == valid);
  for (const auto& c : corrs) {
    const std::size_t i =
        static_cast<std::size_t>(c.pixel.y()) * 64 + static_cast<std::size_t>(c.pixel.x());
    CHECK((c.point_m - truth[i]).cwiseAbs().maxCoeff() < 1e-12);
  }

  // too few bright pixels -> throws
  Frame sparse = Frame::zeros(64, 64);
  for (int uu = 0; uu < 5; ++uu) {
    const std::size_t i = uu;
    for (int ch = 0; ch < 3; ++ch) sparse.rgb[3 * i + ch] = 0.5;
    sparse.mask[i] = 1;
  }
  CHECK_THROWS(nocs_to_correspondences(sparse, box, 0.05));
}

TEST_CASE("pnp recovers an exact pose") {
  const PnpScene s = pnp_scene(81, 60);
  const PnpResult res = pnp_ransac(s.corrs, s.K);
  const PoseError e = pose_errors(s.T_gt, res.pose);
  CHECK(e.rotation_deg < 0.01);
  CHECK(e.translation_m < 1e-4);
  CHECK(res.rms_px < 0.01);
  CHECK(res.inliers.size() == s.corrs.size());
}

TEST_CASE("pnp handles planar point sets") {
  const PnpScene s = pnp_scene(82, 60, /*planar=*/true);
  const PnpResult res = pnp_ransac(s.corrs, s.K);
  const PoseError e = pose_errors(s.T_gt, res.pose);
  CHECK(e.rotation_deg < 0.1);
  CHECK(e.translation_m < 1e-3);
}

TEST_CASE("pnp tolerates pixel noise") {
  PnpScene s = pnp_scene(83, 120);
  std::mt19937_64 rng(84);
  std::normal_distribution<double> noise(0.0, 0.5);
  for (auto& c : s.corrs) c.pixel += Vec2(noise(rng), noise(rng));
  const PnpResult res = pnp_ransac(s.corrs, s.K);
  const PoseError e = pose_errors(s.T_gt, res.pose);
  CHECK(e.rotation_deg < 2.0);
  CHECK(e.translation_m < 0.01);
}

TEST_CASE("pnp rejects gross outliers") {
  PnpScene s = pnp_scene(85, 100);
  std::mt19937_64 rng(86);
  std::uniform_real_distribution<double> px(0.0, 255.0);
  // corrupt 30% of the pixels completely
  for (int i = 0; i < 30; ++i) s.corrs[i * 3].pixel = Vec2(px(rng), px(rng));

  const PnpResult res = pnp_ransac(s.corrs, s.K);
  const PoseError e = pose_errors(s.T_gt, res.pose);
  CHECK(e.rotation_deg < 0.5);
  CHECK(e.translation_m < 1e-3);
  // the corrupted correspondences must not be counted as inliers
  for (int idx : res.inliers) {
    const auto& c = s.corrs[idx];
    const double err = (s.K.project(res.pose * c.point_m) - c.pixel).norm();
    CHECK(err < 2.0);
  }
}

TEST_CASE("pnp is deterministic for a fixed seed") {
  PnpScene s = pnp_scene(87, 80);
  std::mt19937_64 rng(88);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (auto& c : s.corrs) c.pixel += Vec2(noise(rng), noise(rng));

  const PnpResult a = pnp_ransac(s.corrs, s.K);
  const PnpResult b = pnp_ransac(s.corrs, s.K);
  CHECK((a.pose.matrix() - b.pose.matrix()).isZero(0.0));
  CHECK(a.inliers == b.inliers);
  CHECK(a.rms_px == b.rms_px);
}

TEST_CASE("pnp throws when consensus is impossible") {
  std::mt19937_64 rng(89);
  std::uniform_real_distribution<double> px(0.0, 255.0);
  std::vector<Correspondence2D3D> corrs;
  for (int i = 0; i < 40; ++i)
    corrs.push_back({Vec2(px(rng), px(rng)), random_vec3(rng, 0.1)});
  CHECK_THROWS(pnp_ransac(corrs, test_camera(256)));

  // fewer than 4 points can't even seed a hypothesis
  corrs.resize(3);
  CHECK_THROWS(pnp_ransac(corrs, test_camera(256)));
}

TEST_CASE("coarse_estimate recovers the pose from a rendered nocs image") {
  SynthSpec spec;
  spec.shape = "blob";
  spec.count = 1500;
  spec.seed = 90;
  const GaussianModel model = synth_scene(spec);
  const CameraIntrinsics K = test_camera(192);
  std::mt19937_64 rng(91);
  const RigidTransform T_gt{exp_so3(0.6 * random_unit(rng)), Vec3(0, 0.01, 0.4)};

  const Frame nocs = rasterize(model, T_gt, K, RenderMode::Nocs);
  const RigidTransform est = coarse_estimate(nocs, model.bounds(), K);
  // alpha compositing blends NOCS colors near edges, so the coarse pose is
  // only roughly right; the downstream stages are built to absorb this.
  const PoseError e = pose_errors(T_gt, est);
  CHECK(e.rotation_deg < 15.0);
  CHECK(e.translation_m < 0.1);
}
