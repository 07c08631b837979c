#include <doctest.h>

#include <random>

#include "gs2pose/render.hpp"
#include "test_utils.hpp"

using namespace gs2pose;
using namespace gs2pose::testutil;

namespace {

constexpr double kDcBasis = 0.28209479177387814;

GaussianModel dc_model(const std::vector<Vec3>& mus,
                       const std::vector<Vec3>& colors, double scale,
                       double opacity) {
  GaussianModel m;
  for (std::size_t i = 0; i < mus.size(); ++i) {
    m.positions.push_back(mus[i]);
    m.rotations.push_back(Eigen::Quaterniond::Identity());
    m.scales.push_back(Vec3::Constant(scale));
    m.opacities.push_back(opacity);
    Eigen::Matrix<double, 3, kShCoeffs> sh;
    sh.setZero();
    for (int ch = 0; ch < 3; ++ch) sh(ch, 0) = color_to_dc(colors[i][ch]);
    m.sh.push_back(sh);
  }
  return m;
}

bool frames_identical(const Frame& a, const Frame& b) {
  return a.rgb == b.rgb && a.depth == b.depth && a.mask == b.mask;
}

// Direct windowed-sum SSIM, the independent check for the filtered version.
double ssim_naive(const std::vector<double>& a, const std::vector<double>& b,
                  int width, int height) {
  std::array<double, 11> k{};
  double ksum = 0.0;
  for (int i = 0; i < 11; ++i) {
    const double x = i - 5;
    k[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
    ksum += k[i];
  }
  for (double& v : k) v /= ksum;
  const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  double mean = 0.0;
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      double mu1 = 0, mu2 = 0, e_aa = 0, e_bb = 0, e_ab = 0;
      for (int dv = -5; dv <= 5; ++dv) {
        for (int du = -5; du <= 5; ++du) {
          const int uu = u + du, vv = v + dv;
          if (uu < 0 || uu >= width || vv < 0 || vv >= height) continue;
          const double w = k[du + 5] * k[dv + 5];
          const double av = a[static_cast<std::size_t>(vv) * width + uu];
          const double bv = b[static_cast<std::size_t>(vv) * width + uu];
          mu1 += w * av;
          mu2 += w * bv;
          e_aa += w * av * av;
          e_bb += w * bv * bv;
          e_ab += w * av * bv;
        }
      }
      const double s1 = e_aa - mu1 * mu1;
      const double s2 = e_bb - mu2 * mu2;
      const double s12 = e_ab - mu1 * mu2;
      mean += (2 * mu1 * mu2 + C1) * (2 * s12 + C2) /
              ((mu1 * mu1 + mu2 * mu2 + C1) * (s1 + s2 + C2));
    }
  }
  return mean / (static_cast<double>(width) * height);
}

// Test scene for gradient checks: asymmetric textured blob in full view.
struct GradScene {
  GaussianModel model;
  CameraIntrinsics K;
  RigidTransform T;
  Frame obs;
};

GradScene grad_scene(uint64_t seed, bool textureless = false) {
  GradScene s;
  SynthSpec spec;
  spec.shape = "blob";
  spec.count = 80;
  spec.seed = seed;
  spec.scale_frac = 0.08;  // chunky splats so the image is dense
  spec.textureless = textureless;
  s.model = synth_scene(spec);
  s.K = test_camera(48);
  s.T = object_pose(0.4);
  // observation from a nearby pose so gradients are informative
  std::mt19937_64 rng(seed + 1);
  const Twist d{0.004 * random_unit(rng), 0.05 * random_unit(rng)};
  s.obs = rasterize(s.model, exp_se3(d) * s.T, s.K);
  return s;
}

}  // namespace

TEST_CASE("project_gaussian closed-form oracle") {
  const CameraIntrinsics K = test_camera(64);
  std::mt19937_64 rng(30);
  for (int i = 0; i < 100; ++i) {
    const RigidTransform T = {exp_so3(0.3 * random_unit(rng)),
                              Vec3(0.02, -0.01, 0.5)};
    const Vec3 mu = random_vec3(rng, 0.05);
    const Mat3 sigma_m = covariance(random_quat(rng), Vec3(0.01, 0.02, 0.03));
    const auto s = project_gaussian(T, K, mu, sigma_m);
    REQUIRE(s.has_value());

    const Vec3 pc = T * mu;
    CHECK((s->p - K.project(pc)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(s->z == doctest::Approx(pc.z()).epsilon(1e-14));

    Mat23 J;
    const double z = pc.z();
    J << K.fx / z, 0, -K.fx * pc.x() / (z * z),
         0, K.fy / z, -K.fy * pc.y() / (z * z);
    const Mat3 W = T.R * sigma_m * T.R.transpose();
    const Mat2 want = J * W * J.transpose() + 0.3 * Mat2::Identity();
    CHECK((s->sigma - want).cwiseAbs().maxCoeff() < 1e-9 * want.norm());
  }

  // behind the camera: culled, not an error
  const RigidTransform behind = {Mat3::Identity(), Vec3(0, 0, -0.5)};
  CHECK(!project_gaussian(behind, K, Vec3::Zero(), 1e-6 * Mat3::Identity())
             .has_value());
}

TEST_CASE("single splat compositing at the center pixel") {
  const CameraIntrinsics K = test_camera(48);
  const Vec3 color(0.3, 0.5, 0.7);
  const double opacity = 0.8;
  const double z = 0.4;
  const GaussianModel m =
      dc_model({Vec3::Zero()}, {color}, 0.01, opacity);
  const Frame f = rasterize(m, object_pose(z), K);

  const int cu = 24, cv = 24;  // projection lands exactly on this pixel
  const std::size_t idx = static_cast<std::size_t>(cv) * K.width + cu;
  // g = 1 at the center, so alpha = opacity exactly
  for (int ch = 0; ch < 3; ++ch)
    CHECK(f.px(cu, cv)[ch] == doctest::Approx(opacity * color[ch]).epsilon(1e-12));
  CHECK(f.mask[idx] == 1);
  CHECK(f.depth[idx] == doctest::Approx(z).epsilon(1e-12));
}

TEST_CASE("two-splat compositing closed form") {
  const CameraIntrinsics K = test_camera(48);
  const Vec3 c1(0.9, 0.1, 0.2), c2(0.1, 0.8, 0.6);
  const double o1 = 0.6, o2 = 0.7;
  const double z0 = 0.4;
  // both on the optical axis; the nearer one must composite first
  GaussianModel m = dc_model({Vec3(0, 0, -0.05), Vec3(0, 0, 0.05)}, {c1, c2},
                             0.005, o1);
  m.opacities[1] = o2;
  const Frame f = rasterize(m, object_pose(z0), K);

  const int cu = 24, cv = 24;
  const std::size_t idx = static_cast<std::size_t>(cv) * K.width + cu;
  const double w1 = o1, w2 = (1.0 - o1) * o2;
  for (int ch = 0; ch < 3; ++ch) {
    CHECK(f.px(cu, cv)[ch] ==
          doctest::Approx(w1 * c1[ch] + w2 * c2[ch]).epsilon(1e-12));
  }
  const double acc = w1 + w2;
  CHECK(f.mask[idx] == 1);
  CHECK(f.depth[idx] ==
        doctest::Approx((w1 * (z0 - 0.05) + w2 * (z0 + 0.05)) / acc)
            .epsilon(1e-12));
}

TEST_CASE("coverage threshold gates depth and mask") {
  const CameraIntrinsics K = test_camera(48);
  const GaussianModel m =
      dc_model({Vec3::Zero()}, {Vec3(0.5, 0.5, 0.5)}, 0.01, 0.3);
  const Frame f = rasterize(m, object_pose(0.4), K);
  const std::size_t idx = static_cast<std::size_t>(24) * K.width + 24;
  CHECK(f.mask[idx] == 0);
  CHECK(f.depth[idx] == 0.0);
  CHECK(f.px(24, 24)[0] == doctest::Approx(0.15).epsilon(1e-12));
}

TEST_CASE("opacity clamp caps alpha at 0.999") {
  const CameraIntrinsics K = test_camera(48);
  const GaussianModel m =
      dc_model({Vec3::Zero()}, {Vec3(1.0, 1.0, 1.0)}, 0.01, 1.0);
  const Frame f = rasterize(m, object_pose(0.4), K);
  CHECK(f.px(24, 24)[0] == doctest::Approx(0.999).epsilon(1e-12));
}

TEST_CASE("parallel, serial-path and reference rasterizers are bit-identical") {
  SynthSpec spec;
  spec.shape = "blob";
  spec.count = 300;
  spec.seed = 11;
  const GaussianModel m = synth_scene(spec);
  const CameraIntrinsics K = test_camera(96);
  const RigidTransform T = object_pose(0.35);

  for (RenderMode mode :
       {RenderMode::All, RenderMode::Color, RenderMode::Depth, RenderMode::Nocs}) {
    RasterOptions opts;
    opts.parallel = true;
    const Frame par = rasterize(m, T, K, mode, opts);
    opts.parallel = false;
    const Frame ser = rasterize(m, T, K, mode, opts);
    const Frame ref = rasterize_reference(m, T, K, mode);
    CHECK(frames_identical(par, ser));
    CHECK(frames_identical(par, ref));
  }
}

TEST_CASE("nocs mode equals rendering the nocs-encoded model") {
  SynthSpec spec;
  spec.shape = "sphere";
  spec.count = 200;
  spec.seed = 12;
  const GaussianModel m = synth_scene(spec);
  const CameraIntrinsics K = test_camera(64);
  const RigidTransform T = object_pose(0.35);
  const Frame a = rasterize(m, T, K, RenderMode::Nocs);
  const Frame b = rasterize(make_nocs_model(m), T, K, RenderMode::All);
  CHECK(frames_identical(a, b));
}

TEST_CASE("pose equivariance for view-independent colors") {
  // Baking the pose into the model must give the same image as posing it.
  SynthSpec spec;
  spec.shape = "blob";
  spec.count = 150;
  spec.seed = 13;
  spec.textureless = true;  // DC-only colors, no view dependence
  const GaussianModel m = synth_scene(spec);
  const CameraIntrinsics K = test_camera(64);
  std::mt19937_64 rng(14);
  const RigidTransform T =
      RigidTransform{exp_so3(0.7 * random_unit(rng)), Vec3(0.01, -0.02, 0.4)};

  GaussianModel baked = m;
  for (std::size_t i = 0; i < m.size(); ++i) {
    baked.positions[i] = T * m.positions[i];
    baked.rotations[i] =
        (Eigen::Quaterniond(T.R) * m.rotations[i]).normalized();
  }
  const Frame a = rasterize(m, T, K);
  const Frame b = rasterize(baked, RigidTransform::identity(), K);
  for (std::size_t i = 0; i < a.rgb.size(); ++i)
    CHECK(std::abs(a.rgb[i] - b.rgb[i]) < 1e-9);
  for (std::size_t i = 0; i < a.depth.size(); ++i)
    CHECK(std::abs(a.depth[i] - b.depth[i]) < 1e-9);
}

TEST_CASE("rasterize rejects empty models and all-culled scenes") {
  const CameraIntrinsics K = test_camera(48);
  CHECK_THROWS(rasterize(GaussianModel{}, object_pose(), K));

  const GaussianModel m =
      dc_model({Vec3::Zero()}, {Vec3(0.5, 0.5, 0.5)}, 0.01, 0.8);
  const RigidTransform behind{Mat3::Identity(), Vec3(0, 0, -1.0)};
  // all splats culled is a valid (empty) image, not an error
  const Frame f = rasterize(m, behind, K);
  CHECK(*std::max_element(f.mask.begin(), f.mask.end()) == 0);
  // but the gradient has nothing to work with
  const Frame obs = rasterize(m, object_pose(0.4), K);
  CHECK_THROWS(
      pose_gradient(m, behind, K, obs, LossWeights{}, PerturbSide::Left));
}

TEST_CASE("ssim agrees with the direct windowed reference") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int w = 20, h = 17;
  std::vector<double> a(static_cast<std::size_t>(w) * h), b(a.size());
  for (auto& v : a) v = u(rng);
  for (auto& v : b) v = u(rng);

  CHECK(ssim(a, a, w, h, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ssim(a, b, w, h, 1) == doctest::Approx(ssim_naive(a, b, w, h)).epsilon(1e-10));
  CHECK(ssim(a, b, w, h, 1) == doctest::Approx(ssim(b, a, w, h, 1)).epsilon(1e-12));

  // 3-channel interleaved = mean of per-channel values
  std::vector<double> a3(a.size() * 3), b3(a.size() * 3);
  std::vector<double> ach[3], bch[3];
  for (int ch = 0; ch < 3; ++ch) {
    ach[ch].resize(a.size());
    bch[ch].resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      ach[ch][i] = u(rng);
      bch[ch][i] = u(rng);
      a3[3 * i + ch] = ach[ch][i];
      b3[3 * i + ch] = bch[ch][i];
    }
  }
  double want = 0.0;
  for (int ch = 0; ch < 3; ++ch) want += ssim_naive(ach[ch], bch[ch], w, h);
  CHECK(ssim(a3, b3, w, h, 3) == doctest::Approx(want / 3.0).epsilon(1e-10));

  CHECK_THROWS(ssim(a, b, w + 1, h, 1));
}

TEST_CASE("loss value composition and masking") {
  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  const int w = 16, h = 16;
  Frame obs = Frame::zeros(w, h), pred = Frame::zeros(w, h);
  for (auto& v : obs.rgb) v = u(rng);
  for (auto& v : pred.rgb) v = u(rng);
  for (auto& v : obs.depth) v = u(rng);
  for (auto& v : pred.depth) v = u(rng);
  std::fill(obs.mask.begin(), obs.mask.end(), 1);
  std::fill(pred.mask.begin(), pred.mask.end(), 1);

  const double lambda = 0.8, beta = 0.1;
  const LossResult r = loss(obs, pred, lambda, beta);
  CHECK(r.value == doctest::Approx(lambda * r.l_image +
                                   (1 - lambda) * r.l_dssim + beta * r.l_depth)
                       .epsilon(1e-12));

  // independent L1 and depth terms over the full mask
  double l1 = 0.0, ld = 0.0;
  for (std::size_t i = 0; i < obs.npix(); ++i) {
    for (int ch = 0; ch < 3; ++ch)
      l1 += std::abs(pred.rgb[3 * i + ch] - obs.rgb[3 * i + ch]);
    ld += std::abs(pred.depth[i] - obs.depth[i]);
  }
  CHECK(r.l_image == doctest::Approx(l1 / (3.0 * obs.npix())).epsilon(1e-12));
  CHECK(r.l_depth == doctest::Approx(ld / obs.npix()).epsilon(1e-12));
  CHECK(r.l_dssim ==
        doctest::Approx((1.0 - ssim(obs.rgb, pred.rgb, w, h, 3)) / 2.0)
            .epsilon(1e-12));

  // identical frames: zero loss, zero gradient
  const LossResult z = loss(obs, obs, lambda, beta);
  CHECK(z.value == doctest::Approx(0.0).epsilon(1e-12));
  for (double g : z.d_rgb) CHECK(std::abs(g) < 1e-12);
  for (double g : z.d_depth) CHECK(std::abs(g) < 1e-12);

  // masked-out pixels carry no gradient and don't change the L1 term
  Frame masked_obs = obs;
  for (std::size_t i = 0; i < obs.npix(); i += 3) masked_obs.mask[i] = 0;
  const LossResult rm = loss(masked_obs, pred, lambda, beta);
  for (std::size_t i = 0; i < obs.npix(); i += 3) {
    CHECK(rm.d_rgb[3 * i] == 0.0);
    CHECK(rm.d_depth[i] == 0.0);
  }

  Frame small = Frame::zeros(w - 1, h);
  CHECK_THROWS(loss(obs, small, lambda, beta));
}

TEST_CASE("loss gradient matches finite differences") {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  const int w = 14, h = 12;
  Frame obs = Frame::zeros(w, h), pred = Frame::zeros(w, h);
  for (auto& v : obs.rgb) v = u(rng);
  for (auto& v : pred.rgb) v = u(rng);
  for (auto& v : obs.depth) v = u(rng);
  for (auto& v : pred.depth) v = u(rng);
  std::fill(obs.mask.begin(), obs.mask.end(), 1);
  std::fill(pred.mask.begin(), pred.mask.end(), 1);

  const double lambda = 0.8, beta = 0.1, step = 1e-6;
  const LossResult r = loss(obs, pred, lambda, beta);

  std::uniform_int_distribution<std::size_t> pick_rgb(0, pred.rgb.size() - 1);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t i = pick_rgb(rng);
    Frame p = pred;
    p.rgb[i] += step;
    const double hi = loss(obs, p, lambda, beta).value;
    p.rgb[i] -= 2 * step;
    const double lo = loss(obs, p, lambda, beta).value;
    const double fd = (hi - lo) / (2 * step);
    CHECK(std::abs(r.d_rgb[i] - fd) < 1e-4 * std::max(1.0, std::abs(fd)));
  }

  std::uniform_int_distribution<std::size_t> pick_d(0, pred.depth.size() - 1);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t i = pick_d(rng);
    Frame p = pred;
    p.depth[i] += step;
    const double hi = loss(obs, p, lambda, beta).value;
    p.depth[i] -= 2 * step;
    const double lo = loss(obs, p, lambda, beta).value;
    const double fd = (hi - lo) / (2 * step);
    CHECK(std::abs(r.d_depth[i] - fd) < 1e-4 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("pose gradient matches finite differences, left perturbation") {
  const GradScene s = grad_scene(40);
  const PoseGradient a = pose_gradient(s.model, s.T, s.K, s.obs, LossWeights{},
                                       PerturbSide::Left);
  // step small enough that no pixel's coverage flips across the threshold
  const PoseGradient fd = pose_gradient_fd(s.model, s.T, s.K, s.obs,
                                           LossWeights{}, PerturbSide::Left,
                                           1e-5);
  CHECK(a.loss_value == doctest::Approx(fd.loss_value).epsilon(1e-12));
  const double denom = fd.d_tau.cwiseAbs().maxCoeff();
  REQUIRE(denom > 0.0);
  CHECK((a.d_tau - fd.d_tau).cwiseAbs().maxCoeff() / denom < 1e-2);
}

TEST_CASE("pose gradient matches finite differences, right perturbation") {
  // seed picked so that no pixel sits exactly on the coverage threshold,
  // where the finite difference would pick up an O(1/step) jump term
  const GradScene s = grad_scene(43);
  const PoseGradient a = pose_gradient(s.model, s.T, s.K, s.obs, LossWeights{},
                                       PerturbSide::Right);
  const PoseGradient fd = pose_gradient_fd(s.model, s.T, s.K, s.obs,
                                           LossWeights{}, PerturbSide::Right,
                                           1e-5);
  const double denom = fd.d_tau.cwiseAbs().maxCoeff();
  REQUIRE(denom > 0.0);
  CHECK((a.d_tau - fd.d_tau).cwiseAbs().maxCoeff() / denom < 1e-2);
}

TEST_CASE("left and right pose gradients satisfy the adjoint relation") {
  // exp(tau_l) T = T exp(tau_r) with tau_l = Ad_T tau_r, so the two
  // analytic gradients must be related by Ad_T^T exactly.
  const GradScene s = grad_scene(42);
  const PoseGradient l = pose_gradient(s.model, s.T, s.K, s.obs, LossWeights{},
                                       PerturbSide::Left);
  const PoseGradient r = pose_gradient(s.model, s.T, s.K, s.obs, LossWeights{},
                                       PerturbSide::Right);
  Eigen::Matrix<double, 6, 6> Ad;
  Ad.setZero();
  Ad.topLeftCorner<3, 3>() = s.T.R;
  Ad.topRightCorner<3, 3>() = hat3(s.T.t) * s.T.R;
  Ad.bottomRightCorner<3, 3>() = s.T.R;
  const Vec6 want = Ad.transpose() * l.d_tau;
  CHECK((r.d_tau - want).cwiseAbs().maxCoeff() <
        1e-9 * want.cwiseAbs().maxCoeff());
}

TEST_CASE("pose gradient loss matches the forward render loss") {
  const GradScene s = grad_scene(43);
  const Frame pred = rasterize(s.model, s.T, s.K);
  const LossResult lr = loss(s.obs, pred, 0.8, 0.1);
  const PoseGradient g = pose_gradient(s.model, s.T, s.K, s.obs, LossWeights{},
                                       PerturbSide::Left);
  CHECK(g.loss_value == doctest::Approx(lr.value).epsilon(1e-12));
}

TEST_CASE("per-gaussian color gradients match finite differences") {
  GradScene s = grad_scene(44, /*textureless=*/true);
  const PoseGradient g =
      pose_gradient(s.model, s.T, s.K, s.obs, LossWeights{}, PerturbSide::Right,
                    /*want_color_grads=*/true);
  REQUIRE(g.d_color.size() == s.model.size());

  std::mt19937_64 rng(45);
  std::uniform_int_distribution<std::size_t> pick(0, s.model.size() - 1);
  const double step = 1e-4;
  int informative = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t i = pick(rng);
    const int ch = static_cast<int>(trial % 3);
    GaussianModel m = s.model;
    // nudging the DC coefficient moves the view color by step * basis
    m.sh[i](ch, 0) += step;
    const double hi = loss(s.obs, rasterize(m, s.T, s.K), 0.8, 0.1).value;
    m.sh[i](ch, 0) -= 2 * step;
    const double lo = loss(s.obs, rasterize(m, s.T, s.K), 0.8, 0.1).value;
    const double fd = (hi - lo) / (2 * step);
    const double analytic = g.d_color[i][ch] * kDcBasis;
    if (std::abs(fd) > 1e-8) ++informative;
    CHECK(std::abs(analytic - fd) < 1e-3 * std::max(1.0, std::abs(fd)));
  }
  CHECK(informative > 5);
}
