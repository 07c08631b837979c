#include "gs2pose/render.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "gs2pose/render_detail.hpp"

namespace gs2pose {

using detail::PreparedSplat;

namespace {

constexpr double kLowPass = 0.3;       // px^2 diagonal dilation
constexpr double kAlphaMin = 1e-4;     // contributions below this are skipped
constexpr double kAlphaMax = 0.999;
constexpr double kTransmittanceStop = 1e-4;
constexpr int kTile = 16;

Mat23 perspective_jacobian(const CameraIntrinsics& K, const Vec3& p) {
  const double z = p.z();
  Mat23 J;
  J << K.fx / z, 0, -K.fx * p.x() / (z * z),
       0, K.fy / z, -K.fy * p.y() / (z * z);
  return J;
}

}  // namespace

std::optional<Splat2D> project_gaussian(const RigidTransform& T,
                                        const CameraIntrinsics& K,
                                        const Vec3& mu_m, const Mat3& sigma_m,
                                        double z_near) {
  const Vec3 p_c = T * mu_m;
  if (p_c.z() <= z_near) return std::nullopt;
  const Mat23 J = perspective_jacobian(K, p_c);
  Splat2D s;
  s.p = K.project(p_c);
  const Mat3 W = T.R * sigma_m * T.R.transpose();
  s.sigma = J * W * J.transpose() + kLowPass * Mat2::Identity();
  s.z = p_c.z();
  return s;
}

namespace detail {

std::vector<PreparedSplat> prepare_splats(const GaussianModel& model,
                                          const RigidTransform& T,
                                          const CameraIntrinsics& K,
                                          const RasterOptions& opts) {
  const Vec3 cam_in_obj = -(T.R.transpose() * T.t);
  std::vector<PreparedSplat> out;
  out.reserve(model.size());
  for (std::size_t i = 0; i < model.size(); ++i) {
    const Vec3 p_c = T * model.positions[i];
    if (p_c.z() <= opts.z_near) continue;
    PreparedSplat s;
    s.gi = static_cast<int>(i);
    s.p_c = p_c;
    s.z = p_c.z();
    s.p = K.project(p_c);
    s.J = perspective_jacobian(K, p_c);
    s.sigma_m = covariance(model.rotations[i], model.scales[i]);
    s.W = T.R * s.sigma_m * T.R.transpose();
    const Mat2 sigma2 = s.J * s.W * s.J.transpose() + kLowPass * Mat2::Identity();
    const double det = sigma2.determinant();
    if (det <= 0 || !sigma2.allFinite()) continue;
    s.sigma = sigma2;
    s.inv_sigma = sigma2.inverse();
    s.opacity = model.opacities[i];

    Vec3 u = model.positions[i] - cam_in_obj;
    s.u_norm = u.norm();
    s.dir = s.u_norm > 1e-12 ? Vec3(u / s.u_norm) : Vec3::UnitZ();
    s.raw_color = model.sh[i] * sh_basis(s.dir) + Vec3::Constant(0.5);
    s.color = s.raw_color.cwiseMax(0.0).cwiseMin(1.0);

    // 3-sigma rectangular footprint, shared by every rasterization path
    const double lmax = 0.5 * (sigma2.trace() +
                               std::sqrt(std::max(0.0, sigma2.trace() * sigma2.trace() -
                                                           4.0 * det)));
    const double r = std::ceil(3.0 * std::sqrt(lmax));
    s.x0 = static_cast<int>(std::floor(s.p.x() - r));
    s.x1 = static_cast<int>(std::ceil(s.p.x() + r));
    s.y0 = static_cast<int>(std::floor(s.p.y() - r));
    s.y1 = static_cast<int>(std::ceil(s.p.y() + r));
    if (s.x1 < 0 || s.y1 < 0 || s.x0 >= K.width || s.y0 >= K.height) continue;
    s.x0 = std::max(s.x0, 0);
    s.y0 = std::max(s.y0, 0);
    s.x1 = std::min(s.x1, K.width - 1);
    s.y1 = std::min(s.y1, K.height - 1);
    out.push_back(s);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const PreparedSplat& a, const PreparedSplat& b) {
                     return a.z < b.z;
                   });
  return out;
}

}  // namespace detail

namespace {

struct Contribution {
  int si;         // index into the prepared-splat list
  double alpha;   // clamped
  double weight;  // alpha * transmittance
  bool alpha_clamped;
};

// Front-to-back compositing at one pixel over candidate splats. Candidates
// must already be in ascending-z order. Returns accumulated alpha.
template <typename CandidateRange>
double composite_pixel(double px, double py,
                       const std::vector<PreparedSplat>& splats,
                       const CandidateRange& candidates, Vec3* rgb,
                       double* depth_num,
                       std::vector<Contribution>* stack = nullptr) {
  double transmittance = 1.0;
  double acc_alpha = 0.0;
  *rgb = Vec3::Zero();
  *depth_num = 0.0;
  for (int si : candidates) {
    const PreparedSplat& s = splats[si];
    const int ui = static_cast<int>(px), vi = static_cast<int>(py);
    if (ui < s.x0 || ui > s.x1 || vi < s.y0 || vi > s.y1) continue;
    const Vec2 d(px - s.p.x(), py - s.p.y());
    const double q = d.dot(s.inv_sigma * d);
    const double g = std::exp(-0.5 * q);
    double alpha = s.opacity * g;
    const bool clamped = alpha > kAlphaMax;
    if (clamped) alpha = kAlphaMax;
    if (alpha < kAlphaMin) continue;
    const double w = alpha * transmittance;
    *rgb += w * s.color;
    *depth_num += w * s.z;
    acc_alpha += w;
    if (stack) stack->push_back({si, alpha, w, clamped});
    transmittance *= 1.0 - alpha;
    if (transmittance < kTransmittanceStop) break;
  }
  return acc_alpha;
}

void write_pixel(Frame& f, std::size_t idx, const Vec3& rgb, double depth,
                 bool covered, RenderMode mode) {
  const bool want_color = mode != RenderMode::Depth;
  const bool want_depth = mode == RenderMode::Depth || mode == RenderMode::All ||
                          mode == RenderMode::Nocs;
  if (want_color) {
    f.rgb[3 * idx + 0] = std::clamp(rgb.x(), 0.0, 1.0);
    f.rgb[3 * idx + 1] = std::clamp(rgb.y(), 0.0, 1.0);
    f.rgb[3 * idx + 2] = std::clamp(rgb.z(), 0.0, 1.0);
  }
  if (want_depth && covered) f.depth[idx] = depth;
  f.mask[idx] = covered ? 1 : 0;
}

// Tile lists in z order: splats are visited in sorted order and appended.
std::vector<std::vector<int>> bin_tiles(const std::vector<PreparedSplat>& splats,
                                        int width, int height, int& tiles_x) {
  tiles_x = (width + kTile - 1) / kTile;
  const int tiles_y = (height + kTile - 1) / kTile;
  std::vector<std::vector<int>> tiles(static_cast<std::size_t>(tiles_x) * tiles_y);
  for (std::size_t si = 0; si < splats.size(); ++si) {
    const PreparedSplat& s = splats[si];
    for (int ty = s.y0 / kTile; ty <= s.y1 / kTile; ++ty)
      for (int tx = s.x0 / kTile; tx <= s.x1 / kTile; ++tx)
        tiles[static_cast<std::size_t>(ty) * tiles_x + tx].push_back(
            static_cast<int>(si));
  }
  return tiles;
}

}  // namespace

Frame rasterize(const GaussianModel& model, const RigidTransform& T,
                const CameraIntrinsics& K, RenderMode mode,
                const RasterOptions& opts) {
  K.validate();
  if (model.empty()) throw std::invalid_argument("rasterize: empty model");
  if (mode == RenderMode::Nocs) {
    return rasterize(make_nocs_model(model), T, K, RenderMode::All, opts);
  }
  const auto splats = detail::prepare_splats(model, T, K, opts);
  Frame out = Frame::zeros(K.width, K.height);
  if (splats.empty()) return out;

  int tiles_x = 0;
  const auto tiles = bin_tiles(splats, K.width, K.height, tiles_x);

#pragma omp parallel for schedule(dynamic, 8) if (opts.parallel)
  for (int v = 0; v < K.height; ++v) {
    for (int u = 0; u < K.width; ++u) {
      const auto& cand =
          tiles[static_cast<std::size_t>(v / kTile) * tiles_x + u / kTile];
      Vec3 rgb;
      double depth_num;
      const double a = composite_pixel(u, v, splats, cand, &rgb, &depth_num);
      const bool covered = a >= opts.alpha_coverage;
      write_pixel(out, static_cast<std::size_t>(v) * K.width + u, rgb,
                  covered ? depth_num / a : 0.0, covered, mode);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Analytic pose gradient

namespace {

struct SplatGrads {
  Vec2 d_p = Vec2::Zero();
  Mat2 d_sigma = Mat2::Zero();
  Vec3 d_color = Vec3::Zero();
  double d_z = 0.0;
};

}  // namespace

PoseGradient pose_gradient(const GaussianModel& model, const RigidTransform& T,
                           const CameraIntrinsics& K, const Frame& obs,
                           const LossWeights& weights, PerturbSide side,
                           bool want_color_grads, const RasterOptions& opts) {
  K.validate();
  const auto splats = detail::prepare_splats(model, T, K, opts);
  if (splats.empty())
    throw std::runtime_error("pose_gradient: degenerate render, all splats culled");

  int tiles_x = 0;
  const auto tiles = bin_tiles(splats, K.width, K.height, tiles_x);

  // Forward pass
  Frame pred = Frame::zeros(K.width, K.height);
#pragma omp parallel for schedule(dynamic, 8) if (opts.parallel)
  for (int v = 0; v < K.height; ++v) {
    for (int u = 0; u < K.width; ++u) {
      const auto& cand =
          tiles[static_cast<std::size_t>(v / kTile) * tiles_x + u / kTile];
      Vec3 rgb;
      double depth_num;
      const double a = composite_pixel(u, v, splats, cand, &rgb, &depth_num);
      const bool covered = a >= opts.alpha_coverage;
      write_pixel(pred, static_cast<std::size_t>(v) * K.width + u, rgb,
                  covered ? depth_num / a : 0.0, covered, RenderMode::All);
    }
  }

  const LossResult lr = loss(obs, pred, weights.lambda, weights.beta);

  // Per-pixel backprop through the compositing, accumulated per splat.
  // Rows are processed in fixed chunks and partials merged in chunk order
  // so the result does not depend on the thread count.
  const int chunk_rows = kTile;
  const int nchunks = (K.height + chunk_rows - 1) / chunk_rows;
  std::vector<std::vector<SplatGrads>> partials(
      nchunks, std::vector<SplatGrads>(splats.size()));

#pragma omp parallel for schedule(dynamic) if (opts.parallel)
  for (int c = 0; c < nchunks; ++c) {
    auto& acc = partials[c];
    std::vector<Contribution> stack;
    for (int v = c * chunk_rows; v < std::min((c + 1) * chunk_rows, K.height);
         ++v) {
      for (int u = 0; u < K.width; ++u) {
        const std::size_t idx = static_cast<std::size_t>(v) * K.width + u;
        const Vec3 dC(lr.d_rgb[3 * idx], lr.d_rgb[3 * idx + 1],
                      lr.d_rgb[3 * idx + 2]);
        const double dDepth = lr.d_depth[idx];
        if (dC.isZero(0.0) && dDepth == 0.0) continue;

        const auto& cand =
            tiles[static_cast<std::size_t>(v / kTile) * tiles_x + u / kTile];
        stack.clear();
        Vec3 rgb;
        double depth_num;
        const double a = composite_pixel(u, v, splats, cand, &rgb, &depth_num,
                                         &stack);
        if (stack.empty()) continue;

        double dD = 0.0, dA = 0.0;
        if (a >= opts.alpha_coverage) {
          dD = dDepth / a;
          dA = -dDepth * depth_num / (a * a);
        }

        double suffix = 0.0;       // sum_{j>k} w_j u_j
        double transm = 1.0;       // recomputed below per contribution
        // u_k depends only on the splat, so run the reverse sweep directly.
        for (int k = static_cast<int>(stack.size()) - 1; k >= 0; --k) {
          const Contribution& ct = stack[k];
          const PreparedSplat& s = splats[ct.si];
          const double u_k = s.color.dot(dC) + s.z * dD + dA;
          transm = ct.weight / ct.alpha;  // transmittance in front of k
          const double d_alpha =
              transm * u_k - suffix / (1.0 - ct.alpha);
          suffix += ct.weight * u_k;

          SplatGrads& g = acc[ct.si];
          g.d_color += ct.weight * dC;
          g.d_z += ct.weight * dD;
          if (ct.alpha_clamped) continue;  // flat region of the clamp
          const double d_g = s.opacity * d_alpha;
          const double gauss = ct.alpha / s.opacity;
          const Vec2 d(u - s.p.x(), v - s.p.y());
          const Vec2 md = s.inv_sigma * d;
          g.d_p += d_g * gauss * md;
          g.d_sigma += (0.5 * d_g * gauss) * (md * md.transpose());
        }
      }
    }
  }

  std::vector<SplatGrads> grads(splats.size());
  for (const auto& part : partials) {
    for (std::size_t i = 0; i < grads.size(); ++i) {
      grads[i].d_p += part[i].d_p;
      grads[i].d_sigma += part[i].d_sigma;
      grads[i].d_color += part[i].d_color;
      grads[i].d_z += part[i].d_z;
    }
  }

  // Chain per-splat gradients to the twist.
  PoseGradient out;
  out.loss_value = lr.value;
  if (want_color_grads) out.d_color.assign(model.size(), Vec3::Zero());

  const std::array<Mat3, 3> dR = side == PerturbSide::Left
                                     ? jac_rot_left(T.R)
                                     : jac_rot_right(T.R);
  const Vec3 cam_in_obj = -(T.R.transpose() * T.t);

  for (std::size_t si = 0; si < splats.size(); ++si) {
    const PreparedSplat& s = splats[si];
    const SplatGrads& g = grads[si];

    // symmetrize: d_sigma was accumulated symmetric already, keep as is
    const Mat2 GS = 0.5 * (g.d_sigma + g.d_sigma.transpose());

    // position path: projection + depth + J-dependence of sigma
    Vec3 d_pc = s.J.transpose() * g.d_p;
    d_pc.z() += g.d_z;
    const Eigen::Matrix<double, 2, 3> GJ = 2.0 * GS * s.J * s.W;
    {
      const double z = s.p_c.z(), x = s.p_c.x(), y = s.p_c.y();
      const double z2 = z * z, z3 = z2 * z;
      d_pc.x() += GJ(0, 2) * (-K.fx / z2);
      d_pc.y() += GJ(1, 2) * (-K.fy / z2);
      d_pc.z() += GJ(0, 0) * (-K.fx / z2) + GJ(1, 1) * (-K.fy / z2) +
                  GJ(0, 2) * (2.0 * K.fx * x / z3) +
                  GJ(1, 2) * (2.0 * K.fy * y / z3);
    }
    const Mat36 Jpt = side == PerturbSide::Left
                          ? jac_point_left(s.p_c)
                          : jac_point_right(T, model.positions[s.gi]);
    out.d_tau += Jpt.transpose() * d_pc;

    // rotation path of the 3D covariance
    if (!GS.isZero(0.0)) {
      const Mat3 M3 = s.J.transpose() * GS * s.J;
      const Mat3 SmRt = s.sigma_m * T.R.transpose();
      for (int j = 0; j < 3; ++j)
        out.d_tau(3 + j) += 2.0 * (M3 * dR[j] * SmRt).trace();
    }

    // view-direction path of the SH color (clamped channels are flat)
    Vec3 gdir = Vec3::Zero();
    Vec3 d_color_eff = Vec3::Zero();
    const auto basis_grad = sh_basis_grad(s.dir);
    for (int ch = 0; ch < 3; ++ch) {
      if (s.raw_color[ch] <= 0.0 || s.raw_color[ch] >= 1.0) continue;
      d_color_eff[ch] = g.d_color[ch];
      gdir += g.d_color[ch] *
              (model.sh[s.gi].row(ch) * basis_grad).transpose();
    }
    if (want_color_grads) out.d_color[s.gi] = d_color_eff;
    if (!gdir.isZero(0.0) && s.u_norm > 1e-12) {
      const Vec3 gu =
          (gdir - s.dir * s.dir.dot(gdir)) / s.u_norm;  // (I - dd^T)/|u| * gdir
      if (side == PerturbSide::Left) {
        out.d_tau.head<3>() += T.R * gu;  // du/drho = R^T, adjoint is R
      } else {
        out.d_tau.head<3>() += gu;
        out.d_tau.tail<3>() += -hat3(cam_in_obj).transpose() * gu;
      }
    }
  }
  return out;
}

PoseGradient pose_gradient_fd(const GaussianModel& model,
                              const RigidTransform& T,
                              const CameraIntrinsics& K, const Frame& obs,
                              const LossWeights& weights, PerturbSide side,
                              double step, const RasterOptions& opts) {
  auto loss_at = [&](const RigidTransform& Tq) {
    const Frame pred = rasterize(model, Tq, K, RenderMode::All, opts);
    return loss(obs, pred, weights.lambda, weights.beta).value;
  };
  PoseGradient out;
  out.loss_value = loss_at(T);
  for (int k = 0; k < 6; ++k) {
    Vec6 delta = Vec6::Zero();
    delta(k) = step;
    const RigidTransform Tp = side == PerturbSide::Left
                                  ? exp_se3(Twist(delta)) * T
                                  : T * exp_se3(Twist(delta));
    delta(k) = -step;
    const RigidTransform Tm = side == PerturbSide::Left
                                  ? exp_se3(Twist(delta)) * T
                                  : T * exp_se3(Twist(delta));
    out.d_tau(k) = (loss_at(Tp) - loss_at(Tm)) / (2.0 * step);
  }
  return out;
}

}  // namespace gs2pose
