#pragma once

#include <optional>
#include <vector>

#include "gs2pose/camera.hpp"
#include "gs2pose/scene.hpp"

namespace gs2pose {

/// 2D footprint of one projected Gaussian.
struct Splat2D {
  Vec2 p = Vec2::Zero();      // pixel center
  Mat2 sigma = Mat2::Zero();  // pixels^2, includes the 0.3 px low-pass
  double z = 0.0;             // camera-frame depth, meters
  Vec3 color = Vec3::Zero();
  double alpha = 0.0;
};

/// Behind-camera points are culled (nullopt), not an error.
std::optional<Splat2D> project_gaussian(const RigidTransform& T,
                                        const CameraIntrinsics& K,
                                        const Vec3& mu_m, const Mat3& sigma_m,
                                        double z_near = 1e-3);

enum class RenderMode { Color, Depth, Nocs, All };

struct RasterOptions {
  double z_near = 1e-3;
  double alpha_coverage = 0.5;  // accumulated alpha below this -> no depth/mask
  bool parallel = true;
};

/// Front-to-back alpha compositing over tile-binned splats. Rows are
/// processed with OpenMP when opts.parallel is set; per-pixel traversal
/// order is fixed, so output is bit-identical to the serial path.
Frame rasterize(const GaussianModel& model, const RigidTransform& T,
                const CameraIntrinsics& K, RenderMode mode = RenderMode::All,
                const RasterOptions& opts = {});

/// Serial reference: plain loop over every pixel and every sorted splat,
/// no tiling, no OpenMP. Kept for testing and benchmarking.
Frame rasterize_reference(const GaussianModel& model, const RigidTransform& T,
                          const CameraIntrinsics& K,
                          RenderMode mode = RenderMode::All,
                          const RasterOptions& opts = {});

struct LossWeights {
  double lambda = 0.8;  // L1 vs DSSIM split
  double beta = 0.1;    // depth term
};

struct LossResult {
  double value = 0.0;
  double l_image = 0.0, l_dssim = 0.0, l_depth = 0.0;
  std::vector<double> d_rgb;    // dloss/drgb_pred, 3*W*H
  std::vector<double> d_depth;  // dloss/ddepth_pred, W*H
};

/// lambda*L1 + (1-lambda)*DSSIM + beta*Ldepth over the intersection of the
/// observation mask and the rendered coverage mask. Throws on size mismatch.
LossResult loss(const Frame& obs, const Frame& pred, double lambda,
                double beta);

/// SSIM with an 11x11 Gaussian window, sigma 1.5, zero padding.
double ssim(const std::vector<double>& a, const std::vector<double>& b,
            int width, int height, int channels);

enum class PerturbSide { Left, Right };

struct PoseGradient {
  Vec6 d_tau = Vec6::Zero();
  double loss_value = 0.0;
  // dloss/d(per-Gaussian view color); filled when requested (GS-light).
  std::vector<Vec3> d_color;
};

/// Analytic dloss/dtau at tau = 0 via backprop through the compositing,
/// the perspective Jacobian, the rotation of the 3D covariance, and the
/// SH view direction. Throws if every splat is culled.
PoseGradient pose_gradient(const GaussianModel& model, const RigidTransform& T,
                           const CameraIntrinsics& K, const Frame& obs,
                           const LossWeights& weights, PerturbSide side,
                           bool want_color_grads = false,
                           const RasterOptions& opts = {});

/// Central-difference reference: 12 extra renders. Always available as the
/// oracle and fallback optimizer backend.
PoseGradient pose_gradient_fd(const GaussianModel& model,
                              const RigidTransform& T,
                              const CameraIntrinsics& K, const Frame& obs,
                              const LossWeights& weights, PerturbSide side,
                              double step = 1e-4,
                              const RasterOptions& opts = {});

}  // namespace gs2pose
