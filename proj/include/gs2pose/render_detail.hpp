#pragma once

#include <vector>

#include "gs2pose/render.hpp"

namespace gs2pose::detail {

/// Everything the forward and backward passes need per visible Gaussian.
struct PreparedSplat {
  int gi = -1;  // index into the model
  Vec3 p_c = Vec3::Zero();
  Vec2 p = Vec2::Zero();
  double z = 0.0;
  Mat23 J = Mat23::Zero();
  Mat3 sigma_m = Mat3::Zero();
  Mat3 W = Mat3::Zero();  // R sigma_m R^T
  Mat2 sigma = Mat2::Zero();
  Mat2 inv_sigma = Mat2::Zero();
  double opacity = 0.0;
  Vec3 dir = Vec3::UnitZ();  // object-frame view direction
  double u_norm = 0.0;
  Vec3 raw_color = Vec3::Zero();  // before the [0,1] clamp
  Vec3 color = Vec3::Zero();
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0;  // inclusive pixel footprint
};

/// Projection, covariance propagation, SH color, footprint; sorted by z.
std::vector<PreparedSplat> prepare_splats(const GaussianModel& model,
                                          const RigidTransform& T,
                                          const CameraIntrinsics& K,
                                          const RasterOptions& opts);

}  // namespace gs2pose::detail
