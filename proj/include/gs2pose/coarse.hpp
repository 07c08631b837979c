#pragma once

#include <vector>

#include "gs2pose/camera.hpp"
#include "gs2pose/scene.hpp"

namespace gs2pose {

struct Correspondence2D3D {
  Vec2 pixel;
  Vec3 point_m;
};

struct PnpConfig {
  int hypotheses = 200;
  double inlier_px = 2.0;
  int min_inliers = 6;
  uint64_t seed = 0;
  double brightness_threshold = 0.05;  // max-channel gate on NOCS pixels
};

/// Masked pixels whose max channel exceeds the threshold, decoded to
/// object coordinates through the Aabb. Throws if fewer than 6 survive.
std::vector<Correspondence2D3D> nocs_to_correspondences(
    const Frame& nocs_img, const Aabb& aabb, double threshold);

struct PnpResult {
  RigidTransform pose;  // object -> camera
  std::vector<int> inliers;
  double rms_px = 0.0;
};

/// RANSAC over 4-point EPnP hypotheses with a 2 px reprojection gate and
/// LM polish on the consensus set. Deterministic for a fixed seed; the
/// winner is chosen by (inlier count, then RMS, then hypothesis index).
/// Throws if no hypothesis reaches min_inliers.
PnpResult pnp_ransac(const std::vector<Correspondence2D3D>& corrs,
                     const CameraIntrinsics& K, const PnpConfig& cfg = {});

/// NOCS decode + PnP-RANSAC. The NOCS image stands in for the output of
/// the upstream coarse network.
RigidTransform coarse_estimate(const Frame& nocs_img, const Aabb& aabb,
                               const CameraIntrinsics& K,
                               const PnpConfig& cfg = {});

}  // namespace gs2pose
