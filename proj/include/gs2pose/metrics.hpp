#pragma once

#include <vector>

#include "gs2pose/registration.hpp"

namespace gs2pose {

struct PoseError {
  double rotation_deg = 0.0;
  double translation_m = 0.0;
  double add = 0.0;
  double add_s = 0.0;
};

/// Mean over points of ||T_gt p - T_est p||. Throws on empty cloud.
double add(const PointCloud& points_m, const RigidTransform& T_gt,
           const RigidTransform& T_est);

/// Mean over T_gt-transformed points of the distance to the nearest
/// T_est-transformed point; <= add by construction.
double add_s(const PointCloud& points_m, const RigidTransform& T_gt,
             const RigidTransform& T_est);

/// Geodesic rotation angle (degrees) and translation distance.
PoseError pose_errors(const RigidTransform& T_gt, const RigidTransform& T_est);

/// Both of the above, in one record.
PoseError pose_errors(const PointCloud& points_m, const RigidTransform& T_gt,
                      const RigidTransform& T_est);

struct SuccessThresholds {
  double add_diameter_frac = 0.1;  // ADD(-S) < frac * diameter
  double rot_deg = 5.0;
  double trans_m = 0.01;
};

struct SuccessReport {
  std::size_t count = 0;
  double add_rate = 0.0;    // ADD < 0.1 d
  double add_s_rate = 0.0;  // ADD-S < 0.1 d
  double rot_rate = 0.0;    // R < 5 deg
  double rot_trans_rate = 0.0;  // R < 5 deg and t < 1 cm
  std::vector<std::size_t> angle_histogram;  // 1-degree bins
};

/// All comparisons strict (<); a value exactly at a threshold fails.
SuccessReport success_report(const std::vector<PoseError>& errors,
                             double diameter,
                             const SuccessThresholds& thresholds = {});

}  // namespace gs2pose
