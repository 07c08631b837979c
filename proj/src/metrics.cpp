#include "gs2pose/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace gs2pose {

double add(const PointCloud& points_m, const RigidTransform& T_gt,
           const RigidTransform& T_est) {
  if (points_m.empty()) throw std::invalid_argument("add: empty cloud");
  double acc = 0.0;
  for (const Vec3& p : points_m.points) acc += (T_gt * p - T_est * p).norm();
  return acc / static_cast<double>(points_m.size());
}

double add_s(const PointCloud& points_m, const RigidTransform& T_gt,
             const RigidTransform& T_est) {
  if (points_m.empty()) throw std::invalid_argument("add_s: empty cloud");
  std::vector<Vec3> est_pts(points_m.size());
  for (std::size_t i = 0; i < points_m.size(); ++i)
    est_pts[i] = T_est * points_m.points[i];
  const KdTree tree(est_pts);
  double acc = 0.0;
  for (const Vec3& p : points_m.points) {
    double d2;
    tree.nearest(T_gt * p, &d2);
    acc += std::sqrt(d2);
  }
  return acc / static_cast<double>(points_m.size());
}

PoseError pose_errors(const RigidTransform& T_gt, const RigidTransform& T_est) {
  PoseError e;
  const Mat3 dR = T_gt.R.transpose() * T_est.R;
  const double c = std::clamp(0.5 * (dR.trace() - 1.0), -1.0, 1.0);
  e.rotation_deg = std::acos(c) * 180.0 / M_PI;
  e.translation_m = (T_gt.t - T_est.t).norm();
  return e;
}

PoseError pose_errors(const PointCloud& points_m, const RigidTransform& T_gt,
                      const RigidTransform& T_est) {
  PoseError e = pose_errors(T_gt, T_est);
  e.add = add(points_m, T_gt, T_est);
  e.add_s = add_s(points_m, T_gt, T_est);
  return e;
}

SuccessReport success_report(const std::vector<PoseError>& errors,
                             double diameter,
                             const SuccessThresholds& thresholds) {
  if (errors.empty()) throw std::invalid_argument("success_report: no samples");
  SuccessReport r;
  r.count = errors.size();
  r.angle_histogram.assign(181, 0);
  const double add_gate = thresholds.add_diameter_frac * diameter;
  for (const PoseError& e : errors) {
    if (e.add < add_gate) r.add_rate += 1.0;
    if (e.add_s < add_gate) r.add_s_rate += 1.0;
    if (e.rotation_deg < thresholds.rot_deg) r.rot_rate += 1.0;
    if (e.rotation_deg < thresholds.rot_deg &&
        e.translation_m < thresholds.trans_m)
      r.rot_trans_rate += 1.0;
    const int bin = std::min(180, static_cast<int>(e.rotation_deg));
    ++r.angle_histogram[bin];
  }
  const double n = static_cast<double>(r.count);
  r.add_rate /= n;
  r.add_s_rate /= n;
  r.rot_rate /= n;
  r.rot_trans_rate /= n;
  return r;
}

}  // namespace gs2pose
