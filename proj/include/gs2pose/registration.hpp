#pragma once

#include <string>
#include <vector>

#include "gs2pose/camera.hpp"
#include "gs2pose/scene.hpp"

namespace gs2pose {

enum class FrameTag { Camera, Object };

struct PointCloud {
  std::vector<Vec3> points;
  FrameTag frame_tag = FrameTag::Camera;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Debug export.
void save_cloud_ply(const PointCloud& cloud, const std::string& path);

struct RayCastConfig {
  // Ray-hit threshold, meters. Must be > 0 for raycast_source; gs_icp
  // resolves <= 0 to 0.5% of the model's bounding-box diagonal.
  double epsilon = 0.0;
  int pixel_stride = 2;   // every n-th masked pixel seeds a ray
};

/// Masked pixels with depth > 0 become camera-frame points.
PointCloud backproject(const Frame& frame, const CameraIntrinsics& K);

/// Per ray: candidates are model points (already in camera frame, i.e.
/// transformed by T_coarse) whose perpendicular distance to the forward ray
/// branch is < epsilon; the candidate nearest the optical center wins.
/// Accelerated by projected-pixel binning; matches brute force exactly.
PointCloud raycast_source(const PointCloud& model_points,
                          const RigidTransform& T_coarse,
                          const CameraIntrinsics& K,
                          const std::vector<Vec2>& pixels,
                          const RayCastConfig& cfg);

/// Brute-force O(rays x points) reference for the above.
PointCloud raycast_source_reference(const PointCloud& model_points,
                                    const RigidTransform& T_coarse,
                                    const CameraIntrinsics& K,
                                    const std::vector<Vec2>& pixels,
                                    const RayCastConfig& cfg);

struct IcpResult {
  RigidTransform transform;  // aligns source onto target
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;  // mean correspondence distance at exit
};

/// Point-to-point ICP: nearest-neighbor correspondences on a k-d tree,
/// Umeyama update, correspondence gate at 3x the median residual.
/// Throws if fewer than 3 correspondences survive.
IcpResult icp(const PointCloud& source, const PointCloud& target,
              int max_iters = 50, double tol = 1e-6);

struct GsIcpResult {
  RigidTransform pose;   // refined T_m_c
  bool applied = false;  // false -> fell back to T_coarse
  std::string note;
};

/// Depth correction stage: ray-cast the Gaussian centers into a source
/// cloud, backproject the frame into a target cloud, align by ICP, and
/// compose the correction onto T_coarse. Never returns a pose whose mean
/// source->target nearest-neighbor distance is worse than T_coarse's.
GsIcpResult gs_icp(const GaussianModel& model, const Frame& frame,
                   const CameraIntrinsics& K, const RigidTransform& T_coarse,
                   const RayCastConfig& cfg = {});

/// Mean nearest-neighbor distance from transformed model centers to the
/// backprojected frame cloud; the monotonicity gate used by gs_icp.
double cloud_alignment_error(const GaussianModel& model, const Frame& frame,
                             const CameraIntrinsics& K,
                             const RigidTransform& pose);

/// Exact nearest neighbor queries over a fixed point set.
class KdTree {
 public:
  explicit KdTree(const std::vector<Vec3>& points);
  /// Returns index of the nearest point and its squared distance.
  int nearest(const Vec3& query, double* sq_dist = nullptr) const;

 private:
  struct Node {
    int point = -1;
    int axis = 0;
    int left = -1, right = -1;
  };
  int build(std::vector<int>& idx, int begin, int end, int depth);
  void search(int node, const Vec3& q, int* best, double* best_sq) const;

  const std::vector<Vec3>& pts_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace gs2pose
