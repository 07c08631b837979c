#include "gs2pose/registration.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace gs2pose {

void save_cloud_ply(const PointCloud& cloud, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_cloud_ply: cannot open " + path);
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  for (const auto& p : cloud.points)
    out << p.x() << " " << p.y() << " " << p.z() << "\n";
}

PointCloud backproject(const Frame& frame, const CameraIntrinsics& K) {
  K.validate();
  if (frame.width != K.width || frame.height != K.height)
    throw std::invalid_argument("backproject: frame/intrinsics size mismatch");
  PointCloud cloud;
  cloud.frame_tag = FrameTag::Camera;
  for (int v = 0; v < frame.height; ++v) {
    for (int u = 0; u < frame.width; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * frame.width + u;
      if (!frame.masked(i)) continue;
      const double d = frame.depth[i];
      if (d <= 0) continue;
      cloud.points.emplace_back((u - K.cx) * d / K.fx, (v - K.cy) * d / K.fy, d);
    }
  }
  return cloud;
}

namespace {

// min over t >= 0 of ||t*D - p|| for unit D
double ray_point_distance(const Vec3& unit_dir, const Vec3& p) {
  const double t = p.dot(unit_dir);
  if (t <= 0) return p.norm();
  return (p - t * unit_dir).norm();
}

struct RaySet {
  std::vector<Vec3> dirs;  // unit
};

RaySet make_rays(const CameraIntrinsics& K, const std::vector<Vec2>& pixels) {
  RaySet rs;
  rs.dirs.reserve(pixels.size());
  for (const auto& px : pixels) rs.dirs.push_back(K.ray(px.x(), px.y()).normalized());
  return rs;
}

// Winner per ray: smallest distance to the optical center; index breaks ties.
struct Winner {
  double norm = std::numeric_limits<double>::infinity();
  int idx = -1;
  void offer(double n, int i) {
    if (n < norm || (n == norm && i < idx)) {
      norm = n;
      idx = i;
    }
  }
};

}  // namespace

PointCloud raycast_source_reference(const PointCloud& model_points,
                                    const RigidTransform& T_coarse,
                                    const CameraIntrinsics& K,
                                    const std::vector<Vec2>& pixels,
                                    const RayCastConfig& cfg) {
  if (cfg.epsilon <= 0)
    throw std::invalid_argument("raycast_source: epsilon must be > 0");
  std::vector<Vec3> cam_pts(model_points.size());
  for (std::size_t i = 0; i < model_points.size(); ++i)
    cam_pts[i] = T_coarse * model_points.points[i];

  const RaySet rays = make_rays(K, pixels);
  PointCloud out;
  out.frame_tag = FrameTag::Camera;
  for (const Vec3& D : rays.dirs) {
    Winner w;
    for (std::size_t i = 0; i < cam_pts.size(); ++i) {
      if (ray_point_distance(D, cam_pts[i]) < cfg.epsilon)
        w.offer(cam_pts[i].norm(), static_cast<int>(i));
    }
    if (w.idx >= 0) out.points.push_back(cam_pts[w.idx]);
  }
  return out;
}

PointCloud raycast_source(const PointCloud& model_points,
                          const RigidTransform& T_coarse,
                          const CameraIntrinsics& K,
                          const std::vector<Vec2>& pixels,
                          const RayCastConfig& cfg) {
  if (cfg.epsilon <= 0)
    throw std::invalid_argument("raycast_source: epsilon must be > 0");
  const std::size_t n = model_points.size();
  std::vector<Vec3> cam_pts(n);
  for (std::size_t i = 0; i < n; ++i)
    cam_pts[i] = T_coarse * model_points.points[i];

  const RaySet rays = make_rays(K, pixels);
  const int nrays = static_cast<int>(rays.dirs.size());

  // Bin rays by integer pixel for point-centric candidate gathering.
  std::unordered_map<int64_t, std::vector<int>> grid;
  auto cell_key = [](int u, int v) {
    return (static_cast<int64_t>(v) << 32) | static_cast<uint32_t>(u);
  };
  for (int r = 0; r < nrays; ++r) {
    const int u = static_cast<int>(std::floor(pixels[r].x()));
    const int v = static_cast<int>(std::floor(pixels[r].y()));
    grid[cell_key(u, v)].push_back(r);
  }

  std::vector<Winner> winners(nrays);
  std::vector<int> global;  // points that must be tested against every ray

  const double f = std::max(K.fx, K.fy);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& p = cam_pts[i];
    const double norm = p.norm();
    if (p.z() <= 0 || norm <= cfg.epsilon) {
      global.push_back(static_cast<int>(i));
      continue;
    }
    // A hit requires the angle to the ray below asin(eps/|p|). Bound the
    // matching pixel radius via the gnomonic stretch sec^2(alpha).
    const double theta = std::asin(std::min(1.0, cfg.epsilon / norm));
    const double alpha = std::atan2(std::hypot(p.x(), p.y()), p.z());
    const double amax = alpha + theta;
    if (amax > 1.45) {  // near the field edge the bound blows up
      global.push_back(static_cast<int>(i));
      continue;
    }
    const double sec = 1.0 / std::cos(amax);
    const double r_pix = theta * sec * sec * f + 1.0;
    const Vec2 center = K.project(p);
    const int u0 = static_cast<int>(std::floor(center.x() - r_pix));
    const int u1 = static_cast<int>(std::floor(center.x() + r_pix));
    const int v0 = static_cast<int>(std::floor(center.y() - r_pix));
    const int v1 = static_cast<int>(std::floor(center.y() + r_pix));
    for (int v = v0; v <= v1; ++v) {
      for (int u = u0; u <= u1; ++u) {
        auto it = grid.find(cell_key(u, v));
        if (it == grid.end()) continue;
        for (int r : it->second) {
          if (ray_point_distance(rays.dirs[r], p) < cfg.epsilon)
            winners[r].offer(norm, static_cast<int>(i));
        }
      }
    }
  }

  for (int r = 0; r < nrays && !global.empty(); ++r) {
    for (int i : global)
      if (ray_point_distance(rays.dirs[r], cam_pts[i]) < cfg.epsilon)
        winners[r].offer(cam_pts[i].norm(), i);
  }

  PointCloud out;
  out.frame_tag = FrameTag::Camera;
  for (const Winner& w : winners)
    if (w.idx >= 0) out.points.push_back(cam_pts[w.idx]);
  return out;
}

// ---------------------------------------------------------------------------
// KdTree

KdTree::KdTree(const std::vector<Vec3>& points) : pts_(points) {
  if (points.empty()) throw std::invalid_argument("KdTree: empty point set");
  std::vector<int> idx(points.size());
  std::iota(idx.begin(), idx.end(), 0);
  nodes_.reserve(points.size());
  root_ = build(idx, 0, static_cast<int>(points.size()), 0);
}

int KdTree::build(std::vector<int>& idx, int begin, int end, int depth) {
  if (begin >= end) return -1;
  const int axis = depth % 3;
  const int mid = (begin + end) / 2;
  std::nth_element(idx.begin() + begin, idx.begin() + mid, idx.begin() + end,
                   [&](int a, int b) { return pts_[a][axis] < pts_[b][axis]; });
  const int node_id = static_cast<int>(nodes_.size());
  nodes_.push_back({idx[mid], axis, -1, -1});
  const int l = build(idx, begin, mid, depth + 1);
  const int r = build(idx, mid + 1, end, depth + 1);
  nodes_[node_id].left = l;
  nodes_[node_id].right = r;
  return node_id;
}

void KdTree::search(int node, const Vec3& q, int* best, double* best_sq) const {
  if (node < 0) return;
  const Node& nd = nodes_[node];
  const double d2 = (pts_[nd.point] - q).squaredNorm();
  if (d2 < *best_sq || (d2 == *best_sq && nd.point < *best)) {
    *best_sq = d2;
    *best = nd.point;
  }
  const double delta = q[nd.axis] - pts_[nd.point][nd.axis];
  const int near = delta < 0 ? nd.left : nd.right;
  const int far = delta < 0 ? nd.right : nd.left;
  search(near, q, best, best_sq);
  if (delta * delta <= *best_sq) search(far, q, best, best_sq);
}

int KdTree::nearest(const Vec3& query, double* sq_dist) const {
  int best = -1;
  double best_sq = std::numeric_limits<double>::infinity();
  search(root_, query, &best, &best_sq);
  if (sq_dist) *sq_dist = best_sq;
  return best;
}

// ---------------------------------------------------------------------------
// ICP

IcpResult icp(const PointCloud& source, const PointCloud& target,
              int max_iters, double tol) {
  if (source.empty() || target.empty())
    throw std::invalid_argument("icp: empty cloud");
  const KdTree tree(target.points);

  IcpResult res;
  res.transform = RigidTransform::identity();
  // The gated residual can fluctuate as the gate set changes between
  // iterations; track the best pose seen so the result never regresses.
  RigidTransform best = res.transform;
  double best_residual = std::numeric_limits<double>::infinity();

  for (int it = 0; it < max_iters; ++it) {
    std::vector<Vec3> src, dst;
    std::vector<double> dists;
    src.reserve(source.size());
    for (const Vec3& p : source.points) {
      const Vec3 q = res.transform * p;
      double d2;
      const int j = tree.nearest(q, &d2);
      src.push_back(q);
      dst.push_back(target.points[j]);
      dists.push_back(std::sqrt(d2));
    }
    // Gate at 3x the median residual
    std::vector<double> sorted = dists;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2,
                     sorted.end());
    const double gate =
        std::max(3.0 * sorted[sorted.size() / 2], 1e-12);

    Eigen::Matrix3Xd A(3, src.size()), B(3, src.size());
    int m = 0;
    double residual = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (dists[i] > gate) continue;
      A.col(m) = src[i];
      B.col(m) = dst[i];
      residual += dists[i];
      ++m;
    }
    if (m < 3) throw std::runtime_error("icp: fewer than 3 correspondences");
    residual /= m;

    if (residual < best_residual) {
      best_residual = residual;
      best = res.transform;
    }
    res.residual = residual;
    res.iterations = it + 1;

    const Mat4 M = Eigen::umeyama(A.leftCols(m), B.leftCols(m), false);
    const RigidTransform delta = RigidTransform::fromMatrix(M);
    res.transform = delta * res.transform;

    if (log_se3(delta).vec().norm() < tol) {
      res.converged = true;
      break;
    }
  }
  if (best_residual < res.residual) {
    res.transform = best;
    res.residual = best_residual;
  }
  return res;
}

// ---------------------------------------------------------------------------
// GS-ICP

double cloud_alignment_error(const GaussianModel& model, const Frame& frame,
                             const CameraIntrinsics& K,
                             const RigidTransform& pose) {
  const PointCloud target = backproject(frame, K);
  if (target.empty())
    throw std::runtime_error("cloud_alignment_error: empty target cloud");
  const KdTree tree(target.points);
  double acc = 0.0;
  for (const Vec3& mu : model.positions) {
    double d2;
    tree.nearest(pose * mu, &d2);
    acc += std::sqrt(d2);
  }
  return acc / static_cast<double>(model.size());
}

GsIcpResult gs_icp(const GaussianModel& model, const Frame& frame,
                   const CameraIntrinsics& K, const RigidTransform& T_coarse,
                   const RayCastConfig& cfg) {
  GsIcpResult out;
  out.pose = T_coarse;

  const PointCloud target = backproject(frame, K);
  if (target.empty()) {
    out.note = "empty target cloud";
    return out;
  }

  PointCloud model_cloud;
  model_cloud.frame_tag = FrameTag::Object;
  model_cloud.points = model.positions;

  RayCastConfig rc = cfg;
  if (rc.epsilon <= 0) rc.epsilon = 0.005 * model.bounds().diagonal();
  if (rc.pixel_stride < 1) rc.pixel_stride = 1;

  std::vector<Vec2> pixels;
  for (int v = 0; v < frame.height; v += rc.pixel_stride) {
    for (int u = 0; u < frame.width; u += rc.pixel_stride) {
      const std::size_t i = static_cast<std::size_t>(v) * frame.width + u;
      if (frame.masked(i) && frame.depth[i] > 0)
        pixels.emplace_back(u, v);
    }
  }

  // A partially-converged ICP step shrinks the pose error but leaves the
  // ray-cast source cloud stale; re-casting at the updated pose and
  // aligning again converges in a handful of rounds.
  RigidTransform candidate = T_coarse;
  bool any_round = false;
  for (int round = 0; round < 10; ++round) {
    const PointCloud source =
        raycast_source(model_cloud, candidate, K, pixels, rc);
    if (source.empty()) {
      if (!any_round) {
        out.note = "empty source cloud (pose grossly wrong)";
        return out;
      }
      break;
    }
    IcpResult ir;
    try {
      ir = icp(source, target);
    } catch (const std::exception& e) {
      if (!any_round) {
        out.note = std::string("icp failed: ") + e.what();
        return out;
      }
      break;
    }
    candidate = ir.transform * candidate;
    any_round = true;
    if (log_se3(ir.transform).vec().norm() < 1e-5) break;
  }

  const RigidTransform total = candidate * T_coarse.inverse();

  // Large corrections signal divergence; GS-ICP is a depth fix, not a
  // global aligner.
  const double rot_deg =
      std::acos(std::clamp(0.5 * (total.R.trace() - 1.0), -1.0, 1.0)) *
      180.0 / M_PI;
  const double err_before = cloud_alignment_error(model, frame, K, T_coarse);
  const double err_after = cloud_alignment_error(model, frame, K, candidate);
  if (rot_deg > 45.0 || err_after > err_before) {
    out.note = "icp diverged, keeping coarse pose";
    return out;
  }

  out.pose = candidate;
  out.applied = true;
  return out;
}

}  // namespace gs2pose
