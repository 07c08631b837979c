#include "gs2pose/coarse.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/calib3d.hpp>
#include <random>
#include <stdexcept>

namespace gs2pose {

std::vector<Correspondence2D3D> nocs_to_correspondences(
    const Frame& nocs_img, const Aabb& aabb, double threshold) {
  std::vector<Correspondence2D3D> out;
  for (int v = 0; v < nocs_img.height; ++v) {
    for (int u = 0; u < nocs_img.width; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * nocs_img.width + u;
      if (!nocs_img.masked(i)) continue;
      const double* c = nocs_img.px(u, v);
      if (std::max({c[0], c[1], c[2]}) <= threshold) continue;
      Correspondence2D3D corr;
      corr.pixel = Vec2(u, v);
      for (int a = 0; a < 3; ++a)
        corr.point_m[a] = aabb.min[a] + c[a] * (aabb.max[a] - aabb.min[a]);
      out.push_back(corr);
    }
  }
  if (out.size() < 6)
    throw std::runtime_error("nocs_to_correspondences: fewer than 6 survivors");
  return out;
}

namespace {

cv::Mat intrinsics_matrix(const CameraIntrinsics& K) {
  cv::Mat M = cv::Mat::zeros(3, 3, CV_64F);
  M.at<double>(0, 0) = K.fx;
  M.at<double>(1, 1) = K.fy;
  M.at<double>(0, 2) = K.cx;
  M.at<double>(1, 2) = K.cy;
  M.at<double>(2, 2) = 1.0;
  return M;
}

RigidTransform pose_from_rvec_tvec(const cv::Mat& rvec, const cv::Mat& tvec) {
  cv::Mat R;
  cv::Rodrigues(rvec, R);
  RigidTransform T;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) T.R(r, c) = R.at<double>(r, c);
    T.t(r) = tvec.at<double>(r);
  }
  return T;
}

double reproj_error_px(const RigidTransform& T, const CameraIntrinsics& K,
                       const Correspondence2D3D& corr) {
  const Vec3 p = T * corr.point_m;
  if (p.z() <= 1e-9) return std::numeric_limits<double>::infinity();
  return (K.project(p) - corr.pixel).norm();
}

}  // namespace

PnpResult pnp_ransac(const std::vector<Correspondence2D3D>& corrs,
                     const CameraIntrinsics& K, const PnpConfig& cfg) {
  if (corrs.size() < 6)
    throw std::invalid_argument("pnp_ransac: need at least 6 correspondences");
  K.validate();
  const cv::Mat Kcv = intrinsics_matrix(K);
  const cv::Mat dist;  // no distortion

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, corrs.size() - 1);

  int best_inliers = -1;
  double best_rms = std::numeric_limits<double>::infinity();
  RigidTransform best_pose;

  std::vector<cv::Point3d> obj(4);
  std::vector<cv::Point2d> img(4);
  for (int h = 0; h < cfg.hypotheses; ++h) {
    std::array<std::size_t, 4> sample;
    for (int k = 0; k < 4; ++k) {
      bool fresh;
      do {
        sample[k] = pick(rng);
        fresh = true;
        for (int j = 0; j < k; ++j) fresh &= sample[j] != sample[k];
      } while (!fresh);
    }
    for (int k = 0; k < 4; ++k) {
      const auto& c = corrs[sample[k]];
      obj[k] = {c.point_m.x(), c.point_m.y(), c.point_m.z()};
      img[k] = {c.pixel.x(), c.pixel.y()};
    }

    for (int method : {cv::SOLVEPNP_EPNP, cv::SOLVEPNP_IPPE}) {
      cv::Mat rvec, tvec;
      bool ok = false;
      try {
        ok = cv::solvePnP(obj, img, Kcv, dist, rvec, tvec, false, method);
      } catch (const cv::Exception&) {
        ok = false;  // e.g. IPPE on non-planar samples
      }
      if (!ok) continue;
      const RigidTransform T = pose_from_rvec_tvec(rvec, tvec);
      if (!T.isValid(1e-6)) continue;

      int n_inl = 0;
      double sq_sum = 0.0;
      for (const auto& c : corrs) {
        const double e = reproj_error_px(T, K, c);
        if (e < cfg.inlier_px) {
          ++n_inl;
          sq_sum += e * e;
        }
      }
      if (n_inl < cfg.min_inliers) continue;
      const double rms = std::sqrt(sq_sum / n_inl);
      if (n_inl > best_inliers || (n_inl == best_inliers && rms < best_rms)) {
        best_inliers = n_inl;
        best_rms = rms;
        best_pose = T;
      }
      break;  // EPnP produced a usable hypothesis; skip the planar branch
    }
  }

  if (best_inliers < cfg.min_inliers)
    throw std::runtime_error("pnp_ransac: no hypothesis reached the inlier gate");

  // Polish on the consensus set
  std::vector<cv::Point3d> obj_in;
  std::vector<cv::Point2d> img_in;
  for (const auto& c : corrs) {
    if (reproj_error_px(best_pose, K, c) < cfg.inlier_px) {
      obj_in.push_back({c.point_m.x(), c.point_m.y(), c.point_m.z()});
      img_in.push_back({c.pixel.x(), c.pixel.y()});
    }
  }
  cv::Mat R0(3, 3, CV_64F), rvec, tvec(3, 1, CV_64F);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) R0.at<double>(r, c) = best_pose.R(r, c);
    tvec.at<double>(r) = best_pose.t(r);
  }
  cv::Rodrigues(R0, rvec);
  cv::solvePnPRefineLM(obj_in, img_in, Kcv, dist, rvec, tvec);
  const RigidTransform refined = pose_from_rvec_tvec(rvec, tvec);

  PnpResult res;
  res.pose = refined.isValid(1e-6) ? refined : best_pose;
  double sq_sum = 0.0;
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    const double e = reproj_error_px(res.pose, K, corrs[i]);
    if (e < cfg.inlier_px) {
      res.inliers.push_back(static_cast<int>(i));
      sq_sum += e * e;
    }
  }
  if (static_cast<int>(res.inliers.size()) < cfg.min_inliers)
    throw std::runtime_error("pnp_ransac: refinement lost the consensus set");
  res.rms_px = std::sqrt(sq_sum / res.inliers.size());
  return res;
}

RigidTransform coarse_estimate(const Frame& nocs_img, const Aabb& aabb,
                               const CameraIntrinsics& K,
                               const PnpConfig& cfg) {
  const auto corrs =
      nocs_to_correspondences(nocs_img, aabb, cfg.brightness_threshold);
  return pnp_ransac(corrs, K, cfg).pose;
}

}  // namespace gs2pose
