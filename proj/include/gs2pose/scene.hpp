#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <string>
#include <vector>

#include "gs2pose/lie.hpp"

namespace gs2pose {

inline constexpr int kShCoeffs = 16;  // degree-3 real SH basis

/// Axis-aligned bounding box in the object frame.
struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  Vec3 extent() const { return max - min; }
  Vec3 center() const { return 0.5 * (min + max); }
  double diagonal() const { return extent().norm(); }
};

/// One splat's parameters. SH coefficients are stored per channel,
/// 16 each, in the standard 3DGS band order (DC first).
struct GaussianModel {
  std::vector<Vec3> positions;                     // mu, object frame
  std::vector<Eigen::Quaterniond> rotations;       // unit
  std::vector<Vec3> scales;                        // linear, > 0
  std::vector<double> opacities;                   // in [0, 1]
  std::vector<Eigen::Matrix<double, 3, kShCoeffs>> sh;  // rows = RGB

  std::size_t size() const { return positions.size(); }
  bool empty() const { return positions.empty(); }

  void validate() const;  // throws on broken invariants
  Aabb bounds() const;
  double diameter() const;  // max pairwise center distance, exact O(N^2)
};

/// Sigma = R S S^T R^T. Throws if the quaternion is not unit-norm.
Mat3 covariance(const Eigen::Quaterniond& r, const Vec3& s);

/// exp(-1/2 (x-mu)^T Sigma^-1 (x-mu)). Throws on singular Sigma.
double eval_gaussian(const Vec3& x, const Vec3& mu, const Mat3& sigma);

/// Real SH basis values of degrees 0..3 for a unit direction.
Eigen::Matrix<double, kShCoeffs, 1> sh_basis(const Vec3& dir);

/// Derivative of each basis value w.r.t. the (unnormalized) direction
/// components; normalization is handled by the caller.
Eigen::Matrix<double, kShCoeffs, 3> sh_basis_grad(const Vec3& dir);

/// Color = coeffs * basis + 0.5, clamped to [0,1] per channel.
Vec3 eval_sh(const Vec3& dir, const Eigen::Matrix<double, 3, kShCoeffs>& coeffs);

/// Inverse of the +0.5 DC convention: DC coefficient for a target color.
double color_to_dc(double c);

/// Copy with DC-only colors encoding (mu - min)/(max - min) per axis;
/// higher-degree coefficients zeroed. Degenerate axes map to 0.5.
GaussianModel make_nocs_model(const GaussianModel& model);

/// Standard 3DGS binary PLY layout (f_dc, f_rest, logit opacity, log
/// scales, wxyz quaternion). Throws on malformed files or zero vertices.
GaussianModel load_ply(const std::string& path);
void save_ply(const GaussianModel& model, const std::string& path);

struct SynthSpec {
  std::string shape = "blob";  // cube | sphere | blob
  int count = 2000;
  uint64_t seed = 0;
  double radius = 0.08;        // meters; cube half-extent for "cube"
  double scale_frac = 0.02;    // splat scale as a fraction of radius
  bool textureless = false;
  Vec3 base_color = Vec3(0.6, 0.6, 0.6);
};

/// Deterministic-for-seed surface model. Throws on unknown shape.
GaussianModel synth_scene(const SynthSpec& spec);

}  // namespace gs2pose
