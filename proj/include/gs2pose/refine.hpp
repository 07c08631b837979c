#pragma once

#include <string>
#include <vector>

#include "gs2pose/registration.hpp"
#include "gs2pose/render.hpp"

namespace gs2pose {

struct RefineConfig {
  double learning_rate = 0.001;
  int total_iters = 175;
  int camera_iters = 75;   // camera_iters + object_iters == total_iters
  int object_iters = 100;
  double lambda = 0.8;
  double beta = 0.1;
  bool gs_icp_enabled = true;
  bool camera_enabled = true;
  bool object_enabled = true;
  bool gs_light_enabled = true;
  double gs_light_lr = 0.1;
  bool camera_rotation_only = false;  // restrict the left stage to phi
  double convergence_tol = 1e-7;      // on the twist-step norm
  int convergence_patience = 5;
  bool use_fd_gradient = false;       // fallback optimizer backend
  RayCastConfig raycast;

  void validate() const;
  static RefineConfig load(const std::string& path);  // flat key=value file
  void save(const std::string& path) const;
};

struct RefineRecord {
  int iter = 0;
  std::string stage;  // "gs_icp" | "camera" | "object"
  double loss = 0.0;
  double step_norm = 0.0;
  bool sh_updated = false;
};

using RefineTrace = std::vector<RefineRecord>;

struct RefineResult {
  RigidTransform pose;
  RefineTrace trace;
  double final_loss = 0.0;
};

/// Left-perturbation stage: T <- exp(step) * T with Adam-style moments on
/// the 6-dof twist. Keeps the best-loss pose seen.
RefineResult camera_refine(const GaussianModel& model, const Frame& frame,
                           const CameraIntrinsics& K,
                           const RigidTransform& T_in,
                           const RefineConfig& cfg);

/// Right-perturbation stage: T <- T * exp(step); interleaves one GS-light
/// SH step per pose step when enabled (the model copy is mutated).
RefineResult object_refine(GaussianModel& model, const Frame& frame,
                           const CameraIntrinsics& K,
                           const RigidTransform& T_in,
                           const RefineConfig& cfg);

/// One gradient step on all SH coefficients against the rendering loss.
/// Geometry fields (positions, rotations, scales, opacities) are locked:
/// bit-identical before and after.
void gs_light_step(GaussianModel& model, const Frame& frame,
                   const CameraIntrinsics& K, const RigidTransform& T,
                   double lr, const LossWeights& weights = {});

/// GS-ICP -> camera refiner -> object refiner (+GS-light). Each stage
/// degrades gracefully to the previous stage's pose on failure. The model
/// is copied internally; GS-light updates do not persist across calls.
RefineResult refine_pipeline(const GaussianModel& model, const Frame& frame,
                             const CameraIntrinsics& K,
                             const RigidTransform& T_coarse,
                             const RefineConfig& cfg);

}  // namespace gs2pose
