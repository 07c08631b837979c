#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gs2pose/coarse.hpp"
#include "gs2pose/metrics.hpp"
#include "gs2pose/refine.hpp"
#include "gs2pose/scene.hpp"

namespace gs2pose::tools {

/// One self-contained run description: which object, which camera, how the
/// observations are produced, how the coarse pose is obtained, and which
/// thresholds decide success. Loaded from a flat key=value file that also
/// carries the RefineConfig keys.
struct Experiment {
  // Object: a PLY on disk, or a synthesized scene when model_path is empty.
  std::string model_path;
  SynthSpec synth;

  // Observations: rendered in memory, or loaded from a directory written by
  // the synth command (frames_dir + poses.json).
  std::string frames_dir;

  // Camera for in-memory rendering.
  int image_size = 128;
  double focal_frac = 1.2;  // fx = fy = focal_frac * image_size
  double distance = 0.4;    // object distance along the optical axis

  // Trials.
  int frames = 12;
  uint64_t seed = 7;

  // Coarse pose: "perturb" injects a bounded offset from ground truth,
  // "nocs" runs the NOCS -> PnP estimator on a rendered NOCS image.
  std::string coarse_mode = "perturb";
  double perturb_rot_deg = 15.0;
  double perturb_trans_frac = 0.10;  // of the model diameter
  double depth_bias_frac = 0.0;      // multiplies the optical-axis distance
  double nocs_noise_sigma = 0.0;     // additive color noise in nocs mode
  double brighten_lo = 1.0;          // observation brightness factor range
  double brighten_hi = 1.0;

  // Success thresholds; min_rot_rate participates in the exit-code check.
  SuccessThresholds thresholds;
  double min_rot_rate = 0.0;

  RefineConfig refine;

  void validate() const;
  static Experiment load(const std::string& path);
};

struct FrameResult {
  int id = 0;
  bool ok = false;
  std::string error;  // non-empty when ok == false
  RigidTransform T_true, T_coarse, T_precise;
  PoseError err_coarse, err_precise;
  double final_loss = 0.0;
  std::size_t trace_length = 0;
};

struct ExperimentRun {
  GaussianModel model;
  CameraIntrinsics K;
  double diameter = 0.0;
  std::vector<FrameResult> frames;  // sorted by id
  SuccessReport report;             // over the ok frames' refined errors
  bool all_frames_ok = false;
  bool thresholds_met = false;  // min_rot_rate reached
};

/// Runs every frame of the experiment (failures are isolated per frame)
/// and assembles the success report. `overlay_dir`, when non-empty,
/// receives one blended observation/render PNG per frame, with a red
/// border on frames that failed or missed the rotation threshold.
ExperimentRun run_experiment(const Experiment& exp,
                             const std::string& overlay_dir = "");

struct AblationRow {
  std::string label;
  RefineConfig config;
  SuccessReport report;
  bool all_frames_ok = false;
};

/// Stage-toggle sweep ending in the full pipeline: coarse only, each stage
/// cumulatively enabled, plus camera+object without registration.
std::vector<AblationRow> run_ablation(const Experiment& exp);

/// Fixed-width text rendering of the ablation table.
std::string format_ablation_table(const std::vector<AblationRow>& rows);

/// FNV-1a hash of a file's bytes, as a hex string; used in run manifests.
std::string file_hash(const std::string& path);

}  // namespace gs2pose::tools
