#include "experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "gs2pose/render.hpp"

namespace gs2pose::tools {

using nlohmann::json;

namespace {

std::map<std::string, std::string> parse_kv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Vec3 v(g(rng), g(rng), g(rng));
  while (v.norm() < 1e-6) v = Vec3(g(rng), g(rng), g(rng));
  return v.normalized();
}

RigidTransform pose_from_json(const json& m) {
  if (!m.is_array() || m.size() != 16)
    throw std::runtime_error("pose must be a 16-element row-major array");
  Mat4 M;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) M(r, c) = m[4 * r + c].get<double>();
  return RigidTransform::fromMatrix(M);
}

struct LoadedFrame {
  Frame obs;
  RigidTransform T_true;
};

LoadedFrame load_frame(const json& fr, const std::string& dir,
                       const CameraIntrinsics& K) {
  LoadedFrame lf;
  lf.T_true = pose_from_json(fr.at("T_m_c"));
  lf.obs = Frame::zeros(K.width, K.height);
  load_rgb_png(lf.obs, dir + "/" + fr.at("rgb").get<std::string>());
  load_depth_png(lf.obs, dir + "/" + fr.at("depth").get<std::string>());
  load_mask_png(lf.obs, dir + "/" + fr.at("mask").get<std::string>());
  return lf;
}

void draw_border(Frame& f, const Vec3& color, int width) {
  for (int v = 0; v < f.height; ++v)
    for (int u = 0; u < f.width; ++u) {
      if (u >= width && u < f.width - width && v >= width &&
          v < f.height - width)
        continue;
      double* p = f.px(u, v);
      for (int ch = 0; ch < 3; ++ch) p[ch] = color[ch];
    }
}

}  // namespace

void Experiment::validate() const {
  if (image_size <= 0 || focal_frac <= 0)
    throw std::invalid_argument("experiment: bad camera settings");
  if (frames < 1) throw std::invalid_argument("experiment: frames must be >= 1");
  if (distance <= 0) throw std::invalid_argument("experiment: distance must be > 0");
  if (perturb_rot_deg < 0 || perturb_trans_frac < 0 || nocs_noise_sigma < 0)
    throw std::invalid_argument("experiment: perturbation bounds must be >= 0");
  if (depth_bias_frac <= -1.0)
    throw std::invalid_argument("experiment: depth bias would flip the pose");
  if (brighten_lo <= 0 || brighten_hi < brighten_lo)
    throw std::invalid_argument("experiment: bad brightness range");
  if (coarse_mode != "perturb" && coarse_mode != "nocs")
    throw std::invalid_argument("experiment: coarse_mode must be perturb|nocs");
  if (!frames_dir.empty() && model_path.empty())
    throw std::invalid_argument("experiment: frames_dir requires model_path");
  refine.validate();
}

Experiment Experiment::load(const std::string& path) {
  const auto kv = parse_kv(path);
  Experiment e;
  auto str = [&](const char* k, std::string& v) {
    if (kv.count(k)) v = kv.at(k);
  };
  auto num = [&](const char* k, double& v) {
    if (kv.count(k)) v = std::stod(kv.at(k));
  };
  auto integer = [&](const char* k, int& v) {
    if (kv.count(k)) v = std::stoi(kv.at(k));
  };
  auto flag = [&](const char* k, bool& v) {
    if (kv.count(k))
      v = kv.at(k) == "1" || kv.at(k) == "true" || kv.at(k) == "yes";
  };
  str("model", e.model_path);
  str("frames_dir", e.frames_dir);
  str("shape", e.synth.shape);
  integer("count", e.synth.count);
  if (kv.count("model_seed")) e.synth.seed = std::stoull(kv.at("model_seed"));
  num("radius", e.synth.radius);
  num("scale_frac", e.synth.scale_frac);
  flag("textureless", e.synth.textureless);
  integer("image_size", e.image_size);
  num("focal_frac", e.focal_frac);
  num("distance", e.distance);
  integer("frames", e.frames);
  if (kv.count("seed")) e.seed = std::stoull(kv.at("seed"));
  str("coarse_mode", e.coarse_mode);
  num("perturb_rot_deg", e.perturb_rot_deg);
  num("perturb_trans_frac", e.perturb_trans_frac);
  num("depth_bias_frac", e.depth_bias_frac);
  num("nocs_noise_sigma", e.nocs_noise_sigma);
  num("brighten_lo", e.brighten_lo);
  num("brighten_hi", e.brighten_hi);
  num("success_rot_deg", e.thresholds.rot_deg);
  num("success_trans_m", e.thresholds.trans_m);
  num("success_add_frac", e.thresholds.add_diameter_frac);
  num("min_rot_rate", e.min_rot_rate);
  e.refine = RefineConfig::load(path);
  e.validate();
  return e;
}

ExperimentRun run_experiment(const Experiment& exp,
                             const std::string& overlay_dir) {
  exp.validate();
  ExperimentRun run;
  run.model = exp.model_path.empty() ? synth_scene(exp.synth)
                                     : load_ply(exp.model_path);
  run.diameter = run.model.diameter();
  run.K.width = run.K.height = exp.image_size;
  run.K.fx = run.K.fy = exp.focal_frac * exp.image_size;
  run.K.cx = run.K.cy = exp.image_size / 2.0;

  // Frames loaded from disk use the poses file for ids and ground truth.
  json disk_frames;
  if (!exp.frames_dir.empty()) {
    std::ifstream in(exp.frames_dir + "/poses.json");
    if (!in) throw std::runtime_error("cannot open poses.json in " + exp.frames_dir);
    json doc = json::parse(in);
    disk_frames = doc.at("frames");
  }
  const int n = exp.frames_dir.empty() ? exp.frames
                                       : static_cast<int>(disk_frames.size());
  run.frames.assign(n, {});

#pragma omp parallel for schedule(dynamic)
  for (int id = 0; id < n; ++id) {
    FrameResult& fr = run.frames[id];
    fr.id = id;
    try {
      std::mt19937_64 rng(exp.seed + static_cast<uint64_t>(id));
      std::uniform_real_distribution<double> u01(0.0, 1.0);

      Frame obs;
      if (exp.frames_dir.empty()) {
        fr.T_true = RigidTransform{
            exp_so3(u01(rng) * M_PI * random_unit(rng)),
            Vec3(0, 0, exp.distance)};
        obs = rasterize(run.model, fr.T_true, run.K);
      } else {
        LoadedFrame lf = load_frame(disk_frames[id], exp.frames_dir, run.K);
        fr.T_true = lf.T_true;
        obs = std::move(lf.obs);
      }
      if (exp.brighten_lo != 1.0 || exp.brighten_hi != 1.0) {
        const double factor =
            exp.brighten_lo + u01(rng) * (exp.brighten_hi - exp.brighten_lo);
        for (double& v : obs.rgb) v = std::min(1.0, v * factor);
      }

      if (exp.coarse_mode == "nocs") {
        Frame nocs = rasterize(run.model, fr.T_true, run.K, RenderMode::Nocs);
        if (exp.nocs_noise_sigma > 0) {
          std::normal_distribution<double> noise(0.0, exp.nocs_noise_sigma);
          for (double& v : nocs.rgb)
            v = std::clamp(v + noise(rng), 0.0, 1.0);
        }
        fr.T_coarse = coarse_estimate(nocs, run.model.bounds(), run.K);
      } else {
        const double ang = u01(rng) * exp.perturb_rot_deg * M_PI / 180.0;
        const Vec3 axis = random_unit(rng);
        const Vec3 dt =
            random_unit(rng) * (u01(rng) * exp.perturb_trans_frac * run.diameter);
        fr.T_coarse =
            fr.T_true * RigidTransform{exp_so3(ang * axis), Vec3::Zero()};
        fr.T_coarse.t += dt;
      }
      fr.T_coarse.t.z() *= 1.0 + exp.depth_bias_frac;
      fr.err_coarse = pose_errors(fr.T_true, fr.T_coarse);

      const RefineResult res =
          refine_pipeline(run.model, obs, run.K, fr.T_coarse, exp.refine);
      fr.T_precise = res.pose;
      fr.final_loss = res.final_loss;
      fr.trace_length = res.trace.size();
      PointCloud cloud;
      cloud.points = run.model.positions;
      cloud.frame_tag = FrameTag::Object;
      fr.err_precise = pose_errors(cloud, fr.T_true, fr.T_precise);
      fr.ok = true;

      if (!overlay_dir.empty()) {
        Frame pred = rasterize(run.model, fr.T_precise, run.K);
        Frame blend = obs;
        for (std::size_t i = 0; i < blend.rgb.size(); ++i)
          blend.rgb[i] = 0.5 * blend.rgb[i] + 0.5 * pred.rgb[i];
        if (fr.err_precise.rotation_deg >= exp.thresholds.rot_deg)
          draw_border(blend, Vec3(1, 0, 0), 3);
        char name[64];
        std::snprintf(name, sizeof(name), "/overlay_%03d.png", id);
        save_rgb_png(blend, overlay_dir + name);
      }
    } catch (const std::exception& ex) {
      fr.ok = false;
      fr.error = ex.what();
      if (!overlay_dir.empty()) {
        Frame blank = Frame::zeros(run.K.width, run.K.height);
        draw_border(blank, Vec3(1, 0, 0), 3);
        char name[64];
        std::snprintf(name, sizeof(name), "/overlay_%03d.png", id);
        try {
          save_rgb_png(blank, overlay_dir + name);
        } catch (const std::exception&) {
        }
      }
    }
  }

  std::vector<PoseError> errors;
  run.all_frames_ok = true;
  for (const FrameResult& fr : run.frames) {
    if (fr.ok)
      errors.push_back(fr.err_precise);
    else
      run.all_frames_ok = false;
  }
  if (!errors.empty())
    run.report = success_report(errors, run.diameter, exp.thresholds);
  run.thresholds_met =
      run.report.count > 0 && run.report.rot_rate >= exp.min_rot_rate;
  return run;
}

std::vector<AblationRow> run_ablation(const Experiment& exp) {
  struct Toggle {
    const char* label;
    bool icp, camera, object, light;
  };
  const Toggle toggles[] = {
      {"coarse only", false, false, false, false},
      {"+ registration", true, false, false, false},
      {"+ camera stage", true, true, false, false},
      {"+ object stage", true, true, true, false},
      {"camera + object only", false, true, true, false},
      {"full pipeline", true, true, true, true},
  };
  std::vector<AblationRow> rows;
  for (const Toggle& t : toggles) {
    Experiment e = exp;
    e.refine.gs_icp_enabled = t.icp;
    e.refine.camera_enabled = t.camera;
    e.refine.object_enabled = t.object;
    e.refine.gs_light_enabled = t.light;
    const ExperimentRun r = run_experiment(e);
    rows.push_back({t.label, e.refine, r.report, r.all_frames_ok});
  }
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "configuration           icp cam obj light   R<5deg   R&t     ADD\n";
  for (const AblationRow& r : rows) {
    char line[160];
    std::snprintf(line, sizeof(line),
                  "%-23s %-3s %-3s %-3s %-5s   %6.3f  %6.3f  %6.3f\n",
                  r.label.c_str(), r.config.gs_icp_enabled ? "on" : "off",
                  r.config.camera_enabled ? "on" : "off",
                  r.config.object_enabled ? "on" : "off",
                  r.config.gs_light_enabled ? "on" : "off", r.report.rot_rate,
                  r.report.rot_trans_rate, r.report.add_rate);
    out << line;
  }
  return out.str();
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  uint64_t h = 1469598103934665603ull;
  char c;
  while (in.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace gs2pose::tools
