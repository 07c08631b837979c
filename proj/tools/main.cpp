#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "experiment.hpp"
#include "gs2pose/render.hpp"

using namespace gs2pose;
using namespace gs2pose::tools;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json pose_json(const RigidTransform& T) {
  json m = json::array();
  const Mat4 M = T.matrix();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m.push_back(M(r, c));
  const Vec6 tw = log_se3(T).vec();
  json twist = json::array();
  for (int i = 0; i < 6; ++i) twist.push_back(tw[i]);
  return {{"T_m_c", m}, {"twist", twist}};
}

RigidTransform pose_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  const json doc = json::parse(in);
  Mat4 M;
  const json& m = doc.at("T_m_c");
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) M(r, c) = m.at(4 * r + c).get<double>();
  return RigidTransform::fromMatrix(M);
}

json camera_json(const CameraIntrinsics& K) {
  return {{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy},
          {"width", K.width}, {"height", K.height}};
}

void write_manifest(const std::string& out_dir, const std::string& config_path,
                    uint64_t seed, const std::string& command) {
  json m = {{"command", command},
            {"seed", seed},
            {"versions",
             {{"gs2pose", "1.0.0"},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                            std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)}}}};
  if (!config_path.empty()) m["config_hash"] = file_hash(config_path);
  std::ofstream out(out_dir + "/manifest.json");
  out << m.dump(2) << "\n";
}

json report_json(const SuccessReport& r) {
  return {{"count", r.count},
          {"add_rate", r.add_rate},
          {"add_s_rate", r.add_s_rate},
          {"rot_rate", r.rot_rate},
          {"rot_trans_rate", r.rot_trans_rate}};
}

void write_histogram_csv(const SuccessReport& r, const std::string& path) {
  std::ofstream out(path);
  out << "angle_deg,count\n";
  for (std::size_t i = 0; i < r.angle_histogram.size(); ++i)
    out << i << "," << r.angle_histogram[i] << "\n";
}

json results_json(const Experiment& exp, const ExperimentRun& run) {
  json frames = json::array();
  for (const FrameResult& fr : run.frames) {
    json f = {{"id", fr.id}, {"ok", fr.ok}};
    if (fr.ok) {
      f["T_true"] = pose_json(fr.T_true);
      f["T_coarse"] = pose_json(fr.T_coarse);
      f["T_precise"] = pose_json(fr.T_precise);
      f["rotation_deg"] = fr.err_precise.rotation_deg;
      f["translation_m"] = fr.err_precise.translation_m;
      f["add"] = fr.err_precise.add;
      f["add_s"] = fr.err_precise.add_s;
      f["coarse_rotation_deg"] = fr.err_coarse.rotation_deg;
      f["final_loss"] = fr.final_loss;
      f["trace_length"] = fr.trace_length;
    } else {
      f["error"] = fr.error;
    }
    frames.push_back(f);
  }
  return {{"diameter", run.diameter},
          {"camera", camera_json(run.K)},
          {"thresholds",
           {{"rot_deg", exp.thresholds.rot_deg},
            {"trans_m", exp.thresholds.trans_m},
            {"add_diameter_frac", exp.thresholds.add_diameter_frac},
            {"min_rot_rate", exp.min_rot_rate}}},
          {"frames", frames},
          {"report", report_json(run.report)},
          {"all_frames_ok", run.all_frames_ok},
          {"thresholds_met", run.thresholds_met}};
}

int cmd_synth(const std::string& config, const std::string& out_dir,
              int views, uint64_t seed_override, bool has_seed) {
  Experiment exp =
      config.empty() ? Experiment{} : Experiment::load(config);
  if (has_seed) exp.seed = seed_override;
  if (views > 0) exp.frames = views;
  exp.validate();
  fs::create_directories(out_dir);

  const GaussianModel model = exp.model_path.empty()
                                  ? synth_scene(exp.synth)
                                  : load_ply(exp.model_path);
  save_ply(model, out_dir + "/model.ply");
  CameraIntrinsics K;
  K.width = K.height = exp.image_size;
  K.fx = K.fy = exp.focal_frac * exp.image_size;
  K.cx = K.cy = exp.image_size / 2.0;

  json frames = json::array();
  for (int id = 0; id < exp.frames; ++id) {
    std::mt19937_64 rng(exp.seed + static_cast<uint64_t>(id));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> g;
    Vec3 axis(g(rng), g(rng), g(rng));
    while (axis.norm() < 1e-6) axis = Vec3(g(rng), g(rng), g(rng));
    const RigidTransform T{exp_so3(u01(rng) * M_PI * axis.normalized()),
                           Vec3(0, 0, exp.distance)};
    const Frame f = rasterize(model, T, K);
    const Frame nocs = rasterize(model, T, K, RenderMode::Nocs);
    char base[32];
    std::snprintf(base, sizeof(base), "view_%03d", id);
    const std::string stem = out_dir + "/" + base;
    save_rgb_png(f, stem + "_rgb.png");
    save_depth_png(f, stem + "_depth.png");
    save_mask_png(f, stem + "_mask.png");
    save_rgb_png(nocs, stem + "_nocs.png");
    json fr = pose_json(T);
    fr["id"] = id;
    fr["rgb"] = std::string(base) + "_rgb.png";
    fr["depth"] = std::string(base) + "_depth.png";
    fr["mask"] = std::string(base) + "_mask.png";
    fr["nocs"] = std::string(base) + "_nocs.png";
    frames.push_back(fr);
  }
  json doc = {{"model", "model.ply"},
              {"camera", camera_json(K)},
              {"frames", frames}};
  std::ofstream(out_dir + "/poses.json") << doc.dump(2) << "\n";
  write_manifest(out_dir, config, exp.seed, "synth");
  std::cout << "wrote " << exp.frames << " views to " << out_dir << "\n";
  return 0;
}

int cmd_render(const std::string& model_path, const std::string& pose_path,
               const std::string& out_dir, int size, double focal_frac,
               double distance) {
  const GaussianModel model = load_ply(model_path);
  CameraIntrinsics K;
  K.width = K.height = size;
  K.fx = K.fy = focal_frac * size;
  K.cx = K.cy = size / 2.0;
  const RigidTransform T = pose_path.empty()
                               ? RigidTransform{Mat3::Identity(),
                                                Vec3(0, 0, distance)}
                               : pose_from_file(pose_path);
  fs::create_directories(out_dir);
  const Frame f = rasterize(model, T, K);
  save_rgb_png(f, out_dir + "/rgb.png");
  save_depth_png(f, out_dir + "/depth.png");
  save_mask_png(f, out_dir + "/mask.png");
  save_rgb_png(rasterize(model, T, K, RenderMode::Nocs), out_dir + "/nocs.png");
  std::cout << "rendered " << model.size() << " splats to " << out_dir << "\n";
  return 0;
}

int cmd_coarse(const std::string& model_path, const std::string& nocs_path,
               const std::string& out_path, double focal_frac) {
  const GaussianModel model = load_ply(model_path);
  Frame nocs;
  load_rgb_png(nocs, nocs_path);
  nocs.mask.clear();  // decode gates on brightness, not on a stored mask
  CameraIntrinsics K;
  K.width = nocs.width;
  K.height = nocs.height;
  K.fx = K.fy = focal_frac * nocs.width;
  K.cx = nocs.width / 2.0;
  K.cy = nocs.height / 2.0;
  const RigidTransform T = coarse_estimate(nocs, model.bounds(), K);
  std::ofstream(out_path) << pose_json(T).dump(2) << "\n";
  std::cout << "coarse pose written to " << out_path << "\n";
  return 0;
}

int cmd_refine(const std::string& config, const std::string& out_dir) {
  const Experiment exp = Experiment::load(config);
  fs::create_directories(out_dir);
  const ExperimentRun run = run_experiment(exp, out_dir);
  std::ofstream(out_dir + "/results.json")
      << results_json(exp, run).dump(2) << "\n";
  write_histogram_csv(run.report, out_dir + "/angle_histogram.csv");
  write_manifest(out_dir, config, exp.seed, "refine");
  std::cout << "frames " << run.frames.size() << ", R<"
            << exp.thresholds.rot_deg << "deg rate " << run.report.rot_rate
            << "\n";
  return run.all_frames_ok && run.thresholds_met ? 0 : 1;
}

int cmd_eval(const std::string& results_path, const std::string& out_dir,
             double rot_deg, double trans_m, double add_frac) {
  std::ifstream in(results_path);
  if (!in) throw std::runtime_error("cannot open " + results_path);
  const json doc = json::parse(in);
  std::vector<PoseError> errors;
  bool all_ok = true;
  for (const json& f : doc.at("frames")) {
    if (!f.at("ok").get<bool>()) {
      all_ok = false;
      continue;
    }
    PoseError e;
    e.rotation_deg = f.at("rotation_deg").get<double>();
    e.translation_m = f.at("translation_m").get<double>();
    e.add = f.at("add").get<double>();
    e.add_s = f.at("add_s").get<double>();
    errors.push_back(e);
  }
  if (errors.empty()) throw std::runtime_error("no successful frames to evaluate");
  SuccessThresholds th;
  th.rot_deg = rot_deg;
  th.trans_m = trans_m;
  th.add_diameter_frac = add_frac;
  const SuccessReport rep =
      success_report(errors, doc.at("diameter").get<double>(), th);
  fs::create_directories(out_dir);
  json out = {{"report", report_json(rep)},
              {"thresholds",
               {{"rot_deg", th.rot_deg},
                {"trans_m", th.trans_m},
                {"add_diameter_frac", th.add_diameter_frac}}},
              {"all_frames_ok", all_ok}};
  std::ofstream(out_dir + "/report.json") << out.dump(2) << "\n";
  write_histogram_csv(rep, out_dir + "/angle_histogram.csv");
  std::cout << "R<" << th.rot_deg << "deg rate " << rep.rot_rate << " over "
            << rep.count << " frames\n";
  return 0;
}

int cmd_ablate(const std::string& config, const std::string& out_dir) {
  const Experiment exp = Experiment::load(config);
  fs::create_directories(out_dir);
  const std::vector<AblationRow> rows = run_ablation(exp);
  const std::string table = format_ablation_table(rows);
  std::cout << table;
  std::ofstream(out_dir + "/ablation.txt") << table;
  json jrows = json::array();
  for (const AblationRow& r : rows)
    jrows.push_back({{"label", r.label},
                     {"gs_icp", r.config.gs_icp_enabled},
                     {"camera", r.config.camera_enabled},
                     {"object", r.config.object_enabled},
                     {"gs_light", r.config.gs_light_enabled},
                     {"report", report_json(r.report)},
                     {"all_frames_ok", r.all_frames_ok}});
  std::ofstream(out_dir + "/ablation.json")
      << json{{"rows", jrows}}.dump(2) << "\n";
  write_manifest(out_dir, config, exp.seed, "ablate");

  bool ok = true;
  for (const AblationRow& r : rows) {
    if (!r.all_frames_ok) ok = false;
    if (r.report.rot_rate > rows.back().report.rot_rate) ok = false;
  }
  return ok ? 0 : 1;
}

int cmd_report(const std::string& results_path, const std::string& out_dir) {
  std::ifstream in(results_path);
  if (!in) throw std::runtime_error("cannot open " + results_path);
  const json doc = json::parse(in);
  fs::create_directories(out_dir);
  std::ostringstream text;
  const json& rep = doc.at("report");
  text << "frames:            " << doc.at("frames").size() << "\n"
       << "diameter:          " << doc.at("diameter").get<double>() << " m\n"
       << "R<" << doc.at("thresholds").at("rot_deg").get<double>()
       << "deg rate:       " << rep.at("rot_rate").get<double>() << "\n"
       << "R&t rate:          " << rep.at("rot_trans_rate").get<double>() << "\n"
       << "ADD rate:          " << rep.at("add_rate").get<double>() << "\n"
       << "ADD-S rate:        " << rep.at("add_s_rate").get<double>() << "\n"
       << "all frames ok:     " << doc.at("all_frames_ok").get<bool>() << "\n"
       << "thresholds met:    " << doc.at("thresholds_met").get<bool>() << "\n";
  for (const json& f : doc.at("frames"))
    if (!f.at("ok").get<bool>())
      text << "frame " << f.at("id").get<int>() << " FAILED: "
           << f.at("error").get<std::string>() << "\n";
  std::cout << text.str();
  std::ofstream(out_dir + "/summary.txt") << text.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gs2pose: 6D object pose estimation on Gaussian-splat models"};
  app.require_subcommand(1);

  std::string config, out = "out", model, pose, nocs, results;
  int views = 0, size = 128;
  double focal_frac = 1.2, distance = 0.4;
  double rot_deg = 5.0, trans_m = 0.01, add_frac = 0.1;
  uint64_t seed = 0;
  bool has_seed = false;

  auto* synth = app.add_subcommand("synth", "synthesize a model and views");
  synth->add_option("--config", config, "experiment/config file");
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--views", views, "number of views");
  synth->add_option("--seed", seed, "seed override")
      ->each([&](const std::string&) { has_seed = true; });

  auto* render = app.add_subcommand("render", "render a model at a pose");
  render->add_option("--model", model, "PLY model")->required();
  render->add_option("--pose", pose, "pose JSON (default: frontal)");
  render->add_option("--out", out, "output directory")->required();
  render->add_option("--size", size, "image size in pixels");
  render->add_option("--focal-frac", focal_frac, "focal length / image size");
  render->add_option("--distance", distance, "frontal pose distance, meters");

  auto* coarse = app.add_subcommand("coarse", "NOCS image -> coarse pose");
  coarse->add_option("--model", model, "PLY model")->required();
  coarse->add_option("--nocs", nocs, "NOCS PNG")->required();
  coarse->add_option("--out", out, "output pose JSON")->required();
  coarse->add_option("--focal-frac", focal_frac, "focal length / image size");

  auto* refine = app.add_subcommand("refine", "run the refinement experiment");
  refine->add_option("--experiment", config, "experiment file")->required();
  refine->add_option("--out", out, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "re-evaluate a results file");
  eval->add_option("--results", results, "results.json")->required();
  eval->add_option("--out", out, "output directory")->required();
  eval->add_option("--rot-deg", rot_deg, "rotation success threshold");
  eval->add_option("--trans-m", trans_m, "translation success threshold");
  eval->add_option("--add-frac", add_frac, "ADD threshold, diameter fraction");

  auto* ablate = app.add_subcommand("ablate", "stage-toggle ablation table");
  ablate->add_option("--experiment", config, "experiment file")->required();
  ablate->add_option("--out", out, "output directory")->required();

  auto* report = app.add_subcommand("report", "summarize a results file");
  report->add_option("--results", results, "results.json")->required();
  report->add_option("--out", out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(config, out, views, seed, has_seed);
    if (render->parsed())
      return cmd_render(model, pose, out, size, focal_frac, distance);
    if (coarse->parsed()) return cmd_coarse(model, nocs, out, focal_frac);
    if (refine->parsed()) return cmd_refine(config, out);
    if (eval->parsed())
      return cmd_eval(results, out, rot_deg, trans_m, add_frac);
    if (ablate->parsed()) return cmd_ablate(config, out);
    if (report->parsed()) return cmd_report(results, out);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  }
  return 0;
}
