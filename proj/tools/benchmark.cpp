// Timing comparison between the tiled OpenMP rasterizer and the serial
// reference path, plus a bit-identity check between the two.
#include <chrono>
#include <cstdio>
#include <string>

#include "gs2pose/render.hpp"

using namespace gs2pose;
using Clock = std::chrono::steady_clock;

namespace {

double time_ms(const GaussianModel& model, const RigidTransform& T,
               const CameraIntrinsics& K, bool reference, int reps) {
  RasterOptions opts;
  opts.parallel = !reference;
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = Clock::now();
    const Frame f = reference ? rasterize_reference(model, T, K,
                                                    RenderMode::All, opts)
                              : rasterize(model, T, K, RenderMode::All, opts);
    const auto t1 = Clock::now();
    (void)f;
    best = std::min(best,
                    std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

bool identical(const Frame& a, const Frame& b) {
  return a.rgb == b.rgb && a.depth == b.depth && a.mask == b.mask;
}

}  // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::stoi(argv[1]) : 3;
  std::printf("%8s %6s %12s %12s %8s %5s\n", "splats", "px", "tiled(ms)",
              "serial(ms)", "speedup", "same");
  for (int count : {500, 2000, 8000}) {
    for (int size : {128, 256}) {
      SynthSpec spec;
      spec.shape = "blob";
      spec.count = count;
      spec.seed = 7;
      const GaussianModel model = synth_scene(spec);
      CameraIntrinsics K;
      K.width = K.height = size;
      K.fx = K.fy = 1.2 * size;
      K.cx = K.cy = size / 2.0;
      const RigidTransform T{Mat3::Identity(), Vec3(0, 0, 0.4)};

      const Frame tiled = rasterize(model, T, K);
      const Frame serial = rasterize_reference(model, T, K);
      const double t_tiled = time_ms(model, T, K, false, reps);
      const double t_serial = time_ms(model, T, K, true, reps);
      std::printf("%8d %6d %12.2f %12.2f %7.2fx %5s\n", count, size, t_tiled,
                  t_serial, t_serial / t_tiled,
                  identical(tiled, serial) ? "yes" : "NO");
    }
  }
  return 0;
}
