// Serial reference rasterizer: every pixel against every sorted splat,
// no tile binning, no OpenMP. The parallel path in render.cpp must match
// this bit for bit.

#include <cmath>
#include <stdexcept>

#include "gs2pose/render_detail.hpp"

namespace gs2pose {

Frame rasterize_reference(const GaussianModel& model, const RigidTransform& T,
                          const CameraIntrinsics& K, RenderMode mode,
                          const RasterOptions& opts) {
  K.validate();
  if (model.empty()) throw std::invalid_argument("rasterize: empty model");
  if (mode == RenderMode::Nocs) {
    return rasterize_reference(make_nocs_model(model), T, K, RenderMode::All,
                               opts);
  }
  const auto splats = detail::prepare_splats(model, T, K, opts);
  Frame out = Frame::zeros(K.width, K.height);

  for (int v = 0; v < K.height; ++v) {
    for (int u = 0; u < K.width; ++u) {
      double transmittance = 1.0;
      double acc_alpha = 0.0;
      double depth_num = 0.0;
      Vec3 rgb = Vec3::Zero();
      for (const auto& s : splats) {
        if (u < s.x0 || u > s.x1 || v < s.y0 || v > s.y1) continue;
        const Vec2 d(u - s.p.x(), v - s.p.y());
        const double g = std::exp(-0.5 * d.dot(s.inv_sigma * d));
        double alpha = std::min(s.opacity * g, 0.999);
        if (alpha < 1e-4) continue;
        const double w = alpha * transmittance;
        rgb += w * s.color;
        depth_num += w * s.z;
        acc_alpha += w;
        transmittance *= 1.0 - alpha;
        if (transmittance < 1e-4) break;
      }
      const std::size_t idx = static_cast<std::size_t>(v) * K.width + u;
      const bool covered = acc_alpha >= opts.alpha_coverage;
      if (mode != RenderMode::Depth) {
        out.rgb[3 * idx + 0] = std::clamp(rgb.x(), 0.0, 1.0);
        out.rgb[3 * idx + 1] = std::clamp(rgb.y(), 0.0, 1.0);
        out.rgb[3 * idx + 2] = std::clamp(rgb.z(), 0.0, 1.0);
      }
      if (mode != RenderMode::Color && covered)
        out.depth[idx] = depth_num / acc_alpha;
      out.mask[idx] = covered ? 1 : 0;
    }
  }
  return out;
}

}  // namespace gs2pose
