#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gs2pose/lie.hpp"

namespace gs2pose {

/// Pinhole model.
struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const;

  /// Pixel coordinates of a camera-frame point (z > 0 assumed).
  Vec2 project(const Vec3& p) const {
    return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy};
  }

  /// Unit-z ray direction through a pixel.
  Vec3 ray(double u, double v) const {
    return {(u - cx) / fx, (v - cy) / fy, 1.0};
  }
};

/// RGB in [0,1] (row-major, 3 channels), depth in meters (0 = invalid),
/// optional mask (empty or H*W of 0/1).
struct Frame {
  int width = 0, height = 0;
  std::vector<double> rgb;    // size 3*W*H, pixel-interleaved
  std::vector<double> depth;  // size W*H
  std::vector<uint8_t> mask;  // size W*H or empty

  static Frame zeros(int w, int h, bool with_mask = true) {
    Frame f;
    f.width = w;
    f.height = h;
    f.rgb.assign(static_cast<std::size_t>(3) * w * h, 0.0);
    f.depth.assign(static_cast<std::size_t>(w) * h, 0.0);
    if (with_mask) f.mask.assign(static_cast<std::size_t>(w) * h, 0);
    return f;
  }

  std::size_t npix() const { return static_cast<std::size_t>(width) * height; }
  double* px(int u, int v) { return &rgb[3 * (static_cast<std::size_t>(v) * width + u)]; }
  const double* px(int u, int v) const {
    return &rgb[3 * (static_cast<std::size_t>(v) * width + u)];
  }
  bool masked(std::size_t i) const { return mask.empty() || mask[i] != 0; }
};

// PNG I/O: RGB as 8-bit, depth as 16-bit millimeters, mask as {0,255}.
void save_rgb_png(const Frame& f, const std::string& path);
void save_depth_png(const Frame& f, const std::string& path);
void save_mask_png(const Frame& f, const std::string& path);
void load_rgb_png(Frame& f, const std::string& path);
void load_depth_png(Frame& f, const std::string& path);
void load_mask_png(Frame& f, const std::string& path);

}  // namespace gs2pose
