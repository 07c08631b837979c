#include "gs2pose/camera.hpp"

#include <opencv2/imgcodecs.hpp>
#include <stdexcept>

namespace gs2pose {

void CameraIntrinsics::validate() const {
  if (fx <= 0 || fy <= 0)
    throw std::invalid_argument("CameraIntrinsics: fx, fy must be > 0");
  if (width < 1 || height < 1)
    throw std::invalid_argument("CameraIntrinsics: image size must be >= 1");
}

namespace {

void check_size(const Frame& f) {
  if (f.width < 1 || f.height < 1)
    throw std::invalid_argument("Frame: empty image");
}

}  // namespace

void save_rgb_png(const Frame& f, const std::string& path) {
  check_size(f);
  cv::Mat img(f.height, f.width, CV_8UC3);
  for (int v = 0; v < f.height; ++v) {
    for (int u = 0; u < f.width; ++u) {
      const double* p = f.px(u, v);
      // OpenCV is BGR
      img.at<cv::Vec3b>(v, u) = cv::Vec3b(
          static_cast<uint8_t>(std::clamp(p[2], 0.0, 1.0) * 255.0 + 0.5),
          static_cast<uint8_t>(std::clamp(p[1], 0.0, 1.0) * 255.0 + 0.5),
          static_cast<uint8_t>(std::clamp(p[0], 0.0, 1.0) * 255.0 + 0.5));
    }
  }
  if (!cv::imwrite(path, img))
    throw std::runtime_error("save_rgb_png: cannot write " + path);
}

void save_depth_png(const Frame& f, const std::string& path) {
  check_size(f);
  cv::Mat img(f.height, f.width, CV_16UC1);
  for (int v = 0; v < f.height; ++v) {
    for (int u = 0; u < f.width; ++u) {
      const double mm = f.depth[static_cast<std::size_t>(v) * f.width + u] * 1000.0;
      img.at<uint16_t>(v, u) =
          static_cast<uint16_t>(std::clamp(mm + 0.5, 0.0, 65535.0));
    }
  }
  if (!cv::imwrite(path, img))
    throw std::runtime_error("save_depth_png: cannot write " + path);
}

void save_mask_png(const Frame& f, const std::string& path) {
  check_size(f);
  if (f.mask.empty()) throw std::invalid_argument("save_mask_png: no mask");
  cv::Mat img(f.height, f.width, CV_8UC1);
  for (int v = 0; v < f.height; ++v)
    for (int u = 0; u < f.width; ++u)
      img.at<uint8_t>(v, u) =
          f.mask[static_cast<std::size_t>(v) * f.width + u] ? 255 : 0;
  if (!cv::imwrite(path, img))
    throw std::runtime_error("save_mask_png: cannot write " + path);
}

void load_rgb_png(Frame& f, const std::string& path) {
  cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);
  if (img.empty()) throw std::runtime_error("load_rgb_png: cannot read " + path);
  f.width = img.cols;
  f.height = img.rows;
  f.rgb.resize(3 * f.npix());
  for (int v = 0; v < f.height; ++v) {
    for (int u = 0; u < f.width; ++u) {
      const cv::Vec3b& c = img.at<cv::Vec3b>(v, u);
      double* p = f.px(u, v);
      p[0] = c[2] / 255.0;
      p[1] = c[1] / 255.0;
      p[2] = c[0] / 255.0;
    }
  }
}

void load_depth_png(Frame& f, const std::string& path) {
  cv::Mat img = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (img.empty() || img.type() != CV_16UC1)
    throw std::runtime_error("load_depth_png: cannot read 16-bit " + path);
  if (f.width && (img.cols != f.width || img.rows != f.height))
    throw std::runtime_error("load_depth_png: size mismatch in " + path);
  f.width = img.cols;
  f.height = img.rows;
  f.depth.resize(f.npix());
  for (int v = 0; v < f.height; ++v)
    for (int u = 0; u < f.width; ++u)
      f.depth[static_cast<std::size_t>(v) * f.width + u] =
          img.at<uint16_t>(v, u) / 1000.0;
}

void load_mask_png(Frame& f, const std::string& path) {
  cv::Mat img = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (img.empty()) throw std::runtime_error("load_mask_png: cannot read " + path);
  if (f.width && (img.cols != f.width || img.rows != f.height))
    throw std::runtime_error("load_mask_png: size mismatch in " + path);
  f.width = img.cols;
  f.height = img.rows;
  f.mask.resize(f.npix());
  for (int v = 0; v < f.height; ++v)
    for (int u = 0; u < f.width; ++u)
      f.mask[static_cast<std::size_t>(v) * f.width + u] =
          img.at<uint8_t>(v, u) >= 128 ? 1 : 0;
}

}  // namespace gs2pose
