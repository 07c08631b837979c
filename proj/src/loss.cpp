#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "gs2pose/render.hpp"

namespace gs2pose {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gauss_kernel() {
  std::array<double, kWindow> k{};
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double x = i - kWindow / 2;
    k[i] = std::exp(-x * x / (2.0 * kSigma * kSigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable zero-padded "same" convolution. The kernel is symmetric, so
// this is its own adjoint.
void gauss_filter(const std::vector<double>& in, std::vector<double>& out,
                  int width, int height) {
  static const std::array<double, kWindow> k = gauss_kernel();
  const int half = kWindow / 2;
  std::vector<double> tmp(in.size());
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      double acc = 0.0;
      for (int i = -half; i <= half; ++i) {
        const int uu = u + i;
        if (uu < 0 || uu >= width) continue;
        acc += k[i + half] * in[static_cast<std::size_t>(v) * width + uu];
      }
      tmp[static_cast<std::size_t>(v) * width + u] = acc;
    }
  }
  out.resize(in.size());
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      double acc = 0.0;
      for (int i = -half; i <= half; ++i) {
        const int vv = v + i;
        if (vv < 0 || vv >= height) continue;
        acc += k[i + half] * tmp[static_cast<std::size_t>(vv) * width + u];
      }
      out[static_cast<std::size_t>(v) * width + u] = acc;
    }
  }
}

struct SsimResult {
  double mean = 0.0;
  std::vector<double> d_b;  // d mean / d b, per pixel (single channel)
};

// SSIM of one channel plus the gradient w.r.t. the second image.
SsimResult ssim_channel(const std::vector<double>& a,
                        const std::vector<double>& b, int width, int height,
                        bool want_grad) {
  const std::size_t n = a.size();
  std::vector<double> mu1, mu2, aa(n), bb(n), ab(n), s1, s2, s12;
  gauss_filter(a, mu1, width, height);
  gauss_filter(b, mu2, width, height);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  gauss_filter(aa, s1, width, height);
  gauss_filter(bb, s2, width, height);
  gauss_filter(ab, s12, width, height);
  for (std::size_t i = 0; i < n; ++i) {
    s1[i] -= mu1[i] * mu1[i];
    s2[i] -= mu2[i] * mu2[i];
    s12[i] -= mu1[i] * mu2[i];
  }

  SsimResult res;
  std::vector<double> w_mu2, w_s2, w_s12;
  if (want_grad) {
    w_mu2.resize(n);
    w_s2.resize(n);
    w_s12.resize(n);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double A1 = 2.0 * mu1[i] * mu2[i] + kC1;
    const double A2 = 2.0 * s12[i] + kC2;
    const double B1 = mu1[i] * mu1[i] + mu2[i] * mu2[i] + kC1;
    const double B2 = s1[i] + s2[i] + kC2;
    const double S = (A1 * A2) / (B1 * B2);
    res.mean += S;
    if (want_grad) {
      const double dS_dmu2 = 2.0 * mu1[i] * A2 / (B1 * B2) - S * 2.0 * mu2[i] / B1;
      const double dS_ds2 = -S / B2;
      const double dS_ds12 = 2.0 * A1 / (B1 * B2);
      w_mu2[i] = dS_dmu2 - 2.0 * mu2[i] * dS_ds2 - mu1[i] * dS_ds12;
      w_s2[i] = dS_ds2;
      w_s12[i] = dS_ds12;
    }
  }
  res.mean /= static_cast<double>(n);
  if (want_grad) {
    std::vector<double> g1, g2, g3;
    gauss_filter(w_mu2, g1, width, height);
    gauss_filter(w_s2, g2, width, height);
    gauss_filter(w_s12, g3, width, height);
    res.d_b.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      res.d_b[i] = (g1[i] + 2.0 * b[i] * g2[i] + a[i] * g3[i]) /
                   static_cast<double>(n);
    }
  }
  return res;
}

}  // namespace

double ssim(const std::vector<double>& a, const std::vector<double>& b,
            int width, int height, int channels) {
  if (a.size() != b.size() ||
      a.size() != static_cast<std::size_t>(width) * height * channels)
    throw std::invalid_argument("ssim: size mismatch");
  double acc = 0.0;
  std::vector<double> ca(static_cast<std::size_t>(width) * height), cb(ca.size());
  for (int ch = 0; ch < channels; ++ch) {
    for (std::size_t i = 0; i < ca.size(); ++i) {
      ca[i] = a[i * channels + ch];
      cb[i] = b[i * channels + ch];
    }
    acc += ssim_channel(ca, cb, width, height, false).mean;
  }
  return acc / channels;
}

LossResult loss(const Frame& obs, const Frame& pred, double lambda,
                double beta) {
  if (obs.width != pred.width || obs.height != pred.height)
    throw std::invalid_argument("loss: frame size mismatch");
  const std::size_t n = obs.npix();

  // Joint mask: observation mask intersected with rendered coverage.
  std::vector<uint8_t> m(n);
  std::size_t n_mask = 0;
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = obs.masked(i) && pred.masked(i);
    n_mask += m[i];
  }

  LossResult res;
  res.d_rgb.assign(3 * n, 0.0);
  res.d_depth.assign(n, 0.0);

  // L1 color term over the joint mask
  if (n_mask > 0) {
    const double inv = 1.0 / (3.0 * static_cast<double>(n_mask));
    for (std::size_t i = 0; i < n; ++i) {
      if (!m[i]) continue;
      for (int ch = 0; ch < 3; ++ch) {
        const double diff = pred.rgb[3 * i + ch] - obs.rgb[3 * i + ch];
        res.l_image += std::abs(diff) * inv;
        res.d_rgb[3 * i + ch] +=
            lambda * inv * (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0));
      }
    }
  }

  // DSSIM on masked copies (non-mask pixels zeroed in both images)
  {
    std::vector<double> ca(n), cb(n);
    double mean_ssim = 0.0;
    std::vector<std::vector<double>> grads(3);
    for (int ch = 0; ch < 3; ++ch) {
      for (std::size_t i = 0; i < n; ++i) {
        ca[i] = m[i] ? obs.rgb[3 * i + ch] : 0.0;
        cb[i] = m[i] ? pred.rgb[3 * i + ch] : 0.0;
      }
      SsimResult sr = ssim_channel(ca, cb, obs.width, obs.height, true);
      mean_ssim += sr.mean / 3.0;
      grads[ch] = std::move(sr.d_b);
    }
    res.l_dssim = (1.0 - mean_ssim) / 2.0;
    const double scale = (1.0 - lambda) * (-0.5) / 3.0;
    for (int ch = 0; ch < 3; ++ch)
      for (std::size_t i = 0; i < n; ++i)
        if (m[i]) res.d_rgb[3 * i + ch] += scale * grads[ch][i];
  }

  // Depth L1 over pixels valid in both frames
  {
    std::size_t nd = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (m[i] && obs.depth[i] > 0 && pred.depth[i] > 0) ++nd;
    if (nd > 0) {
      const double inv = 1.0 / static_cast<double>(nd);
      for (std::size_t i = 0; i < n; ++i) {
        if (!(m[i] && obs.depth[i] > 0 && pred.depth[i] > 0)) continue;
        const double diff = pred.depth[i] - obs.depth[i];
        res.l_depth += std::abs(diff) * inv;
        res.d_depth[i] =
            beta * inv * (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0));
      }
    }
  }

  res.value = lambda * res.l_image + (1.0 - lambda) * res.l_dssim +
              beta * res.l_depth;
  return res;
}

}  // namespace gs2pose
