#include "gs2pose/scene.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace gs2pose {

void GaussianModel::validate() const {
  const std::size_t n = positions.size();
  if (rotations.size() != n || scales.size() != n || opacities.size() != n ||
      sh.size() != n) {
    throw std::invalid_argument("GaussianModel: field sizes disagree");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!positions[i].allFinite())
      throw std::invalid_argument("GaussianModel: non-finite position");
    if (std::abs(rotations[i].norm() - 1.0) > 1e-6)
      throw std::invalid_argument("GaussianModel: non-unit quaternion");
    if (!(scales[i].array() > 0).all())
      throw std::invalid_argument("GaussianModel: non-positive scale");
    if (opacities[i] < 0.0 || opacities[i] > 1.0)
      throw std::invalid_argument("GaussianModel: opacity outside [0,1]");
  }
}

Aabb GaussianModel::bounds() const {
  if (empty()) throw std::invalid_argument("bounds: empty model");
  Aabb box;
  box.min = box.max = positions[0];
  for (const auto& p : positions) {
    box.min = box.min.cwiseMin(p);
    box.max = box.max.cwiseMax(p);
  }
  return box;
}

double GaussianModel::diameter() const {
  if (empty()) throw std::invalid_argument("diameter: empty model");
  double best = 0.0;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    for (std::size_t j = i + 1; j < positions.size(); ++j) {
      best = std::max(best, (positions[i] - positions[j]).squaredNorm());
    }
  }
  return std::sqrt(best);
}

Mat3 covariance(const Eigen::Quaterniond& r, const Vec3& s) {
  if (std::abs(r.norm() - 1.0) > 1e-6) {
    throw std::invalid_argument("covariance: quaternion must be unit-norm");
  }
  const Mat3 R = r.toRotationMatrix();
  const Mat3 RS = R * s.asDiagonal();
  return RS * RS.transpose();
}

double eval_gaussian(const Vec3& x, const Vec3& mu, const Mat3& sigma) {
  Eigen::LDLT<Mat3> ldlt(sigma);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 0.0) {
    throw std::invalid_argument("eval_gaussian: sigma not SPD");
  }
  const Vec3 d = x - mu;
  return std::exp(-0.5 * d.dot(ldlt.solve(d)));
}

namespace {

constexpr double kC0 = 0.28209479177387814;
constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792,
                           0.31539156525252005, -1.0925484305920792,
                           0.5462742152960396};
constexpr double kC3[7] = {-0.5900435899266435, 2.890611442640554,
                           -0.4570457994644658, 0.3731763325901154,
                           -0.4570457994644658, 1.445305721320277,
                           -0.5900435899266435};

}  // namespace

Eigen::Matrix<double, kShCoeffs, 1> sh_basis(const Vec3& dir) {
  const double x = dir.x(), y = dir.y(), z = dir.z();
  const double xx = x * x, yy = y * y, zz = z * z;
  Eigen::Matrix<double, kShCoeffs, 1> b;
  b(0) = kC0;
  b(1) = -kC1 * y;
  b(2) = kC1 * z;
  b(3) = -kC1 * x;
  b(4) = kC2[0] * x * y;
  b(5) = kC2[1] * y * z;
  b(6) = kC2[2] * (2.0 * zz - xx - yy);
  b(7) = kC2[3] * x * z;
  b(8) = kC2[4] * (xx - yy);
  b(9) = kC3[0] * y * (3.0 * xx - yy);
  b(10) = kC3[1] * x * y * z;
  b(11) = kC3[2] * y * (4.0 * zz - xx - yy);
  b(12) = kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
  b(13) = kC3[4] * x * (4.0 * zz - xx - yy);
  b(14) = kC3[5] * z * (xx - yy);
  b(15) = kC3[6] * x * (xx - 3.0 * yy);
  return b;
}

Eigen::Matrix<double, kShCoeffs, 3> sh_basis_grad(const Vec3& dir) {
  const double x = dir.x(), y = dir.y(), z = dir.z();
  const double xx = x * x, yy = y * y, zz = z * z;
  Eigen::Matrix<double, kShCoeffs, 3> g;
  g.setZero();
  g.row(1) << 0, -kC1, 0;
  g.row(2) << 0, 0, kC1;
  g.row(3) << -kC1, 0, 0;
  g.row(4) << kC2[0] * y, kC2[0] * x, 0;
  g.row(5) << 0, kC2[1] * z, kC2[1] * y;
  g.row(6) << -2.0 * kC2[2] * x, -2.0 * kC2[2] * y, 4.0 * kC2[2] * z;
  g.row(7) << kC2[3] * z, 0, kC2[3] * x;
  g.row(8) << 2.0 * kC2[4] * x, -2.0 * kC2[4] * y, 0;
  g.row(9) << kC3[0] * 6.0 * x * y, kC3[0] * (3.0 * xx - 3.0 * yy), 0;
  g.row(10) << kC3[1] * y * z, kC3[1] * x * z, kC3[1] * x * y;
  g.row(11) << -2.0 * kC3[2] * x * y, kC3[2] * (4.0 * zz - xx - 3.0 * yy),
      kC3[2] * 8.0 * y * z;
  g.row(12) << -6.0 * kC3[3] * x * z, -6.0 * kC3[3] * y * z,
      kC3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy);
  g.row(13) << kC3[4] * (4.0 * zz - 3.0 * xx - yy), -2.0 * kC3[4] * x * y,
      kC3[4] * 8.0 * x * z;
  g.row(14) << 2.0 * kC3[5] * x * z, -2.0 * kC3[5] * y * z,
      kC3[5] * (xx - yy);
  g.row(15) << kC3[6] * (3.0 * xx - 3.0 * yy), -kC3[6] * 6.0 * x * y, 0;
  return g;
}

Vec3 eval_sh(const Vec3& dir,
             const Eigen::Matrix<double, 3, kShCoeffs>& coeffs) {
  const Vec3 raw = coeffs * sh_basis(dir) + Vec3::Constant(0.5);
  return raw.cwiseMax(0.0).cwiseMin(1.0);
}

double color_to_dc(double c) { return (c - 0.5) / kC0; }

GaussianModel make_nocs_model(const GaussianModel& model) {
  if (model.empty()) throw std::invalid_argument("make_nocs_model: empty model");
  const Aabb box = model.bounds();
  GaussianModel out = model;
  for (std::size_t i = 0; i < out.size(); ++i) {
    Vec3 nocs;
    for (int a = 0; a < 3; ++a) {
      const double ext = box.max[a] - box.min[a];
      nocs[a] = ext > 0 ? (model.positions[i][a] - box.min[a]) / ext : 0.5;
    }
    out.sh[i].setZero();
    for (int ch = 0; ch < 3; ++ch) out.sh[i](ch, 0) = color_to_dc(nocs[ch]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// PLY I/O, standard 3DGS layout

namespace {

constexpr int kRestCoeffs = 45;  // 15 per channel, channel-major

struct PlyHeader {
  std::size_t count = 0;
  std::vector<std::string> props;
};

PlyHeader read_header(std::istream& in) {
  PlyHeader h;
  std::string line;
  if (!std::getline(in, line) || line != "ply")
    throw std::runtime_error("load_ply: missing ply magic");
  bool le = false;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok == "format") {
      std::string fmt;
      ss >> fmt;
      le = (fmt == "binary_little_endian");
    } else if (tok == "element") {
      std::string name;
      ss >> name >> h.count;
      if (name != "vertex")
        throw std::runtime_error("load_ply: unexpected element " + name);
    } else if (tok == "property") {
      std::string type, name;
      ss >> type >> name;
      if (type != "float")
        throw std::runtime_error("load_ply: only float properties supported");
      h.props.push_back(name);
    } else if (tok == "end_header") {
      if (!le) throw std::runtime_error("load_ply: expected binary_little_endian");
      return h;
    }
  }
  throw std::runtime_error("load_ply: truncated header");
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) {
  p = std::clamp(p, 1e-7, 1.0 - 1e-7);
  return std::log(p / (1.0 - p));
}

}  // namespace

GaussianModel load_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_ply: cannot open " + path);
  const PlyHeader h = read_header(in);
  if (h.count == 0) throw std::runtime_error("load_ply: file has 0 vertices");

  auto index_of = [&](const std::string& name) {
    auto it = std::find(h.props.begin(), h.props.end(), name);
    if (it == h.props.end())
      throw std::runtime_error("load_ply: missing property " + name);
    return static_cast<int>(it - h.props.begin());
  };

  const int ix = index_of("x"), iy = index_of("y"), iz = index_of("z");
  int idc[3], irest[kRestCoeffs], iscale[3], irot[4];
  for (int c = 0; c < 3; ++c) idc[c] = index_of("f_dc_" + std::to_string(c));
  for (int c = 0; c < kRestCoeffs; ++c)
    irest[c] = index_of("f_rest_" + std::to_string(c));
  const int iop = index_of("opacity");
  for (int c = 0; c < 3; ++c) iscale[c] = index_of("scale_" + std::to_string(c));
  for (int c = 0; c < 4; ++c) irot[c] = index_of("rot_" + std::to_string(c));

  GaussianModel m;
  m.positions.resize(h.count);
  m.rotations.resize(h.count);
  m.scales.resize(h.count);
  m.opacities.resize(h.count);
  m.sh.resize(h.count);

  std::vector<float> row(h.props.size());
  for (std::size_t i = 0; i < h.count; ++i) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!in) throw std::runtime_error("load_ply: truncated vertex data");
    m.positions[i] = Vec3(row[ix], row[iy], row[iz]);
    Eigen::Quaterniond q(row[irot[0]], row[irot[1]], row[irot[2]], row[irot[3]]);
    if (q.norm() < 1e-12)
      throw std::runtime_error("load_ply: degenerate quaternion");
    m.rotations[i] = q.normalized();
    for (int c = 0; c < 3; ++c) m.scales[i][c] = std::exp(row[iscale[c]]);
    m.opacities[i] = sigmoid(row[iop]);
    for (int ch = 0; ch < 3; ++ch) {
      m.sh[i](ch, 0) = row[idc[ch]];
      for (int k = 0; k < 15; ++k)
        m.sh[i](ch, k + 1) = row[irest[ch * 15 + k]];
    }
  }
  return m;
}

void save_ply(const GaussianModel& model, const std::string& path) {
  model.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_ply: cannot open " + path);

  out << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << model.size() << "\n";
  const char* fixed[] = {"x", "y", "z", "nx", "ny", "nz"};
  for (const char* p : fixed) out << "property float " << p << "\n";
  for (int c = 0; c < 3; ++c) out << "property float f_dc_" << c << "\n";
  for (int c = 0; c < kRestCoeffs; ++c)
    out << "property float f_rest_" << c << "\n";
  out << "property float opacity\n";
  for (int c = 0; c < 3; ++c) out << "property float scale_" << c << "\n";
  for (int c = 0; c < 4; ++c) out << "property float rot_" << c << "\n";
  out << "end_header\n";

  std::vector<float> row;
  for (std::size_t i = 0; i < model.size(); ++i) {
    row.clear();
    for (int c = 0; c < 3; ++c)
      row.push_back(static_cast<float>(model.positions[i][c]));
    for (int c = 0; c < 3; ++c) row.push_back(0.0f);  // normals
    for (int ch = 0; ch < 3; ++ch)
      row.push_back(static_cast<float>(model.sh[i](ch, 0)));
    for (int ch = 0; ch < 3; ++ch)
      for (int k = 0; k < 15; ++k)
        row.push_back(static_cast<float>(model.sh[i](ch, k + 1)));
    row.push_back(static_cast<float>(logit(model.opacities[i])));
    for (int c = 0; c < 3; ++c)
      row.push_back(static_cast<float>(std::log(model.scales[i][c])));
    const Eigen::Quaterniond& q = model.rotations[i];
    row.push_back(static_cast<float>(q.w()));
    row.push_back(static_cast<float>(q.x()));
    row.push_back(static_cast<float>(q.y()));
    row.push_back(static_cast<float>(q.z()));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
}

// ---------------------------------------------------------------------------
// Synthetic scenes

namespace {

// Orthonormal frame with local z along the surface normal.
Eigen::Quaterniond frame_from_normal(const Vec3& n) {
  const Vec3 up = std::abs(n.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  const Vec3 t1 = up.cross(n).normalized();
  const Vec3 t2 = n.cross(t1);
  Mat3 R;
  R.col(0) = t1;
  R.col(1) = t2;
  R.col(2) = n;
  return Eigen::Quaterniond(R).normalized();
}

}  // namespace

GaussianModel synth_scene(const SynthSpec& spec) {
  if (spec.count < 1) throw std::invalid_argument("synth_scene: count < 1");
  if (spec.shape != "cube" && spec.shape != "sphere" && spec.shape != "blob")
    throw std::invalid_argument("synth_scene: unknown shape " + spec.shape);

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Blob radius field: smooth seeded perturbation over directions. The
  // degree-3 bands give the surface distinct lobes so that geometric
  // registration has unambiguous structure to lock onto.
  Eigen::Matrix<double, kShCoeffs, 1> blob_coeffs;
  for (int k = 0; k < kShCoeffs; ++k) blob_coeffs(k) = gauss(rng);

  GaussianModel m;
  m.positions.reserve(spec.count);
  const double s0 = spec.scale_frac * spec.radius;

  for (int i = 0; i < spec.count; ++i) {
    Vec3 dir(gauss(rng), gauss(rng), gauss(rng));
    while (dir.norm() < 1e-6) dir = Vec3(gauss(rng), gauss(rng), gauss(rng));
    dir.normalize();

    Vec3 mu;
    Vec3 normal;
    if (spec.shape == "sphere") {
      mu = spec.radius * dir;
      normal = dir;
    } else if (spec.shape == "blob") {
      const double f = blob_coeffs.dot(sh_basis(dir));
      const double r = spec.radius * (1.0 + 0.35 * std::tanh(f));
      mu = r * dir;
      normal = dir;  // approximate; fine for splat orientation
    } else {  // cube surface
      const int face = static_cast<int>(uni(rng) * 6.0) % 6;
      const int axis = face / 2;
      const double sign = (face % 2 == 0) ? 1.0 : -1.0;
      mu[axis] = sign * spec.radius;
      mu[(axis + 1) % 3] = (2.0 * uni(rng) - 1.0) * spec.radius;
      mu[(axis + 2) % 3] = (2.0 * uni(rng) - 1.0) * spec.radius;
      normal = sign * Vec3::Unit(axis);
    }

    m.positions.push_back(mu);
    m.rotations.push_back(frame_from_normal(normal));
    const double jitter = std::exp(0.2 * gauss(rng));
    m.scales.emplace_back(s0 * jitter, s0 * jitter, 0.3 * s0 * jitter);
    m.opacities.push_back(0.8 + 0.2 * uni(rng));

    Eigen::Matrix<double, 3, kShCoeffs> sh;
    sh.setZero();
    if (spec.textureless) {
      for (int ch = 0; ch < 3; ++ch)
        sh(ch, 0) = color_to_dc(spec.base_color[ch]);
    } else {
      // Spatially correlated stripes so neighboring splats share color.
      for (int ch = 0; ch < 3; ++ch) {
        const double phase = 6.0 * mu[(ch + i % 3) % 3] / spec.radius;
        const double c = std::clamp(
            spec.base_color[ch] + 0.3 * std::sin(phase + ch), 0.05, 0.95);
        sh(ch, 0) = color_to_dc(c);
        sh(ch, 1 + ch) = 0.1 * gauss(rng);  // mild view dependence
      }
    }
    m.sh.push_back(sh);
  }
  return m;
}

}  // namespace gs2pose
