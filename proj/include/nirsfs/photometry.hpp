#pragma once
// Lambertian image formation, photometric-stereo recovery, and the
// [-1, 1] tensor encoding of normal maps.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nirsfs/error.hpp"
#include "nirsfs/tensor.hpp"

namespace nirsfs {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 normalized() const {
    const double n = norm();
    return {x / n, y / n, z / n};
  }
};

/// Per-pixel scalar field, row-major (row = y, column = x).
struct ScalarField {
  std::size_t width = 0, height = 0;
  std::vector<double> values;

  ScalarField() = default;
  ScalarField(std::size_t w, std::size_t h, double fill = 0.0)
      : width(w), height(h), values(w * h, fill) {}

  double& at(std::size_t x, std::size_t y) { return values[y * width + x]; }
  double at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
};

/// H×W field of unit normals facing the camera (nz >= 0).
class NormalMap {
 public:
  NormalMap() = default;
  NormalMap(std::size_t width, std::size_t height, Vec3 fill = {0.0, 0.0, 1.0})
      : width_(width), height_(height), normals_(width * height, fill) {}

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t size() const { return normals_.size(); }

  Vec3& at(std::size_t x, std::size_t y) { return normals_[y * width_ + x]; }
  const Vec3& at(std::size_t x, std::size_t y) const { return normals_[y * width_ + x]; }
  Vec3& operator[](std::size_t i) { return normals_[i]; }
  const Vec3& operator[](std::size_t i) const { return normals_[i]; }
  std::span<const Vec3> normals() const { return normals_; }

  bool satisfies_invariants(double tol = 1e-4) const {
    return std::all_of(normals_.begin(), normals_.end(), [tol](const Vec3& n) {
      return std::abs(n.norm() - 1.0) <= tol && n.z >= 0.0;
    });
  }

  bool same_extent(const NormalMap& o) const { return width_ == o.width_ && height_ == o.height_; }

 private:
  std::size_t width_ = 0, height_ = 0;
  std::vector<Vec3> normals_;
};

enum class Radiance { Raw, Normalized };

/// Scalar NIR radiance. Raw values are >= 0 (albedo·cos in [0,1] for rendered
/// data); normalized values are 2·raw − 1, in [−1, 1].
struct NirImage {
  ScalarField field;
  Radiance encoding = Radiance::Normalized;

  std::size_t width() const { return field.width; }
  std::size_t height() const { return field.height; }
  double at(std::size_t x, std::size_t y) const { return field.at(x, y); }

  NirImage as_raw() const {
    if (encoding == Radiance::Raw) return *this;
    NirImage out = *this;
    for (auto& v : out.field.values) v = 0.5 * (v + 1.0);
    out.encoding = Radiance::Raw;
    return out;
  }
  NirImage as_normalized() const {
    if (encoding == Radiance::Normalized) return *this;
    NirImage out = *this;
    for (auto& v : out.field.values) v = 2.0 * v - 1.0;
    out.encoding = Radiance::Normalized;
    return out;
  }
};

/// Unit vector on the upper hemisphere (l_z > 0).
class LightDirection {
 public:
  explicit LightDirection(Vec3 l) {
    const double n = l.norm();
    if (!(n > 0.0)) throw DegenerateInput("light direction has zero length");
    l_ = l * (1.0 / n);
    if (!(l_.z > 0.0)) throw DegenerateInput("light direction must point into the upper hemisphere");
  }

  /// Polar angle from the optical axis and azimuth, both in radians.
  static LightDirection from_angles(double polar, double azimuth) {
    return LightDirection({std::sin(polar) * std::cos(azimuth), std::sin(polar) * std::sin(azimuth),
                           std::cos(polar)});
  }

  const Vec3& vec() const { return l_; }

 private:
  Vec3 l_;
};

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

/// The fixed 12-light rig: rings at 30° and 55° polar, six azimuths each
/// (0°, 60°, ..., 300°). Index = ring * 6 + azimuth step.
inline std::vector<LightDirection> standard_lights() {
  std::vector<LightDirection> out;
  for (double polar : {30.0, 55.0})
    for (int k = 0; k < 6; ++k) out.push_back(LightDirection::from_angles(deg2rad(polar), deg2rad(60.0 * k)));
  return out;
}

inline constexpr std::size_t kNumStandardLights = 12;

/// Uniform on the spherical cap with polar angle <= max_polar (radians).
template <typename Rng>
LightDirection random_light(Rng& rng, double max_polar) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double cos_min = std::cos(max_polar);
  const double cz = 1.0 - u(rng) * (1.0 - cos_min);
  const double az = 2.0 * std::numbers::pi * u(rng);
  const double s = std::sqrt(std::max(0.0, 1.0 - cz * cz));
  return LightDirection({s * std::cos(az), s * std::sin(az), std::max(cz, 1e-12)});
}

/// albedo · max(0, n·l) per pixel, unnormalized.
inline NirImage render_lambertian_raw(const NormalMap& normals, const ScalarField& albedo,
                                      const LightDirection& light) {
  if (albedo.width != normals.width() || albedo.height != normals.height()) {
    throw ShapeError("render_lambertian: albedo extent does not match normal map");
  }
  NirImage img{ScalarField(normals.width(), normals.height()), Radiance::Raw};
  for (std::size_t i = 0; i < normals.size(); ++i) {
    img.field.values[i] = albedo.values[i] * std::max(0.0, normals[i].dot(light.vec()));
  }
  return img;
}

/// Rendered image mapped to [−1, 1] by v ↦ 2v − 1.
inline NirImage render_lambertian(const NormalMap& normals, const ScalarField& albedo,
                                  const LightDirection& light) {
  return render_lambertian_raw(normals, albedo, light).as_normalized();
}

struct PhotometricStereoResult {
  NormalMap normals;
  ScalarField albedo;
  std::vector<std::uint8_t> valid;  // 1 where at least three lit observations were solvable

  std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
  }
};

/// Per-pixel least squares of I = L·(ρn) over the lit observations.
/// Shadowed (zero) observations are dropped; fewer than three remaining marks the
/// pixel invalid with a (0,0,1) placeholder, unless the zeros are exactly grazing
/// (the full system is consistent).
inline PhotometricStereoResult photometric_stereo(std::span<const NirImage> images,
                                                  std::span<const LightDirection> lights) {
  if (images.size() < 3) throw DegenerateInput("photometric_stereo needs at least 3 images");
  if (images.size() != lights.size()) {
    throw ShapeError("photometric_stereo: " + std::to_string(images.size()) + " images but " +
                     std::to_string(lights.size()) + " lights");
  }
  const std::size_t w = images[0].width(), h = images[0].height();
  for (const auto& im : images) {
    if (im.width() != w || im.height() != h) throw ShapeError("photometric_stereo: images not aligned");
  }
  const std::size_t m = lights.size();
  Eigen::MatrixXd L(m, 3);
  for (std::size_t k = 0; k < m; ++k) L.row(Eigen::Index(k)) << lights[k].vec().x, lights[k].vec().y, lights[k].vec().z;
  constexpr double kRankTol = 1e-9;
  constexpr double kGrazingTol = 1e-9;
  if (Eigen::FullPivLU<Eigen::MatrixXd>(L).setThreshold(kRankTol).rank() < 3) {
    throw DegenerateInput("photometric_stereo: light matrix is rank deficient");
  }

  std::vector<std::vector<double>> raw(m);
  for (std::size_t k = 0; k < m; ++k) {
    raw[k] = images[k].encoding == Radiance::Raw ? images[k].field.values
                                                 : images[k].as_raw().field.values;
  }

  PhotometricStereoResult res{NormalMap(w, h), ScalarField(w, h), std::vector<std::uint8_t>(w * h, 0)};
  Eigen::MatrixXd A(m, 3);
  Eigen::VectorXd b(m);
  for (std::size_t p = 0; p < w * h; ++p) {
    Eigen::Index rows = 0;
    for (std::size_t k = 0; k < m; ++k) {
      if (raw[k][p] > 0.0) {
        A.row(rows) = L.row(Eigen::Index(k));
        b(rows) = raw[k][p];
        ++rows;
      }
    }
    Eigen::Vector3d sol;
    if (rows >= 3) {
      const auto As = A.topRows(rows);
      const Eigen::Matrix3d ata = As.transpose() * As;
      const Eigen::LDLT<Eigen::Matrix3d> ldlt(ata);
      if (ldlt.info() != Eigen::Success || std::abs(ata.determinant()) < kRankTol) continue;
      sol = ldlt.solve(As.transpose() * b.head(rows));
    } else {
      // Zeros may be exact grazing rather than shadow: keep the full system only
      // if its solution reproduces every observation.
      Eigen::VectorXd all(m);
      for (std::size_t k = 0; k < m; ++k) all(Eigen::Index(k)) = raw[k][p];
      sol = L.colPivHouseholderQr().solve(all);
      if ((L * sol - all).cwiseAbs().maxCoeff() > kGrazingTol) continue;
    }
    const double rho = sol.norm();
    if (!(rho > 0.0) || sol.z() < 0.0) continue;
    res.normals[p] = {sol.x() / rho, sol.y() / rho, sol.z() / rho};
    res.albedo.values[p] = rho;
    res.valid[p] = 1;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Tensor encoding

/// Components as a [3, H, W] tensor (channel order x, y, z).
template <typename T = float>
Tensor<T> encode_normals(const NormalMap& n) {
  const std::size_t hw = n.size();
  std::vector<T> data(3 * hw);
  for (std::size_t i = 0; i < hw; ++i) {
    data[i] = T(n[i].x);
    data[hw + i] = T(n[i].y);
    data[2 * hw + i] = T(n[i].z);
  }
  return Tensor<T>(Shape{3, n.height(), n.width()}, std::move(data));
}

struct DecodedNormals {
  NormalMap normals;
  std::size_t degenerate_pixels = 0;
};

/// Clamps nz to >= 0 and renormalizes; vectors shorter than 1e-6 become (0,0,1).
/// Accepts [3,H,W] or [1,3,H,W]; `sample` selects the batch entry of [B,3,H,W].
template <typename T>
DecodedNormals decode_normals(const Tensor<T>& t, std::size_t sample = 0) {
  std::size_t h, w, offset = 0;
  if (t.dim() == 3 && t.size(0) == 3) {
    h = t.size(1);
    w = t.size(2);
  } else if (t.dim() == 4 && t.size(1) == 3 && sample < t.size(0)) {
    h = t.size(2);
    w = t.size(3);
    offset = sample * 3 * h * w;
  } else {
    throw ShapeError("decode_normals: expected [3,H,W] or [B,3,H,W], got " + to_string(t.shape()));
  }
  constexpr double kMinNorm = 1e-6;
  DecodedNormals out{NormalMap(w, h), 0};
  const std::size_t hw = h * w;
  for (std::size_t i = 0; i < hw; ++i) {
    Vec3 v{double(t[offset + i]), double(t[offset + hw + i]), std::max(0.0, double(t[offset + 2 * hw + i]))};
    const double n = v.norm();
    if (n < kMinNorm) {
      out.normals[i] = {0.0, 0.0, 1.0};
      ++out.degenerate_pixels;
    } else {
      out.normals[i] = v * (1.0 / n);
    }
  }
  return out;
}

/// Normal field of a heightfield z(x, y) in pixel units: n ∝ (−∂z/∂x, −∂z/∂y, 1).
/// Derivatives are forward differences (backward on the last row/column), which
/// makes the result exactly curl-free under the forward-difference residual.
inline NormalMap normals_from_heights(const ScalarField& z) {
  const std::size_t w = z.width, h = z.height;
  NormalMap n(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double dzdx = 0.0, dzdy = 0.0;
      if (w > 1) dzdx = x + 1 < w ? z.at(x + 1, y) - z.at(x, y) : z.at(x, y) - z.at(x - 1, y);
      if (h > 1) dzdy = y + 1 < h ? z.at(x, y + 1) - z.at(x, y) : z.at(x, y) - z.at(x, y - 1);
      n.at(x, y) = Vec3{-dzdx, -dzdy, 1.0}.normalized();
    }
  return n;
}

/// Angle between two unit vectors in degrees.
inline double angle_deg(const Vec3& a, const Vec3& b) {
  return rad2deg(std::acos(std::clamp(a.dot(b), -1.0, 1.0)));
}

}  // namespace nirsfs
