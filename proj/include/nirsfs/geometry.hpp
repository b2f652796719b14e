#pragma once
// Normal-field integration and OBJ mesh export.
//
// Integration solves min_z Σ (z[x+1,y] − z[x,y] − p)² + (z[x,y+1] − z[x,y] − q)²
// over the forward-difference edges of the pixel grid. The normal equations are
// the Neumann graph Laplacian, which the 2-D DCT-II diagonalizes.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numbers>
#include <array>
#include <sstream>
#include <string>
#include <vector>

#include "nirsfs/error.hpp"
#include "nirsfs/image_io.hpp"
#include "nirsfs/photometry.hpp"

namespace nirsfs {

inline constexpr double kMinNz = 0.05;

struct DepthMap {
  std::size_t width = 0, height = 0;
  ScalarField z;
  std::vector<std::uint8_t> valid;

  DepthMap() = default;
  DepthMap(std::size_t w, std::size_t h) : width(w), height(h), z(w, h), valid(w * h, 1) {}
};

/// Surface gradients p = ∂z/∂x = −nx/nz, q = ∂z/∂y = −ny/nz with nz >= 0.05.
struct GradientField {
  ScalarField p, q;
};

inline GradientField gradients_from_normals(const NormalMap& n) {
  GradientField g{ScalarField(n.width(), n.height()), ScalarField(n.width(), n.height())};
  for (std::size_t i = 0; i < n.size(); ++i) {
    const double nz = std::max(n[i].z, kMinNz);
    g.p.values[i] = -n[i].x / nz;
    g.q.values[i] = -n[i].y / nz;
  }
  return g;
}

namespace detail {

struct FftwPlanDeleter {
  void operator()(fftw_plan_s* p) const { fftw_destroy_plan(p); }
};

inline void dct2d(std::vector<double>& data, std::size_t w, std::size_t h, fftw_r2r_kind kind) {
  std::vector<double> out(data.size());
  std::unique_ptr<fftw_plan_s, FftwPlanDeleter> plan(
      fftw_plan_r2r_2d(int(h), int(w), data.data(), out.data(), kind, kind, FFTW_ESTIMATE));
  if (!plan) throw Error("FFTW planning failed");
  fftw_execute(plan.get());
  data.swap(out);
}

}  // namespace detail

/// Least-squares height field for gradients (p, q) with mean 0. Linear in (p, q).
/// p at the last column and q at the last row have no edge and are ignored.
inline ScalarField integrate_gradients(const ScalarField& p, const ScalarField& q) {
  if (p.width != q.width || p.height != q.height) throw ShapeError("integrate_gradients: p and q differ in extent");
  const std::size_t w = p.width, h = p.height;
  if (w == 0 || h == 0) throw ShapeError("integrate_gradients: empty field");

  // Normal equations DᵀD z = Dᵀ g, with (Dᵀ g)[x, y] = p[x−1] − p[x] + q[y−1] − q[y]
  // (terms without an edge dropped).
  std::vector<double> b(w * h, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double v = 0.0;
      if (x + 1 < w) v -= p.at(x, y);
      if (x > 0) v += p.at(x - 1, y);
      if (y + 1 < h) v -= q.at(x, y);
      if (y > 0) v += q.at(x, y - 1);
      b[y * w + x] = v;
    }
  detail::dct2d(b, w, h, FFTW_REDFT10);
  for (std::size_t l = 0; l < h; ++l)
    for (std::size_t k = 0; k < w; ++k) {
      const double lam = (2.0 - 2.0 * std::cos(std::numbers::pi * double(k) / double(w))) +
                         (2.0 - 2.0 * std::cos(std::numbers::pi * double(l) / double(h)));
      b[l * w + k] = (k == 0 && l == 0) ? 0.0 : b[l * w + k] / lam;
    }
  detail::dct2d(b, w, h, FFTW_REDFT01);
  ScalarField z(w, h);
  const double norm = 1.0 / (4.0 * double(w) * double(h));
  for (std::size_t i = 0; i < w * h; ++i) z.values[i] = b[i] * norm;
  return z;
}

/// Depth from normals, anchored to mean 0 over the valid pixels. Gradients at
/// masked-out pixels are treated as 0. Throws DegenerateInput when no valid
/// pixel is steeper than grazing (nz > 0.05).
inline DepthMap integrate_normals(const NormalMap& n, const std::vector<std::uint8_t>* mask = nullptr) {
  if (mask && mask->size() != n.size()) throw ShapeError("integrate_normals: mask size mismatch");
  if (n.size() == 0) throw ShapeError("integrate_normals: empty normal map");
  bool any = false;
  for (std::size_t i = 0; i < n.size(); ++i)
    if ((!mask || (*mask)[i]) && n[i].z > kMinNz) any = true;
  if (!any) throw DegenerateInput("integrate_normals: every pixel is at or beyond grazing (nz <= 0.05)");

  GradientField g = gradients_from_normals(n);
  DepthMap d(n.width(), n.height());
  if (mask) {
    d.valid = *mask;
    for (std::size_t i = 0; i < n.size(); ++i)
      if (!d.valid[i]) g.p.values[i] = g.q.values[i] = 0.0;
  }
  d.z = integrate_gradients(g.p, g.q);
  double s = 0.0;
  std::size_t cnt = 0;
  for (std::size_t i = 0; i < n.size(); ++i)
    if (d.valid[i]) {
      s += d.z.values[i];
      ++cnt;
    }
  const double mean = s / double(cnt);
  for (auto& v : d.z.values) v -= mean;
  return d;
}

// ---------------------------------------------------------------------------
// OBJ

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Vec3> normals;                      // per vertex, may be empty
  std::vector<std::array<std::size_t, 3>> faces;  // 0-based vertex indices
};

struct MeshOptions {
  double scale = 1.0;  // multiplies x, y and z
};

/// Grid triangulation of the valid pixels. Vertex (x, −row, z) so the mesh is
/// right-handed with +z toward the camera; faces wind counter-clockwise seen
/// from +z.
inline Mesh build_mesh(const DepthMap& d, const MeshOptions& opt = {}) {
  const std::size_t w = d.width, h = d.height;
  Mesh m;
  std::vector<long> id(w * h, -1);
  const NormalMap n = normals_from_heights(d.z);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      if (!d.valid[i]) continue;
      id[i] = long(m.vertices.size());
      m.vertices.push_back({double(x) * opt.scale, -double(y) * opt.scale, d.z.values[i] * opt.scale});
      m.normals.push_back({n[i].x, -n[i].y, n[i].z});
    }
  for (std::size_t y = 0; y + 1 < h; ++y)
    for (std::size_t x = 0; x + 1 < w; ++x) {
      const long a = id[y * w + x], b = id[y * w + x + 1], c = id[(y + 1) * w + x], e = id[(y + 1) * w + x + 1];
      if (a >= 0 && c >= 0 && b >= 0) m.faces.push_back({std::size_t(a), std::size_t(c), std::size_t(b)});
      if (b >= 0 && c >= 0 && e >= 0) m.faces.push_back({std::size_t(b), std::size_t(c), std::size_t(e)});
    }
  return m;
}

inline Vec3 face_normal(const Mesh& m, std::size_t f) {
  const auto& t = m.faces[f];
  const Vec3 u = m.vertices[t[1]] - m.vertices[t[0]];
  const Vec3 v = m.vertices[t[2]] - m.vertices[t[0]];
  return Vec3{u.y * v.z - u.z * v.y, u.z * v.x - u.x * v.z, u.x * v.y - u.y * v.x}.normalized();
}

inline void write_obj(const std::string& path, const Mesh& m) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open for writing", path);
  std::fprintf(f, "# %zu vertices, %zu faces\n", m.vertices.size(), m.faces.size());
  for (const auto& v : m.vertices) std::fprintf(f, "v %.9g %.9g %.9g\n", v.x, v.y, v.z);
  for (const auto& v : m.normals) std::fprintf(f, "vn %.9g %.9g %.9g\n", v.x, v.y, v.z);
  const bool with_normals = m.normals.size() == m.vertices.size();
  for (const auto& t : m.faces) {
    if (with_normals)
      std::fprintf(f, "f %zu//%zu %zu//%zu %zu//%zu\n", t[0] + 1, t[0] + 1, t[1] + 1, t[1] + 1, t[2] + 1, t[2] + 1);
    else
      std::fprintf(f, "f %zu %zu %zu\n", t[0] + 1, t[1] + 1, t[2] + 1);
  }
  const bool failed = std::ferror(f) != 0;
  if (std::fclose(f) != 0 || failed) throw IoError("OBJ write failed", path);
}

inline void export_mesh(const DepthMap& d, const std::string& path, const MeshOptions& opt = {}) {
  write_obj(path, build_mesh(d, opt));
}

/// Reads `v`, `vn` and triangular `f` records (index forms a, a/b, a//c, a/b/c;
/// negative indices count from the end). Other records are ignored.
inline Mesh read_obj(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open for reading", path);
  Mesh m;
  std::string line;
  std::size_t lineno = 0;
  auto bad = [&](const std::string& why) {
    return IoError("malformed OBJ at line " + std::to_string(lineno) + " (" + why + ")", path);
  };
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v" || tag == "vn") {
      Vec3 v;
      if (!(ls >> v.x >> v.y >> v.z)) throw bad("expected three coordinates");
      (tag == "v" ? m.vertices : m.normals).push_back(v);
    } else if (tag == "f") {
      std::vector<std::size_t> idx;
      std::string tok;
      while (ls >> tok) {
        long k = 0;
        try {
          k = std::stol(tok.substr(0, tok.find('/')));
        } catch (const std::exception&) {
          throw bad("bad face index '" + tok + "'");
        }
        if (k < 0) k += long(m.vertices.size()) + 1;
        if (k < 1 || std::size_t(k) > m.vertices.size()) throw bad("face index out of range");
        idx.push_back(std::size_t(k - 1));
      }
      if (idx.size() < 3) throw bad("face with fewer than three vertices");
      for (std::size_t i = 1; i + 1 < idx.size(); ++i) m.faces.push_back({idx[0], idx[i], idx[i + 1]});
    }
  }
  return m;
}

inline void write_depth_pfm(const std::string& path, const DepthMap& d) { io::write_pfm(path, d.z); }

}  // namespace nirsfs
