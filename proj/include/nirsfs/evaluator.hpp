#pragma once
// Angular-error statistics, good-pixel ratios, intensity error and the detail
// map M = f(Y) + G(Z) − f(G(Z)), plus the JSON report written by `eval`.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "nirsfs/nets.hpp"
#include "nirsfs/photometry.hpp"
#include "nirsfs/synth.hpp"

namespace nirsfs {

/// Per-pixel angular error in degrees; `valid[i] == 0` marks excluded pixels.
struct ErrorMap {
  std::size_t width = 0, height = 0;
  std::vector<double> degrees;
  std::vector<std::uint8_t> valid;

  std::size_t valid_count() const { return std::size_t(std::count(valid.begin(), valid.end(), 1)); }
  std::vector<double> valid_values() const {
    std::vector<double> out;
    for (std::size_t i = 0; i < degrees.size(); ++i)
      if (valid[i]) out.push_back(degrees[i]);
    return out;
  }
};

inline ErrorMap angular_error_map(const NormalMap& y, const NormalMap& g,
                                  const std::vector<std::uint8_t>* valid = nullptr) {
  if (!y.same_extent(g)) throw ShapeError("angular_error_map: normal maps differ in extent");
  if (valid && valid->size() != y.size()) throw ShapeError("angular_error_map: mask size mismatch");
  ErrorMap e{y.width(), y.height(), std::vector<double>(y.size()), std::vector<std::uint8_t>(y.size(), 1)};
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (valid && !(*valid)[i]) {
      e.valid[i] = 0;
      continue;
    }
    e.degrees[i] = angle_deg(y[i], g[i]);
  }
  return e;
}

inline const std::vector<double> kDefaultThresholds{10.0, 15.0, 20.0};

/// Fraction of valid pixels with error strictly below each threshold.
inline std::vector<double> good_pixels(const std::vector<double>& errors,
                                       const std::vector<double>& thresholds = kDefaultThresholds) {
  if (errors.empty()) throw DegenerateInput("good_pixels: no valid pixels");
  std::vector<double> out;
  for (double t : thresholds) {
    const auto n = std::count_if(errors.begin(), errors.end(), [t](double e) { return e < t; });
    out.push_back(double(n) / double(errors.size()));
  }
  return out;
}

inline std::vector<double> good_pixels(const ErrorMap& e, const std::vector<double>& thresholds = kDefaultThresholds) {
  return good_pixels(e.valid_values(), thresholds);
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) throw DegenerateInput("mean of an empty set");
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

/// Median (average of the two middle values for even counts).
inline double median_of(std::vector<double> v) {
  if (v.empty()) throw DegenerateInput("median of an empty set");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + long(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + long(mid));
  return 0.5 * (lo + hi);
}

/// |y_c − g_c| for every component of [−1, 1]-encoded maps (interleaved or planar,
/// as long as both use the same layout).
inline std::vector<double> intensity_errors(const std::vector<double>& y, const std::vector<double>& g) {
  if (y.size() != g.size()) throw ShapeError("intensity_errors: component counts differ");
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = std::abs(y[i] - g[i]);
  return out;
}

inline std::vector<double> components(const NormalMap& n) {
  std::vector<double> c;
  c.reserve(3 * n.size());
  for (const auto& v : n.normals()) {
    c.push_back(v.x);
    c.push_back(v.y);
    c.push_back(v.z);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Detail map

struct SmoothingOptions {
  double sigma = 3.0;         // 0 selects the identity
  std::size_t kernel = 13;    // odd tap count
};

/// reflect-101 index: ... 2 1 | 0 1 2 ... n−1 | n−2 ...
inline std::size_t reflect101(long i, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * long(n) - 2;
  i = ((i % period) + period) % period;
  return std::size_t(i < long(n) ? i : period - i);
}

inline std::vector<double> gaussian_kernel(double sigma, std::size_t taps) {
  if (taps % 2 == 0) throw ConfigError("smoothing kernel size must be odd");
  const long r = long(taps / 2);
  std::vector<double> k(taps);
  double s = 0.0;
  for (long i = -r; i <= r; ++i) s += k[std::size_t(i + r)] = std::exp(-0.5 * double(i * i) / (sigma * sigma));
  for (auto& v : k) v /= s;
  return k;
}

/// Separable Gaussian blur with reflect-101 borders; sigma 0 returns the input.
inline ScalarField gaussian_blur(const ScalarField& f, const SmoothingOptions& opt) {
  if (opt.sigma < 0.0) throw ConfigError("smoothing sigma must be >= 0");
  if (opt.sigma == 0.0) return f;
  const auto k = gaussian_kernel(opt.sigma, opt.kernel);
  const long r = long(opt.kernel / 2);
  ScalarField tmp(f.width, f.height), out(f.width, f.height);
  for (std::size_t y = 0; y < f.height; ++y)
    for (std::size_t x = 0; x < f.width; ++x) {
      double acc = 0.0;
      for (long i = -r; i <= r; ++i) acc += k[std::size_t(i + r)] * f.at(reflect101(long(x) + i, f.width), y);
      tmp.at(x, y) = acc;
    }
  for (std::size_t y = 0; y < f.height; ++y)
    for (std::size_t x = 0; x < f.width; ++x) {
      double acc = 0.0;
      for (long i = -r; i <= r; ++i) acc += k[std::size_t(i + r)] * tmp.at(x, reflect101(long(y) + i, f.height));
      out.at(x, y) = acc;
    }
  return out;
}

/// f(Y) + G − f(G) per component, renormalized (zero vectors become (0,0,1),
/// nz clamped to >= 0 before renormalization).
inline NormalMap detail_map(const NormalMap& y, const NormalMap& g, const SmoothingOptions& opt = {}) {
  if (!y.same_extent(g)) throw ShapeError("detail_map: normal maps differ in extent");
  const std::size_t w = y.width(), h = y.height();
  NormalMap out(w, h);
  std::array<ScalarField, 3> fy, fg;
  for (int c = 0; c < 3; ++c) {
    ScalarField ys(w, h), gs(w, h);
    for (std::size_t i = 0; i < y.size(); ++i) {
      ys.values[i] = c == 0 ? y[i].x : c == 1 ? y[i].y : y[i].z;
      gs.values[i] = c == 0 ? g[i].x : c == 1 ? g[i].y : g[i].z;
    }
    fy[c] = gaussian_blur(ys, opt);
    fg[c] = gaussian_blur(gs, opt);
  }
  for (std::size_t i = 0; i < y.size(); ++i) {
    Vec3 m{fy[0].values[i] + g[i].x - fg[0].values[i], fy[1].values[i] + g[i].y - fg[1].values[i],
           fy[2].values[i] + g[i].z - fg[2].values[i]};
    m.z = std::max(0.0, m.z);
    const double n = m.norm();
    out[i] = n < 1e-12 ? Vec3{0.0, 0.0, 1.0} : m * (1.0 / n);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset evaluation

/// Maps a [1,1,H,W] normalized NIR tensor to raw [1,3,H,W] components.
using Predictor = std::function<Tensor<float>(const Tensor<float>&)>;

/// Generator in eval mode (frozen batch-norm statistics), no tape.
inline Predictor generator_predictor(GeneratorNet<float>& gen) {
  return [&gen](const Tensor<float>& z) {
    NoGradGuard ng;
    return gen.forward(z, NormMode::Eval);
  };
}

/// Always (0, 0, 1).
inline Predictor constant_predictor() {
  return [](const Tensor<float>& z) {
    const std::size_t hw = z.size(2) * z.size(3);
    std::vector<float> d(3 * hw, 0.0f);
    std::fill(d.begin() + long(2 * hw), d.end(), 1.0f);
    return Tensor<float>(Shape{1, 3, z.size(2), z.size(3)}, std::move(d));
  };
}

struct VariantMetrics {
  double angular_mean = 0, angular_median = 0;
  std::vector<double> good;  // at `thresholds`
  double intensity_mean = 0, intensity_median = 0;
};

struct ImageMetrics {
  std::size_t index = 0;
  double angular_mean = 0, angular_median = 0;
  double detail_angular_mean = 0;
};

struct MetricsReport {
  std::string split;
  std::size_t images = 0;
  std::size_t pixels = 0;
  std::vector<double> thresholds = kDefaultThresholds;
  SmoothingOptions smoothing;
  VariantMetrics raw, detail;
  std::vector<ImageMetrics> per_image;
};

inline constexpr int kReportSchemaVersion = 1;

inline nlohmann::json to_json(const VariantMetrics& v, const std::vector<double>& thresholds) {
  nlohmann::json good = nlohmann::json::object();
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    std::ostringstream key;
    key << thresholds[i];
    good[key.str()] = v.good[i];
  }
  return {{"angular_mean_deg", v.angular_mean},
          {"angular_median_deg", v.angular_median},
          {"good_pixels", good},
          {"intensity_mean", v.intensity_mean},
          {"intensity_median", v.intensity_median}};
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& m : r.per_image)
    per.push_back({{"index", m.index},
                   {"angular_mean_deg", m.angular_mean},
                   {"angular_median_deg", m.angular_median},
                   {"detail_angular_mean_deg", m.detail_angular_mean}});
  return {{"schema_version", kReportSchemaVersion},
          {"split", r.split},
          {"images", r.images},
          {"pixels", r.pixels},
          {"median_kind", "per-pixel"},
          {"raw", to_json(r.raw, r.thresholds)},
          {"detail", [&] {
             auto j = to_json(r.detail, r.thresholds);
             j["smoothing"] = {{"kind", "gaussian"}, {"sigma", r.smoothing.sigma}, {"kernel", r.smoothing.kernel}};
             return j;
           }()},
          {"per_image", per},
          // Full-scale reference figures (different data and training budget);
          // context only, never a target.
          {"published_reference",
           {{"angular_mean_deg_l2_ang", 15.56}, {"detail_angular_mean_deg_l2_ang", 3.61}, {"reproducible", false}}}};
}

namespace detail {

struct VariantAccumulator {
  std::vector<double> angles, intensities;

  VariantMetrics finish(const std::vector<double>& thresholds) const {
    VariantMetrics m;
    m.angular_mean = mean_of(angles);
    m.angular_median = median_of(angles);
    m.good = good_pixels(angles, thresholds);
    m.intensity_mean = mean_of(intensities);
    m.intensity_median = median_of(intensities);
    return m;
  }
};

inline std::vector<double> planar_to_interleaved(const Tensor<float>& t) {
  const std::size_t hw = t.size(2) * t.size(3);
  std::vector<double> out(3 * hw);
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t c = 0; c < 3; ++c) out[3 * i + c] = t[c * hw + i];
  return out;
}

}  // namespace detail

/// Runs `predict` over every image of `split`. Aggregates pool all valid pixels
/// of all images; medians are per-pixel.
inline MetricsReport evaluate(const Predictor& predict, const DatasetIndex& ds, const std::string& split,
                              const SmoothingOptions& smoothing = {},
                              const std::vector<double>& thresholds = kDefaultThresholds) {
  const auto& recs = ds.split(split);
  if (recs.empty()) throw ConfigError("split '" + split + "' is empty");
  MetricsReport rep;
  rep.split = split;
  rep.smoothing = smoothing;
  rep.thresholds = thresholds;
  detail::VariantAccumulator raw, det;
  for (const auto& r : recs) {
    const Pair p = load_pair(ds, split, r.index);
    const Tensor<float> out = predict(p.nir);
    if (out.dim() != 4 || out.size(1) != 3 || out.size(2) != p.nir.size(2) || out.size(3) != p.nir.size(3))
      throw ShapeError("predictor returned " + to_string(out.shape()) + " for input " + to_string(p.nir.shape()));
    const NormalMap y = decode_normals(p.normals).normals;
    const NormalMap g = decode_normals(out).normals;
    const NormalMap m = detail_map(y, g, smoothing);
    const auto y_comp = detail::planar_to_interleaved(p.normals);

    const auto e_raw = angular_error_map(y, g).valid_values();
    const auto e_det = angular_error_map(y, m).valid_values();
    raw.angles.insert(raw.angles.end(), e_raw.begin(), e_raw.end());
    det.angles.insert(det.angles.end(), e_det.begin(), e_det.end());
    const auto i_raw = intensity_errors(y_comp, detail::planar_to_interleaved(out));
    const auto i_det = intensity_errors(y_comp, components(m));
    raw.intensities.insert(raw.intensities.end(), i_raw.begin(), i_raw.end());
    det.intensities.insert(det.intensities.end(), i_det.begin(), i_det.end());

    rep.per_image.push_back({r.index, mean_of(e_raw), median_of(e_raw), mean_of(e_det)});
    rep.pixels += e_raw.size();
  }
  rep.images = recs.size();
  rep.raw = raw.finish(thresholds);
  rep.detail = det.finish(thresholds);
  return rep;
}

}  // namespace nirsfs
