#pragma once
// Synthetic fine-scale surfaces, rendered NIR/normal patch pairs, and the
// on-disk dataset layout:
//
//   <root>/manifest.json
//   <root>/<split>/<index>_nir.png   (or _nir.pfm)
//   <root>/<split>/<index>_nrm.png
//   <root>/<split>/<index>_alb.png
//
// `index` is zero-padded to six digits.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "nirsfs/error.hpp"
#include "nirsfs/image_io.hpp"
#include "nirsfs/photometry.hpp"
#include "nirsfs/tensor.hpp"

namespace nirsfs {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum class SurfaceKind { GaussianBumps, SinusoidWeave, FractalNoise, Composite };

inline std::string to_string(SurfaceKind k) {
  switch (k) {
    case SurfaceKind::GaussianBumps: return "gaussian-bumps";
    case SurfaceKind::SinusoidWeave: return "sinusoid-weave";
    case SurfaceKind::FractalNoise: return "fractal-noise";
    case SurfaceKind::Composite: return "composite";
  }
  return "?";
}

inline SurfaceKind surface_kind_from_string(const std::string& s) {
  if (s == "gaussian-bumps") return SurfaceKind::GaussianBumps;
  if (s == "sinusoid-weave") return SurfaceKind::SinusoidWeave;
  if (s == "fractal-noise") return SurfaceKind::FractalNoise;
  if (s == "composite") return SurfaceKind::Composite;
  throw ConfigError("unknown surface kind '" + s + "'");
}

/// amplitude: slope scale (height units per pixel); feature_scale: pixels.
struct SurfaceSpec {
  SurfaceKind kind = SurfaceKind::GaussianBumps;
  double amplitude = 1.5;
  double feature_scale = 2.75;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(amplitude > 0.0)) throw ConfigError("surface amplitude must be > 0");
    if (!(feature_scale >= 2.0)) throw ConfigError("surface feature_scale must be >= 2 pixels");
  }
};

struct Surface {
  ScalarField heights;
  NormalMap normals;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace detail {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Raised Gaussian bumps; density ~ one bump per 8·s² pixels.
inline void add_bumps(ScalarField& z, double amp, double fs, Rng& rng) {
  const double area = double(z.width * z.height);
  const auto count = static_cast<int>(std::lround(area / (8.0 * fs * fs) * uniform(rng, 0.6, 1.4)));
  for (int k = 0; k < count; ++k) {
    const double cx = uniform(rng, -5.0, double(z.width) + 5.0);
    const double cy = uniform(rng, -5.0, double(z.height) + 5.0);
    const double sigma = fs * uniform(rng, 0.7, 1.3);
    const double h = amp * sigma * uniform(rng, 0.5, 1.0);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    const auto r = static_cast<long>(std::ceil(4.0 * sigma));
    const long x0 = std::max(0L, long(std::floor(cx)) - r), x1 = std::min(long(z.width) - 1, long(std::ceil(cx)) + r);
    const long y0 = std::max(0L, long(std::floor(cy)) - r), y1 = std::min(long(z.height) - 1, long(std::ceil(cy)) + r);
    for (long y = y0; y <= y1; ++y)
      for (long x = x0; x <= x1; ++x) {
        const double dx = double(x) - cx, dy = double(y) - cy;
        z.at(std::size_t(x), std::size_t(y)) += h * std::exp(-(dx * dx + dy * dy) * inv);
      }
  }
}

/// Two crossing families of raised threads, |sin| profile, random orientation.
inline void add_weave(ScalarField& z, double amp, double fs, Rng& rng) {
  const double theta = uniform(rng, 0.0, std::numbers::pi);
  const double period = 2.0 * fs * uniform(rng, 1.2, 2.0);
  const double phase_u = uniform(rng, 0.0, period), phase_v = uniform(rng, 0.0, period);
  const double c = std::cos(theta), s = std::sin(theta);
  const double k = std::numbers::pi / period;
  const double h = amp * 0.5 / k;
  for (std::size_t y = 0; y < z.height; ++y)
    for (std::size_t x = 0; x < z.width; ++x) {
      const double u = c * double(x) + s * double(y) + phase_u;
      const double v = -s * double(x) + c * double(y) + phase_v;
      z.at(x, y) += h * (std::abs(std::sin(k * u)) + std::abs(std::sin(k * v)));
    }
}

inline double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

/// Three octaves of smoothly interpolated value noise, rescaled so the RMS
/// forward-difference slope equals amp / 2.
inline void add_fractal(ScalarField& z, double amp, double fs, Rng& rng) {
  ScalarField f(z.width, z.height);
  double spacing = 2.0 * fs, weight = 1.0;
  for (int octave = 0; octave < 3; ++octave) {
    const std::size_t gw = std::size_t(double(z.width) / spacing) + 2;
    const std::size_t gh = std::size_t(double(z.height) / spacing) + 2;
    std::vector<double> grid(gw * gh);
    for (auto& g : grid) g = uniform(rng, -1.0, 1.0);
    for (std::size_t y = 0; y < z.height; ++y)
      for (std::size_t x = 0; x < z.width; ++x) {
        const double gx = double(x) / spacing, gy = double(y) / spacing;
        const auto ix = std::size_t(gx), iy = std::size_t(gy);
        const double tx = smoothstep(gx - double(ix)), ty = smoothstep(gy - double(iy));
        const double a = grid[iy * gw + ix], b = grid[iy * gw + ix + 1];
        const double c = grid[(iy + 1) * gw + ix], d = grid[(iy + 1) * gw + ix + 1];
        f.at(x, y) += weight * ((a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty);
      }
    spacing = std::max(2.0, spacing * 0.5);
    weight *= 0.5;
  }
  double ss = 0.0;
  std::size_t n = 0;
  for (std::size_t y = 0; y + 1 < z.height; ++y)
    for (std::size_t x = 0; x + 1 < z.width; ++x) {
      const double dx = f.at(x + 1, y) - f.at(x, y), dy = f.at(x, y + 1) - f.at(x, y);
      ss += dx * dx + dy * dy;
      ++n;
    }
  const double rms = n ? std::sqrt(ss / double(n)) : 0.0;
  const double scale = rms > 0.0 ? 0.5 * amp / rms : 0.0;
  for (std::size_t i = 0; i < z.values.size(); ++i) z.values[i] += scale * f.values[i];
}

}  // namespace detail

/// Heightfield on a size×size grid and its normals. Deterministic in `spec`.
inline Surface generate_surface(const SurfaceSpec& spec, std::size_t size = 64) {
  spec.validate();
  detail::Rng rng(splitmix64(spec.seed));
  ScalarField z(size, size);
  const double a = spec.amplitude, s = spec.feature_scale;
  switch (spec.kind) {
    case SurfaceKind::GaussianBumps: detail::add_bumps(z, a, s, rng); break;
    case SurfaceKind::SinusoidWeave: detail::add_weave(z, a, s, rng); break;
    case SurfaceKind::FractalNoise: detail::add_fractal(z, a, s, rng); break;
    case SurfaceKind::Composite:
      detail::add_bumps(z, a, s, rng);
      detail::add_weave(z, 0.5 * a, s, rng);
      detail::add_fractal(z, 0.3 * a, s, rng);
      break;
  }
  NormalMap n = normals_from_heights(z);
  return {std::move(z), std::move(n)};
}

/// Piecewise-constant albedo: nearest-site (Voronoi) cells with values in [lo, hi].
inline ScalarField piecewise_albedo(std::size_t w, std::size_t h, int cells, double lo, double hi,
                                    std::uint64_t seed) {
  detail::Rng rng(splitmix64(seed ^ 0xa1bed0ULL));
  cells = std::max(cells, 1);
  std::vector<std::array<double, 3>> sites(static_cast<std::size_t>(cells));
  for (auto& s : sites) s = {detail::uniform(rng, 0, double(w)), detail::uniform(rng, 0, double(h)), detail::uniform(rng, lo, hi)};
  ScalarField a(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double best = 1e300, val = sites[0][2];
      for (const auto& s : sites) {
        const double d = (double(x) - s[0]) * (double(x) - s[0]) + (double(y) - s[1]) * (double(y) - s[1]);
        if (d < best) {
          best = d;
          val = s[2];
        }
      }
      a.at(x, y) = val;
    }
  return a;
}

// ---------------------------------------------------------------------------
// Manifest

inline const std::array<std::string, 3> kSplitNames{"train", "val", "test"};

struct DatasetManifest {
  int format_version = 1;
  std::size_t patch_size = 64;
  std::map<std::string, std::size_t> counts{{"train", 0}, {"val", 0}, {"test", 0}};
  std::uint64_t seed = 1;
  std::vector<std::string> surface_kinds{"gaussian-bumps"};
  double amplitude = 1.5;
  double feature_scale_min = 2.0;
  double feature_scale_max = 3.5;
  int albedo_cells = 2;
  double albedo_min = 0.5;
  double albedo_max = 1.0;
  std::vector<double> light_ring_polar_deg{30.0, 55.0};
  int light_azimuths = 6;
  double noise_sigma = 0.0;
  std::string nir_format = "png16";  // or "pfm"

  void validate() const {
    if (format_version != 1) throw ConfigError("unsupported manifest format_version");
    if (patch_size < 8) throw ConfigError("patch_size must be >= 8");
    for (const auto& [name, n] : counts) {
      if (std::find(kSplitNames.begin(), kSplitNames.end(), name) == kSplitNames.end())
        throw ConfigError("unknown split '" + name + "'");
    }
    if (surface_kinds.empty()) throw ConfigError("surface_kinds must not be empty");
    for (const auto& k : surface_kinds) (void)surface_kind_from_string(k);
    if (!(amplitude > 0.0)) throw ConfigError("amplitude must be > 0");
    if (!(feature_scale_min >= 2.0) || feature_scale_max < feature_scale_min)
      throw ConfigError("feature scale range must satisfy 2 <= min <= max");
    if (albedo_cells < 1 || !(albedo_min >= 0.0) || albedo_max > 1.0 || albedo_max < albedo_min)
      throw ConfigError("albedo must be cells >= 1 with 0 <= min <= max <= 1");
    if (light_ring_polar_deg.empty() || light_azimuths < 1) throw ConfigError("light rig is empty");
    for (double p : light_ring_polar_deg)
      if (!(p >= 0.0 && p < 90.0)) throw ConfigError("light polar angles must be in [0, 90)");
    if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
    if (nir_format != "png16" && nir_format != "pfm") throw ConfigError("nir_format must be png16 or pfm");
  }

  std::vector<LightDirection> lights() const {
    std::vector<LightDirection> out;
    for (double polar : light_ring_polar_deg)
      for (int k = 0; k < light_azimuths; ++k)
        out.push_back(LightDirection::from_angles(deg2rad(polar), 2.0 * std::numbers::pi * k / light_azimuths));
    return out;
  }
};

namespace detail {

template <typename V>
void read_key(const json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* n) { return k == n; }))
      throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

}  // namespace detail

inline json to_json(const DatasetManifest& m) {
  json counts = json::object();
  for (const auto& [k, v] : m.counts) counts[k] = v;
  return json{{"format_version", m.format_version},
              {"patch_size", m.patch_size},
              {"counts", counts},
              {"seed", m.seed},
              {"surface_kinds", m.surface_kinds},
              {"amplitude", m.amplitude},
              {"feature_scale_min", m.feature_scale_min},
              {"feature_scale_max", m.feature_scale_max},
              {"albedo_cells", m.albedo_cells},
              {"albedo_min", m.albedo_min},
              {"albedo_max", m.albedo_max},
              {"light_ring_polar_deg", m.light_ring_polar_deg},
              {"light_azimuths", m.light_azimuths},
              {"noise_sigma", m.noise_sigma},
              {"nir_format", m.nir_format}};
}

/// Parses a manifest; unknown keys are rejected. `samples` (written by
/// build_dataset) is tolerated and ignored here.
inline DatasetManifest manifest_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("manifest must be a JSON object");
  detail::reject_unknown(j,
                         {"format_version", "patch_size", "counts", "seed", "surface_kinds", "amplitude",
                          "feature_scale_min", "feature_scale_max", "albedo_cells", "albedo_min",
                          "albedo_max", "light_ring_polar_deg", "light_azimuths", "noise_sigma",
                          "nir_format", "samples"},
                         "dataset manifest");
  DatasetManifest m;
  try {
    detail::read_key(j, "format_version", m.format_version);
    detail::read_key(j, "patch_size", m.patch_size);
    if (j.contains("counts")) {
      m.counts.clear();
      for (const auto& [k, v] : j.at("counts").items()) m.counts[k] = v.get<std::size_t>();
    }
    detail::read_key(j, "seed", m.seed);
    detail::read_key(j, "surface_kinds", m.surface_kinds);
    detail::read_key(j, "amplitude", m.amplitude);
    detail::read_key(j, "feature_scale_min", m.feature_scale_min);
    detail::read_key(j, "feature_scale_max", m.feature_scale_max);
    detail::read_key(j, "albedo_cells", m.albedo_cells);
    detail::read_key(j, "albedo_min", m.albedo_min);
    detail::read_key(j, "albedo_max", m.albedo_max);
    detail::read_key(j, "light_ring_polar_deg", m.light_ring_polar_deg);
    detail::read_key(j, "light_azimuths", m.light_azimuths);
    detail::read_key(j, "noise_sigma", m.noise_sigma);
    detail::read_key(j, "nir_format", m.nir_format);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Samples

/// One generated or externally supplied pair. `light` is the rig index, or -1
/// when unknown.
struct SampleRecord {
  std::size_t index = 0;
  int light = -1;
  std::string kind;
  std::uint64_t seed = 0;
};

struct GeneratedSample {
  SampleRecord record;
  Surface surface;
  ScalarField albedo;
  NirImage nir;  // normalized
};

inline std::uint64_t split_tag(const std::string& split) {
  for (std::size_t i = 0; i < kSplitNames.size(); ++i)
    if (kSplitNames[i] == split) return std::uint64_t(i + 1);
  throw ConfigError("unknown split '" + split + "'");
}

/// Per-sample seed: manifest seed ⊕ (split tag in the high bits | index).
/// Distinct splits occupy disjoint ranges.
inline std::uint64_t sample_seed(std::uint64_t manifest_seed, const std::string& split, std::size_t index) {
  return manifest_seed ^ ((split_tag(split) << 48) | std::uint64_t(index));
}

/// Light index for `index`: each aligned block of L consecutive indices is a
/// random permutation of the L rig lights.
inline int balanced_light(std::uint64_t manifest_seed, const std::string& split, std::size_t index,
                          std::size_t num_lights) {
  const std::size_t block = index / num_lights;
  std::vector<int> perm(num_lights);
  for (std::size_t i = 0; i < num_lights; ++i) perm[i] = int(i);
  detail::Rng rng(splitmix64(manifest_seed ^ (split_tag(split) << 56) ^ (0x5eed0000ULL + block)));
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm[index % num_lights];
}

inline GeneratedSample generate_sample(const DatasetManifest& m, const std::string& split, std::size_t index) {
  const auto lights = m.lights();
  GeneratedSample s;
  s.record.index = index;
  s.record.seed = sample_seed(m.seed, split, index);
  s.record.light = balanced_light(m.seed, split, index, lights.size());
  detail::Rng rng(splitmix64(s.record.seed));
  const std::size_t kind_idx = std::uniform_int_distribution<std::size_t>(0, m.surface_kinds.size() - 1)(rng);
  s.record.kind = m.surface_kinds[kind_idx];
  SurfaceSpec spec{surface_kind_from_string(s.record.kind), m.amplitude,
                   detail::uniform(rng, m.feature_scale_min, m.feature_scale_max), rng()};
  s.surface = generate_surface(spec, m.patch_size);
  s.albedo = piecewise_albedo(m.patch_size, m.patch_size, m.albedo_cells, m.albedo_min, m.albedo_max, rng());
  NirImage raw = render_lambertian_raw(s.surface.normals, s.albedo, lights[std::size_t(s.record.light)]);
  if (m.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, m.noise_sigma);
    for (auto& v : raw.field.values) v = std::clamp(v + noise(rng), 0.0, 1.0);
  }
  s.nir = raw.as_normalized();
  return s;
}

inline std::string sample_stem(std::size_t index) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << index;
  return os.str();
}

inline json to_json(const SampleRecord& r) {
  return json{{"index", r.index}, {"light", r.light}, {"kind", r.kind}, {"seed", r.seed}};
}

/// Writes one pair (and its albedo) into `<root>/<split>/`.
inline void write_pair(const fs::path& root, const std::string& split, std::size_t index, const NirImage& nir,
                       const NormalMap& normals, const ScalarField& albedo, const std::string& nir_format) {
  const fs::path dir = root / split;
  const std::string stem = sample_stem(index);
  if (nir_format == "pfm") {
    io::write_nir_pfm((dir / (stem + "_nir.pfm")).string(), nir);
  } else {
    io::write_nir_png((dir / (stem + "_nir.png")).string(), nir);
  }
  io::write_normal_png((dir / (stem + "_nrm.png")).string(), normals);
  io::write_albedo_png((dir / (stem + "_alb.png")).string(), albedo);
}

inline void write_json_file(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing", path.string());
  os << j.dump(2) << '\n';
  if (!os) throw IoError("write failed", path.string());
}

/// Manifest plus per-split sample tables.
inline void write_dataset_manifest(const fs::path& root, const DatasetManifest& m,
                                   const std::map<std::string, std::vector<SampleRecord>>& samples) {
  json j = to_json(m);
  json tables = json::object();
  for (const auto& [split, recs] : samples) {
    json arr = json::array();
    for (const auto& r : recs) arr.push_back(to_json(r));
    tables[split] = std::move(arr);
  }
  j["samples"] = std::move(tables);
  write_json_file(root / "manifest.json", j);
}

struct BuildReport {
  std::map<std::string, std::size_t> written;                     // per split
  std::map<std::string, std::vector<std::size_t>> light_counts;   // per split, per rig light
  std::size_t files = 0;
};

inline json to_json(const BuildReport& r) {
  return json{{"written", r.written}, {"light_counts", r.light_counts}, {"files", r.files}};
}

/// Generates every split into `out_dir`. The manifest is written last, so its
/// presence implies a complete dataset.
inline BuildReport build_dataset(const DatasetManifest& m, const fs::path& out_dir) {
  m.validate();
  const std::size_t num_lights = m.lights().size();
  BuildReport report;
  std::map<std::string, std::vector<SampleRecord>> tables;
  long last_completed = -1;
  try {
    fs::create_directories(out_dir);
    for (const auto& split : kSplitNames) {
      const std::size_t n = m.counts.count(split) ? m.counts.at(split) : 0;
      fs::create_directories(out_dir / split);
      auto& counts = report.light_counts[split];
      counts.assign(num_lights, 0);
      auto& recs = tables[split];
      for (std::size_t i = 0; i < n; ++i) {
        const GeneratedSample s = generate_sample(m, split, i);
        write_pair(out_dir, split, i, s.nir, s.surface.normals, s.albedo, m.nir_format);
        recs.push_back(s.record);
        counts[std::size_t(s.record.light)]++;
        report.files += 3;
        last_completed = long(i);
      }
      report.written[split] = n;
      last_completed = -1;
    }
    write_dataset_manifest(out_dir, m, tables);
    report.files += 1;
  } catch (const fs::filesystem_error& e) {
    throw PartialOutput(std::string("dataset generation failed: ") + e.what(), last_completed);
  } catch (const IoError& e) {
    throw PartialOutput(std::string("dataset generation failed: ") + e.what(), last_completed);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Loading

struct DatasetIndex {
  fs::path root;
  DatasetManifest manifest;
  std::map<std::string, std::vector<SampleRecord>> splits;

  const std::vector<SampleRecord>& split(const std::string& name) const {
    const auto it = splits.find(name);
    if (it == splits.end()) throw ConfigError("dataset has no split '" + name + "'");
    return it->second;
  }

  fs::path nir_path(const std::string& split, std::size_t index) const {
    return root / split / (sample_stem(index) + (manifest.nir_format == "pfm" ? "_nir.pfm" : "_nir.png"));
  }
  fs::path normal_path(const std::string& split, std::size_t index) const {
    return root / split / (sample_stem(index) + "_nrm.png");
  }
  fs::path albedo_path(const std::string& split, std::size_t index) const {
    return root / split / (sample_stem(index) + "_alb.png");
  }
};

inline DatasetIndex open_dataset(const fs::path& root) {
  const fs::path mpath = root / "manifest.json";
  std::ifstream is(mpath);
  if (!is) throw IoError("dataset manifest not found", mpath.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw IoError(std::string("corrupt manifest (") + e.what() + ")", mpath.string());
  }
  DatasetIndex idx;
  idx.root = root;
  idx.manifest = manifest_from_json(j);
  for (const auto& split : kSplitNames) idx.splits[split] = {};
  if (j.contains("samples")) {
    for (const auto& [split, arr] : j.at("samples").items()) {
      auto& recs = idx.splits[split];
      for (const auto& e : arr) {
        SampleRecord r;
        r.index = e.at("index").get<std::size_t>();
        r.light = e.value("light", -1);
        r.kind = e.value("kind", std::string{});
        r.seed = e.value("seed", std::uint64_t{0});
        recs.push_back(r);
      }
    }
  }
  return idx;
}

/// NIR as [1,1,H,W] normalized values and normals as [1,3,H,W] components.
struct Pair {
  Tensor<float> nir;
  Tensor<float> normals;
};

inline Pair load_pair(const DatasetIndex& ds, const std::string& split, std::size_t index) {
  const std::string np = ds.nir_path(split, index).string();
  const NirImage nir = io::read_nir(np).as_normalized();
  std::size_t w = 0, h = 0;
  const std::string nrm = ds.normal_path(split, index).string();
  const auto comps = io::read_normal_components(nrm, w, h);
  if (w != nir.width() || h != nir.height()) throw IoError("NIR and normal extents differ", nrm);
  std::vector<float> z(w * h), n(3 * w * h);
  for (std::size_t i = 0; i < w * h; ++i) {
    z[i] = float(nir.field.values[i]);
    for (std::size_t c = 0; c < 3; ++c) n[c * w * h + i] = float(comps[3 * i + c]);
  }
  return {Tensor<float>(Shape{1, 1, h, w}, std::move(z)), Tensor<float>(Shape{1, 3, h, w}, std::move(n))};
}

struct Batch {
  Tensor<float> nir;      // [B,1,H,W]
  Tensor<float> normals;  // [B,3,H,W]
};

/// Stacks the listed positions of `split`. All indices are checked before any
/// file is read, so an out-of-range index never yields a partial batch.
inline Batch load_batch(const DatasetIndex& ds, const std::string& split, const std::vector<std::size_t>& positions) {
  const auto& recs = ds.split(split);
  if (positions.empty()) throw ConfigError("load_batch: empty index list");
  for (std::size_t p : positions) {
    if (p >= recs.size())
      throw ConfigError("load_batch: index " + std::to_string(p) + " out of range for split '" + split +
                        "' of size " + std::to_string(recs.size()));
  }
  std::vector<float> z, n;
  std::size_t h = 0, w = 0;
  for (std::size_t p : positions) {
    Pair pr = load_pair(ds, split, recs[p].index);
    if (h == 0) {
      h = pr.nir.size(2);
      w = pr.nir.size(3);
    } else if (pr.nir.size(2) != h || pr.nir.size(3) != w) {
      throw IoError("patch extent differs within batch", ds.nir_path(split, recs[p].index).string());
    }
    z.insert(z.end(), pr.nir.data().begin(), pr.nir.data().end());
    n.insert(n.end(), pr.normals.data().begin(), pr.normals.data().end());
  }
  const std::size_t b = positions.size();
  return {Tensor<float>(Shape{b, 1, h, w}, std::move(z)), Tensor<float>(Shape{b, 3, h, w}, std::move(n))};
}

/// Whole split held in memory for repeated batch assembly.
struct SplitCache {
  std::size_t height = 0, width = 0;
  std::vector<float> nir;      // N × H × W
  std::vector<float> normals;  // N × 3 × H × W
  std::vector<int> lights;
  std::size_t size() const { return lights.size(); }

  Batch gather(const std::vector<std::size_t>& positions) const {
    const std::size_t hw = height * width;
    std::vector<float> z, n;
    z.reserve(positions.size() * hw);
    n.reserve(positions.size() * 3 * hw);
    for (std::size_t p : positions) {
      if (p >= size()) throw ConfigError("SplitCache::gather: index out of range");
      z.insert(z.end(), nir.begin() + long(p * hw), nir.begin() + long((p + 1) * hw));
      n.insert(n.end(), normals.begin() + long(p * 3 * hw), normals.begin() + long((p + 1) * 3 * hw));
    }
    const std::size_t b = positions.size();
    return {Tensor<float>(Shape{b, 1, height, width}, std::move(z)),
            Tensor<float>(Shape{b, 3, height, width}, std::move(n))};
  }
};

inline SplitCache cache_split(const DatasetIndex& ds, const std::string& split) {
  SplitCache c;
  for (const auto& r : ds.split(split)) {
    Pair p = load_pair(ds, split, r.index);
    if (c.height == 0) {
      c.height = p.nir.size(2);
      c.width = p.nir.size(3);
    } else if (p.nir.size(2) != c.height || p.nir.size(3) != c.width) {
      throw IoError("patch extent differs within split", ds.nir_path(split, r.index).string());
    }
    c.nir.insert(c.nir.end(), p.nir.data().begin(), p.nir.data().end());
    c.normals.insert(c.normals.end(), p.normals.data().begin(), p.normals.data().end());
    c.lights.push_back(r.light);
  }
  return c;
}

}  // namespace nirsfs
