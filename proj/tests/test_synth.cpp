#include <gtest/gtest.h>

#include <fstream>
#include <numeric>
#include <set>

#include "nirsfs/image_io.hpp"
#include "nirsfs/losses.hpp"
#include "nirsfs/synth.hpp"
#include "test_util.hpp"

using namespace nirsfs;
namespace fs = std::filesystem;

namespace {

DatasetManifest small_manifest(std::size_t train, std::size_t val, std::size_t test) {
  DatasetManifest m;
  m.counts = {{"train", train}, {"val", val}, {"test", test}};
  m.patch_size = 32;
  m.seed = 99;
  m.surface_kinds = {"gaussian-bumps", "sinusoid-weave", "fractal-noise", "composite"};
  return m;
}

std::map<std::string, std::string> hash_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = testutil::sha256_file(e.path());
  return out;
}

}  // namespace

TEST(Surface, VanishingAmplitudeIsFlat) {
  const Surface s = generate_surface({SurfaceKind::Composite, 1e-12, 3.0, 4}, 16);
  for (const auto& n : s.normals.normals()) {
    EXPECT_NEAR(n.x, 0.0, 1e-9);
    EXPECT_NEAR(n.y, 0.0, 1e-9);
    EXPECT_NEAR(n.z, 1.0, 1e-9);
  }
}

TEST(Surface, TiltedPlaneNormal) {
  ScalarField z(8, 8);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) z.at(x, y) = 0.1 * double(x);
  const Vec3 e = Vec3{-0.1, 0.0, 1.0}.normalized();
  const NormalMap nm = normals_from_heights(z);
  for (const auto& n : nm.normals()) {
    EXPECT_NEAR(n.x, e.x, 1e-12);
    EXPECT_NEAR(n.y, e.y, 1e-12);
    EXPECT_NEAR(n.z, e.z, 1e-12);
  }
}

TEST(Surface, DeterministicPerSeed) {
  for (auto kind : {SurfaceKind::GaussianBumps, SurfaceKind::SinusoidWeave, SurfaceKind::FractalNoise,
                    SurfaceKind::Composite}) {
    const Surface a = generate_surface({kind, 1.5, 2.5, 1234}, 64);
    const Surface b = generate_surface({kind, 1.5, 2.5, 1234}, 64);
    const Surface c = generate_surface({kind, 1.5, 2.5, 1235}, 64);
    EXPECT_EQ(a.heights.values, b.heights.values);
    EXPECT_NE(a.heights.values, c.heights.values);
    EXPECT_TRUE(a.normals.satisfies_invariants());
  }
}

TEST(Surface, InvalidSpecRejected) {
  EXPECT_THROW(generate_surface({SurfaceKind::GaussianBumps, 0.0, 3.0, 1}), ConfigError);
  EXPECT_THROW(generate_surface({SurfaceKind::GaussianBumps, 1.0, 1.5, 1}), ConfigError);
}

TEST(Surface, GroundTruthIsIntegrable) {
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Surface s = generate_surface({SurfaceKind(seed % 4), 1.5, 2.0 + 0.1 * double(seed), seed}, 64);
    const Tensor<double> g = encode_normals<double>(s.normals);
    total += loss_curl(reshape(g, Shape{1, 3, 64, 64})).item();
  }
  EXPECT_LT(total / 20.0, 1e-3);
}

TEST(Dataset, TwelveSamplesCoverEveryLightOnce) {
  testutil::TempDir dir("ds");
  const BuildReport r = build_dataset(small_manifest(12, 0, 0), dir.path());
  for (std::size_t c : r.light_counts.at("train")) EXPECT_EQ(c, 1u);
  const DatasetIndex ds = open_dataset(dir.path());
  std::set<int> seen;
  for (const auto& rec : ds.split("train")) seen.insert(rec.light);
  EXPECT_EQ(seen.size(), 12u);
}

TEST(Dataset, ZeroCountSplitIsEmptyDirectory) {
  testutil::TempDir dir("ds");
  const BuildReport r = build_dataset(small_manifest(3, 0, 2), dir.path());
  EXPECT_TRUE(fs::is_directory(dir / "val"));
  EXPECT_TRUE(fs::is_empty(dir / "val"));
  EXPECT_EQ(r.written.at("val"), 0u);
  const DatasetIndex ds = open_dataset(dir.path());
  EXPECT_TRUE(ds.split("val").empty());
  EXPECT_EQ(ds.split("test").size(), 2u);
}

TEST(Dataset, ReportMatchesFilesOnDisk) {
  testutil::TempDir dir("ds");
  const BuildReport r = build_dataset(small_manifest(5, 2, 3), dir.path());
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir.path())) files += e.is_regular_file();
  EXPECT_EQ(files, r.files);
  for (const auto& [split, n] : r.written) {
    std::size_t nir = 0;
    for (const auto& e : fs::directory_iterator(dir / split))
      nir += e.path().filename().string().find("_nir.") != std::string::npos;
    EXPECT_EQ(nir, n) << split;
  }
}

TEST(Dataset, RebuildIsByteIdentical) {
  testutil::TempDir a("ds"), b("ds");
  build_dataset(small_manifest(6, 2, 3), a.path());
  build_dataset(small_manifest(6, 2, 3), b.path());
  EXPECT_EQ(hash_tree(a.path()), hash_tree(b.path()));
}

TEST(Dataset, SplitsAreDisjoint) {
  testutil::TempDir dir("ds");
  build_dataset(small_manifest(48, 12, 12), dir.path());
  std::set<std::string> train;
  for (const auto& e : fs::directory_iterator(dir / "train")) train.insert(testutil::sha256_file(e.path()));
  for (const std::string split : {"val", "test"})
    for (const auto& e : fs::directory_iterator(dir / split)) {
      if (e.path().filename().string().find("_alb.") != std::string::npos) continue;
      EXPECT_EQ(train.count(testutil::sha256_file(e.path())), 0u) << e.path();
    }
}

TEST(Dataset, StoredPairReRenders) {
  testutil::TempDir dir("ds");
  DatasetManifest m = small_manifest(12, 0, 0);
  build_dataset(m, dir.path());
  const DatasetIndex ds = open_dataset(dir.path());
  const auto lights = m.lights();
  for (const auto& rec : ds.split("train")) {
    std::size_t w = 0, h = 0;
    const auto comps = io::read_normal_components(ds.normal_path("train", rec.index).string(), w, h);
    NormalMap n(w, h);
    for (std::size_t i = 0; i < w * h; ++i) n[i] = Vec3{comps[3 * i], comps[3 * i + 1], comps[3 * i + 2]}.normalized();
    const ScalarField albedo = io::read_albedo_png(ds.albedo_path("train", rec.index).string());
    const NirImage expect = render_lambertian(n, albedo, lights[std::size_t(rec.light)]);
    const NirImage stored = io::read_nir(ds.nir_path("train", rec.index).string()).as_normalized();
    double worst = 0.0;
    for (std::size_t i = 0; i < w * h; ++i)
      worst = std::max(worst, std::abs(expect.field.values[i] - stored.field.values[i]));
    EXPECT_LT(worst, 1e-4) << rec.index;
  }
}

TEST(Dataset, PfmFormatLoads) {
  testutil::TempDir dir("ds");
  DatasetManifest m = small_manifest(2, 0, 0);
  m.nir_format = "pfm";
  build_dataset(m, dir.path());
  const DatasetIndex ds = open_dataset(dir.path());
  EXPECT_TRUE(fs::exists(ds.nir_path("train", 0)));
  const Batch b = load_batch(ds, "train", {0, 1});
  for (float v : b.nir.data()) EXPECT_TRUE(v >= -1.0f && v <= 1.0f);
}

TEST(LoadBatch, ShapesAndRanges) {
  testutil::TempDir dir("ds");
  DatasetManifest m = small_manifest(32, 0, 0);
  m.patch_size = 64;
  build_dataset(m, dir.path());
  const DatasetIndex ds = open_dataset(dir.path());
  std::vector<std::size_t> idx(32);
  std::iota(idx.begin(), idx.end(), 0);
  const Batch b = load_batch(ds, "train", idx);
  EXPECT_EQ(b.nir.shape(), (Shape{32, 1, 64, 64}));
  EXPECT_EQ(b.normals.shape(), (Shape{32, 3, 64, 64}));
  for (float v : b.nir.data()) ASSERT_TRUE(v >= -1.0f && v <= 1.0f);
  for (std::size_t i = 0; i < 32; ++i) EXPECT_TRUE(decode_normals(b.normals, i).normals.satisfies_invariants());
}

TEST(LoadBatch, OutOfRangeRejected) {
  testutil::TempDir dir("ds");
  build_dataset(small_manifest(4, 0, 0), dir.path());
  const DatasetIndex ds = open_dataset(dir.path());
  EXPECT_THROW(load_batch(ds, "train", {0, 4}), ConfigError);
}

TEST(LoadBatch, MissingFileNamesPath) {
  testutil::TempDir dir("ds");
  build_dataset(small_manifest(2, 0, 0), dir.path());
  fs::remove(dir / "train" / "000001_nrm.png");
  const DatasetIndex ds = open_dataset(dir.path());
  try {
    load_batch(ds, "train", {0, 1});
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("000001_nrm.png"), std::string::npos);
  }
}

TEST(LoadBatch, ReEncodeIsByteIdentical) {
  testutil::TempDir dir("ds");
  build_dataset(small_manifest(3, 0, 0), dir.path());
  const DatasetIndex ds = open_dataset(dir.path());
  const Batch b = load_batch(ds, "train", {0, 1, 2});
  const std::size_t h = b.nir.size(2), w = b.nir.size(3), hw = h * w;
  for (std::size_t k = 0; k < 3; ++k) {
    NirImage nir{ScalarField(w, h), Radiance::Normalized};
    std::vector<double> comps(3 * hw);
    for (std::size_t i = 0; i < hw; ++i) {
      nir.field.values[i] = b.nir[k * hw + i];
      for (std::size_t c = 0; c < 3; ++c) comps[3 * i + c] = b.normals[(k * 3 + c) * hw + i];
    }
    io::write_nir_png((dir / "re_nir.png").string(), nir);
    io::write_normal_components((dir / "re_nrm.png").string(), w, h, comps);
    EXPECT_EQ(testutil::read_bytes(dir / "re_nir.png"), testutil::read_bytes(ds.nir_path("train", k)));
    EXPECT_EQ(testutil::read_bytes(dir / "re_nrm.png"), testutil::read_bytes(ds.normal_path("train", k)));
  }
}

TEST(Manifest, JsonRoundTripAndUnknownKeys) {
  const DatasetManifest m = small_manifest(1, 2, 3);
  const DatasetManifest back = manifest_from_json(to_json(m));
  EXPECT_EQ(to_json(back), to_json(m));
  json j = to_json(m);
  j["bogus"] = 1;
  EXPECT_THROW(manifest_from_json(j), ConfigError);
  json k = to_json(m);
  k["amplitude"] = -1.0;
  EXPECT_THROW(manifest_from_json(k), ConfigError);
}

TEST(Manifest, UnwritableOutputIsPartialOutput) {
  testutil::TempDir dir("ds");
  std::ofstream(dir / "blocker") << "x";
  try {
    build_dataset(small_manifest(2, 0, 0), dir / "blocker" / "sub");
    FAIL() << "expected PartialOutput";
  } catch (const PartialOutput& e) {
    EXPECT_EQ(e.last_completed(), -1);
  }
}
