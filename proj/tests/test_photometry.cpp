#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "nirsfs/image_io.hpp"
#include "nirsfs/photometry.hpp"
#include "nirsfs/synth.hpp"
#include "test_util.hpp"

using namespace nirsfs;

namespace {

NormalMap single(Vec3 n) {
  NormalMap m(1, 1);
  m[0] = n.normalized();
  return m;
}

double render1(Vec3 n, Vec3 l, double albedo = 1.0) {
  return render_lambertian(single(n), ScalarField(1, 1, albedo), LightDirection(l)).at(0, 0);
}

/// Mean angular error of photometric stereo on 50 random surfaces, 12 random
/// lights each (polar <= 60°), with Gaussian noise on raw radiance.
double round_trip_error(double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double total = 0.0;
  std::size_t count = 0;
  for (int s = 0; s < 50; ++s) {
    const Surface surf = generate_surface({SurfaceKind::GaussianBumps, 1.0, 3.0, rng()}, 32);
    const ScalarField albedo = piecewise_albedo(32, 32, 2, 0.5, 1.0, rng());
    std::vector<LightDirection> lights;
    std::vector<NirImage> imgs;
    std::normal_distribution<double> noise(0.0, sigma);
    for (int k = 0; k < 12; ++k) {
      lights.push_back(random_light(rng, deg2rad(60.0)));
      NirImage im = render_lambertian_raw(surf.normals, albedo, lights.back());
      if (sigma > 0)
        for (auto& v : im.field.values) v = std::max(0.0, v + noise(rng));
      imgs.push_back(im);
    }
    const auto res = photometric_stereo(imgs, lights);
    for (std::size_t i = 0; i < res.valid.size(); ++i)
      if (res.valid[i]) {
        total += angle_deg(res.normals[i], surf.normals[i]);
        ++count;
      }
  }
  return total / double(count);
}

}  // namespace

TEST(Render, Examples) {
  EXPECT_DOUBLE_EQ(render1({0, 0, 1}, {0, 0, 1}), 1.0);
  const LightDirection l60 = LightDirection::from_angles(deg2rad(60.0), 0.3);
  EXPECT_NEAR(render_lambertian_raw(single({0, 0, 1}), ScalarField(1, 1, 1.0), l60).at(0, 0), 0.5, 1e-12);
  EXPECT_NEAR(render_lambertian(single({0, 0, 1}), ScalarField(1, 1, 1.0), l60).at(0, 0), 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(render1({1, 0, 0.1}, {-1, 0, 0.2}), -1.0);
}

TEST(Render, AlbedoExtentMismatch) {
  EXPECT_THROW(render_lambertian(NormalMap(4, 4), ScalarField(3, 4, 1.0), LightDirection({0, 0, 1})), ShapeError);
}

TEST(Render, RotationAboutOpticalAxisIsInvariant) {
  const Surface s = generate_surface({SurfaceKind::Composite, 1.2, 3.0, 77}, 24);
  const ScalarField albedo = piecewise_albedo(24, 24, 3, 0.5, 1.0, 5);
  const LightDirection l = LightDirection::from_angles(deg2rad(40.0), deg2rad(20.0));
  const std::size_t n = 24;
  // Grid and vectors rotated by 90°: pixel (x, y) -> (n−1−y, x), (vx, vy) -> (−vy, vx).
  NormalMap rn(n, n);
  ScalarField ra(n, n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const Vec3 v = s.normals.at(x, y);
      rn.at(n - 1 - y, x) = {-v.y, v.x, v.z};
      ra.at(n - 1 - y, x) = albedo.at(x, y);
    }
  const LightDirection rl({-l.vec().y, l.vec().x, l.vec().z});
  const NirImage a = render_lambertian(s.normals, albedo, l);
  const NirImage b = render_lambertian(rn, ra, rl);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) ASSERT_NEAR(a.at(x, y), b.at(n - 1 - y, x), 1e-14);
}

TEST(Light, Invariants) {
  for (const auto& l : standard_lights()) {
    EXPECT_NEAR(l.vec().norm(), 1.0, 1e-6);
    EXPECT_GT(l.vec().z, 0.0);
  }
  EXPECT_EQ(standard_lights().size(), kNumStandardLights);
  EXPECT_THROW(LightDirection({1, 0, 0}), DegenerateInput);
  EXPECT_THROW(LightDirection({0, 0, 0}), DegenerateInput);
}

TEST(PhotometricStereo, IdentityLightMatrix) {
  // Three orthonormal lights, each 54.7° off the optical axis. In their own
  // frame the light matrix is the identity.
  const double a = 1.0 / std::sqrt(3.0);
  const Vec3 e1{std::sqrt(2.0 / 3.0), 0.0, a};
  const Vec3 e2{-1.0 / std::sqrt(6.0), 1.0 / std::sqrt(2.0), a};
  const Vec3 e3{-1.0 / std::sqrt(6.0), -1.0 / std::sqrt(2.0), a};
  const std::vector<LightDirection> lights{LightDirection(e1), LightDirection(e2), LightDirection(e3)};
  // ρn = (0, 0.6, 0.8) in light coordinates.
  const Vec3 n = e2 * 0.6 + e3 * 0.8;
  std::vector<NirImage> imgs;
  for (const auto& l : lights) imgs.push_back(render_lambertian_raw(single(n), ScalarField(1, 1, 1.0), l));
  EXPECT_NEAR(imgs[0].at(0, 0), 0.0, 1e-12);
  EXPECT_NEAR(imgs[1].at(0, 0), 0.6, 1e-12);
  EXPECT_NEAR(imgs[2].at(0, 0), 0.8, 1e-12);
  const auto res = photometric_stereo(imgs, lights);
  ASSERT_EQ(res.valid[0], 1);
  const Vec3 r = res.normals[0];
  EXPECT_NEAR(r.dot(e1), 0.0, 1e-9);
  EXPECT_NEAR(r.dot(e2), 0.6, 1e-9);
  EXPECT_NEAR(r.dot(e3), 0.8, 1e-9);
  EXPECT_NEAR(res.albedo.values[0], 1.0, 1e-9);
}

TEST(PhotometricStereo, AllZeroPixelIsInvalid) {
  const auto lights = standard_lights();
  std::vector<NirImage> imgs(lights.size(), NirImage{ScalarField(2, 1, 0.0), Radiance::Raw});
  for (auto& im : imgs) im.field.values[1] = 0.5;
  const auto res = photometric_stereo(imgs, lights);
  EXPECT_EQ(res.valid[0], 0);
  EXPECT_EQ(res.normals[0].z, 1.0);
  EXPECT_EQ(res.normals[0].x, 0.0);
  EXPECT_EQ(res.valid_count(), 1u);
}

TEST(PhotometricStereo, RankDeficientLightsRejected) {
  const std::vector<LightDirection> lights{LightDirection({0, 0, 1}), LightDirection({0, 0, 1}),
                                           LightDirection({0.1, 0, 1})};
  const std::vector<NirImage> imgs(3, NirImage{ScalarField(1, 1, 0.5), Radiance::Raw});
  EXPECT_THROW(photometric_stereo(imgs, lights), DegenerateInput);
}

TEST(PhotometricStereo, RoundTripIsExactAtZeroNoise) {
  EXPECT_LT(round_trip_error(0.0, 11), 0.1);
}

TEST(PhotometricStereo, ErrorGrowsWithNoise) {
  const std::vector<double> sigmas{0.0, 0.01, 0.02, 0.05};
  std::vector<double> err;
  for (double s : sigmas) err.push_back(round_trip_error(s, 12));
  // Spearman rank correlation between sigma and error.
  std::vector<double> rank(err.size());
  for (std::size_t i = 0; i < err.size(); ++i)
    rank[i] = double(std::count_if(err.begin(), err.end(), [&](double e) { return e < err[i]; }));
  double d2 = 0.0;
  for (std::size_t i = 0; i < rank.size(); ++i) d2 += (rank[i] - double(i)) * (rank[i] - double(i));
  const double n = double(err.size());
  const double rho = 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
  EXPECT_GT(rho, 0.9) << err[0] << " " << err[1] << " " << err[2] << " " << err[3];
}

TEST(Codec, EncodeDecodeRoundTrip) {
  const Surface s = generate_surface({SurfaceKind::FractalNoise, 1.0, 4.0, 3}, 16);
  const auto d = decode_normals(encode_normals<float>(s.normals));
  EXPECT_EQ(d.degenerate_pixels, 0u);
  for (std::size_t i = 0; i < s.normals.size(); ++i) {
    EXPECT_NEAR(d.normals[i].x, s.normals[i].x, 1e-6);
    EXPECT_NEAR(d.normals[i].y, s.normals[i].y, 1e-6);
    EXPECT_NEAR(d.normals[i].z, s.normals[i].z, 1e-6);
  }
}

TEST(Codec, DecodeNormalizesAndCountsDegenerate) {
  const Tensor<double> t(Shape{3, 1, 2}, {0.2, 0.0, 0.2, 0.0, 0.2, 0.0});
  const auto d = decode_normals(t);
  const double k = 1.0 / std::sqrt(3.0);
  EXPECT_NEAR(d.normals[0].x, k, 1e-12);
  EXPECT_NEAR(d.normals[0].y, k, 1e-12);
  EXPECT_NEAR(d.normals[0].z, k, 1e-12);
  EXPECT_EQ(d.normals[1].z, 1.0);
  EXPECT_EQ(d.degenerate_pixels, 1u);
}

TEST(Codec, DecodeAlwaysSatisfiesInvariants) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor<float> t = Tensor<float>::zeros({2, 3, 8, 8});
  for (auto& v : t.data()) v = u(rng);
  for (std::size_t b = 0; b < 2; ++b) EXPECT_TRUE(decode_normals(t, b).normals.satisfies_invariants());
}

TEST(Codec, NormalPngIsByteExact) {
  testutil::TempDir dir("png");
  const Surface s = generate_surface({SurfaceKind::Composite, 1.5, 2.5, 21}, 20);
  const std::string a = (dir / "a.png").string(), b = (dir / "b.png").string();
  io::write_normal_png(a, s.normals);
  std::size_t w = 0, h = 0;
  const auto comps = io::read_normal_components(a, w, h);
  ASSERT_EQ(w, 20u);
  ASSERT_EQ(h, 20u);
  io::write_normal_components(b, w, h, comps);
  EXPECT_EQ(testutil::read_bytes(a), testutil::read_bytes(b));
  // Quantization step is 2/65535 per component.
  const NormalMap back = io::read_normal_png(a);
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_LT(angle_deg(back[i], s.normals[i]), 0.01);
  EXPECT_TRUE(back.satisfies_invariants());
}

TEST(Codec, ChannelValueFormula) {
  testutil::TempDir dir("png");
  NormalMap n(1, 1);
  n[0] = Vec3{0.6, 0.0, 0.8};
  io::write_normal_png((dir / "n.png").string(), n);
  const io::PngImage img = io::read_png((dir / "n.png").string());
  ASSERT_EQ(img.bit_depth, 16);
  EXPECT_EQ(img.samples[0], std::lround(1.6 / 2.0 * 65535.0));
  EXPECT_EQ(img.samples[1], std::lround(0.5 * 65535.0));
  EXPECT_EQ(img.samples[2], std::lround(1.8 / 2.0 * 65535.0));
}

TEST(Codec, PfmRoundTripIsExact) {
  testutil::TempDir dir("pfm");
  ScalarField f(5, 3);
  for (std::size_t i = 0; i < f.values.size(); ++i) f.values[i] = float(0.1 * double(i) - 0.7);
  io::write_pfm((dir / "f.pfm").string(), f);
  const ScalarField g = io::read_pfm((dir / "f.pfm").string());
  ASSERT_EQ(g.width, 5u);
  ASSERT_EQ(g.height, 3u);
  for (std::size_t i = 0; i < f.values.size(); ++i) EXPECT_EQ(g.values[i], f.values[i]);
  const std::string bytes = testutil::read_bytes(dir / "f.pfm");
  EXPECT_EQ(bytes.substr(0, 12), "Pf\n5 3\n-1.0\n");
  EXPECT_EQ(bytes.size(), 12u + 15u * 4u);
}
