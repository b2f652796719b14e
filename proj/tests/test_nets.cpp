#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nirsfs/checkpoint.hpp"
#include "nirsfs/nets.hpp"

using namespace nirsfs;
using TF = Tensor<float>;

namespace {

TF uniform(Shape shape, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(lo, hi);
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return TF(shape, std::move(v));
}

// Random unit normals in the upper hemisphere, channel-planar.
TF random_normals(std::size_t b, std::size_t size, std::uint64_t seed) {
  TF t = uniform({b, 3, size, size}, seed);
  const std::size_t hw = size * size;
  for (std::size_t k = 0; k < b; ++k)
    for (std::size_t i = 0; i < hw; ++i) {
      float& x = t[(k * 3 + 0) * hw + i];
      float& y = t[(k * 3 + 1) * hw + i];
      float& z = t[(k * 3 + 2) * hw + i];
      z = std::abs(z) + 0.1f;
      const float n = std::sqrt(x * x + y * y + z * z);
      x /= n;
      y /= n;
      z /= n;
    }
  return t;
}

}  // namespace

TEST(Generator, ParameterCountMatchesClosedForm) {
  const GeneratorNet<float> g;
  const std::size_t expect = 1 * 128 * 9 + 2 * 128 + 128 * 256 * 9 + 2 * 256 + 256 * 256 * 9 + 2 * 256 +
                             256 * 128 * 9 + 2 * 128 + 128 * 3 * 9 + 3;
  EXPECT_EQ(parameter_count(g.parameters()), expect);
}

TEST(Discriminator, ParameterCountMatchesClosedForm) {
  const DiscriminatorNet<float> d;
  const std::size_t expect = 4 * 64 * 9 + 64 * 128 * 9 + 2 * 128 + 128 * 256 * 9 + 2 * 256 + 256 * 512 * 9 +
                             2 * 512 + 512 * 256 + 256;
  EXPECT_EQ(parameter_count(d.parameters()), expect);
}

TEST(Generator, OutputShapeFollowsInput) {
  GeneratorNet<float> g(NetConfig{.width_scale = 0.25});
  g.init_weights(3);
  for (std::size_t s : {64u, 96u}) {
    const TF out = g.forward(uniform({2, 1, s, s}, s), NormMode::Train);
    EXPECT_EQ(out.shape(), (Shape{2, 3, s, s}));
    for (float v : out.data()) ASSERT_TRUE(v > -1.0f && v < 1.0f);
  }
  const TF rect = g.forward(uniform({1, 1, 40, 72}, 1), NormMode::Eval);
  EXPECT_EQ(rect.shape(), (Shape{1, 3, 40, 72}));
}

TEST(Generator, ShapeErrors) {
  GeneratorNet<float> g(NetConfig{.width_scale = 0.125});
  EXPECT_THROW(g.forward(uniform({1, 3, 16, 16}, 1), NormMode::Eval), ShapeError);
  EXPECT_THROW(g.forward(uniform({16, 16}, 1), NormMode::Eval), ShapeError);
}

TEST(Generator, InteriorIsCropEquivariantInEvalMode) {
  GeneratorNet<float> g;
  g.init_weights(11);
  g.forward(uniform({2, 1, 32, 32}, 5), NormMode::Train);  // warm the running statistics
  const TF big = uniform({1, 1, 128, 128}, 6);
  const TF full = g.forward(big, NormMode::Eval);
  // Five 3×3 layers see 5 px; a 6 px margin keeps the compared region clear of padding.
  const std::size_t y0 = 30, x0 = 20, h = 64, w = 80, m = 6;
  const TF part = g.forward(crop(big, y0, x0, h, w), NormMode::Eval);
  double worst = 0.0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = m; y < h - m; ++y)
      for (std::size_t x = m; x < w - m; ++x) {
        const float a = full[(c * 128 + y0 + y) * 128 + x0 + x];
        const float b = part[(c * h + y) * w + x];
        worst = std::max(worst, double(std::abs(a - b)));
      }
  EXPECT_LT(worst, 1e-5);
}

TEST(Discriminator, SpatialTrace) {
  EXPECT_EQ(DiscriminatorNet<float>::spatial_trace(), (std::vector<std::size_t>{31, 15, 7, 3}));
}

TEST(Discriminator, FreshNetworkIsUndecided) {
  DiscriminatorNet<float> d;
  d.init_weights(21);
  d.forward(uniform({8, 1, 64, 64}, 99), random_normals(8, 64, 98), NormMode::Train);
  double total = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    const TF p = d.forward(uniform({25, 1, 64, 64}, 100 + k), random_normals(25, 64, 200 + k), NormMode::Eval);
    ASSERT_EQ(p.shape(), (Shape{25}));
    for (float v : p.data()) {
      ASSERT_TRUE(v > 0.0f && v < 1.0f);
      total += v;
    }
  }
  EXPECT_NEAR(total / 100.0, 0.5, 0.15);
}

TEST(Discriminator, ShapeErrors) {
  DiscriminatorNet<float> d(NetConfig{.width_scale = 0.125});
  EXPECT_THROW(d.forward(uniform({1, 1, 32, 32}, 1), random_normals(1, 32, 2), NormMode::Eval), ShapeError);
  EXPECT_THROW(d.forward(uniform({2, 1, 64, 64}, 1), random_normals(1, 64, 2), NormMode::Eval), ShapeError);
  EXPECT_THROW(d.forward(uniform({1, 2, 64, 64}, 1), random_normals(1, 64, 2), NormMode::Eval), ShapeError);
}

TEST(Discriminator, UnconditionedIgnoresNir) {
  DiscriminatorNet<float> d(NetConfig{.width_scale = 0.125, .pair_conditioning = false});
  d.init_weights(4);
  const TF n = random_normals(2, 64, 9);
  d.forward(TF(), random_normals(4, 64, 10), NormMode::Train);
  const TF a = d.forward(uniform({2, 1, 64, 64}, 1), n, NormMode::Eval);
  const TF b = d.forward(TF(), n, NormMode::Eval);
  EXPECT_EQ(std::vector<float>(a.data().begin(), a.data().end()), std::vector<float>(b.data().begin(), b.data().end()));
}

TEST(Discriminator, InputGradientIsFiniteAndNonzero) {
  DiscriminatorNet<float> d(NetConfig{.width_scale = 0.25});
  d.init_weights(8);
  TF n = random_normals(2, 64, 3);
  n.set_requires_grad(true);
  const TF p = d.forward(uniform({2, 1, 64, 64}, 4), n, NormMode::Train);
  sum(p).backward();
  ASSERT_TRUE(n.has_grad());
  double norm = 0.0;
  for (float g : n.grad()) {
    ASSERT_TRUE(std::isfinite(g));
    norm += double(g) * g;
  }
  EXPECT_GT(norm, 0.0);
}

TEST(Init, WeightVarianceAndNormDefaults) {
  GeneratorNet<float> g;
  DiscriminatorNet<float> d;
  g.init_weights(1);
  d.init_weights(2);
  auto check = [](const auto& net) {
    for (const auto& p : net.named_parameters()) {
      const auto v = p.tensor.data();
      if (p.name.ends_with(".weight")) {
        if (v.size() < 10000) continue;  // too few draws for a 10% variance bound
        double s = 0.0, s2 = 0.0;
        for (float x : v) {
          s += x;
          s2 += double(x) * x;
        }
        const double mean = s / double(v.size());
        const double var = s2 / double(v.size()) - mean * mean;
        EXPECT_NEAR(var, kInitStddev * kInitStddev, 0.1 * kInitStddev * kInitStddev) << p.name;
      } else {
        const float expect = p.name.ends_with(".gamma") ? 1.0f : 0.0f;
        for (float x : v) ASSERT_EQ(x, expect) << p.name;
      }
    }
  };
  check(g);
  check(d);
}

TEST(Init, SeedDeterminesWeights) {
  GeneratorNet<float> a(NetConfig{.width_scale = 0.125}), b(NetConfig{.width_scale = 0.125}),
      c(NetConfig{.width_scale = 0.125});
  a.init_weights(42);
  b.init_weights(42);
  c.init_weights(43);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(std::equal(pa[i].data().begin(), pa[i].data().end(), pb[i].data().begin()));
    differs |= !std::equal(pa[i].data().begin(), pa[i].data().end(), pc[i].data().begin());
  }
  EXPECT_TRUE(differs);
}

TEST(Arch, HashTracksWidthAndConditioning) {
  const GeneratorNet<float> g1, g2(NetConfig{.width_scale = 0.5});
  const DiscriminatorNet<float> d1, d2(NetConfig{.pair_conditioning = false});
  EXPECT_EQ(arch_hash(g1, d1), arch_hash(GeneratorNet<float>(), DiscriminatorNet<float>()));
  EXPECT_NE(arch_hash(g1, d1), arch_hash(g2, d1));
  EXPECT_NE(arch_hash(g1, d1), arch_hash(g1, d2));
}
