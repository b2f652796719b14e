#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "gradcheck_suite.hpp"
#include "nirsfs/losses.hpp"
#include "nirsfs/synth.hpp"

using namespace nirsfs;
using gradcheck::random_tensor;
using TD = Tensor<double>;

namespace {

const double kLn2 = std::log(2.0);

/// [1,3,H,W] normal tensor from per-pixel surface gradients: n ∝ (−p, −q, 1).
TD normals_from_pq(std::size_t w, std::size_t h, const std::function<std::pair<double, double>(double, double)>& pq) {
  std::vector<double> v(3 * w * h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const auto [p, q] = pq(double(x), double(y));
      const Vec3 n = Vec3{-p, -q, 1.0}.normalized();
      v[y * w + x] = n.x;
      v[w * h + y * w + x] = n.y;
      v[2 * w * h + y * w + x] = n.z;
    }
  return TD(Shape{1, 3, h, w}, std::move(v));
}

double scalar_bce(double p, int c) {
  p = std::clamp(p, kBceClamp, 1.0 - kBceClamp);
  return c == 1 ? -std::log(p) : -std::log(1.0 - p);
}

}  // namespace

TEST(Bce, Examples) {
  EXPECT_NEAR(bce(TD::scalar(0.5), 1).item(), kLn2, 1e-12);
  EXPECT_NEAR(bce(TD::scalar(1.0 - 1e-7), 1).item(), 1e-7, 1e-9);
  EXPECT_NEAR(loss_discriminator(TD::scalar(0.5), TD::scalar(0.5)).item(), 2 * kLn2, 1e-12);
  EXPECT_NEAR(loss_discriminator(TD::scalar(1.0), TD::scalar(0.0)).item(), 0.0, 1e-6);
  EXPECT_THROW(bce(TD::scalar(0.5), 2), ConfigError);
}

TEST(Bce, MatchesScalarOracle) {
  std::mt19937_64 rng(3);
  const TD real = random_tensor({16}, rng, 0.0, 1.0, 0, false);
  const TD fake = random_tensor({16}, rng, 0.0, 1.0, 0, false);
  double expect = 0.0;
  for (std::size_t i = 0; i < 16; ++i) expect += (scalar_bce(real[i], 1) + scalar_bce(fake[i], 0)) / 16.0;
  EXPECT_NEAR(loss_discriminator(real, fake).item(), expect, 1e-6);
}

TEST(Lp, Examples) {
  std::mt19937_64 rng(4);
  const TD y = random_tensor({1, 3, 4, 4}, rng, -1, 1, 0, false);
  EXPECT_EQ(loss_lp(y, y, 2).item(), 0.0);
  EXPECT_NEAR(loss_lp(y, add_scalar(y, -0.5), 2).item(), 0.25, 1e-12);
  EXPECT_THROW(loss_lp(y, TD::zeros({1, 3, 4, 5}), 2), ShapeError);
  EXPECT_THROW(loss_lp(y, y, 3), ConfigError);
}

TEST(Lp, OutlierMakesL2ExceedL1) {
  TD y = TD::zeros({1, 1, 4, 4});
  TD g = TD::zeros({1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) g[i] = 0.1;
  g[5] = 3.0;
  double l1 = 0, l2 = 0;
  for (std::size_t i = 0; i < 16; ++i) {
    l1 += std::abs(g[i]) / 16;
    l2 += g[i] * g[i] / 16;
  }
  EXPECT_NEAR(loss_lp(y, g, 1).item(), l1, 1e-12);
  EXPECT_NEAR(loss_lp(y, g, 2).item(), l2, 1e-12);
  EXPECT_LT(loss_lp(y, g, 1).item(), loss_lp(y, g, 2).item());
}

TEST(Angular, Examples) {
  auto field = [](double x, double y, double z) {
    TD t = TD::zeros({1, 3, 2, 2});
    for (std::size_t i = 0; i < 4; ++i) {
      t[i] = x;
      t[4 + i] = y;
      t[8 + i] = z;
    }
    return t;
  };
  const TD a = field(0.3, -0.2, 0.9);
  // Tolerance covers the stabilising epsilon in the denominator.
  EXPECT_NEAR(loss_angular(a, mul_scalar(a, 2.0)).item(), 0.0, 1e-7);
  EXPECT_NEAR(loss_angular(field(1, 0, 0), field(0, 1, 0)).item(), 1.0, 1e-7);
  EXPECT_NEAR(loss_angular(field(0, 0, 1), field(0, 0, -1)).item(), 2.0, 1e-7);
}

TEST(Angular, SymmetricAndBounded) {
  for (int s = 0; s < 10; ++s) {
    std::mt19937_64 rng(50 + s);
    const TD y = random_tensor({2, 3, 5, 5}, rng, -1, 1, 0, false);
    const TD g = random_tensor({2, 3, 5, 5}, rng, -1, 1, 0, false);
    const double a = loss_angular(y, g).item(), b = loss_angular(g, y).item();
    EXPECT_NEAR(a, b, 1e-15);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 2.0);
  }
}

TEST(Curl, ConstantFieldIsZero) {
  const TD n = normals_from_pq(9, 9, [](double, double) { return std::pair{0.3, -0.2}; });
  EXPECT_NEAR(loss_curl(n).item(), 0.0, 1e-12);
}

TEST(Curl, SwirlIsTwo) {
  const TD n = normals_from_pq(16, 16, [](double x, double y) { return std::pair{-(y - 7.5), x - 7.5}; });
  EXPECT_NEAR(loss_curl(n).item(), 2.0, 1e-6);
}

TEST(Curl, TooSmallFieldRejected) {
  EXPECT_THROW(loss_curl(TD::zeros({1, 3, 4, 8})), ShapeError);
}

TEST(Curl, HeightfieldNormalsAreIntegrable) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const Surface s = generate_surface({SurfaceKind(seed % 4), 1.5, 2.5, seed}, 64);
    EXPECT_LT(loss_curl(reshape(encode_normals<double>(s.normals), Shape{1, 3, 64, 64})).item(), 1e-3);
  }
}

TEST(Curl, CyclicShiftOfPeriodicField) {
  // Periodic field whose residual has constant magnitude: p = f(x) + d·(y mod 2),
  // q = g(y), so ∂p/∂y − ∂q/∂x = ±d everywhere.
  constexpr std::size_t n = 24, period = 8;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  std::vector<double> f(period), g(period);
  for (auto& v : f) v = u(rng);
  for (auto& v : g) v = u(rng);
  const double d = 0.37;
  auto field = [&](std::size_t sx, std::size_t sy) {
    return normals_from_pq(n, n, [&](double x, double y) {
      const std::size_t xs = (std::size_t(x) + n - sx) % n, ys = (std::size_t(y) + n - sy) % n;
      return std::pair{f[xs % period] + d * double(ys % 2), g[ys % period]};
    });
  };
  const double base = loss_curl(field(0, 0)).item();
  EXPECT_NEAR(base, d, 1e-9);
  for (std::size_t s = 1; s < n; s += 3) EXPECT_NEAR(loss_curl(field(s, (2 * s) % n)).item(), base, 1e-6) << s;
}

TEST(Generator, AdversarialTermOnly) {
  std::mt19937_64 rng(7);
  const TD y = random_tensor({1, 3, 8, 8}, rng, -1, 1, 0, false);
  const TD g = random_tensor({1, 3, 8, 8}, rng, -1, 1, 0, false);
  const auto out = loss_generator(TD::full({4}, 0.5), y, g, LossWeights{1.0, 0.0, 0.0, 0.0, 2});
  EXPECT_NEAR(out.total.item(), kLn2, 1e-12);
}

TEST(Generator, PhotometricTermsVanishOnIntegrableMatch) {
  const Surface s = generate_surface({SurfaceKind::GaussianBumps, 1.5, 3.0, 8}, 16);
  const TD y = reshape(encode_normals<double>(s.normals), Shape{1, 3, 16, 16});
  const auto out = loss_generator(TD::full({1}, 0.5), y, y, LossWeights{});
  EXPECT_NEAR(out.total.item(), kLn2, 1e-6);
}

TEST(Generator, SumOfIndependentTerms) {
  std::mt19937_64 rng(9);
  const TD d = random_tensor({3}, rng, 0.05, 0.95, 0, false);
  const TD y = gradcheck::random_normals(rng);
  const TD g = gradcheck::random_normals(rng);
  const LossWeights w{0.3, 1.5, 0.7, 2.0, 1};
  const auto out = loss_generator(d, y, g, w);

  double adv = 0, lp = 0, ang = 0;
  for (std::size_t i = 0; i < 3; ++i) adv += scalar_bce(d[i], 1) / 3;
  for (std::size_t i = 0; i < y.numel(); ++i) lp += std::abs(y[i] - g[i]) / double(y.numel());
  for (std::size_t i = 0; i < 64; ++i) {
    const Vec3 a{y[i], y[64 + i], y[128 + i]}, b{g[i], g[64 + i], g[128 + i]};
    ang += (1.0 - a.dot(b) / (a.norm() * b.norm() + kAngularEps)) / 64;
  }
  // Curl oracle: per-pixel gradients, forward-difference residual, 5×5 windows at stride 2.
  auto pq = [&](std::size_t x, std::size_t yy) {
    const std::size_t i = yy * 8 + x;
    const double nz = std::max(g[128 + i], kCurlMinNz);
    return std::pair{-g[i] / nz, -g[64 + i] / nz};
  };
  double r[7][7];
  for (std::size_t yy = 0; yy < 7; ++yy)
    for (std::size_t x = 0; x < 7; ++x)
      r[yy][x] = std::abs((pq(x, yy + 1).first - pq(x, yy).first) - (pq(x + 1, yy).second - pq(x, yy).second));
  double curl = 0;
  for (std::size_t wy = 0; wy < 2; ++wy)
    for (std::size_t wx = 0; wx < 2; ++wx) {
      double m = 0;
      for (std::size_t a = 0; a < 5; ++a)
        for (std::size_t b = 0; b < 5; ++b) m += r[2 * wy + a][2 * wx + b] / 25;
      curl += m / 4;
    }
  EXPECT_NEAR(out.bce, adv, 1e-6);
  EXPECT_NEAR(out.l_p, lp, 1e-6);
  EXPECT_NEAR(out.l_ang, ang, 1e-6);
  EXPECT_NEAR(out.l_curl, curl, 1e-6);
  EXPECT_NEAR(out.total.item(), 0.3 * adv + 1.5 * lp + 0.7 * ang + 2.0 * curl, 1e-6);
}

TEST(Losses, NonNegativeAndPermutationInvariant) {
  std::mt19937_64 rng(10);
  const TD y = random_tensor({2, 3, 8, 8}, rng);
  const TD g = random_tensor({2, 3, 8, 8}, rng);
  auto swap = [](const TD& t) {
    const std::size_t per = t.numel() / 2;
    std::vector<double> v(t.data().begin() + long(per), t.data().end());
    v.insert(v.end(), t.data().begin(), t.data().begin() + long(per));
    return TD(t.shape(), std::move(v));
  };
  for (int p : {1, 2}) {
    EXPECT_GE(loss_lp(y, g, p).item(), 0.0);
    EXPECT_NEAR(loss_lp(y, g, p).item(), loss_lp(swap(y), swap(g), p).item(), 1e-12);
  }
  EXPECT_NEAR(loss_angular(y, g).item(), loss_angular(swap(y), swap(g)).item(), 1e-12);
  EXPECT_GE(loss_curl(g).item(), 0.0);
  EXPECT_NEAR(loss_curl(g).item(), loss_curl(swap(g)).item(), 1e-12);
  const TD d(Shape{2}, {0.2, 0.7});
  EXPECT_NEAR(bce(d, 1).item(), bce(TD(Shape{2}, {0.7, 0.2}), 1).item(), 1e-15);
}

// ---------------------------------------------------------------------------
// Finite differences w.r.t. the generated field g (and predictions for BCE).
