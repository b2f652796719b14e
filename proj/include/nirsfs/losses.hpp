#pragma once
// Adversarial and photometric objectives. All reductions are means.

#include <cmath>
#include <string>

#include "nirsfs/ops.hpp"

namespace nirsfs {

/// Weights of the generator objective. `lambda_adv` scales the adversarial
/// BCE term (1 reproduces the unweighted objective).
struct LossWeights {
  double lambda_adv = 1.0;
  double lambda_p = 1.0;
  double lambda_ang = 1.0;
  double lambda_curl = 1.0;
  int p_norm = 2;

  void validate() const {
    if (p_norm != 1 && p_norm != 2) throw ConfigError("p_norm must be 1 or 2");
    if (lambda_adv < 0 || lambda_p < 0 || lambda_ang < 0 || lambda_curl < 0)
      throw ConfigError("loss weights must be >= 0");
  }
};

inline constexpr double kBceClamp = 1e-7;
inline constexpr double kAngularEps = 1e-8;
inline constexpr double kCurlMinNz = 0.05;
inline constexpr std::size_t kCurlWindow = 5;
inline constexpr std::size_t kCurlStride = 2;  // 5-pixel windows overlapping by 3

/// Mean binary cross-entropy against a constant label C ∈ {0, 1}.
template <typename T>
Tensor<T> bce(const Tensor<T>& prediction, int label) {
  const Tensor<T> p = clamp(prediction, T(kBceClamp), T(1.0 - kBceClamp));
  if (label == 1) return neg(mean(log(p)));
  if (label == 0) return neg(mean(log(rsub_scalar(T(1), p))));
  throw ConfigError("bce label must be 0 or 1");
}

/// bce(d_real, 1) + bce(d_fake, 0)
template <typename T>
Tensor<T> loss_discriminator(const Tensor<T>& d_real, const Tensor<T>& d_fake) {
  return add(bce(d_real, 1), bce(d_fake, 0));
}

/// mean |y − g|^p, p ∈ {1, 2}
template <typename T>
Tensor<T> loss_lp(const Tensor<T>& y, const Tensor<T>& g, int p) {
  detail::require_same_shape(y, g, "loss_lp");
  const Tensor<T> d = sub(y, g);
  if (p == 1) return mean(abs(d));
  if (p == 2) return mean(square(d));
  throw ConfigError("loss_lp: p must be 1 or 2");
}

/// mean over pixels of 1 − ⟨y, g⟩ / (‖y‖‖g‖ + ε)
template <typename T>
Tensor<T> loss_angular(const Tensor<T>& y, const Tensor<T>& g) {
  detail::require_same_shape(y, g, "loss_angular");
  const Tensor<T> dot = channel_sum(mul(y, g));
  const Tensor<T> ny = sqrt(channel_sum(square(y)));
  const Tensor<T> ng = sqrt(channel_sum(square(g)));
  const Tensor<T> cos = div(dot, add_scalar(mul(ny, ng), T(kAngularEps)));
  return mean(rsub_scalar(T(1), cos));
}

/// Surface gradients p = −nx / nz, q = −ny / nz with nz clamped to >= 0.05.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> normals_to_gradients(const Tensor<T>& n) {
  detail::require_4d(n, "normals_to_gradients");
  if (n.size(1) != 3) throw ShapeError("normals_to_gradients: expected 3 channels");
  const Tensor<T> nz = clamp_min(channel_slice(n, 2, 3), T(kCurlMinNz));
  return {neg(div(channel_slice(n, 0, 1), nz)), neg(div(channel_slice(n, 1, 2), nz))};
}

/// Forward-difference curl residual ∂p/∂y − ∂q/∂x on the (H−1)×(W−1) grid.
template <typename T>
Tensor<T> curl_residual(const Tensor<T>& p, const Tensor<T>& q) {
  const std::size_t h = p.size(2) - 1, w = p.size(3) - 1;
  const Tensor<T> dpdy = sub(crop(p, 1, 0, h, w), crop(p, 0, 0, h, w));
  const Tensor<T> dqdx = sub(crop(q, 0, 1, h, w), crop(q, 0, 0, h, w));
  return sub(dpdy, dqdx);
}

/// Integrability penalty: mean over 5×5 windows (stride 2) of the window-mean
/// absolute curl residual of the normal field g.
template <typename T>
Tensor<T> loss_curl(const Tensor<T>& g) {
  detail::require_4d(g, "loss_curl");
  if (g.size(2) < kCurlWindow || g.size(3) < kCurlWindow) {
    throw ShapeError("loss_curl: field must be at least 5x5, got " + to_string(g.shape()));
  }
  const auto [p, q] = normals_to_gradients(g);
  const Tensor<T> r = abs(curl_residual(p, q));
  if (r.size(2) < kCurlWindow || r.size(3) < kCurlWindow) return mean(r);
  return mean(avg_pool2d(r, kCurlWindow, kCurlStride));
}

template <typename T>
struct GeneratorLoss {
  Tensor<T> total;
  double bce = 0, l_p = 0, l_ang = 0, l_curl = 0;
};

/// λ_adv·bce(d_fake, 1) + λ_p·L_p + λ_ang·L_ang + λ_curl·L_curl. Terms with zero
/// weight are evaluated for the breakdown but kept off the tape.
template <typename T>
GeneratorLoss<T> loss_generator(const Tensor<T>& d_fake, const Tensor<T>& y, const Tensor<T>& g,
                                const LossWeights& w) {
  w.validate();
  GeneratorLoss<T> out;
  Tensor<T> total = Tensor<T>::scalar(T(0));
  auto term = [&](double weight, auto&& compute) {
    if (weight == 0.0) {
      NoGradGuard ng;
      return double(compute().item());
    }
    const Tensor<T> t = compute();
    total = add(total, mul_scalar(t, T(weight)));
    return double(t.item());
  };
  out.bce = term(w.lambda_adv, [&] { return bce(d_fake, 1); });
  out.l_p = term(w.lambda_p, [&] { return loss_lp(y, g, w.p_norm); });
  out.l_ang = term(w.lambda_ang, [&] { return loss_angular(y, g); });
  out.l_curl = term(w.lambda_curl, [&] { return loss_curl(g); });
  out.total = total;
  return out;
}

}  // namespace nirsfs
