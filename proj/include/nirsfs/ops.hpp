#pragma once
// Differentiable operators over Tensor<T>.
//
// Layout convention for image data is [B, C, H, W], row-major. Reductions
// accumulate in double regardless of T.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "nirsfs/blas.hpp"
#include "nirsfs/tensor.hpp"

namespace nirsfs {

namespace detail {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

template <typename T>
void require_4d(const Tensor<T>& a, const char* op) {
  if (a.dim() != 4) {
    throw ShapeError(std::string(op) + ": expected [B,C,H,W], got " + to_string(a.shape()));
  }
}

/// Applies `dfdx(x, y)` * upstream to the parent gradient.
template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF dfdx) {
  std::vector<T> out(x.numel());
  auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xs[i]);
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [dfdx](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(p.data[i], self.data[i]);
  });
}

/// Sum of f(i) for i < n with a fixed 16-lane association, so the result
/// depends only on the values and never on buffer alignment.
template <typename T, typename F>
double lane_sum(std::size_t n, F f) {
  constexpr std::size_t kLanes = 16;
  T acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::size_t j = 0; j < kLanes; ++j) acc[j] += f(i + j);
  double total = 0.0;
  for (std::size_t j = 0; j < kLanes; ++j) total += double(acc[j]);
  for (; i < n; ++i) total += double(f(i));
  return total;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    for (auto& pp : self.parents) {
      if (!pp->requires_grad) continue;
      auto& g = pp->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    // Read both inputs before writing so that mul(x, x) sees unmodified data.
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
    }
  });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "div");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / pb.data[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] -= self.grad[i] * self.data[i] / pb.data[i];
      }
    }
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return mul_scalar(x, T(-1));
}

/// s - x
template <typename T>
Tensor<T> rsub_scalar(T s, const Tensor<T>& x) {
  return detail::unary(x, [s](T v) { return s - v; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

/// d|x|/dx is taken as 0 at x = 0.
template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::sqrt(v); },
      [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

/// Gradient passes only where lo < x < hi.
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  return detail::unary(
      x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
      [lo, hi](T v, T) { return (v > lo && v < hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T lo) {
  return detail::unary(
      x, [lo](T v) { return std::max(v, lo); }, [lo](T v, T) { return v > lo ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

inline constexpr double kDefaultLeakySlope = 0.2;

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(kDefaultLeakySlope)) {
  return detail::unary(
      x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += static_cast<double>(v);
  return Tensor<T>::make_result(Shape{1}, {static_cast<T>(acc)}, {x}, [](detail::Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    const T up = self.grad[0];
    for (auto& v : g) v += up;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  double acc = 0.0;
  for (T v : x.data()) acc += static_cast<double>(v);
  const double n = static_cast<double>(x.numel());
  return Tensor<T>::make_result(Shape{1}, {static_cast<T>(acc / n)}, {x},
                                [n](detail::Node<T>& self) {
                                  auto& p = *self.parents[0];
                                  if (!p.requires_grad) return;
                                  auto& g = p.grad_buffer();
                                  const T up = static_cast<T>(self.grad[0] / n);
                                  for (auto& v : g) v += up;
                                });
}

/// Mean over every axis but the first: [B, ...] -> [B].
template <typename T>
Tensor<T> mean_per_sample(const Tensor<T>& x) {
  if (x.dim() < 1 || x.size(0) == 0) throw ShapeError("mean_per_sample of empty tensor");
  const std::size_t b = x.size(0);
  const std::size_t per = x.numel() / b;
  std::vector<T> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < per; ++j) acc += static_cast<double>(x[i * per + j]);
    out[i] = static_cast<T>(acc / static_cast<double>(per));
  }
  return Tensor<T>::make_result(Shape{b}, std::move(out), {x}, [b, per](detail::Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < b; ++i) {
      const T up = self.grad[i] / static_cast<T>(per);
      for (std::size_t j = 0; j < per; ++j) g[i * per + j] += up;
    }
  });
}

/// Sum over the channel axis: [B,C,H,W] -> [B,1,H,W].
template <typename T>
Tensor<T> channel_sum(const Tensor<T>& x) {
  detail::require_4d(x, "channel_sum");
  const std::size_t b = x.size(0), c = x.size(1), hw = x.size(2) * x.size(3);
  std::vector<T> out(b * hw, T(0));
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t i = 0; i < hw; ++i) out[n * hw + i] += x[(n * c + k) * hw + i];
  return Tensor<T>::make_result(Shape{b, 1, x.size(2), x.size(3)}, std::move(out), {x},
                                [b, c, hw](detail::Node<T>& self) {
                                  auto& p = *self.parents[0];
                                  if (!p.requires_grad) return;
                                  auto& g = p.grad_buffer();
                                  for (std::size_t n = 0; n < b; ++n)
                                    for (std::size_t k = 0; k < c; ++k)
                                      for (std::size_t i = 0; i < hw; ++i)
                                        g[(n * c + k) * hw + i] += self.grad[n * hw + i];
                                });
}

// ---------------------------------------------------------------------------
// Structural

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return Tensor<T>::make_result(std::move(shape), std::move(out), {x}, [](detail::Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Channels [c0, c1) of a [B,C,H,W] tensor.
template <typename T>
Tensor<T> channel_slice(const Tensor<T>& x, std::size_t c0, std::size_t c1) {
  detail::require_4d(x, "channel_slice");
  const std::size_t b = x.size(0), c = x.size(1), hw = x.size(2) * x.size(3);
  if (c0 >= c1 || c1 > c) throw ShapeError("channel_slice: bad range");
  const std::size_t nc = c1 - c0;
  std::vector<T> out(b * nc * hw);
  for (std::size_t n = 0; n < b; ++n)
    std::copy_n(x.data().begin() + (n * c + c0) * hw, nc * hw, out.begin() + n * nc * hw);
  return Tensor<T>::make_result(Shape{b, nc, x.size(2), x.size(3)}, std::move(out), {x},
                                [b, c, c0, nc, hw](detail::Node<T>& self) {
                                  auto& p = *self.parents[0];
                                  if (!p.requires_grad) return;
                                  auto& g = p.grad_buffer();
                                  for (std::size_t n = 0; n < b; ++n)
                                    for (std::size_t i = 0; i < nc * hw; ++i)
                                      g[(n * c + c0) * hw + i] += self.grad[n * nc * hw + i];
                                });
}

/// Concatenates along the channel axis.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_4d(a, "concat_channels");
  detail::require_4d(b, "concat_channels");
  if (a.size(0) != b.size(0) || a.size(2) != b.size(2) || a.size(3) != b.size(3)) {
    throw ShapeError("concat_channels: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const std::size_t n = a.size(0), ca = a.size(1), cb = b.size(1), hw = a.size(2) * a.size(3);
  std::vector<T> out(n * (ca + cb) * hw);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data().begin() + i * ca * hw, ca * hw, out.begin() + i * (ca + cb) * hw);
    std::copy_n(b.data().begin() + i * cb * hw, cb * hw,
                out.begin() + (i * (ca + cb) + ca) * hw);
  }
  return Tensor<T>::make_result(
      Shape{n, ca + cb, a.size(2), a.size(3)}, std::move(out), {a, b},
      [n, ca, cb, hw](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (std::size_t i = 0; i < n; ++i) {
          if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t j = 0; j < ca * hw; ++j) g[i * ca * hw + j] += self.grad[i * (ca + cb) * hw + j];
          }
          if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t j = 0; j < cb * hw; ++j)
              g[i * cb * hw + j] += self.grad[(i * (ca + cb) + ca) * hw + j];
          }
        }
      });
}

/// Concatenates along the batch axis.
template <typename T>
Tensor<T> concat_batch(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dim() != b.dim() || a.dim() == 0 ||
      !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
    throw ShapeError("concat_batch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Shape s = a.shape();
  s[0] += b.size(0);
  std::vector<T> out;
  out.reserve(a.numel() + b.numel());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  const std::size_t na = a.numel();
  return Tensor<T>::make_result(std::move(s), std::move(out), {a, b}, [na](detail::Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[na + i];
    }
  });
}

/// Spatial window [y0, y0+h) × [x0, x0+w) of every channel.
template <typename T>
Tensor<T> crop(const Tensor<T>& x, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  detail::require_4d(x, "crop");
  const std::size_t H = x.size(2), W = x.size(3);
  if (y0 + h > H || x0 + w > W) throw ShapeError("crop window outside " + to_string(x.shape()));
  const std::size_t planes = x.size(0) * x.size(1);
  std::vector<T> out(planes * h * w);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(x.data().begin() + (p * H + y0 + y) * W + x0, w, out.begin() + (p * h + y) * w);
  return Tensor<T>::make_result(Shape{x.size(0), x.size(1), h, w}, std::move(out), {x},
                                [planes, H, W, y0, x0, h, w](detail::Node<T>& self) {
                                  auto& p = *self.parents[0];
                                  if (!p.requires_grad) return;
                                  auto& g = p.grad_buffer();
                                  for (std::size_t q = 0; q < planes; ++q)
                                    for (std::size_t y = 0; y < h; ++y)
                                      for (std::size_t xx = 0; xx < w; ++xx)
                                        g[(q * H + y0 + y) * W + x0 + xx] +=
                                            self.grad[(q * h + y) * w + xx];
                                });
}

/// Mean pooling over k×k windows with the given stride, no padding.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t k, std::size_t stride) {
  detail::require_4d(x, "avg_pool2d");
  const std::size_t H = x.size(2), W = x.size(3);
  if (k == 0 || stride == 0 || H < k || W < k) {
    throw ShapeError("avg_pool2d: window " + std::to_string(k) + " does not fit " + to_string(x.shape()));
  }
  const std::size_t ho = (H - k) / stride + 1, wo = (W - k) / stride + 1;
  const std::size_t planes = x.size(0) * x.size(1);
  const double inv = 1.0 / static_cast<double>(k * k);
  std::vector<T> out(planes * ho * wo);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double acc = 0.0;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx)
            acc += x[(p * H + oy * stride + dy) * W + ox * stride + dx];
        out[(p * ho + oy) * wo + ox] = static_cast<T>(acc * inv);
      }
  return Tensor<T>::make_result(
      Shape{x.size(0), x.size(1), ho, wo}, std::move(out), {x},
      [planes, H, W, ho, wo, k, stride, inv](detail::Node<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        for (std::size_t q = 0; q < planes; ++q)
          for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const T up = static_cast<T>(self.grad[(q * ho + oy) * wo + ox] * inv);
              for (std::size_t dy = 0; dy < k; ++dy)
                for (std::size_t dx = 0; dx < k; ++dx)
                  g[(q * H + oy * stride + dy) * W + ox * stride + dx] += up;
            }
      });
}

// ---------------------------------------------------------------------------
// Convolution

struct Conv2dGeometry {
  std::size_t batch, in_channels, height, width;
  std::size_t out_channels, kernel_h, kernel_w;
  std::size_t stride, pad;
  std::size_t out_h, out_w;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                   std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

/// Output columns [ox0, ox1) whose tap j lands inside the input row.
inline std::pair<std::size_t, std::size_t> valid_ox(const Conv2dGeometry& g, std::size_t j) {
  // ix = ox*s + j - pad must satisfy 0 <= ix < width
  const long s = long(g.stride), off = long(j) - long(g.pad);
  const long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  const long hi_ix = long(g.width) - 1 - off;  // ox*s <= hi_ix
  const long hi = hi_ix < 0 ? 0 : std::min<long>(long(g.out_w), hi_ix / s + 1);
  return {std::size_t(std::min(lo, hi)), std::size_t(hi)};
}

/// Columns for output rows [oy0, oy1):
/// col[(c*kh + i)*kw + j][(oy-oy0)*ow + ox] = x[c][oy*s + i - pad][ox*s + j - pad] (0 outside)
template <typename T>
void im2col(const T* x, const Conv2dGeometry& g, std::size_t oy0, std::size_t oy1, T* col) {
  const std::size_t cols = (oy1 - oy0) * g.out_w;
  for (std::size_t c = 0; c < g.in_channels; ++c)
    for (std::size_t i = 0; i < g.kernel_h; ++i)
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        T* row = col + ((c * g.kernel_h + i) * g.kernel_w + j) * cols;
        const auto [lo, hi] = valid_ox(g, j);
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
          T* dst = row + (oy - oy0) * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            std::fill_n(dst, g.out_w, T(0));
            continue;
          }
          // first valid tap sits at input column lo*s + j - pad >= 0
          const T* src = x + (c * g.height + static_cast<std::size_t>(iy)) * g.width + (lo * g.stride + j - g.pad);
          std::fill(dst, dst + lo, T(0));
          if (g.stride == 1) {
            std::copy(src, src + (hi - lo), dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[(ox - lo) * g.stride];
          }
          std::fill(dst + hi, dst + g.out_w, T(0));
        }
      }
}

template <typename T>
void col2im_add(const T* col, const Conv2dGeometry& g, std::size_t oy0, std::size_t oy1, T* dx) {
  const std::size_t cols = (oy1 - oy0) * g.out_w;
  for (std::size_t c = 0; c < g.in_channels; ++c)
    for (std::size_t i = 0; i < g.kernel_h; ++i)
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        const T* row = col + ((c * g.kernel_h + i) * g.kernel_w + j) * cols;
        const auto [lo, hi] = valid_ox(g, j);
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          T* dst = dx + (c * g.height + static_cast<std::size_t>(iy)) * g.width + (lo * g.stride + j - g.pad);
          const T* src = row + (oy - oy0) * g.out_w;
          if (g.stride == 1) {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox - lo] += src[ox];
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[(ox - lo) * g.stride] += src[ox];
          }
        }
      }
}

inline bool is_pointwise(const Conv2dGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.pad == 0;
}

/// Output rows per im2col chunk, bounding the column buffer to ~4M elements.
inline std::size_t rows_per_chunk(const Conv2dGeometry& g) {
  constexpr std::size_t kBudget = std::size_t{1} << 22;
  const std::size_t per_row = g.in_channels * g.kernel_h * g.kernel_w * g.out_w;
  return std::clamp<std::size_t>(kBudget / std::max<std::size_t>(per_row, 1), 1, g.out_h);
}

}  // namespace detail

/// 2-D cross-correlation with zero padding. `bias`, when given, has shape [Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride,
                 std::size_t pad, const std::optional<Tensor<T>>& bias = std::nullopt) {
  detail::require_4d(input, "conv2d input");
  detail::require_4d(kernel, "conv2d kernel");
  if (input.size(1) != kernel.size(1)) {
    throw ShapeError("conv2d: input has " + std::to_string(input.size(1)) +
                     " channels, kernel expects " + std::to_string(kernel.size(1)));
  }
  if (stride < 1 || kernel.size(2) < 1 || kernel.size(3) < 1) {
    throw ShapeError("conv2d: kernel extents and stride must be >= 1");
  }
  if (input.size(2) + 2 * pad < kernel.size(2) || input.size(3) + 2 * pad < kernel.size(3)) {
    throw ShapeError("conv2d: kernel larger than padded input " + to_string(input.shape()));
  }
  if (bias && (bias->dim() != 1 || bias->size(0) != kernel.size(0))) {
    throw ShapeError("conv2d: bias must have shape [Cout]");
  }

  Conv2dGeometry g{input.size(0), input.size(1), input.size(2), input.size(3),
                   kernel.size(0), kernel.size(2), kernel.size(3), stride, pad, 0, 0};
  g.out_h = conv_out_extent(g.height, g.kernel_h, stride, pad);
  g.out_w = conv_out_extent(g.width, g.kernel_w, stride, pad);

  const std::size_t krows = g.in_channels * g.kernel_h * g.kernel_w;
  const std::size_t cols = g.out_h * g.out_w;
  const std::size_t in_plane = g.in_channels * g.height * g.width;
  const std::size_t out_plane = g.out_channels * cols;
  const bool pointwise = detail::is_pointwise(g);
  const std::size_t chunk = detail::rows_per_chunk(g);

  std::vector<T> out(g.batch * out_plane);
  std::vector<T> col(pointwise ? 0 : krows * chunk * g.out_w);
  for (std::size_t b = 0; b < g.batch; ++b) {
    const T* x = input.data().data() + b * in_plane;
    T* y = out.data() + b * out_plane;
    if (bias) {
      for (std::size_t co = 0; co < g.out_channels; ++co)
        std::fill_n(y + co * cols, cols, (*bias)[co]);
    }
    const T beta = bias ? T(1) : T(0);
    if (pointwise) {
      blas::gemm<T>(false, false, int(g.out_channels), int(cols), int(krows), T(1),
                    kernel.data().data(), int(krows), x, int(cols), beta, y, int(cols));
      continue;
    }
    for (std::size_t oy0 = 0; oy0 < g.out_h; oy0 += chunk) {
      const std::size_t oy1 = std::min(g.out_h, oy0 + chunk);
      const std::size_t n = (oy1 - oy0) * g.out_w;
      detail::im2col(x, g, oy0, oy1, col.data());
      blas::gemm<T>(false, false, int(g.out_channels), int(n), int(krows), T(1),
                    kernel.data().data(), int(krows), col.data(), int(n), beta,
                    y + oy0 * g.out_w, int(cols));
    }
  }

  std::vector<Tensor<T>> parents{input, kernel};
  if (bias) parents.push_back(*bias);
  return Tensor<T>::make_result(
      Shape{g.batch, g.out_channels, g.out_h, g.out_w}, std::move(out), std::move(parents),
      [g, krows, cols, in_plane, out_plane, pointwise, chunk](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pk = *self.parents[1];
        std::vector<T> col(pointwise ? 0 : krows * chunk * g.out_w);
        std::vector<T> dcol(pointwise ? 0 : krows * chunk * g.out_w);
        for (std::size_t b = 0; b < g.batch; ++b) {
          const T* dy = self.grad.data() + b * out_plane;
          const T* x = px.data.data() + b * in_plane;
          if (pointwise) {
            if (pk.requires_grad) {
              blas::gemm<T>(false, true, int(g.out_channels), int(krows), int(cols), T(1), dy,
                            int(cols), x, int(cols), T(1), pk.grad_buffer().data(), int(krows));
            }
            if (px.requires_grad) {
              blas::gemm<T>(true, false, int(krows), int(cols), int(g.out_channels), T(1),
                            pk.data.data(), int(krows), dy, int(cols), T(1),
                            px.grad_buffer().data() + b * in_plane, int(cols));
            }
          } else {
            for (std::size_t oy0 = 0; oy0 < g.out_h; oy0 += chunk) {
              const std::size_t oy1 = std::min(g.out_h, oy0 + chunk);
              const std::size_t n = (oy1 - oy0) * g.out_w;
              const T* dyc = dy + oy0 * g.out_w;
              if (pk.requires_grad) {
                detail::im2col(x, g, oy0, oy1, col.data());
                blas::gemm<T>(false, true, int(g.out_channels), int(krows), int(n), T(1), dyc,
                              int(cols), col.data(), int(n), T(1), pk.grad_buffer().data(),
                              int(krows));
              }
              if (px.requires_grad) {
                blas::gemm<T>(true, false, int(krows), int(n), int(g.out_channels), T(1),
                              pk.data.data(), int(krows), dyc, int(cols), T(0), dcol.data(),
                              int(n));
                detail::col2im_add(dcol.data(), g, oy0, oy1,
                                   px.grad_buffer().data() + b * in_plane);
              }
            }
          }
          if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            auto& gb = self.parents[2]->grad_buffer();
            for (std::size_t co = 0; co < g.out_channels; ++co) {
              double acc = 0.0;
              for (std::size_t i = 0; i < cols; ++i) acc += dy[co * cols + i];
              gb[co] += static_cast<T>(acc);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Batch normalization

enum class NormMode { Train, Eval };

template <typename T>
struct RunningStats {
  std::vector<T> mean;
  std::vector<T> var;
  bool initialized = false;
  double momentum = 0.1;
  double epsilon = 1e-5;

  explicit RunningStats(std::size_t channels = 0)
      : mean(channels, T(0)), var(channels, T(1)) {}
};

/// Per-channel normalization over batch and spatial axes. Train mode uses the
/// batch statistics and folds them into `stats`; eval mode uses `stats`.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     RunningStats<T>& stats, NormMode mode) {
  detail::require_4d(x, "batch_norm");
  const std::size_t B = x.size(0), C = x.size(1), HW = x.size(2) * x.size(3);
  if (gamma.numel() != C || beta.numel() != C || stats.mean.size() != C) {
    throw ShapeError("batch_norm: parameters do not match " + std::to_string(C) + " channels");
  }
  if (mode == NormMode::Eval && !stats.initialized) {
    throw Error("batch_norm: eval mode requested before running statistics were initialized");
  }
  const std::size_t n = B * HW;
  using Plane = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
  using ConstPlane = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;
  const T* xs = x.data().data();
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(C);
  std::vector<T> out(x.numel());
  for (std::size_t c = 0; c < C; ++c) {
    double mu, var;
    if (mode == NormMode::Train) {
      // Per-plane lane sums, accumulated across planes in double.
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const T* px = xs + (b * C + c) * HW;
        s += detail::lane_sum<T>(HW, [px](std::size_t i) { return px[i]; });
      }
      mu = s / double(n);
      double ss = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const T* px = xs + (b * C + c) * HW;
        const T m = T(mu);
        ss += detail::lane_sum<T>(HW, [px, m](std::size_t i) { return (px[i] - m) * (px[i] - m); });
      }
      var = ss / double(n);
      const double unbiased = n > 1 ? ss / double(n - 1) : var;
      stats.mean[c] = T((1.0 - stats.momentum) * stats.mean[c] + stats.momentum * mu);
      stats.var[c] = T((1.0 - stats.momentum) * stats.var[c] + stats.momentum * unbiased);
    } else {
      mu = stats.mean[c];
      var = stats.var[c];
    }
    const double is = 1.0 / std::sqrt(var + stats.epsilon);
    inv_std[c] = T(is);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t off = (b * C + c) * HW;
      Plane xh(xhat.data() + off, long(HW));
      xh = (ConstPlane(xs + off, long(HW)) - T(mu)) * T(is);
      Plane(out.data() + off, long(HW)) = xh * gamma[c] + beta[c];
    }
  }
  if (mode == NormMode::Train) stats.initialized = true;

  return Tensor<T>::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [B, C, HW, n, mode, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          detail::Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        for (std::size_t c = 0; c < C; ++c) {
          double sdy = 0.0, sdyx = 0.0;
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t off = (b * C + c) * HW;
            const T* dy = self.grad.data() + off;
            const T* xh = xhat.data() + off;
            sdy += detail::lane_sum<T>(HW, [dy](std::size_t i) { return dy[i]; });
            sdyx += detail::lane_sum<T>(HW, [dy, xh](std::size_t i) { return dy[i] * xh[i]; });
          }
          if (pg.requires_grad) pg.grad_buffer()[c] += T(sdyx);
          if (pb.requires_grad) pb.grad_buffer()[c] += T(sdy);
          if (!px.requires_grad) continue;
          auto& gx = px.grad_buffer();
          const T scale = T(double(pg.data[c]) * double(inv_std[c]));
          const T mdy = T(sdy / double(n)), mdyx = T(sdyx / double(n));
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t off = (b * C + c) * HW;
            const ConstPlane dy(self.grad.data() + off, long(HW));
            Plane g(gx.data() + off, long(HW));
            if (mode == NormMode::Train) {
              g += scale * (dy - mdy - ConstPlane(xhat.data() + off, long(HW)) * mdyx);
            } else {
              g += scale * dy;
            }
          }
        }
      });
}

}  // namespace nirsfs
