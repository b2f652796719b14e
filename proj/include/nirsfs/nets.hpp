#pragma once
// Generator (NIR -> normals) and discriminator ((NIR, normals) -> probability).
//
// Generator, stride 1 / pad 1 throughout:
//   conv 3x3 128  BN ReLU
//   conv 3x3 256  BN ReLU
//   conv 3x3 256  BN ReLU
//   conv 3x3 128  BN ReLU
//   conv 3x3 3    +bias tanh
// Discriminator, pad 0:
//   conv 3x3/2 64       L-ReLU
//   conv 3x3/2 128  BN  L-ReLU
//   conv 3x3/2 256  BN  L-ReLU
//   conv 3x3/2 512  BN  L-ReLU
//   conv 1x1/1 256  +bias sigmoid, then mean over channels and space
//
// `width_scale` multiplies every hidden width (output widths stay 3 / 1).

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "nirsfs/ops.hpp"

namespace nirsfs {

struct NetConfig {
  double width_scale = 1.0;
  bool pair_conditioning = true;  // discriminator sees concat(NIR, normals)
  double leaky_slope = kDefaultLeakySlope;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;

  std::size_t width(std::size_t base) const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(double(base) * width_scale)));
  }

  void validate() const {
    if (!(width_scale > 0.0)) throw ConfigError("width_scale must be > 0");
    if (leaky_slope < 0.0) throw ConfigError("leaky_slope must be >= 0");
  }
};

template <typename T>
struct ConvLayer {
  std::string name;
  Tensor<T> weight;
  std::optional<Tensor<T>> bias;
  std::size_t stride = 1, pad = 0;

  ConvLayer(std::string n, std::size_t in, std::size_t out, std::size_t k, std::size_t s, std::size_t p, bool with_bias)
      : name(std::move(n)), weight(Tensor<T>::zeros({out, in, k, k}, true)), stride(s), pad(p) {
    if (with_bias) bias = Tensor<T>::zeros({out}, true);
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, stride, pad, bias); }
};

template <typename T>
struct BatchNormLayer {
  std::string name;
  Tensor<T> gamma, beta;
  RunningStats<T> stats;

  BatchNormLayer(std::string n, std::size_t c, double momentum, double eps)
      : name(std::move(n)), gamma(Tensor<T>::ones({c}, true)), beta(Tensor<T>::zeros({c}, true)), stats(c) {
    stats.momentum = momentum;
    stats.epsilon = eps;
  }

  Tensor<T> operator()(const Tensor<T>& x, NormMode mode) { return batch_norm(x, gamma, beta, stats, mode); }
};

/// A named trainable parameter or persistent buffer view used for
/// serialization and optimizer bookkeeping.
template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void init_conv(ConvLayer<T>& c, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& w : c.weight.data()) w = T(dist(rng));
  if (c.bias) std::fill(c.bias->data().begin(), c.bias->data().end(), T(0));
}

template <typename T>
void reset_bn(BatchNormLayer<T>& b) {
  std::fill(b.gamma.data().begin(), b.gamma.data().end(), T(1));
  std::fill(b.beta.data().begin(), b.beta.data().end(), T(0));
  b.stats = RunningStats<T>(b.gamma.numel());
}

}  // namespace detail

inline constexpr double kInitStddev = 0.02;

template <typename T>
class GeneratorNet {
 public:
  explicit GeneratorNet(NetConfig cfg = {}) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t w1 = cfg_.width(128), w2 = cfg_.width(256), w3 = cfg_.width(256), w4 = cfg_.width(128);
    const std::size_t in[5] = {1, w1, w2, w3, w4};
    const std::size_t out[5] = {w1, w2, w3, w4, 3};
    for (std::size_t i = 0; i < 5; ++i) {
      const bool last = i == 4;
      convs_.emplace_back("gen.conv" + std::to_string(i + 1), in[i], out[i], 3, 1, 1, last);
      if (!last) bns_.emplace_back("gen.bn" + std::to_string(i + 1), out[i], cfg_.bn_momentum, cfg_.bn_epsilon);
    }
  }

  /// [B,1,H,W] in [−1,1] -> [B,3,H,W] in (−1,1). Any H, W.
  Tensor<T> forward(const Tensor<T>& z, NormMode mode) {
    detail::require_4d(z, "generator input");
    if (z.size(1) != 1) throw ShapeError("generator expects 1 input channel, got " + to_string(z.shape()));
    Tensor<T> x = z;
    for (std::size_t i = 0; i < 4; ++i) x = relu(bns_[i](convs_[i](x), mode));
    return tanh(convs_[4](x));
  }

  void init_weights(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& c : convs_) detail::init_conv(c, rng, kInitStddev);
    for (auto& b : bns_) reset_bn(b);
  }

  /// Trainable tensors in a fixed order.
  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (const auto& n : named_parameters()) out.push_back(n.tensor);
    return out;
  }

  std::vector<NamedParam<T>> named_parameters() const {
    std::vector<NamedParam<T>> out;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      out.push_back({convs_[i].name + ".weight", convs_[i].weight});
      if (convs_[i].bias) out.push_back({convs_[i].name + ".bias", *convs_[i].bias});
      if (i < bns_.size()) {
        out.push_back({bns_[i].name + ".gamma", bns_[i].gamma});
        out.push_back({bns_[i].name + ".beta", bns_[i].beta});
      }
    }
    return out;
  }

  std::vector<BatchNormLayer<T>>& norm_layers() { return bns_; }
  const std::vector<BatchNormLayer<T>>& norm_layers() const { return bns_; }
  const std::vector<ConvLayer<T>>& conv_layers() const { return convs_; }
  const NetConfig& config() const { return cfg_; }

  std::string describe() const {
    std::ostringstream os;
    os << "G";
    for (const auto& c : convs_) os << ":" << c.weight.size(1) << ">" << c.weight.size(0) << "k" << c.weight.size(2);
    return os.str();
  }

 private:
  void reset_bn(BatchNormLayer<T>& b) {
    detail::reset_bn(b);
    b.stats.momentum = cfg_.bn_momentum;
    b.stats.epsilon = cfg_.bn_epsilon;
  }

  NetConfig cfg_;
  std::vector<ConvLayer<T>> convs_;
  std::vector<BatchNormLayer<T>> bns_;
};

template <typename T>
class DiscriminatorNet {
 public:
  explicit DiscriminatorNet(NetConfig cfg = {}) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t in_ch = cfg_.pair_conditioning ? 4 : 3;
    const std::size_t w[5] = {cfg_.width(64), cfg_.width(128), cfg_.width(256), cfg_.width(512), cfg_.width(256)};
    const std::size_t in[5] = {in_ch, w[0], w[1], w[2], w[3]};
    for (std::size_t i = 0; i < 5; ++i) {
      const bool last = i == 4;
      convs_.emplace_back("dis.conv" + std::to_string(i + 1), in[i], w[i], last ? 1 : 3, last ? 1 : 2, 0, last);
      if (i >= 1 && i <= 3) bns_.emplace_back("dis.bn" + std::to_string(i + 1), w[i], cfg_.bn_momentum, cfg_.bn_epsilon);
    }
  }

  static constexpr std::size_t kInputSize = 64;

  /// Probability per sample, shape [B]. Inputs must be 64×64.
  Tensor<T> forward(const Tensor<T>& z, const Tensor<T>& n, NormMode mode) {
    detail::require_4d(n, "discriminator normals");
    if (n.size(1) != 3 || n.size(2) != kInputSize || n.size(3) != kInputSize) {
      throw ShapeError("discriminator expects [B,3,64,64] normals, got " + to_string(n.shape()));
    }
    Tensor<T> x = n;
    if (cfg_.pair_conditioning) {
      detail::require_4d(z, "discriminator NIR");
      if (z.size(1) != 1 || z.size(2) != kInputSize || z.size(3) != kInputSize || z.size(0) != n.size(0)) {
        throw ShapeError("discriminator expects [B,1,64,64] NIR, got " + to_string(z.shape()));
      }
      x = concat_channels(z, n);
    }
    const T slope = T(cfg_.leaky_slope);
    x = leaky_relu(convs_[0](x), slope);
    for (std::size_t i = 1; i <= 3; ++i) x = leaky_relu(bns_[i - 1](convs_[i](x), mode), slope);
    return mean_per_sample(sigmoid(convs_[4](x)));
  }

  /// Per-layer spatial extents for a 64×64 input (layers 1-4).
  static std::vector<std::size_t> spatial_trace(std::size_t in = kInputSize) {
    std::vector<std::size_t> out;
    for (int i = 0; i < 4; ++i) out.push_back(in = conv_out_extent(in, 3, 2, 0));
    return out;
  }

  void init_weights(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& c : convs_) detail::init_conv(c, rng, kInitStddev);
    for (auto& b : bns_) {
      detail::reset_bn(b);
      b.stats.momentum = cfg_.bn_momentum;
      b.stats.epsilon = cfg_.bn_epsilon;
    }
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (const auto& n : named_parameters()) out.push_back(n.tensor);
    return out;
  }

  std::vector<NamedParam<T>> named_parameters() const {
    std::vector<NamedParam<T>> out;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      out.push_back({convs_[i].name + ".weight", convs_[i].weight});
      if (convs_[i].bias) out.push_back({convs_[i].name + ".bias", *convs_[i].bias});
      if (i >= 1 && i <= 3) {
        out.push_back({bns_[i - 1].name + ".gamma", bns_[i - 1].gamma});
        out.push_back({bns_[i - 1].name + ".beta", bns_[i - 1].beta});
      }
    }
    return out;
  }

  std::vector<BatchNormLayer<T>>& norm_layers() { return bns_; }
  const std::vector<BatchNormLayer<T>>& norm_layers() const { return bns_; }
  const std::vector<ConvLayer<T>>& conv_layers() const { return convs_; }
  const NetConfig& config() const { return cfg_; }

  std::string describe() const {
    std::ostringstream os;
    os << "D";
    for (const auto& c : convs_) os << ":" << c.weight.size(1) << ">" << c.weight.size(0) << "k" << c.weight.size(2);
    return os.str();
  }

 private:
  NetConfig cfg_;
  std::vector<ConvLayer<T>> convs_;
  std::vector<BatchNormLayer<T>> bns_;
};

/// Fingerprint of both architectures; checkpoints refuse to load across a mismatch.
template <typename T>
std::uint64_t arch_hash(const GeneratorNet<T>& g, const DiscriminatorNet<T>& d) {
  std::ostringstream os;
  os << g.describe() << "|" << d.describe() << "|pair=" << d.config().pair_conditioning
     << "|slope=" << d.config().leaky_slope;
  return detail::fnv1a(os.str());
}

template <typename T>
void set_requires_grad(const std::vector<Tensor<T>>& params, bool on) {
  for (auto p : params) p.set_requires_grad(on);
}

template <typename T>
void zero_grads(const std::vector<Tensor<T>>& params) {
  for (auto p : params) p.zero_grad();
}

}  // namespace nirsfs
