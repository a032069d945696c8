#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rwinpaint/autograd.hpp"
#include "rwinpaint/mask.hpp"
#include "rwinpaint/ops.hpp"

namespace rwinpaint {

// Fan-in scaled normal init; biases start at zero.
template <typename T>
Tensor<T> init_filter_bank(int out, int in, int kernel, std::mt19937_64& rng) {
  Tensor<T> w(Shape{out, in, kernel, kernel});
  const double stddev = std::sqrt(1.0 / (static_cast<double>(in) * kernel * kernel));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : w.values()) v = static_cast<T>(dist(rng));
  return w;
}

template <typename T>
struct ConvLayer {
  Var<T> weight;
  Var<T> bias;
  ops::ConvGeometry geometry;

  ConvLayer() = default;
  ConvLayer(int in, int out, ops::ConvGeometry g, std::mt19937_64& rng)
      : weight(Var<T>::parameter(init_filter_bank<T>(out, in, g.kernel, rng))),
        bias(Var<T>::parameter(Tensor<T>(Shape{out, 1, 1, 1}))),
        geometry(g) {}

  int in_channels() const { return weight.shape().c; }
  int out_channels() const { return weight.shape().n; }

  Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, weight, bias, geometry); }

  void collect(ParameterSet<T>& into, const std::string& prefix) const {
    into.add(prefix + "w", weight);
    into.add(prefix + "b", bias);
  }
};

// Paired filter banks: (W, b) for existing positions, (W_hat, b_hat) for
// missing positions.
template <typename T>
struct RegionwiseConvParams {
  ConvLayer<T> existing;
  ConvLayer<T> missing;

  RegionwiseConvParams() = default;
  RegionwiseConvParams(int in, int out, ops::ConvGeometry g, std::mt19937_64& rng)
      : existing(in, out, g, rng), missing(in, out, g, rng) {}
  RegionwiseConvParams(ConvLayer<T> e, ConvLayer<T> m) : existing(std::move(e)), missing(std::move(m)) {
    if (!(existing.weight.shape() == missing.weight.shape()) ||
        !(existing.bias.shape() == missing.bias.shape())) {
      throw ShapeMismatchError("region-wise filter banks must have identical shapes");
    }
  }
};

// Both branches are evaluated everywhere and blended by the mask at each
// output position: X' = M ? (W*X + b) : (W_hat*X + b_hat).
template <typename T>
Var<T> regionwise_conv_forward(const Var<T>& x, std::span<const Mask> level_masks, const RegionwiseConvParams<T>& p) {
  const auto& g = p.existing.geometry;
  const int ho = g.out_extent(x.shape().h), wo = g.out_extent(x.shape().w);
  for (const auto& m : level_masks) {
    if (m.height() != ho || m.width() != wo) {
      throw ShapeMismatchError("region-wise conv: mask " + std::to_string(m.height()) + "x" +
                               std::to_string(m.width()) + " vs output grid " + std::to_string(ho) + "x" +
                               std::to_string(wo));
    }
  }
  if (level_masks.size() != 1 && level_masks.size() != static_cast<std::size_t>(x.shape().n)) {
    throw ShapeMismatchError("region-wise conv: mask count does not match batch");
  }
  return ops::select(level_masks, p.existing(x), p.missing(x));
}

template <typename T>
struct RegionwiseGradients {
  Tensor<T> input;
  Tensor<T> weight_existing;
  Tensor<T> weight_missing;
  Tensor<T> bias_existing;
  Tensor<T> bias_missing;
};

// Pulls `upstream` (d objective / d output) back through one region-wise
// convolution. The parameters' own gradient buffers are left untouched.
template <typename T>
RegionwiseGradients<T> regionwise_conv_gradients(const Tensor<T>& x, std::span<const Mask> level_masks,
                                                 const RegionwiseConvParams<T>& p, const Tensor<T>& upstream) {
  auto input = Var<T>::parameter(x);
  auto we = Var<T>::parameter(p.existing.weight.value());
  auto be = Var<T>::parameter(p.existing.bias.value());
  auto wm = Var<T>::parameter(p.missing.weight.value());
  auto bm = Var<T>::parameter(p.missing.bias.value());
  RegionwiseConvParams<T> local;
  local.existing = p.existing;
  local.existing.weight = we;
  local.existing.bias = be;
  local.missing = p.missing;
  local.missing.weight = wm;
  local.missing.bias = bm;
  auto out = regionwise_conv_forward(input, level_masks, local);
  if (!(out.shape() == upstream.shape())) {
    throw ShapeMismatchError("region-wise conv gradients: upstream " + upstream.shape().str() + " vs output " +
                             out.shape().str());
  }
  backward(out, upstream);
  auto grad_or_zero = [](Var<T>& v) { return v.has_grad() ? v.grad() : Tensor<T>(v.shape()); };
  return {grad_or_zero(input), grad_or_zero(we), grad_or_zero(wm), grad_or_zero(be), grad_or_zero(bm)};
}

enum class Activation { elu, leaky_relu };

template <typename T>
Var<T> activate(const Var<T>& x, Activation a) {
  return a == Activation::elu ? ops::elu(x) : ops::leaky_relu(x, T(0.2));
}

struct GeneratorConfig {
  int base_width = 16;   // channels at level 0; doubles per level
  int levels = 3;        // resolution levels, including the input one
  bool skip_links = true;
  bool regionwise_decoder = true;
  int kernel = 3;
  Activation activation = Activation::elu;
  int in_channels = 4;   // RGB + mask
  int out_channels = 3;  // tanh-squashed into [-1, 1]
  std::uint64_t seed = 1;

  int width(int level) const { return base_width << level; }
};

// Per-level, per-sample masks: levels[l][n].
using BatchPyramid = std::vector<std::vector<Mask>>;

inline BatchPyramid build_batch_pyramid(std::span<const Mask> masks, int levels) {
  BatchPyramid out(static_cast<std::size_t>(levels));
  for (const auto& m : masks) {
    MaskPyramid p = build_pyramid(m, levels, 2);
    for (int l = 0; l < levels; ++l) out[l].push_back(std::move(p.levels[l]));
  }
  return out;
}

// Stride-2 encoder and nearest-upsample decoder over `levels` resolutions.
//
// encoder: enc0 (stride 1) then enc1..enc{L-1} (stride 2), each activated.
// decoder: dec{L-1} at the coarsest level, then for l = L-1..1 an upsample
//          followed by dec{l-1} (optionally fed the encoder skip at level
//          l-1), then `out` with tanh. Decoder convolutions are region-wise
//          when configured, each consuming the mask at its output level.
template <typename T>
class EncoderDecoder {
 public:
  struct DecoderConv {
    ConvLayer<T> existing;
    std::optional<ConvLayer<T>> missing;
    bool regionwise() const { return missing.has_value(); }
  };

  EncoderDecoder() = default;
  explicit EncoderDecoder(const GeneratorConfig& cfg) : cfg_(cfg) {
    if (cfg.levels < 1) throw ConfigError("generator needs at least one level");
    if (cfg.base_width < 1) throw ConfigError("generator base width must be positive");
    std::mt19937_64 rng(cfg.seed);
    const ops::ConvGeometry same{cfg.kernel, 1, cfg.kernel / 2};
    const ops::ConvGeometry down{cfg.kernel, 2, cfg.kernel / 2};
    encoder_.emplace_back(cfg.in_channels, cfg.width(0), same, rng);
    for (int l = 1; l < cfg.levels; ++l) encoder_.emplace_back(cfg.width(l - 1), cfg.width(l), down, rng);
    auto make = [&](int in, int out) {
      DecoderConv d{ConvLayer<T>(in, out, same, rng), std::nullopt};
      if (cfg.regionwise_decoder) d.missing.emplace(in, out, same, rng);
      return d;
    };
    const int top = cfg.levels - 1;
    decoder_.push_back(make(cfg.width(top), cfg.width(top)));
    for (int l = top; l >= 1; --l) {
      const int skip = cfg.skip_links ? cfg.width(l - 1) : 0;
      decoder_.push_back(make(cfg.width(l) + skip, cfg.width(l - 1)));
    }
    decoder_.push_back(make(cfg.width(0), cfg.out_channels));
  }

  const GeneratorConfig& config() const { return cfg_; }

  Var<T> forward(const Var<T>& x, const BatchPyramid& pyramid) const {
    const Shape s = x.shape();
    if (s.c != cfg_.in_channels) {
      throw ShapeMismatchError("generator input has " + std::to_string(s.c) + " channels, expected " +
                               std::to_string(cfg_.in_channels));
    }
    if (static_cast<int>(pyramid.size()) != cfg_.levels) {
      throw ShapeMismatchError("generator expects a mask pyramid of " + std::to_string(cfg_.levels) +
                               " levels, got " + std::to_string(pyramid.size()));
    }
    const int div = 1 << (cfg_.levels - 1);
    if (s.h % div != 0 || s.w % div != 0) {
      throw DimensionError("input " + std::to_string(s.h) + "x" + std::to_string(s.w) + " not divisible by " +
                           std::to_string(div));
    }
    std::vector<Var<T>> features;
    Var<T> h = x;
    for (const auto& conv : encoder_) {
      h = activate(conv(h), cfg_.activation);
      features.push_back(h);
    }
    const int top = cfg_.levels - 1;
    h = activate(decode(0, h, pyramid[top]), cfg_.activation);
    for (int l = top; l >= 1; --l) {
      h = ops::upsample_nearest(h, 2);
      if (cfg_.skip_links) h = ops::concat_channels(h, features[l - 1]);
      h = activate(decode(static_cast<std::size_t>(top - l + 1), h, pyramid[l - 1]), cfg_.activation);
    }
    return ops::tanh(decode(decoder_.size() - 1, h, pyramid[0]));
  }

  ParameterSet<T> parameters() const {
    ParameterSet<T> ps;
    for (std::size_t i = 0; i < encoder_.size(); ++i) encoder_[i].collect(ps, "enc" + std::to_string(i) + "/");
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      const std::string name = i + 1 == decoder_.size() ? "out/" : "dec" + std::to_string(i) + "/";
      if (decoder_[i].regionwise()) {
        decoder_[i].existing.collect(ps, name + "existing/");
        decoder_[i].missing->collect(ps, name + "missing/");
      } else {
        decoder_[i].existing.collect(ps, name);
      }
    }
    return ps;
  }

  const std::vector<ConvLayer<T>>& encoder() const { return encoder_; }
  const std::vector<DecoderConv>& decoder() const { return decoder_; }

 private:
  Var<T> decode(std::size_t i, const Var<T>& h, const std::vector<Mask>& masks) const {
    const auto& d = decoder_[i];
    if (!d.regionwise()) return d.existing(h);
    RegionwiseConvParams<T> p;
    p.existing = d.existing;
    p.missing = *d.missing;
    return regionwise_conv_forward(h, std::span<const Mask>(masks), p);
  }

  GeneratorConfig cfg_;
  std::vector<ConvLayer<T>> encoder_;
  std::vector<DecoderConv> decoder_;
};

template <typename T>
EncoderDecoder<T> build_semantic_inferring_net(GeneratorConfig cfg) {
  return EncoderDecoder<T>(cfg);
}

// The refinement stage uses standard convolutions throughout.
template <typename T>
EncoderDecoder<T> build_global_perceiving_net(GeneratorConfig cfg) {
  cfg.regionwise_decoder = false;
  return EncoderDecoder<T>(cfg);
}

template <typename T>
struct GeneratorOutputs {
  Var<T> predicted1;   // I_p^(1)
  Var<T> composited1;  // I_c^(1)
  Var<T> predicted2;   // I_p^(2)
  Var<T> composited2;  // I_c^(2)
};

// Two-stage generator: semantic inferring net then global perceiving net,
// each fed its image concatenated with the mask.
template <typename T>
class Generator {
 public:
  Generator() = default;
  explicit Generator(const GeneratorConfig& cfg) : cfg_(cfg) {
    GeneratorConfig second = cfg;
    second.seed = cfg.seed ^ 0x9e3779b97f4a7c15ULL;
    semantic_ = build_semantic_inferring_net<T>(cfg);
    global_ = build_global_perceiving_net<T>(second);
  }

  const GeneratorConfig& config() const { return cfg_; }
  const EncoderDecoder<T>& semantic() const { return semantic_; }
  const EncoderDecoder<T>& global() const { return global_; }

  GeneratorOutputs<T> forward(const Var<T>& incomplete, std::span<const Mask> masks) const {
    const Shape s = incomplete.shape();
    if (s.c != 3) throw ShapeMismatchError("generator expects a 3-channel image, got " + s.str());
    check_mask_batch(incomplete.value(), masks, "generator_forward");
    auto mask_var = Var<T>::constant(ops::mask_tensor<T>(masks, s.n));
    const BatchPyramid pyramid = build_batch_pyramid(masks, cfg_.levels);
    GeneratorOutputs<T> out;
    out.predicted1 = semantic_.forward(ops::concat_channels(incomplete, mask_var), pyramid);
    out.composited1 = ops::select(masks, incomplete, out.predicted1);
    out.predicted2 = global_.forward(ops::concat_channels(out.composited1, mask_var), pyramid);
    out.composited2 = ops::select(masks, incomplete, out.predicted2);
    return out;
  }

  ParameterSet<T> parameters() const {
    ParameterSet<T> ps;
    ps.append(semantic_.parameters(), "semantic/");
    ps.append(global_.parameters(), "global/");
    return ps;
  }

 private:
  GeneratorConfig cfg_;
  EncoderDecoder<T> semantic_;
  EncoderDecoder<T> global_;
};

struct DiscriminatorConfig {
  int levels = 4;  // stride-2 stages; score map side = input / 2^levels
  int base_width = 16;
  bool spectral_norm = true;
  double leaky_slope = 0.2;
  int init_power_iterations = 50;
  std::uint64_t seed = 2;
};

// Convolution whose weight is divided by a power-iteration estimate of its
// largest singular value.
template <typename T>
struct SpectralConv {
  ConvLayer<T> conv;
  Buffer<T> u;  // left singular vector estimate, length = out channels
  Buffer<T> v;  // right singular vector estimate, length = in*k*k

  SpectralConv(int in, int out, ops::ConvGeometry g, std::mt19937_64& rng) : conv(in, out, g, rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    u.resize(static_cast<std::size_t>(out));
    for (auto& x : u) x = static_cast<T>(dist(rng));
    v.assign(static_cast<std::size_t>(in) * g.kernel * g.kernel, T(0));
    normalize(u);
  }

  static void normalize(Buffer<T>& x) {
    T norm = 0;
    for (T e : x) norm += e * e;
    norm = std::sqrt(norm) + T(1e-12);
    for (T& e : x) e /= norm;
  }

  void power_iterate(int iterations) {
    const int rows = conv.out_channels();
    const int cols = static_cast<int>(conv.weight.value().size() / rows);
    ops::ConstMatMap<T> w(conv.weight.value().data(), rows, cols);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> uu(u.data(), rows), vv(v.data(), cols);
    for (int i = 0; i < iterations; ++i) {
      vv = w.transpose() * uu;
      vv /= vv.norm() + T(1e-12);
      uu = w * vv;
      uu /= uu.norm() + T(1e-12);
    }
  }

  T sigma() const {
    const int rows = conv.out_channels();
    const int cols = static_cast<int>(conv.weight.value().size() / rows);
    ops::ConstMatMap<T> w(conv.weight.value().data(), rows, cols);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> uu(u.data(), rows), vv(v.data(), cols);
    return uu.dot(w * vv);
  }

  Var<T> effective_weight(bool spectral) const {
    return spectral ? ops::spectral_normalize(conv.weight, u, v) : conv.weight;
  }

  Var<T> operator()(const Var<T>& x, bool spectral) const {
    return ops::conv2d(x, effective_weight(spectral), conv.bias, conv.geometry);
  }
};

// Patch discriminator over missing-region content concatenated with the
// mask. Emits a sigmoid score per patch.
template <typename T>
class Discriminator {
 public:
  Discriminator() = default;
  explicit Discriminator(const DiscriminatorConfig& cfg) : cfg_(cfg) {
    if (cfg.levels < 1) throw ConfigError("discriminator needs at least one level");
    std::mt19937_64 rng(cfg.seed);
    int in = 4;
    for (int l = 0; l < cfg.levels; ++l) {
      const int out = cfg.base_width << l;
      layers_.emplace_back(in, out, ops::ConvGeometry{4, 2, 1}, rng);
      in = out;
    }
    layers_.emplace_back(in, 1, ops::ConvGeometry{3, 1, 1}, rng);
    refresh_spectral(cfg.init_power_iterations);
  }

  const DiscriminatorConfig& config() const { return cfg_; }

  Var<T> forward(const Var<T>& region_img, std::span<const Mask> masks) const {
    const Shape s = region_img.shape();
    if (s.c != 3) {
      throw ShapeMismatchError("discriminator expects a 3-channel region image, got " + std::to_string(s.c));
    }
    check_mask_batch(region_img.value(), masks, "discriminator_forward");
    auto mask_var = Var<T>::constant(ops::mask_tensor<T>(masks, s.n));
    Var<T> h = ops::concat_channels(region_img, mask_var);
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
      h = ops::leaky_relu(layers_[i](h, cfg_.spectral_norm), static_cast<T>(cfg_.leaky_slope));
    }
    return ops::sigmoid(layers_.back()(h, cfg_.spectral_norm));
  }

  // One or more power-iteration steps on every layer's singular vectors.
  void refresh_spectral(int iterations) {
    for (auto& l : layers_) l.power_iterate(iterations);
  }

  ParameterSet<T> parameters() const {
    ParameterSet<T> ps;
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].conv.collect(ps, "l" + std::to_string(i) + "/");
    return ps;
  }

  std::vector<SpectralConv<T>>& layers() { return layers_; }
  const std::vector<SpectralConv<T>>& layers() const { return layers_; }

 private:
  DiscriminatorConfig cfg_;
  std::vector<SpectralConv<T>> layers_;
};

}  // namespace rwinpaint
