#pragma once

#include <array>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rwinpaint/archive.hpp"
#include "rwinpaint/autograd.hpp"
#include "rwinpaint/ops.hpp"
#include "rwinpaint/regionwise.hpp"

namespace rwinpaint {

enum class Stage { pool1 = 0, pool2 = 1, pool3 = 2 };

inline Stage parse_stage(const std::string& name) {
  if (name == "pool1") return Stage::pool1;
  if (name == "pool2") return Stage::pool2;
  if (name == "pool3") return Stage::pool3;
  throw ConfigError("unknown feature stage '" + name + "' (expected pool1|pool2|pool3)");
}

inline std::string to_string(Stage s) { return "pool" + std::to_string(static_cast<int>(s) + 1); }

// Feature maps at the requested pooling stages; unrequested stages are empty.
template <typename T>
struct FeaturePyramid {
  std::array<std::optional<Var<T>>, 3> stages;

  bool has(Stage s) const { return stages[static_cast<int>(s)].has_value(); }
  const Var<T>& at(Stage s) const {
    const auto& v = stages[static_cast<int>(s)];
    if (!v) throw ConfigError("feature stage " + to_string(s) + " was not extracted");
    return *v;
  }
};

// Reshapes a (1, c, h, w) map into a c x n matrix; column i is the channel
// vector at row-major spatial index i. NCHW storage already is that matrix.
template <typename T>
ops::RowMatrix<T> reshape_to_matrix(const Tensor<T>& f, int sample = 0) {
  const int c = f.c();
  const int n = static_cast<int>(f.shape().plane());
  return ops::ConstMatMap<T>(f.sample(sample), c, n);
}

template <typename T>
Tensor<T> unreshape_from_matrix(const ops::RowMatrix<T>& m, int h, int w) {
  if (m.cols() != static_cast<Eigen::Index>(h) * w) throw DimensionError("unreshape: column count mismatch");
  Tensor<T> out(Shape{1, static_cast<int>(m.rows()), h, w});
  ops::MatMap<T>(out.data(), m.rows(), m.cols()) = m;
  return out;
}

enum class BackboneKind { tiny, vgg16 };

inline constexpr const char* kVggWeightsEnv = "RWINPAINT_VGG16_WEIGHTS";

// Frozen convolutional stack. Weights are graph constants, so gradients
// reach the input image but never the backbone.
template <typename T>
class FeatureExtractor {
 public:
  struct Layer {
    Var<T> weight;
    Var<T> bias;
  };

  // Random frozen 3-stage convnet: conv3x3 + ELU + 2x2 average pool per stage.
  static FeatureExtractor tiny(std::uint64_t seed, std::array<int, 3> widths = {16, 32, 64}) {
    FeatureExtractor fx;
    fx.kind_ = BackboneKind::tiny;
    std::mt19937_64 rng(seed);
    int in = 3;
    for (int s = 0; s < 3; ++s) {
      fx.stages_[s].push_back(frozen_layer(init_filter_bank<T>(widths[s], in, 3, rng), rng));
      in = widths[s];
    }
    return fx;
  }

  // VGG16 conv1_1..conv3_3 with randomly initialised weights (shape tests).
  static FeatureExtractor vgg16_random(std::uint64_t seed) {
    FeatureExtractor fx;
    fx.kind_ = BackboneKind::vgg16;
    std::mt19937_64 rng(seed);
    int in = 3;
    for (int s = 0; s < 3; ++s) {
      for (int l = 0; l < kVggConvs[s]; ++l) {
        fx.stages_[s].push_back(frozen_layer(init_filter_bank<T>(kVggWidths[s], in, 3, rng), rng));
        in = kVggWidths[s];
      }
    }
    return fx;
  }

  // VGG16 weights from an archive with keys "vgg16/conv{s}_{l}/w|b".
  static FeatureExtractor vgg16_from_file(const std::filesystem::path& path) {
    if (path.empty() || !std::filesystem::exists(path)) {
      throw IoError("missing backbone weights file '" + path.string() + "'");
    }
    Archive a = Archive::load(path);
    FeatureExtractor fx;
    fx.kind_ = BackboneKind::vgg16;
    int in = 3;
    for (int s = 0; s < 3; ++s) {
      for (int l = 0; l < kVggConvs[s]; ++l) {
        const std::string key = "vgg16/conv" + std::to_string(s + 1) + "_" + std::to_string(l + 1) + "/";
        Tensor<T> w = a.get<Tensor<float>>(key + "w").template cast<T>();
        Tensor<T> b = a.get<Tensor<float>>(key + "b").template cast<T>();
        if (!(w.shape() == Shape{kVggWidths[s], in, 3, 3}) || b.size() != static_cast<std::size_t>(kVggWidths[s])) {
          throw ShapeMismatchError("backbone layer " + key + " has shape " + w.shape().str());
        }
        b = Tensor<T>(Shape{kVggWidths[s], 1, 1, 1}, std::move(b.storage()));
        fx.stages_[s].push_back(Layer{Var<T>::constant(std::move(w)), Var<T>::constant(std::move(b))});
        in = kVggWidths[s];
      }
    }
    return fx;
  }

  // Path from the argument, else from the environment variable.
  static FeatureExtractor vgg16_from_config(const std::string& path) {
    std::string p = path;
    if (p.empty()) {
      if (const char* env = std::getenv(kVggWeightsEnv)) p = env;
    }
    return vgg16_from_file(p);
  }

  BackboneKind kind() const { return kind_; }

  // Input is in the internal [-1, 1] range; it is mapped to ImageNet
  // mean/std normalisation before the first convolution.
  FeaturePyramid<T> extract(const Var<T>& img, std::initializer_list<Stage> wanted) const {
    if (img.shape().c != 3) throw ShapeMismatchError("feature extractor expects 3 channels, got " + img.shape().str());
    if (stages_[0].empty()) throw ConfigError("feature extractor has no weights loaded");
    int deepest = -1;
    std::array<bool, 3> want{};
    for (Stage s : wanted) {
      want[static_cast<int>(s)] = true;
      deepest = std::max(deepest, static_cast<int>(s));
    }
    std::vector<T> mul(3), shift(3);
    for (int c = 0; c < 3; ++c) {
      mul[c] = static_cast<T>(0.5 / kStd[c]);
      shift[c] = static_cast<T>((0.5 - kMean[c]) / kStd[c]);
    }
    Var<T> h = ops::affine_channels(img, mul, shift);
    FeaturePyramid<T> out;
    const ops::ConvGeometry same{3, 1, 1};
    for (int s = 0; s <= deepest; ++s) {
      for (const auto& layer : stages_[s]) {
        h = ops::conv2d(h, layer.weight, layer.bias, same);
        h = kind_ == BackboneKind::tiny ? ops::elu(h) : ops::relu(h);
      }
      h = kind_ == BackboneKind::tiny ? ops::avg_pool2(h) : ops::max_pool2(h);
      if (want[s]) out.stages[s] = h;
    }
    return out;
  }

  // Every frozen tensor, for checks that nothing ever reaches them.
  std::vector<Var<T>> weights() const {
    std::vector<Var<T>> out;
    for (const auto& stage : stages_) {
      for (const auto& l : stage) {
        out.push_back(l.weight);
        out.push_back(l.bias);
      }
    }
    return out;
  }

  int stage_channels(Stage s) const { return stages_[static_cast<int>(s)].back().weight.shape().n; }

 private:
  static constexpr std::array<int, 3> kVggWidths{64, 128, 256};
  static constexpr std::array<int, 3> kVggConvs{2, 2, 3};
  static constexpr std::array<double, 3> kMean{0.485, 0.456, 0.406};
  static constexpr std::array<double, 3> kStd{0.229, 0.224, 0.225};

  static Layer frozen_layer(Tensor<T> w, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 0.05);
    Tensor<T> b(Shape{w.n(), 1, 1, 1});
    for (auto& v : b.values()) v = static_cast<T>(dist(rng));
    return Layer{Var<T>::constant(std::move(w)), Var<T>::constant(std::move(b))};
  }

  BackboneKind kind_ = BackboneKind::tiny;
  std::array<std::vector<Layer>, 3> stages_;
};

}  // namespace rwinpaint
