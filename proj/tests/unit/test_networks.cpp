#include <gtest/gtest.h>

#include <Eigen/SVD>
#include <random>

#include "gradcheck.hpp"
#include "rwinpaint/regionwise.hpp"

using namespace rwinpaint;
using rwinpaint::testing::gradcheck;
using rwinpaint::testing::random_tensor;

namespace {

std::size_t conv_params(int k, int in, int out) { return static_cast<std::size_t>(k) * k * in * out + out; }

// Layer-by-layer closed form for the encoder/decoder ladder.
std::size_t expected_params(const GeneratorConfig& c, bool regionwise) {
  const int k = c.kernel, top = c.levels - 1;
  const std::size_t rw = regionwise ? 2 : 1;
  std::size_t total = conv_params(k, c.in_channels, c.width(0));
  for (int l = 1; l < c.levels; ++l) total += conv_params(k, c.width(l - 1), c.width(l));
  total += rw * conv_params(k, c.width(top), c.width(top));
  for (int l = top; l >= 1; --l) {
    total += rw * conv_params(k, c.width(l) + (c.skip_links ? c.width(l - 1) : 0), c.width(l - 1));
  }
  total += rw * conv_params(k, c.width(0), c.out_channels);
  return total;
}

Tensor<float> random_image(int n, int h, int w, std::mt19937_64& rng) {
  return random_tensor<float>(Shape{n, 3, h, w}, rng);
}

Mask random_blob_mask(int h, int w, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.4);
  Mask m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.set(y, x, !coin(rng));
  return m;
}

}  // namespace

TEST(SemanticNet, ShapeAndRange) {
  GeneratorConfig cfg;
  auto net = build_semantic_inferring_net<float>(cfg);
  std::mt19937_64 rng(1);
  auto x = Var<float>::constant(random_tensor<float>(Shape{1, 4, 64, 64}, rng));
  auto pyr = build_batch_pyramid(std::vector<Mask>{Mask::ones(64, 64)}, 3);
  auto out = net.forward(x, pyr);
  EXPECT_EQ(out.shape(), (Shape{1, 3, 64, 64}));
  for (float v : out.value().values()) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(SemanticNet, PyramidLevelCountEnforced) {
  GeneratorConfig cfg;
  auto net = build_semantic_inferring_net<float>(cfg);
  auto x = Var<float>::constant(Tensor<float>(Shape{1, 4, 16, 16}));
  EXPECT_NO_THROW(net.forward(x, build_batch_pyramid(std::vector<Mask>{Mask::ones(16, 16)}, 3)));
  EXPECT_THROW(net.forward(x, build_batch_pyramid(std::vector<Mask>{Mask::ones(16, 16)}, 2)), ShapeMismatchError);
}

TEST(SemanticNet, ParameterCountMatchesClosedForm) {
  for (bool skips : {true, false}) {
    GeneratorConfig cfg;
    cfg.skip_links = skips;
    EXPECT_EQ(build_semantic_inferring_net<float>(cfg).parameters().scalar_count(), expected_params(cfg, true));
  }
}

TEST(SemanticNet, SkipToggleChangesCountByAnalyticDelta) {
  GeneratorConfig with, without;
  without.skip_links = false;
  std::size_t delta = 0;
  for (int l = 1; l < with.levels; ++l) delta += 2 * 9 * static_cast<std::size_t>(with.width(l - 1)) * with.width(l - 1);
  EXPECT_EQ(build_semantic_inferring_net<float>(with).parameters().scalar_count() -
                build_semantic_inferring_net<float>(without).parameters().scalar_count(),
            delta);
}

TEST(GlobalNet, ShapeCountAndDeterminism) {
  GeneratorConfig cfg;
  auto a = build_global_perceiving_net<float>(cfg);
  auto b = build_global_perceiving_net<float>(cfg);
  EXPECT_EQ(a.parameters().scalar_count(), expected_params(cfg, false));
  for (const auto& d : a.decoder()) EXPECT_FALSE(d.regionwise());
  const auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].second.value(), pb[i].second.value()) << pa[i].first;
  auto x = Var<float>::constant(Tensor<float>(Shape{1, 4, 64, 64}, 0.1f));
  EXPECT_EQ(a.forward(x, build_batch_pyramid(std::vector<Mask>{Mask::ones(64, 64)}, 3)).shape(),
            (Shape{1, 3, 64, 64}));
}

TEST(Generator, ShapesAndPurity) {
  Generator<float> g{GeneratorConfig{}};
  std::mt19937_64 rng(2);
  const Mask m = random_blob_mask(64, 64, rng);
  auto img = apply_mask(random_image(1, 64, 64, rng), m);
  auto a = g.forward(Var<float>::constant(img), std::vector<Mask>{m});
  auto b = g.forward(Var<float>::constant(img), std::vector<Mask>{m});
  for (const auto* v : {&a.predicted1, &a.composited1, &a.predicted2, &a.composited2})
    EXPECT_EQ(v->shape(), (Shape{1, 3, 64, 64}));
  EXPECT_EQ(a.predicted2.value(), b.predicted2.value());
  EXPECT_EQ(a.composited2.value(), b.composited2.value());
}

TEST(Generator, AllOnesMaskReturnsInputExactly) {
  Generator<float> g{GeneratorConfig{}};
  std::mt19937_64 rng(3);
  auto img = random_image(2, 32, 32, rng);
  auto out = g.forward(Var<float>::constant(img), std::vector<Mask>{Mask::ones(32, 32)});
  EXPECT_EQ(out.composited1.value(), img);
  EXPECT_EQ(out.composited2.value(), img);
}

TEST(Generator, CompositeIdentityOnExistingPixels) {
  GeneratorConfig cfg;
  cfg.seed = 99;
  Generator<float> g{cfg};
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Mask m = random_blob_mask(16, 16, rng);
    auto img = apply_mask(random_image(1, 16, 16, rng), m);
    auto out = g.forward(Var<float>::constant(img), std::vector<Mask>{m});
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
          if (!m.at(y, x)) continue;
          ASSERT_EQ(out.composited1.value().at(0, c, y, x), img.at(0, c, y, x));
          ASSERT_EQ(out.composited2.value().at(0, c, y, x), img.at(0, c, y, x));
        }
  }
}

TEST(Generator, MaskDimensionMismatch) {
  Generator<float> g{GeneratorConfig{}};
  auto img = Var<float>::constant(Tensor<float>(Shape{1, 3, 16, 16}));
  EXPECT_THROW(g.forward(img, std::vector<Mask>{Mask::ones(8, 8)}), DimensionError);
}

TEST(Generator, EndToEndFiniteDifferences) {
  GeneratorConfig cfg;
  cfg.base_width = 2;
  cfg.levels = 2;
  cfg.seed = 5;
  Generator<double> g{cfg};
  std::mt19937_64 rng(6);
  Mask m = Mask::ones(4, 4);
  m.set(1, 1, false);
  m.set(1, 2, false);
  m.set(2, 1, false);
  const std::vector<Mask> masks{m};
  auto img = Var<double>::parameter(apply_mask(random_tensor<double>(Shape{1, 3, 4, 4}, rng), m));
  auto target = Var<double>::constant(random_tensor<double>(Shape{1, 3, 4, 4}, rng));
  std::vector<std::pair<std::string, Var<double>>> leaves{{"image", img}};
  for (const auto& [name, v] : g.parameters()) leaves.emplace_back(name, v);
  auto objective = [&] {
    auto out = g.forward(img, masks);
    return ops::add(ops::mean(ops::tanh(ops::add(out.predicted1, target))),
                    ops::mean(ops::tanh(ops::sub(out.composited2, target))));
  };
  auto res = gradcheck(objective, leaves, 1e-5, 32);
  EXPECT_LT(res.worst_relative_error, 1e-4) << res.worst_leaf;
}

TEST(Discriminator, ScoreMapShapeAndRange) {
  Discriminator<float> d{DiscriminatorConfig{}};
  std::mt19937_64 rng(7);
  const Mask m = random_blob_mask(64, 64, rng);
  auto region = ops::mask_region(Var<float>::constant(random_image(2, 64, 64, rng)), std::vector<Mask>{m},
                                 ops::Keep::missing);
  auto s = d.forward(region, std::vector<Mask>{m});
  EXPECT_EQ(s.shape(), (Shape{2, 1, 4, 4}));
  for (float v : s.value().values()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(Discriminator, RejectsWrongChannelCount) {
  Discriminator<float> d{DiscriminatorConfig{}};
  auto x = Var<float>::constant(Tensor<float>(Shape{1, 4, 64, 64}));
  EXPECT_THROW(d.forward(x, std::vector<Mask>{Mask::ones(64, 64)}), ShapeMismatchError);
}

TEST(Discriminator, SpectralNormBoundsTopSingularValue) {
  DiscriminatorConfig cfg;
  Discriminator<double> d{cfg};
  for (const auto& layer : d.layers()) {
    const Tensor<double> w = layer.effective_weight(true).value();
    const int rows = w.n(), cols = static_cast<int>(w.size() / rows);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> mat(w.data(), rows, cols);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(mat);
    EXPECT_LE(svd.singularValues()(0), 1.0 + 1e-2);
    EXPECT_GE(svd.singularValues()(0), 1.0 - 1e-2);
    // Power iteration estimate vs full decomposition on the raw weight.
    const Tensor<double>& raw = layer.conv.weight.value();
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> rm(raw.data(), rows, cols);
    Eigen::JacobiSVD<Eigen::MatrixXd> rsvd(rm);
    EXPECT_NEAR(layer.sigma(), rsvd.singularValues()(0), 1e-2 * rsvd.singularValues()(0));
  }
}

TEST(Discriminator, EndToEndFiniteDifferences) {
  DiscriminatorConfig cfg;
  cfg.levels = 2;
  cfg.base_width = 2;
  Discriminator<double> d{cfg};
  std::mt19937_64 rng(8);
  Mask m = Mask::ones(8, 8);
  for (int y = 2; y < 6; ++y) m.set(y, 3, false);
  const std::vector<Mask> masks{m};
  auto img = Var<double>::parameter(random_tensor<double>(Shape{1, 3, 8, 8}, rng));
  std::vector<std::pair<std::string, Var<double>>> leaves{{"image", img}};
  for (const auto& [name, v] : d.parameters()) leaves.emplace_back(name, v);
  auto objective = [&] { return ops::mean(d.forward(ops::mask_region(img, masks, ops::Keep::missing), masks)); };
  auto res = gradcheck(objective, leaves, 1e-5, 32);
  EXPECT_LT(res.worst_relative_error, 1e-4) << res.worst_leaf;
}
