#include <gtest/gtest.h>

#include <random>

#include "gradcheck.hpp"
#include "rwinpaint/regionwise.hpp"

using namespace rwinpaint;
using rwinpaint::testing::gradcheck;
using rwinpaint::testing::random_tensor;

namespace {

using V = Var<double>;

RegionwiseConvParams<double> random_params(int in, int out, ops::ConvGeometry g, std::mt19937_64& rng) {
  RegionwiseConvParams<double> p(in, out, g, rng);
  p.existing.bias.mutable_value() = random_tensor<double>(Shape{out, 1, 1, 1}, rng);
  p.missing.bias.mutable_value() = random_tensor<double>(Shape{out, 1, 1, 1}, rng);
  return p;
}

Mask left_half_missing(int h, int w) {
  Mask m = Mask::ones(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w / 2; ++x) m.set(y, x, false);
  return m;
}

bool all_zero(const Tensor<double>& t) {
  for (double v : t.values())
    if (v != 0.0) return false;
  return true;
}

}  // namespace

TEST(RegionwiseConv, AllOnesEqualsExistingBranch) {
  std::mt19937_64 rng(1);
  const ops::ConvGeometry g{3, 1, 1};
  auto p = random_params(3, 4, g, rng);
  auto x = V::constant(random_tensor<double>(Shape{2, 3, 8, 8}, rng));
  auto out = regionwise_conv_forward(x, std::vector<Mask>{Mask::ones(8, 8)}, p);
  auto ref = ops::conv2d(x, p.existing.weight, p.existing.bias, g);
  for (std::size_t i = 0; i < out.value().size(); ++i) EXPECT_LE(std::abs(out.value()[i] - ref.value()[i]), 1e-6);
}

TEST(RegionwiseConv, AllZerosEqualsMissingBranch) {
  std::mt19937_64 rng(2);
  const ops::ConvGeometry g{3, 2, 1};
  auto p = random_params(3, 4, g, rng);
  auto x = V::constant(random_tensor<double>(Shape{1, 3, 8, 8}, rng));
  auto out = regionwise_conv_forward(x, std::vector<Mask>{Mask::zeros(4, 4)}, p);
  auto ref = ops::conv2d(x, p.missing.weight, p.missing.bias, g);
  for (std::size_t i = 0; i < out.value().size(); ++i) EXPECT_LE(std::abs(out.value()[i] - ref.value()[i]), 1e-6);
}

TEST(RegionwiseConv, OneByOneKernelMatchesLoopOracle) {
  std::mt19937_64 rng(3);
  const ops::ConvGeometry g{1, 1, 0};
  auto p = random_params(1, 1, g, rng);
  auto xt = random_tensor<double>(Shape{1, 1, 4, 4}, rng);
  const Mask m = left_half_missing(4, 4);
  auto out = regionwise_conv_forward(V::constant(xt), std::vector<Mask>{m}, p).value();
  const double w = p.existing.weight.value()[0], b = p.existing.bias.value()[0];
  const double wh = p.missing.weight.value()[0], bh = p.missing.bias.value()[0];
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      const double expect = m.at(y, x) ? w * xt.at(0, 0, y, x) + b : wh * xt.at(0, 0, y, x) + bh;
      EXPECT_EQ(out.at(0, 0, y, x), expect);
    }
}

TEST(RegionwiseConv, MaskGridMismatchThrows) {
  std::mt19937_64 rng(4);
  auto p = random_params(2, 2, ops::ConvGeometry{3, 2, 1}, rng);
  auto x = V::constant(random_tensor<double>(Shape{1, 2, 8, 8}, rng));
  EXPECT_THROW(regionwise_conv_forward(x, std::vector<Mask>{Mask::ones(8, 8)}, p), ShapeMismatchError);
}

TEST(RegionwiseConvParams, MismatchedBanksRejected) {
  std::mt19937_64 rng(5);
  ConvLayer<double> a(2, 3, ops::ConvGeometry{3, 1, 1}, rng);
  ConvLayer<double> b(2, 4, ops::ConvGeometry{3, 1, 1}, rng);
  EXPECT_THROW((RegionwiseConvParams<double>(a, b)), ShapeMismatchError);
}

TEST(RegionwiseGradients, AllOnesLeavesMissingBankUntouched) {
  std::mt19937_64 rng(6);
  auto p = random_params(2, 3, ops::ConvGeometry{3, 1, 1}, rng);
  auto x = random_tensor<double>(Shape{1, 2, 6, 6}, rng);
  auto up = random_tensor<double>(Shape{1, 3, 6, 6}, rng);
  auto g = regionwise_conv_gradients(x, std::vector<Mask>{Mask::ones(6, 6)}, p, up);
  EXPECT_TRUE(all_zero(g.weight_missing));
  EXPECT_TRUE(all_zero(g.bias_missing));
  EXPECT_FALSE(all_zero(g.weight_existing));
}

TEST(RegionwiseGradients, AllZerosLeavesExistingBankUntouched) {
  std::mt19937_64 rng(7);
  auto p = random_params(2, 3, ops::ConvGeometry{3, 1, 1}, rng);
  auto x = random_tensor<double>(Shape{1, 2, 6, 6}, rng);
  auto up = random_tensor<double>(Shape{1, 3, 6, 6}, rng);
  auto g = regionwise_conv_gradients(x, std::vector<Mask>{Mask::zeros(6, 6)}, p, up);
  EXPECT_TRUE(all_zero(g.weight_existing));
  EXPECT_TRUE(all_zero(g.bias_existing));
  EXPECT_FALSE(all_zero(g.weight_missing));
}

TEST(RegionwiseGradients, HalfMaskRoutesByRegion) {
  std::mt19937_64 rng(8);
  auto p = random_params(2, 3, ops::ConvGeometry{3, 1, 1}, rng);
  auto x = random_tensor<double>(Shape{1, 2, 6, 6}, rng);
  const Mask m = left_half_missing(6, 6);
  // Upstream supported only on existing outputs -> nothing reaches the
  // missing bank, and vice versa.
  Tensor<double> up_existing(Shape{1, 3, 6, 6}), up_missing(Shape{1, 3, 6, 6});
  auto up = random_tensor<double>(Shape{1, 3, 6, 6}, rng);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 6; ++y)
      for (int xx = 0; xx < 6; ++xx) (m.at(y, xx) ? up_existing : up_missing).at(0, c, y, xx) = up.at(0, c, y, xx);
  auto ge = regionwise_conv_gradients(x, std::vector<Mask>{m}, p, up_existing);
  EXPECT_TRUE(all_zero(ge.weight_missing));
  EXPECT_TRUE(all_zero(ge.bias_missing));
  auto gm = regionwise_conv_gradients(x, std::vector<Mask>{m}, p, up_missing);
  EXPECT_TRUE(all_zero(gm.weight_existing));
  EXPECT_TRUE(all_zero(gm.bias_existing));
  // Full upstream splits exactly into the two partial runs.
  auto full = regionwise_conv_gradients(x, std::vector<Mask>{m}, p, up);
  for (std::size_t i = 0; i < full.weight_existing.size(); ++i) {
    EXPECT_EQ(full.weight_existing[i], ge.weight_existing[i]);
    EXPECT_EQ(full.weight_missing[i], gm.weight_missing[i]);
  }
  for (std::size_t i = 0; i < full.input.size(); ++i)
    EXPECT_NEAR(full.input[i], ge.input[i] + gm.input[i], 1e-12);
}

TEST(RegionwiseGradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(9);
  for (ops::ConvGeometry g : {ops::ConvGeometry{3, 1, 1}, ops::ConvGeometry{3, 2, 1}}) {
    auto p = random_params(2, 3, g, rng);
    auto xt = random_tensor<double>(Shape{2, 2, 6, 6}, rng);
    const int o = g.out_extent(6);
    auto up = random_tensor<double>(Shape{2, 3, o, o}, rng);
    std::vector<Mask> masks{left_half_missing(o, o), Mask::ones(o, o)};
    masks[1].set(0, 0, false);
    masks[1].set(o - 1, 1, false);
    auto grads = regionwise_conv_gradients(xt, masks, p, up);

    // Central differences against the returned tensors.
    auto fd = [&](Tensor<double>& target, std::size_t i) {
      auto eval = [&] {
        auto out = regionwise_conv_forward(V::constant(xt), masks, p).value();
        double s = 0;
        for (std::size_t k = 0; k < out.size(); ++k) s += out[k] * up[k];
        return s;
      };
      const double saved = target[i];
      target[i] = saved + 1e-3;
      const double plus = eval();
      target[i] = saved - 1e-3;
      const double minus = eval();
      target[i] = saved;
      return (plus - minus) / 2e-3;
    };
    auto check = [&](Tensor<double>& target, const Tensor<double>& analytic, const char* name) {
      double diff2 = 0, norm2 = 0;
      for (std::size_t i = 0; i < target.size(); ++i) {
        const double f = fd(target, i);
        diff2 += (f - analytic[i]) * (f - analytic[i]);
        norm2 += f * f;
      }
      EXPECT_LT(std::sqrt(diff2) / std::max(std::sqrt(norm2), 1e-6), 1e-4) << name;
    };
    check(xt, grads.input, "input");
    check(p.existing.weight.mutable_value(), grads.weight_existing, "W");
    check(p.missing.weight.mutable_value(), grads.weight_missing, "W_hat");
    check(p.existing.bias.mutable_value(), grads.bias_existing, "b");
    check(p.missing.bias.mutable_value(), grads.bias_missing, "b_hat");
  }
}
