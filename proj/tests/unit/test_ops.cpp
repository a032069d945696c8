#include <gtest/gtest.h>

#include <random>

#include "gradcheck.hpp"
#include "rwinpaint/ops.hpp"

using namespace rwinpaint;
using rwinpaint::testing::gradcheck;
using rwinpaint::testing::random_tensor;

namespace {

using V = Var<double>;

// Direct loop-nest cross-correlation with zero padding.
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b,
                           ops::ConvGeometry g) {
  const int ho = g.out_extent(x.h()), wo = g.out_extent(x.w());
  Tensor<double> out(Shape{x.n(), w.n(), ho, wo});
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < w.n(); ++o)
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx) {
          double acc = b[o];
          for (int c = 0; c < x.c(); ++c)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int iy = y * g.stride - g.pad + ky, ix = xx * g.stride - g.pad + kx;
                if (iy < 0 || ix < 0 || iy >= x.h() || ix >= x.w()) continue;
                acc += w.at(o, c, ky, kx) * x.at(n, c, iy, ix);
              }
          out.at(n, o, y, xx) = acc;
        }
  return out;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Mask random_mask(int h, int w, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  Mask m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.set(y, x, coin(rng));
  return m;
}

}  // namespace

TEST(Conv2d, MatchesLoopOracle) {
  std::mt19937_64 rng(1);
  for (ops::ConvGeometry g : {ops::ConvGeometry{3, 1, 1}, ops::ConvGeometry{4, 2, 1}, ops::ConvGeometry{1, 1, 0}}) {
    auto x = random_tensor<double>(Shape{2, 3, 8, 8}, rng);
    auto w = random_tensor<double>(Shape{5, 3, g.kernel, g.kernel}, rng);
    auto b = random_tensor<double>(Shape{5, 1, 1, 1}, rng);
    auto out = ops::conv2d(V::constant(x), V::constant(w), V::constant(b), g);
    EXPECT_LT(max_abs_diff(out.value(), conv_oracle(x, w, b, g)), 1e-12);
  }
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(2);
  for (ops::ConvGeometry g : {ops::ConvGeometry{3, 1, 1}, ops::ConvGeometry{4, 2, 1}}) {
    auto x = V::parameter(random_tensor<double>(Shape{2, 2, 6, 6}, rng));
    auto w = V::parameter(random_tensor<double>(Shape{3, 2, g.kernel, g.kernel}, rng));
    auto b = V::parameter(random_tensor<double>(Shape{3, 1, 1, 1}, rng));
    auto r = V::constant(random_tensor<double>(Shape{2, 3, g.out_extent(6), g.out_extent(6)}, rng));
    auto res = gradcheck([&] { return ops::sum(ops::elu(ops::add(ops::conv2d(x, w, b, g), r))); },
                         {{"x", x}, {"w", w}, {"b", b}});
    EXPECT_LT(res.worst_relative_error, 1e-6) << res.worst_leaf;
  }
}

TEST(Ops, ElementwiseGradients) {
  std::mt19937_64 rng(3);
  auto x = V::parameter(random_tensor<double>(Shape{2, 3, 4, 4}, rng));
  auto y = V::parameter(random_tensor<double>(Shape{2, 3, 4, 4}, rng));
  auto wts = V::constant(random_tensor<double>(Shape{2, 3, 4, 4}, rng));
  const std::vector<std::pair<const char*, std::function<V()>>> cases = {
      {"elu", [&] { return ops::mean(ops::elu(ops::add(x, wts))); }},
      {"leaky", [&] { return ops::mean(ops::leaky_relu(ops::add(x, wts), 0.2)); }},
      {"sigmoid", [&] { return ops::mean(ops::sigmoid(ops::add(x, wts))); }},
      {"tanh", [&] { return ops::mean(ops::tanh(ops::add(x, wts))); }},
      {"sub_scale", [&] { return ops::sum(ops::scale(ops::sub(x, y), 0.3)); }},
      {"mean_abs_diff", [&] { return ops::mean_abs_diff(x, y); }},
      {"sum_abs_diff", [&] { return ops::sum_abs_diff(x, y); }},
      {"affine", [&] { return ops::mean(ops::tanh(ops::affine_channels(x, {0.5, 2.0, -1.0}, {0.1, 0.0, 0.3}))); }},
  };
  for (const auto& [name, f] : cases) {
    auto res = gradcheck(f, {{"x", x}, {"y", y}}, 1e-5);
    EXPECT_LT(res.worst_relative_error, 1e-6) << name << " / " << res.worst_leaf;
  }
}

TEST(Ops, ResamplingAndConcatGradients) {
  std::mt19937_64 rng(4);
  auto x = V::parameter(random_tensor<double>(Shape{2, 2, 4, 6}, rng));
  auto z = V::parameter(random_tensor<double>(Shape{2, 3, 4, 6}, rng));
  auto up_w = V::constant(random_tensor<double>(Shape{2, 2, 8, 12}, rng));
  auto pool_w = V::constant(random_tensor<double>(Shape{2, 2, 2, 3}, rng));
  auto cat_w = V::constant(random_tensor<double>(Shape{2, 5, 4, 6}, rng));
  auto dot = [](const V& a, const V& w) { return ops::sum(ops::tanh(ops::add(a, w))); };
  EXPECT_LT(gradcheck([&] { return dot(ops::upsample_nearest(x, 2), up_w); }, {{"x", x}}).worst_relative_error, 1e-6);
  EXPECT_LT(gradcheck([&] { return dot(ops::avg_pool2(x), pool_w); }, {{"x", x}}).worst_relative_error, 1e-6);
  EXPECT_LT(gradcheck([&] { return dot(ops::max_pool2(x), pool_w); }, {{"x", x}}, 1e-6).worst_relative_error, 1e-6);
  EXPECT_LT(gradcheck([&] { return dot(ops::concat_channels(x, z), cat_w); }, {{"x", x}, {"z", z}})
                .worst_relative_error,
            1e-6);
}

TEST(Ops, SelectAndMaskRegionGradients) {
  std::mt19937_64 rng(5);
  auto a = V::parameter(random_tensor<double>(Shape{2, 3, 5, 5}, rng));
  auto b = V::parameter(random_tensor<double>(Shape{2, 3, 5, 5}, rng));
  auto w = V::constant(random_tensor<double>(Shape{2, 3, 5, 5}, rng));
  std::vector<Mask> masks{random_mask(5, 5, rng), random_mask(5, 5, rng)};
  auto f = [&] { return ops::sum(ops::tanh(ops::add(ops::select(masks, a, b), w))); };
  EXPECT_LT(gradcheck(f, {{"a", a}, {"b", b}}).worst_relative_error, 1e-6);
  for (auto keep : {ops::Keep::existing, ops::Keep::missing}) {
    auto g = [&] { return ops::sum(ops::tanh(ops::add(ops::mask_region(a, masks, keep), w))); };
    EXPECT_LT(gradcheck(g, {{"a", a}}).worst_relative_error, 1e-6);
  }
}

TEST(Ops, GramGradients) {
  std::mt19937_64 rng(6);
  auto f = V::parameter(random_tensor<double>(Shape{2, 3, 3, 4}, rng));
  auto wp = V::constant(random_tensor<double>(Shape{2, 1, 12, 12}, rng));
  auto wc = V::constant(random_tensor<double>(Shape{2, 1, 3, 3}, rng));
  EXPECT_LT(gradcheck([&] { return ops::sum(ops::tanh(ops::add(ops::gram_positions(f), wp))); }, {{"f", f}})
                .worst_relative_error,
            1e-6);
  EXPECT_LT(gradcheck([&] { return ops::sum(ops::tanh(ops::add(ops::gram_channels(f), wc))); }, {{"f", f}})
                .worst_relative_error,
            1e-6);
}

TEST(Ops, GramHandExamples) {
  // F = [[1,2],[3,4]] as c=2, n=2: a (1, 2, 1, 2) map.
  auto f = V::constant(Tensor<double>(Shape{1, 2, 1, 2}, {1, 2, 3, 4}));
  auto gp = ops::gram_positions(f).value();
  EXPECT_EQ(std::vector<double>(gp.values().begin(), gp.values().end()), (std::vector<double>{10, 14, 14, 20}));
  auto gc = ops::gram_channels(f).value();
  EXPECT_EQ(std::vector<double>(gc.values().begin(), gc.values().end()), (std::vector<double>{2.5, 5.5, 5.5, 12.5}));
}

TEST(Ops, SpectralNormalizeGradient) {
  std::mt19937_64 rng(7);
  auto w = V::parameter(random_tensor<double>(Shape{4, 2, 3, 3}, rng));
  auto r = V::constant(random_tensor<double>(Shape{4, 2, 3, 3}, rng));
  Buffer<double> u(4), v(18);
  std::normal_distribution<double> d;
  for (auto& e : u) e = d(rng);
  for (auto& e : v) e = d(rng);
  auto res = gradcheck([&] { return ops::sum(ops::tanh(ops::add(ops::spectral_normalize(w, u, v), r))); }, {{"w", w}},
                       1e-5);
  EXPECT_LT(res.worst_relative_error, 1e-6);
}

TEST(Autograd, NoGradGuardBuildsNoGraph) {
  auto x = V::parameter(Tensor<double>(Shape{1, 1, 2, 2}, 1.0));
  V y;
  {
    NoGradGuard guard;
    y = ops::sum(ops::scale(x, 2.0));
  }
  EXPECT_FALSE(y.requires_grad());
  auto z = ops::sum(ops::scale(x, 2.0));
  EXPECT_TRUE(z.requires_grad());
}

TEST(Autograd, SharedSubgraphAccumulates) {
  auto x = V::parameter(Tensor<double>(Shape{1, 1, 1, 1}, 3.0));
  auto y = ops::add(ops::scale(x, 2.0), ops::scale(x, 5.0));
  backward(ops::sum(y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Autograd, DetachCutsGraph) {
  auto x = V::parameter(Tensor<double>(Shape{1, 1, 1, 1}, 3.0));
  auto y = ops::add(ops::scale(x.detach(), 2.0), ops::scale(x, 5.0));
  backward(ops::sum(y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 5.0);
}
