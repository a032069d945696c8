#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "gradcheck.hpp"
#include "rwinpaint/features.hpp"

using namespace rwinpaint;
using rwinpaint::testing::random_tensor;

TEST(Features, Vgg16StageShapes) {
  auto fx = FeatureExtractor<float>::vgg16_random(1);
  std::mt19937_64 rng(1);
  auto img = Var<float>::constant(random_tensor<float>(Shape{1, 3, 64, 64}, rng));
  auto p = fx.extract(img, {Stage::pool1, Stage::pool2, Stage::pool3});
  EXPECT_EQ(p.at(Stage::pool1).shape(), (Shape{1, 64, 32, 32}));
  EXPECT_EQ(p.at(Stage::pool2).shape(), (Shape{1, 128, 16, 16}));
  EXPECT_EQ(p.at(Stage::pool3).shape(), (Shape{1, 256, 8, 8}));
}

TEST(Features, TinyStagesHalveForAnyDivisibleSize) {
  auto fx = FeatureExtractor<float>::tiny(3);
  for (int size : {8, 16, 24, 40}) {
    auto img = Var<float>::constant(Tensor<float>(Shape{2, 3, size, size}, 0.2f));
    auto p = fx.extract(img, {Stage::pool1, Stage::pool2, Stage::pool3});
    EXPECT_EQ(p.at(Stage::pool1).shape(), (Shape{2, 16, size / 2, size / 2}));
    EXPECT_EQ(p.at(Stage::pool2).shape(), (Shape{2, 32, size / 4, size / 4}));
    EXPECT_EQ(p.at(Stage::pool3).shape(), (Shape{2, 64, size / 8, size / 8}));
  }
}

TEST(Features, OnlyRequestedStagesReturned) {
  auto fx = FeatureExtractor<float>::tiny(3);
  auto p = fx.extract(Var<float>::constant(Tensor<float>(Shape{1, 3, 16, 16})), {Stage::pool2});
  EXPECT_FALSE(p.has(Stage::pool1));
  EXPECT_TRUE(p.has(Stage::pool2));
  EXPECT_FALSE(p.has(Stage::pool3));
  EXPECT_THROW(p.at(Stage::pool3), ConfigError);
}

TEST(Features, EqualInputsGiveBitIdenticalPyramids) {
  auto fx = FeatureExtractor<float>::tiny(4);
  std::mt19937_64 rng(2);
  auto t = random_tensor<float>(Shape{1, 3, 16, 16}, rng);
  auto a = fx.extract(Var<float>::constant(t), {Stage::pool1, Stage::pool2, Stage::pool3});
  auto b = fx.extract(Var<float>::constant(t), {Stage::pool1, Stage::pool2, Stage::pool3});
  for (Stage s : {Stage::pool1, Stage::pool2, Stage::pool3}) EXPECT_EQ(a.at(s).value(), b.at(s).value());
}

TEST(Features, GradientReachesImageButNeverBackbone) {
  auto fx = FeatureExtractor<double>::tiny(5);
  std::mt19937_64 rng(3);
  auto img = Var<double>::parameter(random_tensor<double>(Shape{1, 3, 16, 16}, rng));
  auto p = fx.extract(img, {Stage::pool3});
  backward(ops::mean(p.at(Stage::pool3)));
  ASSERT_TRUE(img.has_grad());
  for (const auto& w : fx.weights()) {
    EXPECT_FALSE(w.requires_grad());
    EXPECT_FALSE(w.has_grad());
  }
}

TEST(Features, UnknownStageNameRejected) {
  EXPECT_EQ(parse_stage("pool2"), Stage::pool2);
  EXPECT_THROW(parse_stage("pool4"), ConfigError);
}

TEST(Features, MissingWeightsFile) {
  EXPECT_THROW(FeatureExtractor<float>::vgg16_from_file("/nonexistent/vgg16.rwa"), IoError);
}

TEST(Features, WeightsArchiveRoundTrip) {
  // Export a random VGG stack in the archive layout, then load it back.
  auto ref = FeatureExtractor<float>::vgg16_random(9);
  Archive a;
  const int convs[3] = {2, 2, 3};
  const auto ws = ref.weights();
  std::size_t k = 0;
  for (int s = 0; s < 3; ++s)
    for (int l = 0; l < convs[s]; ++l, k += 2) {
      const std::string key = "vgg16/conv" + std::to_string(s + 1) + "_" + std::to_string(l + 1) + "/";
      a.put(key + "w", ws[k].value());
      Tensor<float> b = ws[k + 1].value();
      a.put(key + "b", Tensor<float>(Shape{1, 1, 1, static_cast<int>(b.size())}, b.storage()));
    }
  const auto path = std::filesystem::temp_directory_path() / "rwinpaint_vgg_roundtrip.rwa";
  a.save(path);
  auto loaded = FeatureExtractor<float>::vgg16_from_file(path);
  std::filesystem::remove(path);
  std::mt19937_64 rng(4);
  auto img = Var<float>::constant(random_tensor<float>(Shape{1, 3, 16, 16}, rng));
  EXPECT_EQ(ref.extract(img, {Stage::pool3}).at(Stage::pool3).value(),
            loaded.extract(img, {Stage::pool3}).at(Stage::pool3).value());
}

TEST(ReshapeToMatrix, Examples) {
  Tensor<double> col(Shape{1, 2, 1, 1}, {3.0, -1.0});
  auto m = reshape_to_matrix(col);
  ASSERT_EQ(m.rows(), 2);
  ASSERT_EQ(m.cols(), 1);
  EXPECT_EQ(m(0, 0), 3.0);
  EXPECT_EQ(m(1, 0), -1.0);

  Tensor<double> sq(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  auto r = reshape_to_matrix(sq);
  ASSERT_EQ(r.rows(), 1);
  ASSERT_EQ(r.cols(), 4);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(r(0, i), i + 1.0);
}

TEST(ReshapeToMatrix, RoundTripAndColumnSemantics) {
  std::mt19937_64 rng(5);
  auto t = random_tensor<double>(Shape{1, 5, 3, 4}, rng);
  auto m = reshape_to_matrix(t);
  for (int c = 0; c < 5; ++c)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 4; ++x) EXPECT_EQ(m(c, y * 4 + x), t.at(0, c, y, x));
  EXPECT_EQ(unreshape_from_matrix(m, 3, 4), t);
}
