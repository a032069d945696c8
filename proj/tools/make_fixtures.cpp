// Writes the synthetic fixture corpus: 16 small PNGs (gradients,
// checkerboards, blobs) from a fixed seed.
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cstdio>
#include <filesystem>
#include <random>
#include <string>

namespace {

cv::Mat gradient(int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 255);
  const cv::Vec3d a(u(rng), u(rng), u(rng)), b(u(rng), u(rng), u(rng));
  const double angle = std::uniform_real_distribution<double>(0, 6.283185307179586)(rng);
  cv::Mat m(size, size, CV_8UC3);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double t = 0.5 + 0.5 * ((x - size / 2.0) * std::cos(angle) + (y - size / 2.0) * std::sin(angle)) / size;
      for (int c = 0; c < 3; ++c) m.at<cv::Vec3b>(y, x)[c] = cv::saturate_cast<uchar>(a[c] * (1 - t) + b[c] * t);
    }
  return m;
}

cv::Mat checkerboard(int size, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> cell(4, 16), col(0, 255);
  const int k = cell(rng);
  const cv::Scalar a(col(rng), col(rng), col(rng)), b(col(rng), col(rng), col(rng));
  cv::Mat m(size, size, CV_8UC3);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) m.at<cv::Vec3b>(y, x) = ((x / k + y / k) % 2) ? cv::Vec3b(a[0], a[1], a[2]) : cv::Vec3b(b[0], b[1], b[2]);
  return m;
}

cv::Mat blobs(int size, std::mt19937_64& rng) {
  cv::Mat m = gradient(size, rng);
  std::uniform_int_distribution<int> pos(0, size - 1), rad(size / 10, size / 4), col(0, 255), count(3, 6);
  for (int i = count(rng); i > 0; --i) {
    cv::circle(m, {pos(rng), pos(rng)}, rad(rng), cv::Scalar(col(rng), col(rng), col(rng)), cv::FILLED, cv::LINE_AA);
  }
  cv::GaussianBlur(m, m, cv::Size(3, 3), 0.8);
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  const std::filesystem::path out = argc > 1 ? argv[1] : "tests/fixtures/corpus";
  const int size = argc > 2 ? std::stoi(argv[2]) : 64;
  const int count = argc > 3 ? std::stoi(argv[3]) : 16;
  std::filesystem::create_directories(out);
  std::mt19937_64 rng(20190501);
  for (int i = 0; i < count; ++i) {
    cv::Mat img;
    switch (i % 3) {
      case 0: img = gradient(size, rng); break;
      case 1: img = checkerboard(size, rng); break;
      default: img = blobs(size, rng); break;
    }
    char name[32];
    std::snprintf(name, sizeof name, "img_%02d.png", i);
    if (!cv::imwrite((out / name).string(), img)) {
      std::fprintf(stderr, "cannot write %s\n", (out / name).string().c_str());
      return 1;
    }
  }
  std::printf("wrote %d images to %s\n", count, out.string().c_str());
  return 0;
}
