#pragma once

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "rwinpaint/errors.hpp"
#include "rwinpaint/mask.hpp"
#include "rwinpaint/tensor.hpp"

namespace rwinpaint {

// Internal range is [-1, 1]; the metric domain is [0, 1].
template <typename T>
T to_metric(T v) {
  return (v + T(1)) / T(2);
}
template <typename T>
T from_metric(T v) {
  return v * T(2) - T(1);
}

template <typename T>
Tensor<T> to_metric(const Tensor<T>& t) {
  Tensor<T> out(t.shape());
  std::transform(t.values().begin(), t.values().end(), out.values().begin(), [](T v) { return to_metric(v); });
  return out;
}

template <typename T>
Tensor<T> from_metric(const Tensor<T>& t) {
  Tensor<T> out(t.shape());
  std::transform(t.values().begin(), t.values().end(), out.values().begin(), [](T v) { return from_metric(v); });
  return out;
}

inline void to_8bit(cv::Mat& m) {
  if (m.depth() == CV_8U) return;
  const double scale = m.depth() == CV_16U ? 1.0 / 257.0 : (m.depth() == CV_32F || m.depth() == CV_64F ? 255.0 : 1.0);
  m.convertTo(m, CV_8U, scale);
}

// 8-bit RGB/gray matrix -> (1, 3, h, w) tensor in the internal range.
template <typename T = float>
Tensor<T> mat_to_tensor(const cv::Mat& src) {
  cv::Mat rgb;
  if (src.channels() == 1) {
    cv::cvtColor(src, rgb, cv::COLOR_GRAY2RGB);
  } else if (src.channels() == 4) {
    cv::cvtColor(src, rgb, cv::COLOR_BGRA2RGB);
  } else {
    cv::cvtColor(src, rgb, cv::COLOR_BGR2RGB);
  }
  to_8bit(rgb);
  Tensor<T> out(Shape{1, 3, rgb.rows, rgb.cols});
  for (int y = 0; y < rgb.rows; ++y) {
    const auto* row = rgb.ptr<cv::Vec3b>(y);
    for (int x = 0; x < rgb.cols; ++x)
      for (int c = 0; c < 3; ++c) out.at(0, c, y, x) = from_metric(static_cast<T>(row[x][c]) / T(255));
  }
  return out;
}

inline std::uint8_t quantize(double internal) {
  const double v = std::round(to_metric(internal) * 255.0);
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

// Sample n of a 3-channel tensor -> 8-bit BGR matrix for OpenCV.
template <typename T>
cv::Mat tensor_to_mat(const Tensor<T>& t, int n = 0) {
  if (t.c() != 3) throw ShapeMismatchError("tensor_to_mat expects 3 channels, got " + t.shape().str());
  cv::Mat out(t.h(), t.w(), CV_8UC3);
  for (int y = 0; y < t.h(); ++y) {
    auto* row = out.ptr<cv::Vec3b>(y);
    for (int x = 0; x < t.w(); ++x)
      for (int c = 0; c < 3; ++c) row[x][2 - c] = quantize(static_cast<double>(t.at(n, c, y, x)));
  }
  return out;
}

// Bilinear resize of a (1, 3, h, w) tensor in float precision.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& t, int h, int w) {
  if (t.h() == h && t.w() == w) return t;
  Tensor<T> out(Shape{t.n(), t.c(), h, w});
  for (int n = 0; n < t.n(); ++n) {
    for (int c = 0; c < t.c(); ++c) {
      cv::Mat plane(t.h(), t.w(), CV_32F);
      for (int y = 0; y < t.h(); ++y)
        for (int x = 0; x < t.w(); ++x) plane.at<float>(y, x) = static_cast<float>(t.at(n, c, y, x));
      cv::Mat scaled;
      cv::resize(plane, scaled, cv::Size(w, h), 0, 0, cv::INTER_LINEAR);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(n, c, y, x) = static_cast<T>(scaled.at<float>(y, x));
    }
  }
  return out;
}

inline cv::Mat decode_raster(const std::vector<unsigned char>& bytes, int flags, const std::string& what) {
  if (bytes.empty()) throw IoError(what + ": empty payload");
  cv::Mat m;
  try {
    m = cv::imdecode(bytes, flags);
  } catch (const cv::Exception&) {
    m = cv::Mat();
  }
  if (m.empty()) throw IoError(what + ": undecodable image payload");
  return m;
}

inline std::vector<unsigned char> encode_png(const cv::Mat& m) {
  std::vector<unsigned char> out;
  if (!cv::imencode(".png", m, out)) throw IoError("PNG encoding failed");
  return out;
}

inline cv::Mat read_raster(const std::filesystem::path& path, int flags) {
  if (!std::filesystem::exists(path)) throw IoError("cannot read image '" + path.string() + "': no such file");
  cv::Mat m;
  try {
    m = cv::imread(path.string(), flags);
  } catch (const cv::Exception&) {
    m = cv::Mat();
  }
  if (m.empty()) throw IoError("cannot decode image '" + path.string() + "'");
  return m;
}

inline void write_raster(const std::filesystem::path& path, const cv::Mat& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), m);
  } catch (const cv::Exception&) {
    ok = false;
  }
  if (!ok) throw IoError("cannot write image '" + path.string() + "'");
}

// 3-channel image at its native size, internal range.
template <typename T = float>
Tensor<T> read_image(const std::filesystem::path& path) {
  return mat_to_tensor<T>(read_raster(path, cv::IMREAD_UNCHANGED));
}

// 3-channel, bilinear-resized to size x size, internal range.
template <typename T = float>
Tensor<T> load_and_normalize(const std::filesystem::path& path, int size) {
  return resize_bilinear(read_image<T>(path), size, size);
}

template <typename T>
void write_image(const std::filesystem::path& path, const Tensor<T>& t, int n = 0) {
  write_raster(path, tensor_to_mat(t, n));
}

// Grayscale mask raster: >= 128 reads as existing.
inline Mask mat_to_mask(const cv::Mat& src) {
  cv::Mat gray;
  if (src.channels() == 1) {
    gray = src.clone();
  } else if (src.channels() == 4) {
    cv::cvtColor(src, gray, cv::COLOR_BGRA2GRAY);
  } else {
    cv::cvtColor(src, gray, cv::COLOR_BGR2GRAY);
  }
  to_8bit(gray);
  Mask m(gray.rows, gray.cols);
  for (int y = 0; y < gray.rows; ++y) {
    const auto* row = gray.ptr<std::uint8_t>(y);
    for (int x = 0; x < gray.cols; ++x) m.set(y, x, row[x] >= 128);
  }
  return m;
}

inline cv::Mat mask_to_mat(const Mask& m) {
  cv::Mat out(m.height(), m.width(), CV_8UC1);
  for (int y = 0; y < m.height(); ++y) {
    auto* row = out.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.width(); ++x) row[x] = m.at(y, x) ? 255 : 0;
  }
  return out;
}

inline Mask read_mask(const std::filesystem::path& path) { return mat_to_mask(read_raster(path, cv::IMREAD_UNCHANGED)); }

inline void write_mask(const std::filesystem::path& path, const Mask& m) { write_raster(path, mask_to_mat(m)); }

// Nearest-neighbour mask resize; keeps the mask binary.
inline Mask resize_mask(const Mask& m, int h, int w) {
  if (m.height() == h && m.width() == w) return m;
  cv::Mat scaled;
  cv::resize(mask_to_mat(m), scaled, cv::Size(w, h), 0, 0, cv::INTER_NEAREST);
  return mat_to_mask(scaled);
}

}  // namespace rwinpaint
