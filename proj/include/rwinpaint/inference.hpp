#pragma once

#include <filesystem>
#include <string>

#include "rwinpaint/image_io.hpp"
#include "rwinpaint/training.hpp"

namespace rwinpaint {

// Native-resolution inpainting: resize to the model's size, predict, resize
// the second-stage prediction back and composite against the untouched
// native pixels. Returns I_c2 as an 8-bit BGR image.
inline cv::Mat inpaint_native(const InferenceModel& model, const cv::Mat& image, const Mask& mask) {
  if (mask.height() != image.rows || mask.width() != image.cols) {
    throw DimensionError("mask " + std::to_string(mask.width()) + "x" + std::to_string(mask.height()) +
                         " does not match image " + std::to_string(image.cols) + "x" + std::to_string(image.rows));
  }
  const Tensor<float> native = mat_to_tensor<float>(image);
  const int s = model.image_size;
  const Tensor<float> small = resize_bilinear(native, s, s);
  const Mask small_mask = resize_mask(mask, s, s);
  Tensor<float> predicted;
  {
    NoGradGuard frozen;
    const Mask masks[] = {small_mask};
    const auto out = model.generator.forward(Var<float>::constant(apply_mask(small, small_mask)), masks);
    predicted = out.predicted2.value();
  }
  const Tensor<float> back = resize_bilinear(predicted, image.rows, image.cols);
  return tensor_to_mat(composite(apply_mask(native, mask), back, mask));
}

inline void inpaint_file(const InferenceModel& model, const std::filesystem::path& image_path,
                         const std::filesystem::path& mask_path, const std::filesystem::path& out_path) {
  const cv::Mat image = read_raster(image_path, cv::IMREAD_UNCHANGED);
  const Mask mask = read_mask(mask_path);
  write_raster(out_path, inpaint_native(model, image, mask));
}

}  // namespace rwinpaint
