#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rwinpaint/errors.hpp"
#include "rwinpaint/tensor.hpp"

namespace rwinpaint {

// Binary validity grid: 1 = existing pixel, 0 = missing pixel.
class Mask {
 public:
  Mask() = default;
  Mask(int height, int width, std::uint8_t fill = 1)
      : height_(height), width_(width), cells_(static_cast<std::size_t>(height) * width, fill ? 1 : 0) {
    if (height < 0 || width < 0) throw DimensionError("negative mask dimensions");
  }

  static Mask ones(int h, int w) { return Mask(h, w, 1); }
  static Mask zeros(int h, int w) { return Mask(h, w, 0); }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return cells_.size(); }

  std::uint8_t at(int y, int x) const { return cells_[static_cast<std::size_t>(y) * width_ + x]; }
  void set(int y, int x, bool existing) {
    cells_[static_cast<std::size_t>(y) * width_ + x] = existing ? 1 : 0;
  }
  std::uint8_t operator[](std::size_t i) const { return cells_[i]; }

  std::span<const std::uint8_t> cells() const { return cells_; }

  std::size_t missing_count() const {
    return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{0}));
  }

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> cells_;
};

// Level 0 is the input resolution; each further level is coarser.
struct MaskPyramid {
  std::vector<Mask> levels;

  std::size_t size() const { return levels.size(); }
  const Mask& operator[](std::size_t i) const { return levels[i]; }
};

enum class MaskKind { contiguous, discontiguous };

inline std::string to_string(MaskKind k) {
  return k == MaskKind::contiguous ? "contiguous" : "discontiguous";
}

inline MaskKind parse_mask_kind(const std::string& s) {
  if (s == "contiguous") return MaskKind::contiguous;
  if (s == "discontiguous") return MaskKind::discontiguous;
  throw ConfigError("unknown mask kind '" + s + "' (expected contiguous|discontiguous)");
}

// Brush geometry is relative to the shorter image side so one config
// serves every resolution.
struct StrokeParams {
  int min_strokes = 2;  // discontiguous only
  int max_strokes = 6;
  double min_width = 0.04;
  double max_width = 0.12;
  int min_vertices = 1;
  int max_vertices = 600;
  double min_segment = 0.05;
  double max_segment = 0.25;
};

struct MaskConfig {
  MaskKind kind = MaskKind::contiguous;
  double ratio_lo = 0.0;
  double ratio_hi = 0.4;
  StrokeParams stroke;
  std::uint64_t rng_seed = 0;
};

inline constexpr double kMaxMaskRatio = 0.6;
inline constexpr int kMaskRetryBudget = 100;

inline double mask_ratio(const Mask& m) {
  if (m.size() == 0) return 0.0;
  return static_cast<double>(m.missing_count()) / static_cast<double>(m.size());
}

// Number of 4-connected components among missing cells.
inline int count_missing_components(const Mask& m) {
  const int h = m.height(), w = m.width();
  std::vector<std::uint8_t> seen(m.size(), 0);
  std::vector<int> stack;
  int components = 0;
  for (int start = 0; start < h * w; ++start) {
    if (m[start] != 0 || seen[start]) continue;
    ++components;
    seen[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const int idx = stack.back();
      stack.pop_back();
      const int y = idx / w, x = idx % w;
      const int nbr[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& p : nbr) {
        if (p[0] < 0 || p[0] >= h || p[1] < 0 || p[1] >= w) continue;
        const int j = p[0] * w + p[1];
        if (m[j] == 0 && !seen[j]) {
          seen[j] = 1;
          stack.push_back(j);
        }
      }
    }
  }
  return components;
}

namespace detail {

// Disk offsets ordered by distance from the center. Every offset has a
// 4-neighbour strictly closer to the center, so any prefix of this list
// stamped onto a connected set stays 4-connected.
inline std::vector<std::pair<int, int>> disk_offsets(double radius) {
  const int r = static_cast<int>(std::ceil(radius));
  std::vector<std::pair<int, int>> out;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (dy * dy + dx * dx <= radius * radius) out.emplace_back(dy, dx);
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.first * a.first + a.second * a.second < b.first * b.first + b.second * b.second;
  });
  return out;
}

class StrokeCanvas {
 public:
  StrokeCanvas(int h, int w) : mask_(h, w, 1) {}

  // Stamps pixels of the disk in distance order until `budget` new
  // missing pixels were added. Returns the number added.
  std::size_t stamp(double cy, double cx, double radius, std::size_t budget) {
    const int y0 = static_cast<int>(std::lround(cy));
    const int x0 = static_cast<int>(std::lround(cx));
    std::size_t added = 0;
    for (const auto& [dy, dx] : offsets(radius)) {
      if (added >= budget) break;
      const int y = y0 + dy, x = x0 + dx;
      if (y < 0 || y >= mask_.height() || x < 0 || x >= mask_.width()) continue;
      if (mask_.at(y, x) == 1) {
        mask_.set(y, x, false);
        ++added;
      }
    }
    missing_ += added;
    return added;
  }

  std::size_t missing() const { return missing_; }
  Mask take() { return std::move(mask_); }

 private:
  const std::vector<std::pair<int, int>>& offsets(double radius) {
    const int key = static_cast<int>(std::lround(radius * 4.0));
    for (auto& [k, v] : cache_) {
      if (k == key) return v;
    }
    cache_.emplace_back(key, disk_offsets(key / 4.0));
    return cache_.back().second;
  }

  Mask mask_;
  std::size_t missing_ = 0;
  std::vector<std::pair<int, std::vector<std::pair<int, int>>>> cache_;
};

inline void validate_ratio_range(double lo, double hi) {
  if (!(lo >= 0.0) || !(hi <= kMaxMaskRatio) || lo > hi) {
    throw GenerationError("mask ratio range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                          "] outside 0 <= lo <= hi <= 0.6");
  }
}

// Draws a missing-pixel count whose ratio lies inside [lo, hi].
inline std::size_t sample_target_count(int h, int w, double lo, double hi, std::mt19937_64& rng) {
  const double total = static_cast<double>(h) * w;
  const auto min_count = static_cast<long long>(std::ceil(lo * total - 1e-9));
  const auto max_count = static_cast<long long>(std::floor(hi * total + 1e-9));
  if (max_count < min_count) {
    throw GenerationError("no integer pixel count satisfies the requested ratio range for " +
                          std::to_string(h) + "x" + std::to_string(w));
  }
  std::uniform_int_distribution<long long> dist(min_count, max_count);
  return static_cast<std::size_t>(dist(rng));
}

// Walks a polyline of thick segments from (y, x), stamping disks every
// half pixel. Stops once `budget` missing pixels were added or the vertex
// allowance runs out. Returns the pixels added.
inline std::size_t brush_walk(StrokeCanvas& canvas, double y, double x, int vertices, std::size_t budget,
                              int h, int w, const StrokeParams& sp, std::mt19937_64& rng) {
  const double side = std::min(h, w);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto lerp = [&](double a, double b) { return a + (b - a) * unit(rng); };
  double angle = lerp(0.0, 2.0 * std::numbers::pi);
  std::size_t added = 0;
  for (int v = 0; v < vertices && added < budget; ++v) {
    angle += lerp(-std::numbers::pi / 2.0, std::numbers::pi / 2.0);
    const double length = lerp(sp.min_segment, sp.max_segment) * side;
    const double radius = std::max(1.0, 0.5 * lerp(sp.min_width, sp.max_width) * side);
    double ty = y + length * std::sin(angle);
    double tx = x + length * std::cos(angle);
    if (ty < 0 || ty > h - 1) angle = -angle;
    if (tx < 0 || tx > w - 1) angle = std::numbers::pi - angle;
    ty = std::clamp(ty, 0.0, h - 1.0);
    tx = std::clamp(tx, 0.0, w - 1.0);
    const double dist = std::hypot(ty - y, tx - x);
    const int steps = std::max(1, static_cast<int>(std::ceil(dist / 0.5)));
    for (int s = (v == 0 ? 0 : 1); s <= steps && added < budget; ++s) {
      const double t = static_cast<double>(s) / steps;
      added += canvas.stamp(y + (ty - y) * t, x + (tx - x) * t, radius, budget - added);
    }
    y = ty;
    x = tx;
  }
  return added;
}

}  // namespace detail

// One random walk of thick brush strokes whose missing pixels form a single
// 4-connected blob.
inline Mask gen_contiguous_mask(int h, int w, const MaskConfig& cfg, std::mt19937_64& rng) {
  if (cfg.kind != MaskKind::contiguous) throw GenerationError("gen_contiguous_mask: config kind is not contiguous");
  if (h <= 0 || w <= 0) throw DimensionError("mask dimensions must be positive");
  detail::validate_ratio_range(cfg.ratio_lo, cfg.ratio_hi);
  for (int attempt = 0; attempt < kMaskRetryBudget; ++attempt) {
    const std::size_t target = detail::sample_target_count(h, w, cfg.ratio_lo, cfg.ratio_hi, rng);
    if (target == 0) return Mask::ones(h, w);
    detail::StrokeCanvas canvas(h, w);
    std::uniform_real_distribution<double> uy(0.0, h - 1.0), ux(0.0, w - 1.0);
    const double y = uy(rng), x = ux(rng);
    detail::brush_walk(canvas, y, x, cfg.stroke.max_vertices, target, h, w, cfg.stroke, rng);
    if (canvas.missing() != target) continue;
    Mask m = canvas.take();
    if (count_missing_components(m) == 1) return m;
  }
  throw GenerationError("contiguous mask generation failed after " + std::to_string(kMaskRetryBudget) +
                        " attempts");
}

// Several independent short strokes; retried until at least two separate
// missing components exist.
inline Mask gen_discontiguous_mask(int h, int w, const MaskConfig& cfg, std::mt19937_64& rng) {
  if (cfg.kind != MaskKind::discontiguous) {
    throw GenerationError("gen_discontiguous_mask: config kind is not discontiguous");
  }
  if (h <= 0 || w <= 0) throw DimensionError("mask dimensions must be positive");
  detail::validate_ratio_range(cfg.ratio_lo, cfg.ratio_hi);
  const auto& sp = cfg.stroke;
  const int max_short = std::max(sp.min_vertices, std::min(4, sp.max_vertices));
  for (int attempt = 0; attempt < kMaskRetryBudget; ++attempt) {
    const std::size_t target = detail::sample_target_count(h, w, cfg.ratio_lo, cfg.ratio_hi, rng);
    if (target == 0) return Mask::ones(h, w);
    std::uniform_int_distribution<int> ks(std::max(2, sp.min_strokes), std::max(2, sp.max_strokes));
    const int planned = ks(rng);
    const std::size_t budget = (target + planned - 1) / planned;
    detail::StrokeCanvas canvas(h, w);
    std::uniform_real_distribution<double> uy(0.0, h - 1.0), ux(0.0, w - 1.0);
    std::uniform_int_distribution<int> nv(sp.min_vertices, max_short);
    // Thinner brush than the contiguous walk keeps the pieces apart.
    StrokeParams thin = sp;
    thin.max_width = std::max(sp.min_width, 0.5 * (sp.min_width + sp.max_width));
    for (int stroke = 0; stroke < 50 * planned && canvas.missing() < target; ++stroke) {
      const std::size_t left = target - canvas.missing();
      const double y = uy(rng), x = ux(rng);
      detail::brush_walk(canvas, y, x, nv(rng), std::min(budget, left), h, w, thin, rng);
    }
    if (canvas.missing() != target) continue;
    Mask m = canvas.take();
    if (count_missing_components(m) >= 2) return m;
  }
  throw GenerationError("discontiguous mask generation failed after " + std::to_string(kMaskRetryBudget) +
                        " attempts");
}

inline Mask gen_mask(int h, int w, const MaskConfig& cfg, std::mt19937_64& rng) {
  return cfg.kind == MaskKind::contiguous ? gen_contiguous_mask(h, w, cfg, rng)
                                          : gen_discontiguous_mask(h, w, cfg, rng);
}

// A coarse cell is missing iff at least half of the fine cells it covers
// are missing.
inline Mask downsample_mask(const Mask& m, int factor) {
  if (factor < 1) throw DimensionError("downsample factor must be >= 1");
  if (m.height() % factor != 0 || m.width() % factor != 0) {
    throw DimensionError("mask " + std::to_string(m.height()) + "x" + std::to_string(m.width()) +
                         " not divisible by factor " + std::to_string(factor));
  }
  if (factor == 1) return m;
  const int ch = m.height() / factor, cw = m.width() / factor;
  Mask out(ch, cw, 1);
  const int area = factor * factor;
  for (int y = 0; y < ch; ++y) {
    for (int x = 0; x < cw; ++x) {
      int missing = 0;
      for (int dy = 0; dy < factor; ++dy) {
        for (int dx = 0; dx < factor; ++dx) missing += m.at(y * factor + dy, x * factor + dx) == 0;
      }
      out.set(y, x, 2 * missing < area);
    }
  }
  return out;
}

inline MaskPyramid build_pyramid(const Mask& m, int num_levels, int per_level_factor) {
  if (num_levels < 1) throw DimensionError("pyramid needs at least one level");
  MaskPyramid p;
  p.levels.push_back(m);
  for (int k = 1; k < num_levels; ++k) p.levels.push_back(downsample_mask(p.levels.back(), per_level_factor));
  return p;
}

// Per-sample masks for a batch; a single mask broadcasts to every sample.
inline const Mask& mask_for_sample(std::span<const Mask> masks, int n) {
  return masks.size() == 1 ? masks[0] : masks[static_cast<std::size_t>(n)];
}

template <typename T>
void check_mask_batch(const Tensor<T>& img, std::span<const Mask> masks, const char* what) {
  if (masks.empty() || (masks.size() != 1 && masks.size() != static_cast<std::size_t>(img.n()))) {
    throw DimensionError(std::string(what) + ": expected 1 or " + std::to_string(img.n()) + " masks, got " +
                         std::to_string(masks.size()));
  }
  for (const auto& m : masks) {
    if (m.height() != img.h() || m.width() != img.w()) {
      throw DimensionError(std::string(what) + ": mask " + std::to_string(m.height()) + "x" +
                           std::to_string(m.width()) + " vs image " + std::to_string(img.h()) + "x" +
                           std::to_string(img.w()));
    }
  }
}

// I ⊙ M: missing pixels become 0 in every channel.
template <typename T>
Tensor<T> apply_mask(const Tensor<T>& img, std::span<const Mask> masks) {
  check_mask_batch(img, masks, "apply_mask");
  Tensor<T> out = img;
  const std::size_t plane = img.shape().plane();
  for (int n = 0; n < img.n(); ++n) {
    const Mask& m = mask_for_sample(masks, n);
    T* s = out.sample(n);
    for (int c = 0; c < img.c(); ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        if (m[i] == 0) s[c * plane + i] = T(0);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> apply_mask(const Tensor<T>& img, const Mask& m) {
  return apply_mask(img, std::span<const Mask>(&m, 1));
}

// Existing pixels from `incomplete`, missing pixels from `predicted`.
template <typename T>
Tensor<T> composite(const Tensor<T>& incomplete, const Tensor<T>& predicted, std::span<const Mask> masks) {
  require_same_shape(incomplete.shape(), predicted.shape(), "composite");
  check_mask_batch(incomplete, masks, "composite");
  Tensor<T> out(incomplete.shape());
  const std::size_t plane = incomplete.shape().plane();
  for (int n = 0; n < incomplete.n(); ++n) {
    const Mask& m = mask_for_sample(masks, n);
    const T* a = incomplete.sample(n);
    const T* b = predicted.sample(n);
    T* o = out.sample(n);
    for (int c = 0; c < incomplete.c(); ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t j = c * plane + i;
        o[j] = m[i] ? a[j] : b[j];
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> composite(const Tensor<T>& incomplete, const Tensor<T>& predicted, const Mask& m) {
  return composite(incomplete, predicted, std::span<const Mask>(&m, 1));
}

}  // namespace rwinpaint
