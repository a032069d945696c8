#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "rwinpaint/features.hpp"
#include "rwinpaint/image_io.hpp"
#include "rwinpaint/mask.hpp"
#include "rwinpaint/tensor.hpp"

namespace rwinpaint {

// All metrics take metric-domain ([0, 1]) tensors.

template <typename T>
double l1_error(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "l1_error");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  return s / static_cast<double>(a.size());
}

template <typename T>
double l2_error(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "l2_error");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

inline constexpr double kPsnrCap = 100.0;

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
  const double mse = l2_error(a, b);
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double range = 1.0;
};

namespace detail {

inline std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double sum = 0;
  for (int i = 0; i < size; ++i) sum += k[i] = std::exp(-((i - c) * (i - c)) / (2 * sigma * sigma));
  for (auto& v : k) v /= sum;
  return k;
}

// Valid-mode separable filtering of an h x w plane.
inline std::vector<double> filter_valid(const std::vector<double>& img, int h, int w, const std::vector<double>& k) {
  const int s = static_cast<int>(k.size());
  const int wo = w - s + 1, ho = h - s + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * wo), out(static_cast<std::size_t>(ho) * wo);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < wo; ++x) {
      double acc = 0;
      for (int i = 0; i < s; ++i) acc += k[i] * img[y * w + x + i];
      tmp[y * wo + x] = acc;
    }
  for (int y = 0; y < ho; ++y)
    for (int x = 0; x < wo; ++x) {
      double acc = 0;
      for (int i = 0; i < s; ++i) acc += k[i] * tmp[(y + i) * wo + x];
      out[y * wo + x] = acc;
    }
  return out;
}

}  // namespace detail

// Mean local SSIM over valid window positions, averaged over channels and samples.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimParams& p = {}) {
  require_same_shape(a.shape(), b.shape(), "ssim");
  const int h = a.h(), w = a.w();
  if (h < p.window || w < p.window) {
    throw DimensionError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " smaller than the " +
                         std::to_string(p.window) + "x" + std::to_string(p.window) + " window");
  }
  const auto k = detail::gaussian_kernel(p.window, p.sigma);
  const double c1 = (p.k1 * p.range) * (p.k1 * p.range), c2 = (p.k2 * p.range) * (p.k2 * p.range);
  const std::size_t plane = a.shape().plane();
  double total = 0;
  for (int n = 0; n < a.n(); ++n) {
    for (int c = 0; c < a.c(); ++c) {
      std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
      const T* pa = a.sample(n) + c * plane;
      const T* pb = b.sample(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        x[i] = pa[i];
        y[i] = pb[i];
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
      }
      const auto mx = detail::filter_valid(x, h, w, k), my = detail::filter_valid(y, h, w, k);
      const auto sxx = detail::filter_valid(xx, h, w, k), syy = detail::filter_valid(yy, h, w, k);
      const auto sxy = detail::filter_valid(xy, h, w, k);
      double acc = 0;
      for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
        acc += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
      }
      total += acc / static_cast<double>(mx.size());
    }
  }
  return total / (static_cast<double>(a.n()) * a.c());
}

// ---- FID --------------------------------------------------------------------

struct FidDiagnostics {
  bool clamped = false;  // negative eigenvalues were clamped to 0
};

namespace detail {

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, FidDiagnostics* diag) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < 0) {
      if (diag && ev(i) < -1e-9 * std::max(1.0, ev.cwiseAbs().maxCoeff())) diag->clamped = true;
      ev(i) = 0;
    }
  }
  return es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

inline double trace_sqrt_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, FidDiagnostics* diag) {
  const Eigen::MatrixXd ra = psd_sqrt(a, diag);
  const Eigen::MatrixXd inner = ra * b * ra;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const Eigen::VectorXd ev = es.eigenvalues();
  const double tol = 1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  double tr = 0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -tol && diag) diag->clamped = true;
    if (ev(i) > tol) tr += std::sqrt(ev(i));
  }
  return tr;
}

}  // namespace detail

// Rows are samples. ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)),
// evaluated in both argument orders and averaged so it is exactly symmetric.
inline double fid(const Eigen::MatrixXd& fa, const Eigen::MatrixXd& fb, FidDiagnostics* diag = nullptr) {
  if (fa.rows() < 2 || fb.rows() < 2) throw DimensionError("fid needs at least 2 samples per set");
  if (fa.cols() != fb.cols()) {
    throw ShapeMismatchError("fid: embedding dims " + std::to_string(fa.cols()) + " vs " + std::to_string(fb.cols()));
  }
  auto stats = [](const Eigen::MatrixXd& f) {
    Eigen::RowVectorXd mu = f.colwise().mean();
    Eigen::MatrixXd centred = f.rowwise() - mu;
    Eigen::MatrixXd cov = (centred.transpose() * centred) / static_cast<double>(f.rows() - 1);
    return std::make_pair(mu, cov);
  };
  const auto [ma, sa] = stats(fa);
  const auto [mb, sb] = stats(fb);
  const double mean_term = (ma - mb).squaredNorm();
  const double tr = sa.trace() + sb.trace();
  const double cross = 0.5 * (detail::trace_sqrt_product(sa, sb, diag) + detail::trace_sqrt_product(sb, sa, diag));
  return std::max(0.0, mean_term + tr - 2.0 * cross);
}

// Pooled embedding from a frozen extractor: spatial mean of the deepest stage.
inline Eigen::VectorXd embed(const FeatureExtractor<float>& fx, const Tensor<float>& internal_img) {
  NoGradGuard frozen;
  const auto f = fx.extract(Var<float>::constant(internal_img), {Stage::pool3}).at(Stage::pool3).value();
  Eigen::VectorXd v = Eigen::VectorXd::Zero(f.c());
  const std::size_t plane = f.shape().plane();
  for (int c = 0; c < f.c(); ++c) {
    double s = 0;
    for (std::size_t i = 0; i < plane; ++i) s += f.sample(0)[c * plane + i];
    v(c) = s / static_cast<double>(plane);
  }
  return v;
}

// ---- corpus evaluation --------------------------------------------------------

inline constexpr std::array<const char*, 5> kBucketLabels{"0-10%", "10-20%", "20-30%", "30-40%", "40-50%"};

// [0,10) [10,20) [20,30) [30,40) [40,50]; -1 outside the protocol range.
inline int bucket_of(double ratio) {
  if (ratio < 0 || ratio > 0.5) return -1;
  return std::min(4, static_cast<int>(std::floor(ratio * 10.0 + 1e-12)));
}

struct BucketRow {
  std::string label;
  std::size_t count = 0;
  double l1 = 0, l2 = 0, psnr = 0, ssim = 0, fid = 0;
  bool has_fid = false;
};

struct MetricsReport {
  std::array<BucketRow, 5> rows;
  std::size_t out_of_range = 0;  // pairs whose mask ratio exceeds 50%

  static constexpr const char* kCsvHeader = "bucket,l1_e3,l2_e3,psnr_db,ssim,fid,count";

  std::string to_csv() const {
    std::ostringstream o;
    o << kCsvHeader << "\n";
    char buf[256];
    for (const auto& r : rows) {
      if (r.count == 0) {
        o << r.label << ",n/a,n/a,n/a,n/a,n/a,0\n";
        continue;
      }
      std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f,", r.label.c_str(), r.l1 * 1e3, r.l2 * 1e3, r.psnr,
                    r.ssim);
      o << buf;
      if (r.has_fid) {
        std::snprintf(buf, sizeof buf, "%.6f", r.fid);
        o << buf;
      } else {
        o << "n/a";
      }
      o << "," << r.count << "\n";
    }
    return o.str();
  }

  std::string to_table() const {
    std::ostringstream o;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-8s %10s %10s %10s %8s %10s %6s\n", "bucket", "l1(e-3)", "l2(e-3)", "PSNR(dB)",
                  "SSIM", "FID", "n");
    o << buf;
    for (const auto& r : rows) {
      if (r.count == 0) {
        std::snprintf(buf, sizeof buf, "%-8s %10s %10s %10s %8s %10s %6d\n", r.label.c_str(), "n/a", "n/a", "n/a",
                      "n/a", "n/a", 0);
      } else {
        std::string f = r.has_fid ? std::to_string(r.fid) : "n/a";
        std::snprintf(buf, sizeof buf, "%-8s %10.4f %10.4f %10.4f %8.4f %10s %6zu\n", r.label.c_str(), r.l1 * 1e3,
                      r.l2 * 1e3, r.psnr, r.ssim, f.c_str(), r.count);
      }
      o << buf;
    }
    if (out_of_range) o << "(" << out_of_range << " pairs above 50% missing were not bucketed)\n";
    return o.str();
  }
};

// (incomplete, mask, ground truth) -> composited result, all internal range.
using Inpainter = std::function<Tensor<float>(const Tensor<float>&, const Mask&, const Tensor<float>&)>;

// Perfect inpainter: ground truth on missing pixels.
inline Inpainter oracle_inpainter() {
  return [](const Tensor<float>& incomplete, const Mask& m, const Tensor<float>& truth) {
    return composite(incomplete, truth, m);
  };
}

// Missing pixels filled with 0 in the metric domain (black).
inline Inpainter zero_fill_inpainter() {
  return [](const Tensor<float>& incomplete, const Mask& m, const Tensor<float>&) {
    return composite(incomplete, Tensor<float>(incomplete.shape(), -1.0f), m);
  };
}

// Pairs image i mod N with mask i mod M for i < max(N, M); masks are
// resized (nearest) to the image size when needed.
inline MetricsReport evaluate_corpus(const std::vector<Tensor<float>>& images, const std::vector<Mask>& masks,
                                     const Inpainter& inpaint, const FeatureExtractor<float>& encoder) {
  if (images.empty()) throw EmptyCorpusError("evaluate_corpus: no images");
  if (masks.empty()) throw EmptyCorpusError("evaluate_corpus: no masks");
  MetricsReport report;
  std::array<std::vector<Eigen::VectorXd>, 5> emb_out, emb_gt;
  for (int b = 0; b < 5; ++b) report.rows[b].label = kBucketLabels[b];
  const std::size_t pairs = std::max(images.size(), masks.size());
  for (std::size_t i = 0; i < pairs; ++i) {
    const Tensor<float>& truth = images[i % images.size()];
    const Mask m = resize_mask(masks[i % masks.size()], truth.h(), truth.w());
    const int b = bucket_of(mask_ratio(m));
    if (b < 0) {
      ++report.out_of_range;
      continue;
    }
    const Tensor<float> result = inpaint(apply_mask(truth, m), m, truth);
    const Tensor<double> got = to_metric(result.cast<double>()), want = to_metric(truth.cast<double>());
    auto& row = report.rows[b];
    row.l1 += l1_error(got, want);
    row.l2 += l2_error(got, want);
    row.psnr += psnr(got, want);
    row.ssim += ssim(got, want);
    ++row.count;
    emb_out[b].push_back(embed(encoder, result));
    emb_gt[b].push_back(embed(encoder, truth));
  }
  for (int b = 0; b < 5; ++b) {
    auto& row = report.rows[b];
    if (row.count == 0) continue;
    const double k = 1.0 / static_cast<double>(row.count);
    row.l1 *= k;
    row.l2 *= k;
    row.psnr *= k;
    row.ssim *= k;
    if (row.count >= 2) {
      const auto dim = emb_out[b].front().size();
      Eigen::MatrixXd fa(row.count, dim), fb(row.count, dim);
      for (std::size_t i = 0; i < row.count; ++i) {
        fa.row(static_cast<Eigen::Index>(i)) = emb_out[b][i].transpose();
        fb.row(static_cast<Eigen::Index>(i)) = emb_gt[b][i].transpose();
      }
      row.fid = fid(fa, fb);
      row.has_fid = true;
    }
  }
  return report;
}

}  // namespace rwinpaint
