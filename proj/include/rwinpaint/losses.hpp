#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>

#include "rwinpaint/features.hpp"
#include "rwinpaint/ops.hpp"

namespace rwinpaint {

struct LossWeights {
  double correlation = 1e-5;  // lambda_1
  double style = 1e-3;        // lambda_2
  double adversarial = 1.0;   // lambda_3 once the adversarial phase starts
  double alpha = 0.01;        // weight of the real term in the adversarial loss
};

struct LossReport {
  double reconstruction = 0;
  double correlation = 0;
  double style = 0;
  double adversarial_g = 0;
  double adversarial_d = 0;
  double total = 0;
};

// L_r: mean absolute error of both predictions against ground truth.
template <typename T>
Var<T> reconstruction_loss(const Var<T>& predicted1, const Var<T>& predicted2, const Var<T>& truth) {
  return ops::add(ops::mean_abs_diff(predicted1, truth), ops::mean_abs_diff(predicted2, truth));
}

// Position gram of a single (1, c, h, w) map as an n x n matrix.
template <typename T>
ops::RowMatrix<T> gram_positions(const Tensor<T>& f) {
  ops::ConstMatMap<T> m(f.data(), f.c(), static_cast<Eigen::Index>(f.shape().plane()));
  return m.transpose() * m;
}

// Channel gram of a single (1, c, h, w) map, normalised by n = h*w.
template <typename T>
ops::RowMatrix<T> gram_channels(const Tensor<T>& f) {
  const auto n = static_cast<Eigen::Index>(f.shape().plane());
  ops::ConstMatMap<T> m(f.data(), f.c(), n);
  return (m * m.transpose()) / static_cast<T>(n);
}

// L_c = sigma * sum_ij |f_ij(I_c1) - f_ij(I_g)| on pool2 features with
// sigma = 1 / (c n^2); batches average over samples.
template <typename T>
Var<T> correlation_loss(const Var<T>& composited1, const Var<T>& truth, const FeatureExtractor<T>& fx) {
  const Var<T> fa = fx.extract(composited1, {Stage::pool2}).at(Stage::pool2);
  Var<T> fb;
  {
    NoGradGuard frozen;
    fb = fx.extract(truth.detach(), {Stage::pool2}).at(Stage::pool2);
  }
  const T channels = static_cast<T>(fa.shape().c);
  return ops::scale(ops::mean_abs_diff(ops::gram_positions(fa), ops::gram_positions(fb)), T(1) / channels);
}

// L_s = sum_p delta_p * sum_ab |G_p(I_c2) - G_p(I_g)| over pool1..pool3,
// with channel grams normalised by n_p and delta_p = 1 / c_p^2.
template <typename T>
Var<T> style_loss(const Var<T>& composited2, const Var<T>& truth, const FeatureExtractor<T>& fx) {
  const auto fa = fx.extract(composited2, {Stage::pool1, Stage::pool2, Stage::pool3});
  FeaturePyramid<T> fb;
  {
    NoGradGuard frozen;
    fb = fx.extract(truth.detach(), {Stage::pool1, Stage::pool2, Stage::pool3});
  }
  Var<T> total;
  for (Stage s : {Stage::pool1, Stage::pool2, Stage::pool3}) {
    // mean over the c^2 entries is exactly delta_p * sum.
    auto term = ops::mean_abs_diff(ops::gram_channels(fa.at(s)), ops::gram_channels(fb.at(s)));
    total = total ? ops::add(total, term) : term;
  }
  return total;
}

// Any patch scorer: (missing-region image, masks) -> score map in (0, 1).
template <typename T>
using PatchScorer = std::function<Var<T>(const Var<T>&, std::span<const Mask>)>;

template <typename T>
Var<T> one_minus_mean(const Var<T>& scores) {
  return ops::add_scalar(ops::scale(ops::mean(scores), T(-1)), T(1));
}

// Generator side: E[1 - D(I_p1 (1-M), M)] + E[1 - D(I_p2 (1-M), M)].
// The real term does not depend on the generator and is left out.
template <typename T>
Var<T> adversarial_generator_loss(const PatchScorer<T>& disc, const Var<T>& predicted1, const Var<T>& predicted2,
                                  std::span<const Mask> masks) {
  auto fake1 = ops::mask_region(predicted1, masks, ops::Keep::missing);
  auto fake2 = ops::mask_region(predicted2, masks, ops::Keep::missing);
  return ops::add(one_minus_mean(disc(fake1, masks)), one_minus_mean(disc(fake2, masks)));
}

// Discriminator side: -(alpha E[D(real)] + E[1 - D(fake1)] + E[1 - D(fake2)])
// with the fakes cut from the generator graph.
template <typename T>
Var<T> adversarial_discriminator_loss(const PatchScorer<T>& disc, const Var<T>& predicted1,
                                      const Var<T>& predicted2, const Var<T>& truth, std::span<const Mask> masks,
                                      double alpha) {
  auto real = ops::mask_region(truth.detach(), masks, ops::Keep::missing);
  auto fake1 = ops::mask_region(predicted1.detach(), masks, ops::Keep::missing);
  auto fake2 = ops::mask_region(predicted2.detach(), masks, ops::Keep::missing);
  auto real_term = ops::scale(ops::mean(disc(real, masks)), static_cast<T>(alpha));
  auto sum = ops::add(ops::add(real_term, one_minus_mean(disc(fake1, masks))), one_minus_mean(disc(fake2, masks)));
  return ops::scale(sum, T(-1));
}

template <typename T>
struct AdversarialLosses {
  Var<T> generator;
  Var<T> discriminator;
};

template <typename T>
AdversarialLosses<T> adversarial_losses(const PatchScorer<T>& disc, const Var<T>& predicted1, const Var<T>& predicted2,
                                        const Var<T>& truth, std::span<const Mask> masks, double alpha) {
  return {adversarial_generator_loss(disc, predicted1, predicted2, masks),
          adversarial_discriminator_loss(disc, predicted1, predicted2, truth, masks, alpha)};
}

inline void require_finite(const char* term, double v) {
  if (!std::isfinite(v)) throw NonFiniteLossError(term, v);
}

// L = L_r + lambda_1 L_c + lambda_2 L_s + lambda_3 L_a (generator part).
inline double total_loss(const LossReport& parts, const LossWeights& w) {
  require_finite("reconstruction", parts.reconstruction);
  require_finite("correlation", parts.correlation);
  require_finite("style", parts.style);
  require_finite("adversarial_g", parts.adversarial_g);
  double total = parts.reconstruction + w.correlation * parts.correlation + w.style * parts.style;
  if (w.adversarial != 0.0) total += w.adversarial * parts.adversarial_g;
  return total;
}

template <typename T>
struct LossTerms {
  Var<T> reconstruction;
  Var<T> correlation;
  Var<T> style;
  std::optional<Var<T>> adversarial_g;
};

template <typename T>
Var<T> total_loss(const LossTerms<T>& t, const LossWeights& w) {
  require_finite("reconstruction", t.reconstruction.item());
  require_finite("correlation", t.correlation.item());
  require_finite("style", t.style.item());
  Var<T> total = ops::add(t.reconstruction, ops::scale(t.correlation, static_cast<T>(w.correlation)));
  total = ops::add(total, ops::scale(t.style, static_cast<T>(w.style)));
  if (t.adversarial_g && w.adversarial != 0.0) {
    require_finite("adversarial_g", t.adversarial_g->item());
    total = ops::add(total, ops::scale(*t.adversarial_g, static_cast<T>(w.adversarial)));
  }
  return total;
}

}  // namespace rwinpaint
