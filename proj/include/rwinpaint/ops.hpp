#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "rwinpaint/autograd.hpp"
#include "rwinpaint/mask.hpp"

// Differentiable tensor operations. Every op computes its value eagerly and
// records a backward closure only when some input needs a gradient.
namespace rwinpaint::ops {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

struct ConvGeometry {
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_extent(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

namespace detail {

// Unfolds one sample (C,H,W) into a (C*k*k) x (Ho*Wo) row-major matrix.
template <typename T>
void im2col(const T* src, int channels, int h, int w, const ConvGeometry& g, int ho, int wo, T* col) {
  const int k = g.kernel;
  std::size_t row = 0;
  for (int c = 0; c < channels; ++c) {
    const T* plane = src + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        T* out = col + row * static_cast<std::size_t>(ho) * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* out_row = out + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(out_row, out_row + wo, T(0));
            continue;
          }
          const T* in_row = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            out_row[ox] = (ix >= 0 && ix < w) ? in_row[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int channels, int h, int w, const ConvGeometry& g, int ho, int wo, T* dst) {
  const int k = g.kernel;
  std::size_t row = 0;
  for (int c = 0; c < channels; ++c) {
    T* plane = dst + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        const T* in = col + row * static_cast<std::size_t>(ho) * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* out_row = plane + static_cast<std::size_t>(iy) * w;
          const T* in_row = in + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < w) out_row[ix] += in_row[ox];
          }
        }
      }
    }
  }
}

template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& x, F f, DF df) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make_result<T>(std::move(out), {x}, [df](Node<T>& self) {
    Tensor<T>* gx = parent_grad(self, 0);
    if (!gx) return;
    const Tensor<T>& xv = parent_value(self, 0);
    for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += self.grad[i] * df(xv[i], self.value[i]);
  });
}

}  // namespace detail

// Cross-correlation with zero padding. Weight shape (Co, Ci, k, k), bias (Co, 1, 1, 1).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry g) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c || ws.h != g.kernel || ws.w != g.kernel) {
    throw ShapeMismatchError("conv2d: weight " + ws.str() + " incompatible with input " + xs.str() +
                             " and kernel " + std::to_string(g.kernel));
  }
  if (bias.value().size() != static_cast<std::size_t>(ws.n)) {
    throw ShapeMismatchError("conv2d: bias length " + std::to_string(bias.value().size()) + " vs " +
                             std::to_string(ws.n) + " output channels");
  }
  const int ho = g.out_extent(xs.h), wo = g.out_extent(xs.w);
  if (ho <= 0 || wo <= 0) throw DimensionError("conv2d: input " + xs.str() + " too small");
  const int co = ws.n;
  const int kdim = xs.c * g.kernel * g.kernel;
  const int pdim = ho * wo;
  Tensor<T> out(Shape{xs.n, co, ho, wo});
  Buffer<T> col(static_cast<std::size_t>(kdim) * pdim);
  ConstMatMap<T> wmat(weight.value().data(), co, kdim);
  ConstMatMap<T> cmat(col.data(), kdim, pdim);
  for (int n = 0; n < xs.n; ++n) {
    detail::im2col(x.value().sample(n), xs.c, xs.h, xs.w, g, ho, wo, col.data());
    MatMap<T> omat(out.sample(n), co, pdim);
    omat.noalias() = wmat * cmat;
    for (int o = 0; o < co; ++o) omat.row(o).array() += bias.value()[o];
  }
  return make_result<T>(std::move(out), {x, weight, bias}, [g, ho, wo, kdim, pdim, co](Node<T>& self) {
    const Tensor<T>& xv = parent_value(self, 0);
    const Tensor<T>& wv = parent_value(self, 1);
    Tensor<T>* gx = parent_grad(self, 0);
    Tensor<T>* gw = parent_grad(self, 1);
    Tensor<T>* gb = parent_grad(self, 2);
    const Shape xs = xv.shape();
    Buffer<T> col(static_cast<std::size_t>(kdim) * pdim);
    Buffer<T> dcol(gx ? col.size() : 0);
    ConstMatMap<T> wmat(wv.data(), co, kdim);
    for (int n = 0; n < xs.n; ++n) {
      ConstMatMap<T> dout(self.grad.sample(n), co, pdim);
      if (gb) {
        for (int o = 0; o < co; ++o) (*gb)[o] += dout.row(o).sum();
      }
      if (gw) {
        detail::im2col(xv.sample(n), xs.c, xs.h, xs.w, g, ho, wo, col.data());
        ConstMatMap<T> cmat(col.data(), kdim, pdim);
        MatMap<T> dw(gw->data(), co, kdim);
        dw.noalias() += dout * cmat.transpose();
      }
      if (gx) {
        MatMap<T> dc(dcol.data(), kdim, pdim);
        dc.noalias() = wmat.transpose() * dout;
        detail::col2im_add(dcol.data(), xs.c, xs.h, xs.w, g, ho, wo, gx->sample(n));
      }
    }
  });
}

// Per-pixel branch choice: mask 1 takes `existing`, mask 0 takes `missing`.
// The mask broadcasts over channels.
template <typename T>
Var<T> select(std::span<const Mask> masks, const Var<T>& existing, const Var<T>& missing) {
  require_same_shape(existing.shape(), missing.shape(), "select");
  check_mask_batch(existing.value(), masks, "select");
  const Shape s = existing.shape();
  const std::size_t plane = s.plane();
  Tensor<T> out(s);
  for (int n = 0; n < s.n; ++n) {
    const Mask& m = mask_for_sample(masks, n);
    const T* a = existing.value().sample(n);
    const T* b = missing.value().sample(n);
    T* o = out.sample(n);
    for (int c = 0; c < s.c; ++c) {
      for (std::size_t i = 0; i < plane; ++i) o[c * plane + i] = m[i] ? a[c * plane + i] : b[c * plane + i];
    }
  }
  std::vector<Mask> kept(masks.begin(), masks.end());
  return make_result<T>(std::move(out), {existing, missing}, [kept = std::move(kept)](Node<T>& self) {
    Tensor<T>* ga = parent_grad(self, 0);
    Tensor<T>* gb = parent_grad(self, 1);
    const Shape s = self.value.shape();
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n) {
      const Mask& m = mask_for_sample(std::span<const Mask>(kept), n);
      const T* g = self.grad.sample(n);
      for (int c = 0; c < s.c; ++c) {
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t j = c * plane + i;
          if (m[i]) {
            if (ga) ga->sample(n)[j] += g[j];
          } else if (gb) {
            gb->sample(n)[j] += g[j];
          }
        }
      }
    }
  });
}

// Zeroes missing pixels (keep = existing) or existing pixels (keep = missing).
enum class Keep { existing, missing };

template <typename T>
Var<T> mask_region(const Var<T>& x, std::span<const Mask> masks, Keep keep) {
  check_mask_batch(x.value(), masks, "mask_region");
  const std::uint8_t keep_value = keep == Keep::existing ? 1 : 0;
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  Tensor<T> out(s);
  for (int n = 0; n < s.n; ++n) {
    const Mask& m = mask_for_sample(masks, n);
    const T* a = x.value().sample(n);
    T* o = out.sample(n);
    for (int c = 0; c < s.c; ++c) {
      for (std::size_t i = 0; i < plane; ++i) o[c * plane + i] = m[i] == keep_value ? a[c * plane + i] : T(0);
    }
  }
  std::vector<Mask> kept(masks.begin(), masks.end());
  return make_result<T>(std::move(out), {x}, [kept = std::move(kept), keep_value](Node<T>& self) {
    Tensor<T>* gx = parent_grad(self, 0);
    if (!gx) return;
    const Shape s = self.value.shape();
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n) {
      const Mask& m = mask_for_sample(std::span<const Mask>(kept), n);
      const T* g = self.grad.sample(n);
      T* d = gx->sample(n);
      for (int c = 0; c < s.c; ++c) {
        for (std::size_t i = 0; i < plane; ++i) {
          if (m[i] == keep_value) d[c * plane + i] += g[c * plane + i];
        }
      }
    }
  });
}

// Mask as a {0,1} single-channel tensor batch.
template <typename T>
Tensor<T> mask_tensor(std::span<const Mask> masks, int batch) {
  const Mask& first = masks.front();
  Tensor<T> out(Shape{batch, 1, first.height(), first.width()});
  for (int n = 0; n < batch; ++n) {
    const Mask& m = mask_for_sample(masks, n);
    std::transform(m.cells().begin(), m.cells().end(), out.sample(n), [](std::uint8_t v) { return T(v); });
  }
  return out;
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw DimensionError("concat_channels: " + sa.str() + " vs " + sb.str());
  }
  const std::size_t na = sa.c * sa.plane(), nb = sb.c * sb.plane();
  Tensor<T> out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  for (int n = 0; n < sa.n; ++n) {
    std::copy_n(a.value().sample(n), na, out.sample(n));
    std::copy_n(b.value().sample(n), nb, out.sample(n) + na);
  }
  return make_result<T>(std::move(out), {a, b}, [na, nb](Node<T>& self) {
    Tensor<T>* ga = parent_grad(self, 0);
    Tensor<T>* gb = parent_grad(self, 1);
    for (int n = 0; n < self.value.n(); ++n) {
      const T* g = self.grad.sample(n);
      if (ga) {
        T* d = ga->sample(n);
        for (std::size_t i = 0; i < na; ++i) d[i] += g[i];
      }
      if (gb) {
        T* d = gb->sample(n);
        for (std::size_t i = 0; i < nb; ++i) d[i] += g[na + i];
      }
    }
  });
}

template <typename T>
Var<T> elu(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return v > 0 ? v : std::expm1(v); }, [](T v, T y) { return v > 0 ? T(1) : y + T(1); });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  return detail::unary(
      x, [slope](T v) { return v > 0 ? v : slope * v; }, [slope](T v, T) { return v > 0 ? T(1) : slope; });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return v > 0 ? v : T(0); }, [](T v, T) { return v > 0 ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> upsample_nearest(const Var<T>& x, int factor) {
  const Shape s = x.shape();
  Tensor<T> out(Shape{s.n, s.c, s.h * factor, s.w * factor});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < s.h * factor; ++y) {
        for (int xx = 0; xx < s.w * factor; ++xx) out.at(n, c, y, xx) = x.value().at(n, c, y / factor, xx / factor);
      }
    }
  }
  return make_result<T>(std::move(out), {x}, [factor](Node<T>& self) {
    Tensor<T>* gx = parent_grad(self, 0);
    if (!gx) return;
    const Shape o = self.value.shape();
    for (int n = 0; n < o.n; ++n) {
      for (int c = 0; c < o.c; ++c) {
        for (int y = 0; y < o.h; ++y) {
          for (int xx = 0; xx < o.w; ++xx) gx->at(n, c, y / factor, xx / factor) += self.grad.at(n, c, y, xx);
        }
      }
    }
  });
}

// 2x2 max pooling, stride 2. Odd trailing rows/cols are dropped.
template <typename T>
Var<T> max_pool2(const Var<T>& x) {
  const Shape s = x.shape();
  const int ho = s.h / 2, wo = s.w / 2;
  Tensor<T> out(Shape{s.n, s.c, ho, wo});
  std::vector<std::uint32_t> argmax(out.size());
  std::size_t k = 0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < ho; ++y) {
        for (int xx = 0; xx < wo; ++xx, ++k) {
          std::size_t best = x.value().index(n, c, 2 * y, 2 * xx);
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t j = x.value().index(n, c, 2 * y + dy, 2 * xx + dx);
              if (x.value()[j] > x.value()[best]) best = j;
            }
          }
          argmax[k] = static_cast<std::uint32_t>(best);
          out[k] = x.value()[best];
        }
      }
    }
  }
  return make_result<T>(std::move(out), {x}, [argmax = std::move(argmax)](Node<T>& self) {
    Tensor<T>* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < argmax.size(); ++i) (*gx)[argmax[i]] += self.grad[i];
  });
}

// 2x2 average pooling, stride 2.
template <typename T>
Var<T> avg_pool2(const Var<T>& x) {
  const Shape s = x.shape();
  const int ho = s.h / 2, wo = s.w / 2;
  Tensor<T> out(Shape{s.n, s.c, ho, wo});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < ho; ++y) {
        for (int xx = 0; xx < wo; ++xx) {
          const auto& v = x.value();
          out.at(n, c, y, xx) = T(0.25) * (v.at(n, c, 2 * y, 2 * xx) + v.at(n, c, 2 * y, 2 * xx + 1) +
                                           v.at(n, c, 2 * y + 1, 2 * xx) + v.at(n, c, 2 * y + 1, 2 * xx + 1));
        }
      }
    }
  }
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    Tensor<T>* gx = parent_grad(self, 0);
    if (!gx) return;
    const Shape o = self.value.shape();
    for (int n = 0; n < o.n; ++n) {
      for (int c = 0; c < o.c; ++c) {
        for (int y = 0; y < o.h; ++y) {
          for (int xx = 0; xx < o.w; ++xx) {
            const T g = T(0.25) * self.grad.at(n, c, y, xx);
            gx->at(n, c, 2 * y, 2 * xx) += g;
            gx->at(n, c, 2 * y, 2 * xx + 1) += g;
            gx->at(n, c, 2 * y + 1, 2 * xx) += g;
            gx->at(n, c, 2 * y + 1, 2 * xx + 1) += g;
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (Tensor<T>* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (Tensor<T>* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (Tensor<T>* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
  return detail::unary(x, [s](T v) { return s * v; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> scalar(T v) {
  return Var<T>::constant(Tensor<T>(Shape{1, 1, 1, 1}, v));
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T total = 0;
  for (T v : x.value().values()) total += v;
  return make_result<T>(Tensor<T>(Shape{1, 1, 1, 1}, total), {x}, [](Node<T>& self) {
    Tensor<T>* g = parent_grad(self, 0);
    if (!g) return;
    const T up = self.grad[0];
    for (auto& v : g->values()) v += up;
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  const T count = static_cast<T>(x.value().size());
  return scale(sum(x), T(1) / count);
}

// mean |a - b|
template <typename T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mean_abs_diff");
  const std::size_t count = a.value().size();
  T total = 0;
  for (std::size_t i = 0; i < count; ++i) total += std::abs(a.value()[i] - b.value()[i]);
  const T inv = T(1) / static_cast<T>(count);
  return make_result<T>(Tensor<T>(Shape{1, 1, 1, 1}, total * inv), {a, b}, [inv](Node<T>& self) {
    const Tensor<T>& av = parent_value(self, 0);
    const Tensor<T>& bv = parent_value(self, 1);
    Tensor<T>* ga = parent_grad(self, 0);
    Tensor<T>* gb = parent_grad(self, 1);
    const T up = self.grad[0] * inv;
    for (std::size_t i = 0; i < av.size(); ++i) {
      const T d = av[i] - bv[i];
      const T sgn = d > 0 ? T(1) : (d < 0 ? T(-1) : T(0));
      if (ga) (*ga)[i] += up * sgn;
      if (gb) (*gb)[i] -= up * sgn;
    }
  });
}

// sum |a - b|
template <typename T>
Var<T> sum_abs_diff(const Var<T>& a, const Var<T>& b) {
  const T count = static_cast<T>(a.value().size());
  return scale(mean_abs_diff(a, b), count);
}

// y[n,c] = x[n,c] * mul[c] + add[c]
template <typename T>
Var<T> affine_channels(const Var<T>& x, std::vector<T> mul, std::vector<T> shift) {
  const Shape s = x.shape();
  if (mul.size() != static_cast<std::size_t>(s.c) || shift.size() != mul.size()) {
    throw DimensionError("affine_channels: coefficient count vs " + s.str());
  }
  const std::size_t plane = s.plane();
  Tensor<T> out(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* a = x.value().sample(n) + c * plane;
      T* o = out.sample(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) o[i] = a[i] * mul[c] + shift[c];
    }
  }
  return make_result<T>(std::move(out), {x}, [mul = std::move(mul)](Node<T>& self) {
    Tensor<T>* gx = parent_grad(self, 0);
    if (!gx) return;
    const Shape s = self.value.shape();
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const T* g = self.grad.sample(n) + c * plane;
        T* d = gx->sample(n) + c * plane;
        for (std::size_t i = 0; i < plane; ++i) d[i] += g[i] * mul[c];
      }
    }
  });
}

// Per sample, with F reshaped to c x n (column i = channel vector at
// position i): returns F^T F, an n x n matrix stored as (N, 1, n, n).
template <typename T>
Var<T> gram_positions(const Var<T>& f) {
  const Shape s = f.shape();
  const int c = s.c;
  const int np = static_cast<int>(s.plane());
  Tensor<T> out(Shape{s.n, 1, np, np});
  for (int n = 0; n < s.n; ++n) {
    ConstMatMap<T> fm(f.value().sample(n), c, np);
    MatMap<T> g(out.sample(n), np, np);
    g.noalias() = fm.transpose() * fm;
  }
  return make_result<T>(std::move(out), {f}, [c, np](Node<T>& self) {
    Tensor<T>* gf = parent_grad(self, 0);
    if (!gf) return;
    const Tensor<T>& fv = parent_value(self, 0);
    for (int n = 0; n < fv.n(); ++n) {
      ConstMatMap<T> fm(fv.sample(n), c, np);
      ConstMatMap<T> dg(self.grad.sample(n), np, np);
      MatMap<T> df(gf->sample(n), c, np);
      // d(F^T F) -> F (dG + dG^T)
      df.noalias() += fm * (dg + dg.transpose());
    }
  });
}

// Per sample: (1/n) F F^T, a c x c matrix stored as (N, 1, c, c).
template <typename T>
Var<T> gram_channels(const Var<T>& f) {
  const Shape s = f.shape();
  const int c = s.c;
  const int np = static_cast<int>(s.plane());
  const T inv = T(1) / static_cast<T>(np);
  Tensor<T> out(Shape{s.n, 1, c, c});
  for (int n = 0; n < s.n; ++n) {
    ConstMatMap<T> fm(f.value().sample(n), c, np);
    MatMap<T> g(out.sample(n), c, c);
    g.noalias() = inv * (fm * fm.transpose());
  }
  return make_result<T>(std::move(out), {f}, [c, np, inv](Node<T>& self) {
    Tensor<T>* gf = parent_grad(self, 0);
    if (!gf) return;
    const Tensor<T>& fv = parent_value(self, 0);
    for (int n = 0; n < fv.n(); ++n) {
      ConstMatMap<T> fm(fv.sample(n), c, np);
      ConstMatMap<T> dg(self.grad.sample(n), c, c);
      MatMap<T> df(gf->sample(n), c, np);
      df.noalias() += inv * ((dg + dg.transpose()) * fm);
    }
  });
}

// W / sigma with sigma = u^T W v, W viewed as (out, in*k*k). u and v are
// held fixed: the gradient flows through sigma's dependence on W only.
template <typename T>
Var<T> spectral_normalize(const Var<T>& weight, const Buffer<T>& u, const Buffer<T>& v) {
  const Shape s = weight.shape();
  const int rows = s.n;
  const int cols = static_cast<int>(s.size() / s.n);
  ConstMatMap<T> w(weight.value().data(), rows, cols);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> uu(u.data(), rows), vv(v.data(), cols);
  const T sigma = uu.dot(w * vv);
  Tensor<T> out(s);
  MatMap<T> o(out.data(), rows, cols);
  o = w / sigma;
  return make_result<T>(std::move(out), {weight}, [u, v, sigma, rows, cols](Node<T>& self) {
    Tensor<T>* gw = parent_grad(self, 0);
    if (!gw) return;
    ConstMatMap<T> w(parent_value(self, 0).data(), rows, cols);
    ConstMatMap<T> g(self.grad.data(), rows, cols);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> uu(u.data(), rows), vv(v.data(), cols);
    const T inner = (g.array() * w.array()).sum();
    MatMap<T> d(gw->data(), rows, cols);
    d += g / sigma - (inner / (sigma * sigma)) * (uu * vv.transpose());
  });
}

}  // namespace rwinpaint::ops
