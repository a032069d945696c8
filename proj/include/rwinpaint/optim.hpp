#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rwinpaint/archive.hpp"
#include "rwinpaint/autograd.hpp"

namespace rwinpaint {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Parameters without a gradient this step are
// left alone (their moments do not decay either).
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(ParameterSet<T> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& [name, p] : params_) {
      m_.emplace_back(p.shape());
      v_.emplace_back(p.shape());
    }
  }

  const AdamConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return t_; }
  const ParameterSet<T>& parameters() const { return params_; }

  void zero_grad() { params_.zero_grad(); }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T step = static_cast<T>(cfg_.lr / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(cfg_.eps);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Var<T> p = params_[i].second;
      if (!p.has_grad()) continue;
      const Tensor<T>& g = p.grad();
      Tensor<T>& w = p.mutable_value();
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        m[k] = b1 * m[k] + (T(1) - b1) * g[k];
        v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
        w[k] -= step * m[k] / (std::sqrt(v[k] * inv_c2) + eps);
      }
    }
  }

  void save(Archive& a, const std::string& prefix) const {
    a.put(prefix + "t", t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      a.put(prefix + "m/" + params_[i].first, to_f32(m_[i]));
      a.put(prefix + "v/" + params_[i].first, to_f32(v_[i]));
    }
  }

  void load(const Archive& a, const std::string& prefix) {
    t_ = a.get<std::uint64_t>(prefix + "t");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i] = checked(a, prefix + "m/" + params_[i].first, m_[i].shape());
      v_[i] = checked(a, prefix + "v/" + params_[i].first, v_[i].shape());
    }
  }

 private:
  static Tensor<float> to_f32(const Tensor<T>& t) { return t.template cast<float>(); }

  static Tensor<T> checked(const Archive& a, const std::string& key, const Shape& want) {
    const auto& t = a.get<Tensor<float>>(key);
    if (!(t.shape() == want)) {
      throw ShapeMismatchError("checkpoint entry '" + key + "' has shape " + t.shape().str() + ", expected " +
                               want.str());
    }
    return t.template cast<T>();
  }

  ParameterSet<T> params_;
  AdamConfig cfg_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  std::uint64_t t_ = 0;
};

}  // namespace rwinpaint
