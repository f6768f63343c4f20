#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "nvc/tensor.hpp"

namespace nvc {

// In-place parameter updates. Both optimizers require populated gradients
// and zero them after the step.

template <typename T>
class Sgd {
 public:
  explicit Sgd(T lr) : lr_(lr) {}

  void step(std::vector<Tensor<T>>& params) {
    for (auto& p : params) {
      if (!p.has_grad())
        throw std::runtime_error("sgd_step: parameter has no gradient");
      auto v = p.mutable_data();
      const auto g = p.grad();
      for (size_t i = 0; i < v.size(); ++i) v[i] -= lr_ * g[i];
      p.zero_grad();
    }
  }

  T lr() const { return lr_; }

 private:
  T lr_;
};

template <typename T>
class Adam {
 public:
  explicit Adam(T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<Tensor<T>>& params) {
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (size_t k = 0; k < params.size(); ++k) {
        m_[k].assign(static_cast<size_t>(params[k].numel()), T(0));
        v_[k].assign(static_cast<size_t>(params[k].numel()), T(0));
      }
    }
    if (m_.size() != params.size())
      throw std::runtime_error("adam_step: parameter list changed size");
    ++t_;
    const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (size_t k = 0; k < params.size(); ++k) {
      auto& p = params[k];
      if (!p.has_grad())
        throw std::runtime_error("adam_step: parameter has no gradient");
      auto w = p.mutable_data();
      const auto g = p.grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (size_t i = 0; i < w.size(); ++i) {
        m[i] = beta1_ * m[i] + (T(1) - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (T(1) - beta2_) * g[i] * g[i];
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
      p.zero_grad();
    }
  }

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }

 private:
  T lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace nvc
