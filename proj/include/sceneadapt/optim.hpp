#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "sceneadapt/nets.hpp"

namespace sceneadapt {

// Learning-rate multiplier (1 - i/total)^power; 0 once i reaches total.
struct PolySchedule {
  std::size_t total_iterations = 3750;
  double power = 0.9;
};

inline double poly_multiplier(std::size_t i, const PolySchedule& s) {
  if (s.total_iterations == 0) throw ConfigError("poly schedule needs a positive horizon");
  if (i >= s.total_iterations) return 0.0;
  return std::pow(1.0 - static_cast<double>(i) / static_cast<double>(s.total_iterations), s.power);
}

template <class T, class... Stores>
std::vector<Tensor<T>*> collect_params(Stores&... stores) {
  std::vector<Tensor<T>*> out;
  (
      [&out](auto& store) {
        for (auto& p : store) out.push_back(&p.value);
      }(stores),
      ...);
  return out;
}

namespace detail {
template <class T>
std::span<const T> require_grad(const Tensor<T>& p) {
  if (!p.has_grad()) throw UsageError("optimizer step on a parameter without gradient");
  return p.grad();
}
}  // namespace detail

struct SgdOptions {
  double lr = 0.007;
  double momentum = 0.9;
  double weight_decay = 0.0;  // L2 coefficient, off by default
};

// v <- m*v + g ; p <- p - lr * multiplier * v
template <class T>
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Tensor<T>*> params, SgdOptions options) : params_(std::move(params)), opt_(options) {
    for (const Tensor<T>* p : params_) velocity_.emplace_back(p->size(), T{0});
  }

  const SgdOptions& options() const { return opt_; }

  void step(double lr_multiplier = 1.0) {
    for (const Tensor<T>* p : params_) detail::require_grad(*p);
    const T lr = static_cast<T>(opt_.lr * lr_multiplier);
    const T m = static_cast<T>(opt_.momentum);
    const T wd = static_cast<T>(opt_.weight_decay);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto data = params_[k]->data();
      auto grad = params_[k]->grad();
      auto& vel = velocity_[k];
      for (std::size_t i = 0; i < data.size(); ++i) {
        vel[i] = m * vel[i] + grad[i] + wd * data[i];
        data[i] -= lr * vel[i];
      }
    }
  }

  const std::vector<std::vector<T>>& velocity() const { return velocity_; }

 private:
  std::vector<Tensor<T>*> params_;
  SgdOptions opt_;
  std::vector<std::vector<T>> velocity_;
};

struct AdamOptions {
  double lr = 0.0002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam sharing one step counter across all parameters.
template <class T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>*> params, AdamOptions options) : params_(std::move(params)), opt_(options) {
    for (const Tensor<T>* p : params_) {
      m_.emplace_back(p->size(), T{0});
      v_.emplace_back(p->size(), T{0});
    }
  }

  const AdamOptions& options() const { return opt_; }
  std::size_t steps() const { return t_; }

  void step(double lr_multiplier = 1.0) {
    for (const Tensor<T>* p : params_) detail::require_grad(*p);
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
    const T step = static_cast<T>(opt_.lr * lr_multiplier / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(opt_.eps);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto data = params_[k]->data();
      auto grad = params_[k]->grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < data.size(); ++i) {
        m[i] = b1 * m[i] + (T{1} - b1) * grad[i];
        v[i] = b2 * v[i] + (T{1} - b2) * grad[i] * grad[i];
        data[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
      }
    }
  }

 private:
  std::vector<Tensor<T>*> params_;
  AdamOptions opt_;
  std::vector<std::vector<T>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace sceneadapt
