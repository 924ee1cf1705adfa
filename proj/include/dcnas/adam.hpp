#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "dcnas/tensor.hpp"

namespace dcnas {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction; eps sits outside the square root.
// step() consumes the gradients (they are zeroed afterward).
class AdamOptimizer {
 public:
  AdamOptimizer() = default;
  AdamOptimizer(std::vector<Tensor> params, const AdamOptions& options)
      : params_(std::move(params)), options_(options) {
    first_.reserve(params_.size());
    second_.reserve(params_.size());
    for (const Tensor& p : params_) {
      first_.emplace_back(p.numel(), 0.0);
      second_.emplace_back(p.numel(), 0.0);
    }
  }

  void step() {
    ++steps_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i];
      if (!p.grad_allocated()) {
        throw ContractError("adam: parameter " + std::to_string(i) + " has no gradient");
      }
      auto& g = p.grad();
      auto& m = first_[i];
      auto& v = second_[i];
      auto& value = p.values();
      for (std::size_t j = 0; j < value.size(); ++j) {
        m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * g[j];
        v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * g[j] * g[j];
        value[j] -= options_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + options_.eps);
      }
      p.zero_grad();
    }
  }

  void zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
  }

  const std::vector<Tensor>& params() const { return params_; }
  std::size_t steps() const { return steps_; }
  const AdamOptions& options() const { return options_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::size_t steps_ = 0;
};

// Scale gradients so the global L2 norm does not exceed max_norm. Returns the
// pre-clip norm.
inline double clip_grad_norm(const std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (const Tensor& p : params) {
    if (!p.grad_allocated()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (const Tensor& p : params) {
      if (!p.grad_allocated()) continue;
      Tensor t = p;
      for (double& g : t.grad()) g *= factor;
    }
  }
  return norm;
}

}  // namespace dcnas
